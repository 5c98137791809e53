"""Dataset loading and artifact persistence (parse files, sequences, vocab, checkpoints)."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, parameter_shapes
from .exceptions import DataError
from .grouper import EventSequence, WindowSpec
from .parser import DEFAULT_MASKS, ParsedLog, RawLogLine
from .vocab import Vocabulary

PRESETS = ("hdfs", "bgl", "thunderbird")


@dataclass
class DatasetSpec:
    """How to read one corpus: header layout, label source and grouping defaults.

    Exactly one label source applies: ``"line"`` (a per-line flag field where
    ``normal_label`` marks normal lines) or ``"csv"`` (an external
    ``BlockId,Label`` file).
    """

    name: str
    header_fields: int
    timestamp_fields: tuple[int, ...] = ()
    timestamp_format: str = "epoch"
    label_source: str = "line"
    label_field: int | None = 0
    normal_label: str = "-"
    window: WindowSpec = field(default_factory=WindowSpec)
    masks: dict = field(default_factory=lambda: dict(DEFAULT_MASKS))

    def __post_init__(self):
        if self.label_source not in ("line", "csv"):
            raise DataError(f"label_source must be 'line' or 'csv', got {self.label_source!r}")
        if self.label_source == "line" and self.label_field is None:
            raise DataError("per-line labels need label_field")
        if self.label_source == "csv" and self.label_field is not None:
            raise DataError("a csv label source excludes a per-line label_field")

    @classmethod
    def from_text(cls, text: str) -> "DatasetSpec":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        if "dataset" not in cp:
            raise DataError("dataset spec needs a [dataset] section")
        d = cp["dataset"]
        label_field = d.get("label_field", "").strip()
        window = WindowSpec(
            mode=d.get("window_mode", "session"),
            identifier_pattern=d.get("identifier_pattern") or None,
            window_seconds=d.getfloat("window_seconds", fallback=None),
            step_seconds=d.getfloat("step_seconds", fallback=None),
        )
        masks = dict(cp["masks"]) if "masks" in cp else dict(DEFAULT_MASKS)
        return cls(
            name=d.get("name", "custom"),
            header_fields=d.getint("header_fields"),
            timestamp_fields=tuple(int(x) for x in d.get("timestamp_fields", "").split()),
            timestamp_format=d.get("timestamp_format", "epoch"),
            label_source=d.get("label_source", "line"),
            label_field=int(label_field) if label_field else None,
            normal_label=d.get("normal_label", "-"),
            window=window,
            masks=masks,
        )

    @classmethod
    def preset(cls, name: str) -> "DatasetSpec":
        if name not in PRESETS:
            raise DataError(f"unknown dataset preset {name!r}; choose from {PRESETS}")
        text = resources.files("fastlogad").joinpath(f"presets/{name}.cfg").read_text()
        return cls.from_text(text)

    @classmethod
    def resolve(cls, name_or_path: str) -> "DatasetSpec":
        if name_or_path in PRESETS:
            return cls.preset(name_or_path)
        path = Path(name_or_path)
        if not path.exists():
            raise DataError(f"no dataset preset or spec file named {name_or_path!r}")
        return cls.from_text(path.read_text())

    def parse_timestamp(self, fields: list[str], line_no: int) -> float | None:
        if not self.timestamp_fields:
            return None
        text = " ".join(fields[i] for i in self.timestamp_fields)
        try:
            if self.timestamp_format == "epoch":
                return float(text)
            stamp = datetime.strptime(text, self.timestamp_format)
            return stamp.replace(tzinfo=timezone.utc).timestamp()
        except ValueError:
            raise DataError(f"line {line_no}: cannot read timestamp {text!r}") from None


def load_dataset(path, spec: DatasetSpec, label_path=None, with_labels: bool = True):
    """Raw lines in file order plus the session label map (empty for per-line labels).

    ``with_labels=False`` skips the external label file (parsing does not need it).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"log file {path} does not exist")
    labels: dict[str, int] = {}
    if spec.label_source == "csv" and with_labels:
        if label_path is None:
            raise DataError(f"dataset {spec.name} needs a label CSV")
        labels = load_label_csv(label_path)
    lines = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line_no, text in enumerate(fh, start=1):
            text = text.rstrip("\r\n")
            if not text.strip():
                continue
            lines.append(parse_raw_line(text, line_no, spec))
    if not lines:
        raise DataError(f"log file {path} is empty")
    return lines, labels


def parse_raw_line(text: str, line_no: int, spec: DatasetSpec) -> RawLogLine:
    fields = text.split(maxsplit=spec.header_fields)
    if len(fields) <= spec.header_fields or not fields[-1].strip():
        raise DataError(
            f"line {line_no}: expected {spec.header_fields} header fields and a message, got {text[:80]!r}"
        )
    header, content = fields[: spec.header_fields], fields[spec.header_fields].strip()
    flag = None
    if spec.label_source == "line":
        flag = int(header[spec.label_field] != spec.normal_label)
    return RawLogLine(line_no, content, spec.parse_timestamp(header, line_no), flag)


def load_label_csv(path) -> dict[str, int]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"label file {path} does not exist")
    labels = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"BlockId", "Label"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected a BlockId,Label header")
        for n, row in enumerate(reader, start=2):
            value = row["Label"].strip()
            if value not in ("Normal", "Anomaly"):
                raise DataError(f"{path}:{n}: label must be Normal or Anomaly, got {value!r}")
            labels[row["BlockId"].strip()] = int(value == "Anomaly")
    return labels


# -- text artifacts -----------------------------------------------------


def write_parsed(path, logs) -> None:
    Path(path).write_text("".join(log.to_record() + "\n" for log in logs))


def read_parsed(path) -> list[ParsedLog]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        try:
            out.append(ParsedLog.from_record(line))
        except (ValueError, json.JSONDecodeError):
            raise DataError(f"{path}:{n}: malformed parse record") from None
    return out


def sequences_to_text(seqs) -> str:
    return "".join(f"{s.seq_id}\t{s.label}\t{' '.join(map(str, s.event_ids))}\n" for s in seqs)


def write_sequences(path, seqs) -> None:
    Path(path).write_text(sequences_to_text(seqs))


def read_sequences(path) -> list[EventSequence]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"sequence file {path} does not exist")
    out = []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        try:
            seq_id, label, events = line.split("\t")
            ids = [int(e) for e in events.split()]
            label = int(label)
        except ValueError:
            raise DataError(f"{path}:{n}: expected seq_id<TAB>label<TAB>template ids") from None
        if not ids or label not in (0, 1):
            raise DataError(f"{path}:{n}: empty sequence or label outside {{0,1}}")
        out.append(EventSequence(seq_id, ids, label, float(len(out))))
    if not out:
        raise DataError(f"sequence file {path} is empty")
    return out


def file_fingerprint(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_vocab(path, vocab: Vocabulary) -> None:
    Path(path).write_text(vocab.to_tsv())


def load_vocab(path) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocab file {path} does not exist")
    return Vocabulary.from_tsv(path.read_text())


# -- checkpoints ----------------------------------------------------------

CKPT_MAGIC = b"FLADCKPT"
CKPT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")  # magic, format version, header byte length
ROLES = ("generator", "discriminator")


@dataclass
class Checkpoint:
    role: str
    config: EncoderConfig
    tensors: dict[str, np.ndarray]
    vocab_hash: str
    format_version: int = CKPT_VERSION
    extra: dict = field(default_factory=dict)


def _tensor_order(config: EncoderConfig, tensors: dict) -> list[str]:
    trunk = [n for n in parameter_shapes(config) if n in tensors]
    return trunk + sorted(n for n in tensors if n not in set(trunk))


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    if ckpt.role not in ROLES:
        raise DataError(f"checkpoint role must be one of {ROLES}")
    manifest, blobs, offset = [], [], 0
    for name in _tensor_order(ckpt.config, ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    header = json.dumps(
        {
            "format_version": ckpt.format_version, "role": ckpt.role,
            "config": ckpt.config.to_dict(), "vocab_hash": ckpt.vocab_hash,
            "extra": ckpt.extra, "tensors": manifest,
        },
        sort_keys=True, separators=(",", ":"),
    ).encode()
    return _PREAMBLE.pack(CKPT_MAGIC, ckpt.format_version, len(header)) + header + b"".join(blobs)


def save_checkpoint(path, model, role: str, vocab: Vocabulary, extra: dict | None = None) -> None:
    ckpt = Checkpoint(role, model.config, model.params, vocab.fingerprint(), extra=extra or {})
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def parse_checkpoint(data: bytes, vocab: Vocabulary | None = None) -> Checkpoint:
    if len(data) < _PREAMBLE.size:
        raise DataError("checkpoint truncated before its preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    if version != CKPT_VERSION:
        raise DataError(f"checkpoint format version {version} is not supported (expected {CKPT_VERSION})")
    start = _PREAMBLE.size
    if start + header_len > len(data):
        raise DataError(f"checkpoint truncated: header at offset {start} needs {header_len} bytes")
    try:
        header = json.loads(data[start : start + header_len])
        config = EncoderConfig(**header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"corrupt checkpoint manifest at offset {start}: {exc}") from None
    if vocab is not None and header.get("vocab_hash") != vocab.fingerprint():
        raise DataError("checkpoint was trained with a different vocabulary (hash mismatch)")
    base = start + header_len
    body = len(data) - base
    tensors, expected = {}, 0
    for entry in manifest:
        try:
            name, shape, offset, nbytes = entry["name"], tuple(entry["shape"]), entry["offset"], entry["nbytes"]
        except (KeyError, TypeError):
            raise DataError(f"corrupt checkpoint manifest entry near data offset {expected}") from None
        if offset != expected or nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise DataError(f"corrupt checkpoint manifest: tensor {name!r} at offset {offset} "
                            f"(expected offset {expected}, {nbytes} bytes for shape {list(shape)})")
        if offset + nbytes > body:
            raise DataError(f"checkpoint truncated: tensor {name!r} at offset {offset} runs past the end")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=base + offset).reshape(shape).astype(np.float32)
        expected = offset + nbytes
    if expected != body:
        raise DataError(f"checkpoint has {body - expected} trailing bytes after offset {expected}")
    return Checkpoint(header["role"], config, tensors, header.get("vocab_hash", ""), version,
                      header.get("extra", {}))


def load_checkpoint(path, vocab: Vocabulary | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    return parse_checkpoint(path.read_bytes(), vocab)


def model_from_checkpoint(ckpt: Checkpoint):
    from .das import Discriminator
    from .mgag import MLMGenerator

    cls = Discriminator if ckpt.role == "discriminator" else MLMGenerator
    return cls(ckpt.config, dict(ckpt.tensors))


def dumps_json(obj) -> str:
    buf = io.StringIO()
    json.dump(obj, buf, indent=2, sort_keys=True)
    return buf.getvalue() + "\n"
