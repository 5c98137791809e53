"""Command-line entry point: ``fastlogad <command> [flags]``.

Every flag can also be set in a ``--config`` file of ``key = value`` lines
(keys are flag names without the leading dashes; ``-`` and ``_`` are
interchangeable). Flags given on the command line override the file.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure. Failures print
one line to stderr: ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .detector import Threshold, anomaly_scores, bench, bench_to_csv, calibrate, detect, environment_fingerprint, verdicts_to_csv
from .exceptions import DataError, FastLogADError
from .grouper import chronological_split, group_session, group_sliding
from .ingest import (
    DatasetSpec, dumps_json, load_checkpoint, load_label_csv, load_dataset, load_vocab, model_from_checkpoint,
    read_parsed, read_sequences, save_checkpoint, save_vocab, sequences_to_text, write_parsed,
    write_sequences,
)
from .metrics import evaluate
from .parser import DrainParser
from .synth import SYNTH_DATASET_CFG, SYNTH_TRAIN_SETTINGS, render_logs, synthetic_benchmark
from .trainer import TrainConfig, train
from .vocab import Vocabulary

logger = logging.getLogger("fastlogad")

COMMANDS = ("parse", "group", "build-vocab", "train", "calibrate", "detect", "eval", "bench", "synth",
            "pipeline")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _on_off(value: str) -> bool:
    if value.lower() in ("on", "true", "1", "yes"):
        return True
    if value.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def _sweep(value: str) -> list[float]:
    try:
        start, stop, step = (float(x) for x in value.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("sweep must look like start:stop:step") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("sweep needs step > 0 and stop >= start")
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


# -- flag groups -----------------------------------------------------------


def _common(p):
    g = p.add_argument_group("common")
    g.add_argument("--config", help="key = value file supplying defaults for any flag")
    g.add_argument("--out", help="output directory for every artifact and report")
    g.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    g.add_argument("--threads", type=int, default=1, help="cap on BLAS and worker threads (default 1)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _dataset_flags(p):
    p.add_argument("--dataset", default="hdfs",
                   help="preset (hdfs, bgl, thunderbird) or a dataset spec file (default hdfs)")


def _split_flags(p):
    p.add_argument("--labels", help="BlockId,Label CSV for datasets with external labels")
    p.add_argument("--train-count", type=int, default=5000,
                   help="normal sequences taken (in time order) for train + validation (default 5000)")
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="share of the training pool held out for calibration (default 0.1)")


def _model_flags(p):
    d = TrainConfig()
    g = p.add_argument_group("model and training")
    g.add_argument("--generator", choices=("random", "mlm"), default=d.generator,
                   help="pseudo-anomaly generator (default mlm)")
    g.add_argument("--mask-ratio", type=float, default=d.mask_ratio, help="masked share of positions (default 0.5)")
    g.add_argument("--hst-weight", type=float, default=d.hst_weight, help="weight of the anomaly term (default 1.0)")
    g.add_argument("--stage1-epochs", type=int, default=d.stage1_epochs, help="warm-up epochs (default 10)")
    g.add_argument("--stage2-epochs", type=int, default=d.stage2_epochs, help="separation epochs (default 20)")
    g.add_argument("--rtd", type=_on_off, default=d.rtd, metavar="{on,off}",
                   help="replaced-token detection in the warm-up stage (default on)")
    g.add_argument("--batch-size", type=int, default=d.batch_size, help="normal sequences per batch (default 32)")
    g.add_argument("--lr", type=float, default=d.learning_rate, help=f"Adam learning rate (default {d.learning_rate:g})")
    g.add_argument("--clip-norm", type=float, default=d.clip_norm, help="global gradient-norm clip (default 1.0)")
    g.add_argument("--embed-dim", type=int, default=d.embed_dim, help="hidden size (default 256)")
    g.add_argument("--layers", type=int, default=d.n_layers, help="encoder layers (default 4)")
    g.add_argument("--heads", type=int, default=d.n_heads, help="attention heads (default 4)")
    g.add_argument("--ff-dim", type=int, default=d.ff_dim, help="feed-forward size (default 256)")
    g.add_argument("--max-len", type=int, default=d.max_len, help="max tokens incl. [CLS] (default 512)")
    g.add_argument("--dropout", type=float, default=d.dropout_rate, help="dropout rate (default 0.1)")


def _quantile_flag(p):
    p.add_argument("--quantile", type=float, default=0.99, help="validation quantile used as threshold (default 0.99)")


def _model_input_flags(p, threshold=True):
    p.add_argument("--checkpoint", required=True,
                   help="discriminator checkpoint, or a directory holding discriminator.ckpt")
    p.add_argument("--vocab", help="vocab file (default: vocab.tsv next to the checkpoint)")
    if threshold:
        p.add_argument("--threshold", help="threshold.json (default: next to the checkpoint)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fastlogad", description="Log anomaly detection with pseudo-anomaly training.")
    parser.add_argument("--version", action="version", version=f"fastlogad {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("parse", help="parse raw logs into templates")
    p.add_argument("--logs", required=True, help="raw log file")
    _dataset_flags(p)
    _common(p)

    p = sub.add_parser("group", help="group parsed logs into sequences and split them")
    p.add_argument("--parsed", required=True, help="parsed.tsv written by parse")
    _dataset_flags(p)
    _split_flags(p)
    _common(p)

    p = sub.add_parser("build-vocab", help="build the token vocabulary from training sequences")
    p.add_argument("--train", required=True, help="training sequence file")
    _common(p)

    p = sub.add_parser("train", help="train generator and discriminator")
    p.add_argument("--train", required=True, help="training sequence file (normal only)")
    p.add_argument("--val", help="validation sequence file (reported in train_report.csv)")
    p.add_argument("--vocab", help="vocab file (default: built from --train)")
    _model_flags(p)
    _common(p)

    p = sub.add_parser("calibrate", help="set the threshold from validation scores")
    _model_input_flags(p, threshold=False)
    p.add_argument("--val", required=True, help="normal-only validation sequence file")
    _quantile_flag(p)
    _common(p)

    p = sub.add_parser("detect", help="flag anomalous sequences")
    _model_input_flags(p)
    p.add_argument("--input", required=True, help="sequence file to score")
    _common(p)

    p = sub.add_parser("eval", help="score labeled sequences and write eval_report.json")
    _model_input_flags(p)
    p.add_argument("--test", required=True, help="labeled sequence file")
    _common(p)

    p = sub.add_parser("bench", help="time discriminator-only detection")
    _model_input_flags(p, threshold=False)
    p.add_argument("--input", help="sequence file (default: test.seq next to the checkpoint)")
    p.add_argument("--batch", type=int, default=64, help="sequences per batch (default 64)")
    p.add_argument("--repeats", type=int, default=3, help="timed passes over the input (default 3)")
    p.add_argument("--diagnostic", action="store_true",
                   help="also time a generator + discriminator pass on the same batches")
    p.add_argument("--generator-checkpoint", help="generator checkpoint for --diagnostic")
    p.add_argument("--mask-ratio", type=float, default=0.5, help="mask ratio for --diagnostic (default 0.5)")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--n-train", type=int, default=4000, help="training normals (default 4000)")
    p.add_argument("--n-val", type=int, default=500, help="validation normals (default 500)")
    p.add_argument("--n-test-normal", type=int, default=1000, help="test normals (default 1000)")
    p.add_argument("--n-anomalies", type=int, default=200, help="injected test anomalies (default 200)")
    p.add_argument("--intensity", type=float, default=0.2, help="share of events corrupted per anomaly (default 0.2)")
    _common(p)

    p = sub.add_parser("pipeline", help="parse, group, build-vocab, train, calibrate, detect and eval")
    p.add_argument("--data", help="directory written by synth (logs.log, labels.csv, dataset.cfg)")
    p.add_argument("--logs", help="raw log file (instead of --data)")
    _dataset_flags(p)
    _split_flags(p)
    _model_flags(p)
    _quantile_flag(p)
    p.add_argument("--mask-ratio-sweep", type=_sweep, metavar="START:STOP:STEP",
                   help="rerun train + eval for each mask ratio and write sweep.csv")
    _common(p)
    return parser


# -- config files ----------------------------------------------------------


def read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    text = path.read_text()
    if not text.lstrip().startswith("["):
        text = "[fastlogad]\n" + text
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    values = {}
    for section in cp.sections():
        for key, value in cp[section].items():
            values[key.replace("-", "_")] = value
    return values


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str], all_dests: set[str]):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, text in values.items():
        if key == "config":
            raise UsageError("a config file may not name another config file")
        if key not in actions:
            if key in all_dests:
                continue  # meant for another command
            raise UsageError(f"unknown config key {key!r}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            value = _on_off(text)
        elif action.type is not None:
            try:
                value = action.type(text)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        else:
            value = text
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = value
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False
    sub.set_defaults(**defaults)


def _subparsers(parser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    subs = _subparsers(parser)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(f"missing command; choose from {', '.join(COMMANDS)}")
    config_path = getattr(args, "config", None)
    if config_path is None and args.command == "pipeline" and args.data:
        # a synth directory carries the split sizes that match its corpus
        bundled = Path(args.data) / "fastlogad.cfg"
        config_path = bundled if bundled.exists() else None
    if config_path:
        all_dests = {a.dest for p in subs.values() for a in p._actions}
        _apply_config(subs[args.command], read_config(config_path), all_dests)
        args = parser.parse_args(argv)
    return args


def effective_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "verbose", "out")}


def train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            generator=args.generator, mask_ratio=args.mask_ratio, hst_weight=args.hst_weight,
            stage1_epochs=args.stage1_epochs, stage2_epochs=args.stage2_epochs, rtd=args.rtd,
            batch_size=args.batch_size, learning_rate=args.lr, clip_norm=args.clip_norm, seed=args.seed,
            embed_dim=args.embed_dim, n_layers=args.layers, n_heads=args.heads, ff_dim=args.ff_dim,
            max_len=args.max_len, dropout_rate=args.dropout,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- helpers ----------------------------------------------------------------


def _out_dir(args, fallback=None) -> Path:
    out = args.out or fallback
    if out is None:
        raise UsageError("--out is required")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str):
    path.write_text(text)
    logger.info("wrote %s", path)


def _checkpoint_dir(args) -> Path:
    ckpt = Path(args.checkpoint)
    return ckpt if ckpt.is_dir() else ckpt.parent


def _load_model(args):
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / "discriminator.ckpt"
    vocab = load_vocab(args.vocab or _checkpoint_dir(args) / "vocab.tsv")
    loaded = load_checkpoint(ckpt, vocab)
    if loaded.role != "discriminator":
        raise DataError(f"{ckpt} holds a {loaded.role}, not a discriminator")
    return model_from_checkpoint(loaded), vocab


def _load_threshold(args) -> Threshold:
    path = Path(args.threshold) if args.threshold else _checkpoint_dir(args) / "threshold.json"
    if not path.exists():
        raise DataError(f"threshold file {path} does not exist")
    try:
        return Threshold(**json.loads(path.read_text()))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: malformed threshold file ({exc})") from None


def _dataset_spec(args) -> DatasetSpec:
    return DatasetSpec.resolve(args.dataset)


def _split_and_write(seqs, args, out: Path):
    try:
        split = chronological_split(seqs, args.train_count, args.val_fraction)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    write_sequences(out / "train.seq", split.train)
    write_sequences(out / "val.seq", split.val)
    write_sequences(out / "test.seq", split.test)
    return split


def _group(parsed, spec: DatasetSpec, labels):
    if spec.window.mode == "session":
        grouping = group_session(parsed, spec.window, labels)
        if grouping.rejected:
            logger.warning("%d lines had no identifier and were rejected", len(grouping.rejected))
        return grouping.sequences, len(grouping.rejected)
    return group_sliding(parsed, spec.window), 0


def _parse_logs(logs_path, spec: DatasetSpec, label_path, with_labels=True):
    lines, labels = load_dataset(logs_path, spec, label_path, with_labels)
    parser = DrainParser(masks=spec.masks)
    parsed = [parser.parse_line(line) for line in lines]
    return parser, parsed, labels


# -- commands ---------------------------------------------------------------


def cmd_parse(args):
    out = _out_dir(args)
    spec = _dataset_spec(args)
    parser, parsed, _ = _parse_logs(args.logs, spec, None, with_labels=False)
    write_parsed(out / "parsed.tsv", parsed)
    _write(out / "templates.tsv", parser.templates_tsv())
    print(f"parsed {len(parsed)} lines into {len(parser.templates)} templates")


def cmd_group(args):
    out = _out_dir(args)
    spec = _dataset_spec(args)
    labels = {}
    if spec.label_source == "csv":
        if not args.labels:
            raise DataError(f"dataset {spec.name} needs --labels")
        labels = load_label_csv(args.labels)
    seqs, n_rejected = _group(read_parsed(args.parsed), spec, labels)
    write_sequences(out / "sequences.seq", seqs)
    split = _split_and_write(seqs, args, out)
    print(f"{len(seqs)} sequences ({n_rejected} lines rejected): train {len(split.train)}, "
          f"val {len(split.val)}, test {len(split.test)}")


def cmd_build_vocab(args):
    out = _out_dir(args)
    vocab = Vocabulary.build(read_sequences(args.train))
    save_vocab(out / "vocab.tsv", vocab)
    print(f"vocabulary of {len(vocab)} tokens")


def _train_and_save(config: TrainConfig, train_seqs, val_seqs, vocab, out: Path, args):
    result = train(train_seqs, vocab, config, val_seqs)
    save_vocab(out / "vocab.tsv", vocab)
    save_checkpoint(out / "discriminator.ckpt", result.discriminator, "discriminator", vocab,
                    extra={"train_config": config.to_dict()})
    if result.generator is not None:
        save_checkpoint(out / "generator.ckpt", result.generator, "generator", vocab,
                        extra={"train_config": config.to_dict()})
    _write(out / "train_report.csv", result.report.to_csv())
    _write(out / "config.json", dumps_json({"command": effective_config(args), "train": config.to_dict()}))
    return result


def cmd_train(args):
    out = _out_dir(args)
    config = train_config(args)
    train_seqs = read_sequences(args.train)
    val_seqs = read_sequences(args.val) if args.val else None
    vocab = load_vocab(args.vocab) if args.vocab else Vocabulary.build(train_seqs)
    result = _train_and_save(config, train_seqs, val_seqs, vocab, out, args)
    final = ", ".join(f"{k}={v:.4g}" for k, v in result.report.final.items())
    print(f"trained {config.generator} variant on {len(train_seqs)} sequences" + (f" ({final})" if final else ""))


def cmd_calibrate(args):
    out = _out_dir(args, _checkpoint_dir(args))
    disc, vocab = _load_model(args)
    threshold = calibrate(anomaly_scores(read_sequences(args.val), disc, vocab), args.quantile)
    _write(out / "threshold.json", dumps_json(vars(threshold)))
    print(f"threshold {threshold.epsilon:.6g} (q={threshold.quantile}, n={threshold.n_calibration})")


def cmd_detect(args):
    out = _out_dir(args)
    disc, vocab = _load_model(args)
    verdicts = detect(read_sequences(args.input), disc, vocab, _load_threshold(args))
    _write(out / "verdicts.csv", verdicts_to_csv(verdicts))
    print(f"{sum(v.is_anomaly for v in verdicts)} of {len(verdicts)} sequences flagged")


def eval_report(seqs, disc, vocab, threshold: Threshold, config: dict, fingerprint: str) -> dict:
    scores = anomaly_scores(seqs, disc, vocab)
    labels = np.array([s.label for s in seqs])
    result = evaluate(scores, labels, threshold.epsilon)
    return {"config": config, "dataset_sha256": fingerprint, "n_sequences": len(seqs),
            "n_anomalies": int(labels.sum()), "quantile": threshold.quantile, **result}


def cmd_eval(args):
    out = _out_dir(args)
    disc, vocab = _load_model(args)
    seqs = read_sequences(args.test)
    report = eval_report(seqs, disc, vocab, _load_threshold(args), effective_config(args),
                         _fingerprint(seqs))
    _write(out / "eval_report.json", dumps_json(report))
    print(f"precision {report['precision']:.4f} recall {report['recall']:.4f} F1 {report['f1']:.4f}")


def _fingerprint(*groups) -> str:
    h = hashlib.sha256()
    for seqs in groups:
        h.update(sequences_to_text(seqs).encode())
    return h.hexdigest()


def cmd_bench(args):
    out = _out_dir(args)
    disc, vocab = _load_model(args)
    input_path = args.input or _checkpoint_dir(args) / "test.seq"
    seqs = read_sequences(input_path)
    reports = [bench(seqs, disc, vocab, args.batch, args.repeats, args.threads, seed=args.seed)]
    if args.diagnostic:
        gen_path = args.generator_checkpoint or _checkpoint_dir(args) / "generator.ckpt"
        generator = model_from_checkpoint(load_checkpoint(gen_path, vocab))
        reports.append(bench(seqs, disc, vocab, args.batch, args.repeats, args.threads, generator=generator,
                             diagnostic=True, mask_ratio=args.mask_ratio, seed=args.seed))
    for r in reports:
        print(r.summary())
    fingerprint = environment_fingerprint()
    _write(out / "bench.csv", bench_to_csv(reports, fingerprint))


_SYNTH_FLAGS = [("embed_dim", "embed_dim"), ("layers", "n_layers"), ("heads", "n_heads"), ("ff_dim", "ff_dim"),
                ("dropout", "dropout_rate"), ("lr", "learning_rate")]


def cmd_synth(args):
    out = _out_dir(args)
    try:
        data = synthetic_benchmark(args.seed, args.n_train, args.n_val, args.n_test_normal, args.n_anomalies,
                                   args.intensity)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_sequences(out / "train.seq", data.train)
    write_sequences(out / "val.seq", data.val)
    write_sequences(out / "test.seq", data.test)
    all_seqs = data.train + data.val + data.test
    lines, labels = render_logs(all_seqs, np.random.default_rng([args.seed, 17]))
    _write(out / "logs.log", "\n".join(lines) + "\n")
    _write(out / "labels.csv", "BlockId,Label\n" + "".join(f"{k},{v}\n" for k, v in labels.items()))
    _write(out / "dataset.cfg", SYNTH_DATASET_CFG)
    n_pool = args.n_train + args.n_val
    model = "".join(f"{flag} = {SYNTH_TRAIN_SETTINGS[key]!r}\n" for flag, key in _SYNTH_FLAGS)
    _write(out / "fastlogad.cfg", f"train_count = {n_pool}\nval_fraction = {args.n_val / n_pool!r}\n{model}")
    print(f"wrote {len(all_seqs)} sequences ({len(lines)} log lines) to {out}")


def cmd_pipeline(args):
    if bool(args.data) == bool(args.logs):
        raise UsageError("give exactly one of --data or --logs")
    labels_path, dataset = args.labels, args.dataset
    if args.data:
        data = Path(args.data)
        logs_path = data / "logs.log"
        labels_path = labels_path or data / "labels.csv"
        dataset = str(data / "dataset.cfg") if (data / "dataset.cfg").exists() else dataset
    else:
        logs_path = Path(args.logs)
    out = _out_dir(args, Path(args.data) / "run" if args.data else None)
    spec = DatasetSpec.resolve(dataset)
    args.dataset = dataset
    config = train_config(args)

    parser, parsed, labels = _parse_logs(logs_path, spec, labels_path if spec.label_source == "csv" else None)
    write_parsed(out / "parsed.tsv", parsed)
    _write(out / "templates.tsv", parser.templates_tsv())
    seqs, _ = _group(parsed, spec, labels)
    split = _split_and_write(seqs, args, out)
    vocab = Vocabulary.build(split.train)
    fingerprint = _fingerprint(split.train, split.val, split.test)
    echo = effective_config(args)

    ratios = args.mask_ratio_sweep or [config.mask_ratio]
    rows = []
    for r in ratios:
        cfg = TrainConfig(**{**config.to_dict(), "mask_ratio": r})
        run_out = out if len(ratios) == 1 else out / f"mask_ratio_{r:g}"
        run_out.mkdir(parents=True, exist_ok=True)
        result = _train_and_save(cfg, split.train, split.val, vocab, run_out, args)
        disc = result.discriminator
        threshold = calibrate(anomaly_scores(split.val, disc, vocab), args.quantile)
        _write(run_out / "threshold.json", dumps_json(vars(threshold)))
        verdicts = detect(split.test, disc, vocab, threshold)
        _write(run_out / "verdicts.csv", verdicts_to_csv(verdicts))
        report = eval_report(split.test, disc, vocab, threshold, {**echo, "mask_ratio": r, "train": cfg.to_dict()},
                             fingerprint)
        _write(run_out / "eval_report.json", dumps_json(report))
        rows.append((r, report["precision"], report["recall"], report["f1"]))
        print(f"mask_ratio {r:g}: precision {report['precision']:.4f} recall {report['recall']:.4f} "
              f"F1 {report['f1']:.4f}")
    if args.mask_ratio_sweep:
        _write(out / "sweep.csv", "mask_ratio,precision,recall,f1\n"
               + "".join(f"{r:g},{p:.6f},{rc:.6f},{f:.6f}\n" for r, p, rc, f in rows))


HANDLERS = {
    "parse": cmd_parse, "group": cmd_group, "build-vocab": cmd_build_vocab, "train": cmd_train,
    "calibrate": cmd_calibrate, "detect": cmd_detect, "eval": cmd_eval, "bench": cmd_bench,
    "synth": cmd_synth, "pipeline": cmd_pipeline,
}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        with threadpool_limits(limits=args.threads):
            HANDLERS[args.command](args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FastLogADError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


def main():
    sys.exit(run())
