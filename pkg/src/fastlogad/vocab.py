"""Event-id vocabulary and fixed-length encoding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataError

PAD, UNK, CLS, MASK = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[MASK]")
N_RESERVED = len(RESERVED)
VOCAB_HEADER = "#fastlogad-vocab\tv1"


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    attn_mask: np.ndarray
    label: int = 0


@dataclass
class Vocabulary:
    """Template id -> token index, with PAD=0, UNK=1, CLS=2, MASK=3 reserved."""

    index: dict[int, int] = field(default_factory=dict)

    @classmethod
    def build(cls, train_seqs: Iterable) -> "Vocabulary":
        index: dict[int, int] = {}
        n_seqs = 0
        for seq in train_seqs:
            n_seqs += 1
            for event in _events(seq):
                if event not in index:
                    index[event] = N_RESERVED + len(index)
        if n_seqs == 0:
            raise DataError("cannot build a vocabulary from an empty training set")
        return cls(index)

    def __len__(self) -> int:
        return N_RESERVED + len(self.index)

    @property
    def size(self) -> int:
        return len(self)

    @property
    def candidates(self) -> np.ndarray:
        """Token indices a generator may emit: UNK plus every event token."""
        return np.concatenate([[UNK], np.arange(N_RESERVED, len(self))]).astype(np.int64)

    def lookup(self, event: int) -> int:
        return self.index.get(int(event), UNK)

    def tokens(self) -> list[str]:
        inverse = {i: str(t) for t, i in self.index.items()}
        return list(RESERVED) + [inverse[i] for i in range(N_RESERVED, len(self))]

    def decode(self, ids: Sequence[int]) -> list:
        """Inverse of encode over event positions; UNK stays as the string "[UNK]"."""
        inverse = {i: t for t, i in self.index.items()}
        out = []
        for i in ids:
            i = int(i)
            if i in (PAD, CLS):
                continue
            out.append(inverse.get(i, RESERVED[i] if i < N_RESERVED else None))
        return out

    def to_tsv(self) -> str:
        lines = [VOCAB_HEADER] + [f"{i}\t{tok}" for i, tok in enumerate(self.tokens())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_HEADER:
            raise DataError(f"vocab file must start with {VOCAB_HEADER!r}")
        index = {}
        for n, line in enumerate(lines[1:], start=2):
            try:
                i_str, tok = line.split("\t")
                i = int(i_str)
            except ValueError:
                raise DataError(f"vocab line {n}: expected index<TAB>token, got {line!r}") from None
            if i < N_RESERVED:
                if tok != RESERVED[i]:
                    raise DataError(f"vocab line {n}: reserved index {i} must be {RESERVED[i]}")
                continue
            if i != N_RESERVED + len(index):
                raise DataError(f"vocab line {n}: index {i} out of order")
            index[int(tok)] = i
        return cls(index)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_tsv().encode()).hexdigest()

    def encode(self, seq, max_len: int, with_cls: bool = True, label: int | None = None) -> TokenSequence:
        if max_len < 2:
            raise ValueError("max_len must be at least 2")
        events = list(_events(seq))
        body = [self.lookup(e) for e in events][: max_len - int(with_cls)]
        ids = ([CLS] if with_cls else []) + body
        attn = [1] * len(ids) + [0] * (max_len - len(ids))
        ids = ids + [PAD] * (max_len - len(ids))
        if label is None:
            label = getattr(seq, "label", 0)
        return TokenSequence(np.asarray(ids, dtype=np.int64), np.asarray(attn, dtype=np.int8), int(label))

    def encode_batch(self, seqs: Sequence, max_len: int, with_cls: bool = True):
        """Encode into (ids, attn_mask) padded to the longest sequence in the batch."""
        if max_len < 2:
            raise ValueError("max_len must be at least 2")
        rows = [[self.lookup(e) for e in _events(s)][: max_len - int(with_cls)] for s in seqs]
        width = max((len(r) for r in rows), default=0) + int(with_cls)
        width = max(width, 1)
        ids = np.full((len(rows), width), PAD, dtype=np.int64)
        for n, row in enumerate(rows):
            start = int(with_cls)
            if with_cls:
                ids[n, 0] = CLS
            ids[n, start : start + len(row)] = row
        return ids, (ids != PAD).astype(np.int8)


def _events(seq):
    return seq.event_ids if hasattr(seq, "event_ids") else seq
