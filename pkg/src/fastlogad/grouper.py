"""Group parsed logs into event sequences and split them chronologically."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .exceptions import DataError

logger = logging.getLogger(__name__)

WINDOW_MODES = ("session", "sliding", "fixed")


@dataclass
class WindowSpec:
    mode: str = "session"
    identifier_pattern: str | None = r"blk_-?\d+"
    window_seconds: float | None = None
    step_seconds: float | None = None

    def __post_init__(self):
        if self.mode not in WINDOW_MODES:
            raise ValueError(f"window mode must be one of {WINDOW_MODES}, got {self.mode!r}")
        if self.mode == "session" and not self.identifier_pattern:
            raise ValueError("session windows need an identifier_pattern")
        if self.mode in ("sliding", "fixed"):
            if not self.window_seconds or self.window_seconds <= 0:
                raise ValueError("time windows need window_seconds > 0")
            if self.mode == "fixed":
                self.step_seconds = self.window_seconds
            if not self.step_seconds or self.step_seconds <= 0:
                raise ValueError("sliding windows need step_seconds > 0")
            if self.step_seconds > self.window_seconds:
                raise ValueError("step_seconds may not exceed window_seconds")


@dataclass
class EventSequence:
    seq_id: str
    event_ids: list[int]
    label: int = 0
    first_timestamp: float = 0.0

    def __len__(self):
        return len(self.event_ids)


@dataclass
class SessionGrouping:
    sequences: list[EventSequence]
    rejected: list = field(default_factory=list)


def group_session(logs: Iterable, spec: WindowSpec, labels: Mapping[str, int] | None = None) -> SessionGrouping:
    """One sequence per identifier, in order of first appearance.

    The identifier is looked for in the log's parameters, then its content;
    the first match wins so that every accepted log lands in one sequence.
    Logs without an identifier go to ``rejected``.
    """
    pattern = re.compile(spec.identifier_pattern)
    labels = labels or {}
    groups: dict[str, EventSequence] = {}
    rejected = []
    for log in logs:
        key = _find_identifier(pattern, log)
        if key is None:
            rejected.append(log)
            continue
        seq = groups.get(key)
        if seq is None:
            ts = log.timestamp if log.timestamp is not None else float(len(groups))
            seq = groups[key] = EventSequence(key, [], int(labels.get(key, 0)), ts)
        seq.event_ids.append(log.template_id)
        if getattr(log, "label_flag", None):
            seq.label = 1
    if rejected:
        logger.warning("%d log lines carried no identifier matching %s", len(rejected), spec.identifier_pattern)
    return SessionGrouping(list(groups.values()), rejected)


def _find_identifier(pattern, log):
    for text in list(getattr(log, "parameters", ()) or ()) + [getattr(log, "content", "") or ""]:
        found = pattern.search(text)
        if found:
            return found.group(0)
    return None


def group_sliding(logs: Sequence, spec: WindowSpec) -> list[EventSequence]:
    """Windows [t0 + k*step, t0 + k*step + window), t0 = first timestamp.

    Windows are produced until one covers the last log; empty windows are
    skipped. A window is abnormal iff any member line is flagged.
    """
    logs = list(logs)
    if spec.mode not in ("sliding", "fixed"):
        raise ValueError("group_sliding needs a sliding or fixed WindowSpec")
    if not logs:
        return []
    for log in logs:
        if log.timestamp is None:
            raise DataError(f"line {log.line_no} has no timestamp; time windows need one")
    times = [float(log.timestamp) for log in logs]
    for a, b, log in zip(times, times[1:], logs[1:]):
        if b < a:
            raise DataError(f"line {log.line_no}: timestamps must be nondecreasing")
    t0, t_last = times[0], times[-1]
    window, step = float(spec.window_seconds), float(spec.step_seconds)
    n_windows = max(1, math.floor((t_last - t0 - window) / step) + 2) if t_last - t0 >= window else 1

    out = []
    lo = hi = 0
    for k in range(n_windows):
        start = t0 + k * step
        end = start + window
        while lo < len(times) and times[lo] < start:
            lo += 1
        hi = max(hi, lo)
        while hi < len(times) and times[hi] < end:
            hi += 1
        members = logs[lo:hi]
        if not members:
            continue
        label = int(any(getattr(m, "label_flag", None) for m in members))
        out.append(EventSequence(_fmt_time(start), [m.template_id for m in members], label, start))
    return out


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(t)


@dataclass
class Split:
    train: list[EventSequence]
    val: list[EventSequence]
    test: list[EventSequence]


def chronological_split(seqs: Sequence[EventSequence], train_count: int = 5000,
                        val_fraction: float = 0.1) -> Split:
    """First ``train_count`` normals -> train + val (val = the last fraction of them).

    Every abnormal sequence and the remaining normals form the test split.
    Order is never shuffled.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must lie in [0, 1)")
    ordered = sorted(seqs, key=lambda s: s.first_timestamp)
    normals = [s for s in ordered if s.label == 0]
    if len(normals) < train_count:
        raise DataError(f"only {len(normals)} normal sequences, need train_count={train_count}")
    pool = normals[:train_count]
    n_val = int(round(val_fraction * train_count))
    train, val = pool[: train_count - n_val], pool[train_count - n_val :]
    held = {id(s) for s in pool}
    test = [s for s in ordered if id(s) not in held]
    if not any(s.label for s in test):
        logger.warning("test split has no abnormal sequences")
    return Split(train, val, test)
