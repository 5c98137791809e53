"""Threshold calibration, discriminator-only detection and throughput benchmarking."""

from __future__ import annotations

import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .das import Discriminator
from .exceptions import DataError
from .mgag import apply_mask, sample_masks
from .vocab import PAD, Vocabulary


@dataclass(frozen=True)
class Threshold:
    epsilon: float
    quantile: float = 0.99
    n_calibration: int = 0


@dataclass(frozen=True)
class AnomalyVerdict:
    seq_id: str
    score: float
    threshold: float
    is_anomaly: bool
    latency_ns: int = 0


def calibrate(val_norms, q: float = 0.99) -> Threshold:
    """Nearest-rank q-quantile: the ceil(q*n)-th smallest validation score."""
    norms = np.sort(np.asarray(val_norms, dtype=np.float64).ravel())
    if norms.size == 0:
        raise DataError("cannot calibrate a threshold on an empty validation set")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"quantile must lie in (0, 1], got {q}")
    rank = max(1, math.ceil(round(q * norms.size, 9)))
    return Threshold(float(norms[rank - 1]), q, int(norms.size))


def _check_compatible(discriminator: Discriminator, vocab: Vocabulary):
    if discriminator is None:
        raise DataError("no discriminator loaded")
    if discriminator.config.vocab_size != len(vocab):
        raise DataError(
            f"discriminator expects a vocabulary of {discriminator.config.vocab_size} tokens, "
            f"got {len(vocab)}"
        )


def encode_batches(seqs, vocab: Vocabulary, max_len: int, batch_size: int):
    """Pre-encoded (ids, attn_mask) batches, each padded to its own longest row."""
    ids, _ = vocab.encode_batch(seqs, max_len, with_cls=True)
    lengths = (ids != PAD).sum(axis=1)
    out = []
    for start in range(0, len(seqs), batch_size):
        rows = ids[start : start + batch_size]
        width = int(lengths[start : start + batch_size].max())
        rows = rows[:, :width]
        out.append((rows, (rows != PAD).astype(np.int8)))
    return out


def anomaly_scores(seqs, discriminator: Discriminator, vocab: Vocabulary, batch_size: int = 256):
    _check_compatible(discriminator, vocab)
    if not len(seqs):
        return np.zeros(0)
    batches = encode_batches(seqs, vocab, discriminator.config.max_len, batch_size)
    return np.concatenate([discriminator.score(ids, mask) for ids, mask in batches])


def detect(seqs, discriminator: Discriminator, vocab: Vocabulary, threshold: Threshold | float,
           batch_size: int = 64) -> list[AnomalyVerdict]:
    """One verdict per sequence from a single discriminator pass per batch."""
    _check_compatible(discriminator, vocab)
    eps = threshold.epsilon if isinstance(threshold, Threshold) else float(threshold)
    verdicts = []
    if not len(seqs):
        return verdicts
    batches = encode_batches(seqs, vocab, discriminator.config.max_len, batch_size)
    pos = 0
    for ids, mask in batches:
        t0 = time.perf_counter_ns()
        scores = discriminator.score(ids, mask)
        per_seq = (time.perf_counter_ns() - t0) // len(ids)
        for score in scores:
            seq = seqs[pos]
            verdicts.append(AnomalyVerdict(str(getattr(seq, "seq_id", pos)), float(score), eps,
                                           bool(score > eps), int(per_seq)))
            pos += 1
    return verdicts


def verdicts_to_csv(verdicts) -> str:
    lines = ["seq_id,score,threshold,is_anomaly"]
    lines += [f"{v.seq_id},{v.score:.9g},{v.threshold:.9g},{int(v.is_anomaly)}" for v in verdicts]
    return "\n".join(lines) + "\n"


@dataclass
class BenchReport:
    mode: str
    threads: int
    n_sequences: int
    repeats: int
    batch_size: int
    total_seconds: float
    avg_ms: float
    median_ms: float
    p99_ms: float
    generator_calls: int

    def to_dict(self):
        return asdict(self)

    def summary(self) -> str:
        return (
            f"{self.mode} threads={self.threads}: total {self.total_seconds:.3f} s over "
            f"{self.n_sequences * self.repeats} sequences, Avg. (ms) {self.avg_ms:.2f}, "
            f"median {self.median_ms:.2f}, p99 {self.p99_ms:.2f}"
        )


def environment_fingerprint() -> dict:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return dict(cpu=cpu, cpu_count=os.cpu_count(), python=platform.python_version(),
                numpy=np.__version__)


def bench(seqs, discriminator: Discriminator, vocab: Vocabulary, batch_size: int = 64,
          repeats: int = 1, threads: int = 1, generator=None, diagnostic: bool = False,
          mask_ratio: float = 0.5, seed: int = 0) -> BenchReport:
    """Time the detection path (model only; encoding happens before the clock starts).

    ``diagnostic=True`` times a generator-then-discriminator pass on the same
    batches instead, as a reference for what the detection path avoids.
    ``generator_calls`` counts generator forward passes made while timing.
    """
    _check_compatible(discriminator, vocab)
    if len(seqs) < 100:
        raise DataError("bench needs at least 100 sequences")
    if diagnostic and generator is None:
        raise ValueError("the diagnostic path needs a generator")
    batches = encode_batches(seqs, vocab, discriminator.config.max_len, batch_size)
    rng = np.random.default_rng(seed)
    masks = [sample_masks(mask, mask_ratio, rng) for _, mask in batches] if diagnostic else None

    def run(i):
        ids, mask = batches[i]
        t0 = time.perf_counter_ns()
        if diagnostic:
            m = masks[i]
            generator.forward(apply_mask(ids, m), mask, m)
        discriminator.score(ids, mask)
        return (time.perf_counter_ns() - t0) / len(ids)

    gen_calls_before = generator.encoder.n_forward_calls if generator is not None else 0
    for i in range(len(batches)):
        run(i)  # warm-up, untimed
    per_seq_ns = []
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads) if threads > 1 else _Inline() as pool:
        for _ in range(repeats):
            for ns, (ids, _) in zip(pool.map(run, range(len(batches))), batches):
                per_seq_ns.extend([ns] * len(ids))
    total = time.perf_counter() - start
    gen_calls = (generator.encoder.n_forward_calls - gen_calls_before) if generator is not None else 0
    if not diagnostic:
        assert gen_calls == 0, "detection path invoked the generator"
    else:
        gen_calls -= len(batches)  # exclude warm-up
    ms = np.asarray(per_seq_ns) / 1e6
    return BenchReport(
        mode="generator+discriminator" if diagnostic else "discriminator",
        threads=threads, n_sequences=len(seqs), repeats=repeats, batch_size=batch_size,
        total_seconds=total, avg_ms=total * 1e3 / (len(seqs) * repeats),
        median_ms=float(np.median(ms)), p99_ms=float(np.quantile(ms, 0.99)),
        generator_calls=int(gen_calls),
    )


class _Inline:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @staticmethod
    def map(fn, items):
        return map(fn, items)


def bench_to_csv(reports, fingerprint: dict | None = None) -> str:
    fingerprint = fingerprint or environment_fingerprint()
    cols = ["mode", "threads", "n_sequences", "repeats", "batch_size", "total_seconds", "avg_ms",
            "median_ms", "p99_ms", "generator_calls", "cpu", "cpu_count"]
    lines = [",".join(cols)]
    for r in reports:
        row = {**r.to_dict(), "cpu": fingerprint["cpu"].replace(",", " "), "cpu_count": fingerprint["cpu_count"]}
        lines.append(",".join(f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"
