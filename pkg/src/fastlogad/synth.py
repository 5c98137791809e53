"""Synthetic template-level log workloads with injected anomalies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grouper import EventSequence

INJECTION_MODES = ("foreign_token", "shuffle", "rare_transition")
FOREIGN_BASE = 10_000


@dataclass
class GrammarSpec:
    templates: np.ndarray
    start_weights: np.ndarray
    transitions: np.ndarray
    min_len: int = 8
    max_len: int = 32
    seed: int = 0

    def __post_init__(self):
        self.templates = np.asarray(self.templates, dtype=np.int64)
        self.start_weights = np.asarray(self.start_weights, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        n = len(self.templates)
        if self.transitions.shape != (n, n) or self.start_weights.shape != (n,):
            raise ValueError("transition table and weights must match the template count")
        if not np.allclose(self.transitions.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition rows must sum to 1")
        if self.min_len < 2 or self.max_len < self.min_len:
            raise ValueError("session lengths must satisfy 2 <= min_len <= max_len")
        self.start_weights = self.start_weights / self.start_weights.sum()

    @property
    def alphabet(self) -> set[int]:
        return set(int(t) for t in self.templates)

    def accepts(self, events: Sequence[int]) -> bool:
        """True iff the grammar can emit ``events`` (known templates, nonzero transitions)."""
        index = {int(t): i for i, t in enumerate(self.templates)}
        states = [index.get(int(e)) for e in events]
        if any(s is None for s in states) or self.start_weights[states[0]] <= 0:
            return False
        return all(self.transitions[a, b] > 0 for a, b in zip(states, states[1:]))


def default_grammar(seed: int = 0, n_templates: int = 20, min_len: int = 8, max_len: int = 32) -> GrammarSpec:
    """A dominant cyclic path 1 -> 2 -> ... -> n -> 1 with two sparse branches per state."""
    rng = np.random.default_rng([seed, 7])
    n = n_templates
    trans = np.zeros((n, n))
    for i in range(n):
        trans[i, (i + 1) % n] = 0.7
        trans[i, (i + 2) % n] += 0.2
        branch = int(rng.choice([j for j in range(n) if j not in (i, (i + 1) % n, (i + 2) % n)]))
        trans[i, branch] += 0.1
    weights = np.ones(n)
    weights[: max(1, n // 4)] = 4.0
    return GrammarSpec(np.arange(1, n + 1), weights, trans, min_len, max_len, seed)


def gen_normal(spec: GrammarSpec, count: int, rng=None, start_index: int = 0) -> list[EventSequence]:
    """Sessions drawn from the Markov grammar; seeded by ``spec.seed`` unless ``rng`` is given."""
    rng = np.random.default_rng([spec.seed, 11]) if rng is None else rng
    n = len(spec.templates)
    cdf = np.cumsum(spec.transitions, axis=1)
    out = []
    for k in range(count):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        state = int(rng.choice(n, p=spec.start_weights))
        states = [state]
        u = rng.random(length - 1)
        for x in u:
            state = min(int(np.searchsorted(cdf[state], x, side="right")), n - 1)
            states.append(state)
        idx = start_index + k
        out.append(EventSequence(f"synth-{idx:06d}", [int(spec.templates[s]) for s in states], 0, float(idx)))
    return out


@dataclass
class AnomalyInjector:
    mode: str = "foreign_token"
    intensity: float = 0.2

    def __post_init__(self):
        if self.mode not in INJECTION_MODES:
            raise ValueError(f"mode must be one of {INJECTION_MODES}, got {self.mode!r}")
        if not 0.0 < self.intensity <= 1.0:
            raise ValueError("intensity must lie in (0, 1]")

    def corrupt(self, events: Sequence[int], rng, grammar: GrammarSpec | None = None,
                max_tries: int = 100) -> list[int]:
        """Corrupted copy of ``events``; with a grammar, the copy is one it cannot emit."""
        events = list(events)
        d = len(events)
        k = max(1, int(round(self.intensity * d)))
        for _ in range(max_tries):
            if self.mode == "shuffle" and len(set(events)) > 1:
                out = _shuffle(events, k, rng)
            elif self.mode == "rare_transition" and grammar is not None:
                out = _rare_transitions(events, k, rng, grammar)
            else:
                break
            if out != events and (grammar is None or not grammar.accepts(out)):
                return out
        # foreign_token, or a fallback when the other modes cannot produce an anomaly
        out = list(events)
        for pos in rng.choice(d, size=min(k, d), replace=False):
            out[int(pos)] = FOREIGN_BASE + int(rng.integers(0, 1000))
        return out


def _shuffle(events, k, rng):
    k = max(2, k)
    while True:
        pos = np.sort(rng.choice(len(events), size=min(k, len(events)), replace=False))
        out = list(events)
        for src, dst in zip(pos, rng.permutation(pos)):
            out[int(dst)] = events[int(src)]
        if out != events:
            return out


def _rare_transitions(events, k, rng, grammar):
    index = {int(t): i for i, t in enumerate(grammar.templates)}
    out = list(events)
    for pos in rng.choice(len(events), size=min(k, len(events)), replace=False):
        pos = int(pos)
        if pos == 0:
            prev_state = None
        else:
            prev_state = index.get(out[pos - 1])
        if prev_state is None:
            banned = {out[pos]}
        else:
            row = grammar.transitions[prev_state]
            banned = {int(grammar.templates[j]) for j in np.nonzero(row > 0)[0]} | {out[pos]}
        choices = [int(t) for t in grammar.templates if int(t) not in banned]
        if choices:
            out[pos] = choices[int(rng.integers(0, len(choices)))]
    return out


def inject(seqs: Sequence[EventSequence], injector, fraction: float, rng,
           grammar: GrammarSpec | None = None) -> list[EventSequence]:
    """Corrupt exactly round(fraction * n) sequences and label them 1.

    ``injector`` may be a list, in which case modes are assigned round-robin.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    injectors = list(injector) if isinstance(injector, (list, tuple)) else [injector]
    n_bad = int(round(fraction * len(seqs)))
    chosen = np.sort(rng.choice(len(seqs), size=n_bad, replace=False)) if n_bad else []
    which = {int(c): injectors[j % len(injectors)] for j, c in enumerate(chosen)}
    out = []
    for i, seq in enumerate(seqs):
        if i in which:
            events = which[i].corrupt(seq.event_ids, rng, grammar)
            out.append(EventSequence(seq.seq_id, events, 1, seq.first_timestamp))
        else:
            out.append(EventSequence(seq.seq_id, list(seq.event_ids), 0, seq.first_timestamp))
    return out


@dataclass
class SyntheticBenchmark:
    train: list
    val: list
    test: list
    grammar: GrammarSpec = field(repr=False, default=None)


def synthetic_benchmark(seed: int = 0, n_train=4000, n_val=500, n_test_normal=1000, n_anomalies=200,
                        intensity: float = 0.2, grammar: GrammarSpec | None = None) -> SyntheticBenchmark:
    """Chronological train / val / test corpus; test mixes all three injection modes."""
    grammar = default_grammar(seed) if grammar is None else grammar
    rng = np.random.default_rng([seed, 13])
    n_test = n_test_normal + n_anomalies
    normals = gen_normal(grammar, n_train + n_val + n_test, rng)
    train, val = normals[:n_train], normals[n_train : n_train + n_val]
    injectors = [AnomalyInjector(mode, intensity) for mode in INJECTION_MODES]
    test = inject(normals[n_train + n_val :], injectors, n_anomalies / n_test, rng, grammar)
    return SyntheticBenchmark(train, val, test, grammar)


# -- raw log rendering -----------------------------------------------------

_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"
SYNTH_EPOCH = 1_700_000_000
SYNTH_HEADER_FIELDS = 3


def _word(k: int) -> str:
    """Distinct lowercase pseudo-word for every k >= 0 (letters only)."""
    out = ""
    while True:
        k, c = divmod(k, len(_CONSONANTS))
        k, v = divmod(k, len(_VOWELS))
        out += _CONSONANTS[c] + _VOWELS[v]
        if k == 0:
            return out
        k -= 1


def template_text(event: int) -> str:
    """Message skeleton of a synthetic event; ``{blk}`` and ``{n}`` are the variable slots."""
    if event >= FOREIGN_BASE:
        return "fault " + _word(5 * event) + " in {blk} code {n}"
    words = " ".join(_word(5 * event + j) for j in range(3 + event % 3))
    return words + " {blk} {n}"


def block_id(index: int) -> str:
    return f"blk_{1_000_000 + index}"


def render_logs(seqs, rng=None) -> tuple[list[str], dict[str, str]]:
    """Raw log lines (one block per sequence, blocks in order) and a block -> label map.

    Line layout: ``<epoch> <level> <component>: <message>``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lines, labels = [], {}
    for i, seq in enumerate(seqs):
        blk = block_id(i)
        labels[blk] = "Anomaly" if seq.label else "Normal"
        for event in seq.event_ids:
            msg = template_text(int(event)).format(blk=blk, n=int(rng.integers(1, 10_000)))
            lines.append(f"{SYNTH_EPOCH + i} INFO synth.node: {msg}")
    return lines, labels


# Model settings that train to separation on the default benchmark within a few
# minutes on one CPU core. The paper-sized defaults (4 layers, width 256) need
# roughly 25 minutes for the same schedule there.
SYNTH_TRAIN_SETTINGS = dict(embed_dim=64, n_layers=2, n_heads=4, ff_dim=64, dropout_rate=0.0, learning_rate=1e-3)

SYNTH_DATASET_CFG = """\
# Synthetic corpus written by `fastlogad synth`.
# Line: <epoch> <level> <component>: <message>; labels in labels.csv.
[dataset]
name = synth
header_fields = 3
timestamp_fields = 0
timestamp_format = epoch
label_source = csv
label_field =
window_mode = session
identifier_pattern = blk_-?\\d+
"""
