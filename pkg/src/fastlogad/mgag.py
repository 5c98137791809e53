"""Mask-guided pseudo-anomaly generation.

A normal sequence is masked at a fixed fraction of its event positions and
the masked slots are refilled either uniformly at random (excluding the
original token) or by sampling a trained masked-language model's
*complement* distribution, which favours tokens the model finds unlikely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, TransformerEncoder, truncated_normal
from .exceptions import DataError, NumericError
from .vocab import CLS, MASK, N_RESERVED, PAD, UNK


def mask_count(d: int, r: float) -> int:
    """round(r*d), half up, lifted to 1 when r > 0 and d >= 1."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {r}")
    if d <= 0 or r == 0.0:
        return 0
    return min(d, max(int(np.floor(r * d + 0.5)), 1))


def sample_mask(d: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask over d event positions with exactly mask_count(d, r) set."""
    m = np.zeros(d, dtype=bool)
    k = mask_count(d, r)
    if k:
        m[rng.choice(d, size=k, replace=False)] = True
    return m


def sample_masks(attn_mask: np.ndarray, r: float, rng: np.random.Generator, skip_first=True):
    """Batched :func:`sample_mask` over padded rows.

    Position 0 is excluded when ``skip_first`` (the CLS slot); PAD positions
    are never selected. Uniformity comes from ranking i.i.d. uniform keys.
    """
    attn_mask = np.asarray(attn_mask) > 0
    eligible = attn_mask.copy()
    if skip_first:
        eligible[:, 0] = False
    lengths = eligible.sum(axis=1)
    k = np.array([mask_count(int(d), r) for d in lengths])
    keys = rng.random(eligible.shape)
    keys[~eligible] = np.inf
    ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    return ranks < k[:, None]


def apply_mask(s, m) -> np.ndarray:
    s, m = np.asarray(s), np.asarray(m, dtype=bool)
    if s.shape != m.shape:
        raise ValueError(f"sequence shape {s.shape} != mask shape {m.shape}")
    return np.where(m, MASK, s)


def _candidate_positions(tokens: np.ndarray, vocab_size: int) -> np.ndarray:
    # column of each token within candidates = [UNK, 4, 5, ..., V-1]
    pos = np.where(tokens == UNK, 0, tokens - N_RESERVED + 1)
    if np.any((tokens != UNK) & ((tokens < N_RESERVED) | (tokens >= vocab_size))):
        raise DataError("masked positions must hold UNK or event tokens")
    return pos


def random_generate(s, m, vocab_size: int, rng: np.random.Generator) -> np.ndarray:
    """Refill masked slots uniformly from UNK + event tokens, never the original."""
    if vocab_size < N_RESERVED + 2:
        raise DataError(f"vocabulary of size {vocab_size} is too small for exclusion sampling")
    s = np.asarray(s)
    m = np.asarray(m, dtype=bool)
    if s.shape != m.shape:
        raise ValueError(f"sequence shape {s.shape} != mask shape {m.shape}")
    out = s.copy()
    if not m.any():
        return out
    n_candidates = vocab_size - N_RESERVED + 1
    original = _candidate_positions(s[m], vocab_size)
    draw = rng.integers(0, n_candidates - 1, size=original.shape)
    draw = draw + (draw >= original)
    out[m] = np.where(draw == 0, UNK, draw + N_RESERVED - 1)
    return out


def complement_distribution(p: np.ndarray) -> np.ndarray:
    """(1 - P) / sum(1 - P) along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("complement distribution needs a support of at least 2 tokens")
    q = 1.0 - p
    total = q.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("complement is undefined for this distribution")
    return q / total


def categorical_sample(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of a (n, k) probability table."""
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[0]) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=-1), p.shape[-1] - 1)


def mlm_loss(p_g: np.ndarray, truth_cols: np.ndarray) -> float:
    """Mean negative log-probability of the original tokens."""
    p_g = np.asarray(p_g)
    truth_cols = np.asarray(truth_cols)
    if truth_cols.size == 0:
        raise ValueError("MLM loss needs at least one masked position")
    picked = p_g[np.arange(len(truth_cols)), truth_cols]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(p_g.dtype).tiny))))


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class MLMForward:
    probs: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    hidden: np.ndarray
    cache: object = None


class MLMGenerator:
    """Transformer trunk plus a linear head over the candidate tokens (UNK + events)."""

    def __init__(self, config: EncoderConfig, params: dict | None = None, *, rng=None,
                 dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = config
        trunk = None if params is None else {k: v for k, v in params.items() if not k.startswith("head.")}
        self.encoder = TransformerEncoder(config, trunk, rng=rng, dtype=dtype)
        n_out = config.vocab_size - N_RESERVED + 1
        if params is None:
            self.head = {
                "head.mlm.weight": truncated_normal(rng, (config.embed_dim, n_out), dtype=dtype),
                "head.mlm.bias": np.zeros(n_out, dtype=dtype),
            }
        else:
            self.head = {k: v for k, v in params.items() if k.startswith("head.")}
            if self.head.get("head.mlm.weight", np.empty(0)).shape != (config.embed_dim, n_out):
                raise DataError("generator checkpoint lacks a head matching the vocabulary")

    @property
    def params(self) -> dict:
        return {**self.encoder.params, **self.head}

    @property
    def n_candidates(self) -> int:
        return self.head["head.mlm.bias"].shape[0]

    def candidate_tokens(self) -> np.ndarray:
        return np.concatenate([[UNK], np.arange(N_RESERVED, self.config.vocab_size)])

    def forward(self, masked_ids, attn_mask, m, *, train=False, rng=None, keep_cache=False):
        """P_G over candidates at each masked position (rows in row-major order)."""
        m = np.asarray(m, dtype=bool)
        if keep_cache:
            hidden, cache = self.encoder.forward_with_cache(masked_ids, attn_mask, train=train, rng=rng)
        else:
            hidden, cache = self.encoder.forward(masked_ids, attn_mask, train=train, rng=rng), None
        rows, cols = np.nonzero(m)
        h = hidden[rows, cols]
        logits = h @ self.head["head.mlm.weight"] + self.head["head.mlm.bias"]
        if not np.isfinite(logits).all():
            raise NumericError("non-finite MLM logits")
        probs = np.exp(log_softmax(logits.astype(np.float64)))
        return MLMForward(probs=probs, rows=rows, cols=cols, hidden=h, cache=cache)

    def loss_and_grads(self, out: MLMForward, truth_tokens: np.ndarray):
        """Mean MLM loss and gradients for every generator tensor."""
        truth_cols = _candidate_positions(np.asarray(truth_tokens), self.config.vocab_size)
        loss = mlm_loss(out.probs, truth_cols)
        n = len(truth_cols)
        dlogits = out.probs.copy()
        dlogits[np.arange(n), truth_cols] -= 1.0
        dlogits = (dlogits / n).astype(self.encoder.dtype)
        grads = {
            "head.mlm.weight": out.hidden.T @ dlogits,
            "head.mlm.bias": dlogits.sum(axis=0),
        }
        dh = np.zeros(out.cache.ids.shape + (self.config.embed_dim,), dtype=self.encoder.dtype)
        dh[out.rows, out.cols] = dlogits @ self.head["head.mlm.weight"].T
        grads.update(self.encoder.backward(dh, out.cache))
        return loss, grads

    def generate_from(self, out: MLMForward, s: np.ndarray, rng: np.random.Generator):
        """Fill the masked slots of ``s`` by sampling the complement of ``out.probs``."""
        filled = np.asarray(s).copy()
        if len(out.rows):
            cols = categorical_sample(complement_distribution(out.probs), rng)
            filled[out.rows, out.cols] = self.candidate_tokens()[cols]
        return filled


def mlm_generate(s, attn_mask, m, generator: MLMGenerator, rng: np.random.Generator):
    """Eval-mode MLM generation: mask, predict, sample the complement."""
    s = np.asarray(s)
    m = np.asarray(m, dtype=bool)
    if not m.any():
        return s.copy()
    out = generator.forward(apply_mask(s, m), attn_mask, m)
    return generator.generate_from(out, s, rng)


def is_reserved_artifact(tokens: np.ndarray) -> np.ndarray:
    """True where a generator would have leaked PAD, CLS or MASK."""
    return np.isin(tokens, (PAD, CLS, MASK))
