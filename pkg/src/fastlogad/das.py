"""Discriminator: shared trunk, a per-token replaced-token head and the CLS-norm score."""

from __future__ import annotations

import numpy as np

from .encoder import EncoderConfig, TransformerEncoder, truncated_normal
from .exceptions import DataError, NumericError

NORM_FLOOR = 1e-6


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def rtd_loss(logits, targets, valid) -> float:
    """Mean binary cross-entropy over valid (non-CLS, non-PAD) positions."""
    logits = np.asarray(logits, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("RTD loss needs at least one non-pad event position")
    t = np.asarray(targets, dtype=np.float64)
    per_token = _softplus(logits) - t * logits
    return float(per_token[valid].sum() / count)


def rtd_loss_grad(logits, targets, valid) -> np.ndarray:
    """d rtd_loss / d logits."""
    valid = np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("RTD loss needs at least one non-pad event position")
    g = (_sigmoid(np.asarray(logits, dtype=np.float64)) - np.asarray(targets, dtype=np.float64)) / count
    return np.where(valid, g, 0.0)


def _check_hst_inputs(norms, y, lam):
    norms = np.asarray(norms, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.isnan(norms).any():
        raise NumericError("NaN embedding norm in the hyperspherical loss")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if norms.size == 0:
        raise ValueError("hyperspherical loss needs a non-empty batch")
    return norms, y


def hst_loss_terms(norms, y, lam: float = 1.0) -> np.ndarray:
    """Per-sample loss: the norm for y=0, -lam*log(1-exp(-norm)) for y=1."""
    norms, y = _check_hst_inputs(norms, y, lam)
    floored = np.maximum(norms, NORM_FLOOR)
    with np.errstate(divide="ignore"):
        push = -lam * np.log(-np.expm1(-floored))
    return np.where(y > 0, push, norms)


def hst_loss(norms, y, lam: float = 1.0) -> float:
    return float(np.mean(hst_loss_terms(norms, y, lam)))


def hst_loss_grad(norms, y, lam: float = 1.0) -> np.ndarray:
    """d hst_loss / d norm for every sample (batch mean included)."""
    norms, y = _check_hst_inputs(norms, y, lam)
    floored = np.maximum(norms, NORM_FLOOR)
    push = -lam / np.expm1(floored)
    return np.where(y > 0, push, 1.0) / norms.size


def norm_grad_to_embedding(dnorm, emb) -> np.ndarray:
    """Chain d/d||e|| into d/de = dnorm * e/||e||; zero where ||e|| = 0."""
    emb = np.asarray(emb)
    n = np.linalg.norm(emb, axis=-1, keepdims=True)
    unit = np.divide(emb, n, out=np.zeros_like(emb), where=n > 0)
    return np.asarray(dnorm)[..., None] * unit


class Discriminator:
    """Transformer trunk with a linear replaced-token head; the CLS norm is the anomaly score."""

    def __init__(self, config: EncoderConfig, params: dict | None = None, *, rng=None,
                 dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = config
        trunk = None if params is None else {k: v for k, v in params.items() if not k.startswith("head.")}
        self.encoder = TransformerEncoder(config, trunk, rng=rng, dtype=dtype)
        if params is None:
            self.head = {
                "head.rtd.weight": truncated_normal(rng, (config.embed_dim,), dtype=dtype),
                "head.rtd.bias": np.zeros(1, dtype=dtype),
            }
        else:
            self.head = {k: v for k, v in params.items() if k.startswith("head.")}
            if self.head.get("head.rtd.weight", np.empty(0)).shape != (config.embed_dim,):
                raise DataError("discriminator checkpoint lacks a replaced-token head")

    @property
    def params(self) -> dict:
        return {**self.encoder.params, **self.head}

    def rtd_logits(self, hidden):
        return hidden @ self.head["head.rtd.weight"] + self.head["head.rtd.bias"][0]

    def rtd_step(self, ids, attn_mask, m, *, train=True, rng=None):
        """RTD loss and gradients (trunk + head) for a CLS-prefixed batch."""
        hidden, cache = self.encoder.forward_with_cache(ids, attn_mask, train=train, rng=rng)
        logits = self.rtd_logits(hidden)
        valid = np.asarray(attn_mask, dtype=bool).copy()
        valid[:, 0] = False
        loss = rtd_loss(logits, m, valid)
        dlogits = rtd_loss_grad(logits, m, valid).astype(self.encoder.dtype)
        grads = {
            "head.rtd.weight": np.einsum("bl,bld->d", dlogits, hidden),
            "head.rtd.bias": np.array([dlogits.sum()], dtype=self.encoder.dtype),
        }
        dh = dlogits[..., None] * self.head["head.rtd.weight"]
        grads.update(self.encoder.backward(dh, cache))
        return loss, grads

    def hst_step(self, ids, attn_mask, y, lam=1.0, *, train=True, rng=None):
        """HST loss and trunk gradients; the RTD head receives none."""
        hidden, cache = self.encoder.forward_with_cache(ids, attn_mask, train=train, rng=rng, cls_only=True)
        emb = hidden[:, 0]
        norms = np.linalg.norm(emb.astype(np.float64), axis=-1)
        loss = hst_loss(norms, y, lam)
        demb = norm_grad_to_embedding(hst_loss_grad(norms, y, lam), emb.astype(np.float64))
        dh = np.zeros_like(hidden)
        dh[:, 0] = demb
        return loss, norms, self.encoder.backward(dh, cache)

    def cls_embedding(self, ids, attn_mask) -> np.ndarray:
        return self.encoder.forward(ids, attn_mask, cls_only=True)[:, 0]

    def score(self, ids, attn_mask) -> np.ndarray:
        """Anomaly scores: Euclidean norm of the final-layer CLS state (eval mode)."""
        emb = self.cls_embedding(ids, attn_mask)
        return np.linalg.norm(emb.astype(np.float64), axis=-1)
