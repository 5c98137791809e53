"""Post-norm transformer encoder with a hand-written backward pass.

The same architecture backs the MLM generator and the discriminator. All
math is plain numpy; the parameter dtype decides the compute precision
(float32 for training and inference, float64 for gradient checks).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import erf

from .exceptions import DataError, NumericError

LN_EPS = 1e-12
_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class EncoderConfig:
    vocab_size: int
    max_len: int = 512
    embed_dim: int = 256
    n_layers: int = 4
    n_heads: int = 4
    ff_dim: int = 256
    dropout_rate: float = 0.1

    def __post_init__(self):
        for name in ("vocab_size", "max_len", "embed_dim", "n_layers", "n_heads", "ff_dim"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.embed_dim % self.n_heads:
            raise ValueError(
                f"embed_dim={self.embed_dim} is not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every trunk tensor, in checkpoint order."""
    d, f = config.embed_dim, config.ff_dim
    shapes = {
        "embed.token": (config.vocab_size, d),
        "embed.position": (config.max_len, d),
        "embed.norm.scale": (d,),
        "embed.norm.offset": (d,),
    }
    for i in range(config.n_layers):
        p = f"layer{i}."
        for proj in ("query", "key", "value", "output"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "attn_norm.scale"] = (d,)
        shapes[p + "attn_norm.offset"] = (d,)
        shapes[p + "ffn.in.weight"] = (d, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, d)
        shapes[p + "ffn.out.bias"] = (d,)
        shapes[p + "ffn_norm.scale"] = (d,)
        shapes[p + "ffn_norm.offset"] = (d,)
    return shapes


def truncated_normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) resampled until every draw lies within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def init_params(config: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".scale"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".bias", ".offset")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = truncated_normal(rng, shape, dtype=dtype)
    return params


# ---------------------------------------------------------------------------
# primitive ops and their gradients


def layer_norm(x, scale, offset):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv_std
    return xhat * scale + offset, (xhat, inv_std)


def layer_norm_backward(dy, cache, scale):
    xhat, inv_std = cache
    axes = tuple(range(dy.ndim - 1))
    dscale = np.sum(dy * xhat, axis=axes)
    doffset = np.sum(dy, axis=axes)
    dxhat = dy * scale
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dscale, doffset


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT_2))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
    return cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= np.sum(z, axis=axis, keepdims=True)
    return z


def _dense(x, w, b):
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ w + b).reshape(*lead, w.shape[1])


def _dense_backward(dy, x, w):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


def _dropout_mask(rng, shape, rate, dtype):
    keep = rng.random(shape, dtype=np.float32 if dtype == np.float32 else np.float64) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate)


@dataclass
class ForwardCache:
    ids: np.ndarray
    attn_mask: np.ndarray
    cls_only: bool
    embed_norm: tuple = None
    layers: list = field(default_factory=list)


class TransformerEncoder:
    """Token ids of shape (batch, L) -> hidden states of shape (batch, L, embed_dim).

    ``cls_only=True`` runs the last layer for position 0 alone (the other
    positions still serve as keys and values), which is all the anomaly score
    and the hyperspherical loss need.
    """

    def __init__(self, config: EncoderConfig, params: dict | None = None, *, rng=None,
                 dtype=np.float32):
        self.config = config
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            params = init_params(config, rng, dtype=dtype)
        self.params = params
        self.n_forward_calls = 0
        self._check_shapes()

    def _check_shapes(self):
        expected = parameter_shapes(self.config)
        missing = set(expected) - set(self.params)
        if missing:
            raise DataError(f"missing encoder tensors: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != tuple(shape):
                raise DataError(
                    f"tensor {name} has shape {self.params[name].shape}, expected {shape}"
                )

    @property
    def dtype(self):
        return self.params["embed.token"].dtype.type

    def forward(self, ids, attn_mask, *, train=False, rng=None, cls_only=False):
        hidden, _ = self._run(ids, attn_mask, train, rng, cls_only, keep_cache=False)
        return hidden

    def forward_with_cache(self, ids, attn_mask, *, train=False, rng=None, cls_only=False):
        return self._run(ids, attn_mask, train, rng, cls_only, keep_cache=True)

    def _run(self, ids, attn_mask, train, rng, cls_only, keep_cache):
        cfg, p = self.config, self.params
        ids = np.asarray(ids)
        attn_mask = np.asarray(attn_mask)
        if ids.ndim != 2 or attn_mask.shape != ids.shape:
            raise ValueError(f"ids {ids.shape} and attn_mask {attn_mask.shape} must be equal 2-D")
        batch, length = ids.shape
        if length > cfg.max_len:
            raise DataError(f"sequence length {length} exceeds max_len {cfg.max_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise DataError(f"token id out of range [0, {cfg.vocab_size})")
        dropout = cfg.dropout_rate if train else 0.0
        if dropout > 0.0 and rng is None:
            raise ValueError("train mode with dropout needs an rng")
        self.n_forward_calls += 1
        dtype = self.dtype

        cache = ForwardCache(ids=ids, attn_mask=attn_mask, cls_only=cls_only) if keep_cache else None
        add_mask = np.where(attn_mask[:, None, None, :] > 0, 0.0, -np.inf).astype(dtype)

        x = p["embed.token"][ids] + p["embed.position"][:length]
        x, ln_cache = layer_norm(x, p["embed.norm.scale"], p["embed.norm.offset"])
        if keep_cache:
            cache.embed_norm = ln_cache
        self._check_finite(x, "embedding")

        for i in range(cfg.n_layers):
            last = i == cfg.n_layers - 1
            x, layer_cache = self._layer_forward(
                i, x, add_mask, dropout, rng, query_len=1 if (cls_only and last) else None,
                keep_cache=keep_cache,
            )
            if keep_cache:
                cache.layers.append(layer_cache)
            self._check_finite(x, f"layer{i}")
        return x, cache

    @staticmethod
    def _check_finite(x, where):
        if not np.isfinite(x).all():
            raise NumericError(f"non-finite activations after {where}")

    def _split_heads(self, x):
        b, n, _ = x.shape
        h, dh = self.config.n_heads, self.config.head_dim
        return x.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

    def _merge_heads(self, x):
        b, h, n, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)

    def _layer_forward(self, i, x, add_mask, dropout, rng, query_len, keep_cache):
        p = self.params
        pre = f"layer{i}."
        dtype = self.dtype
        xq = x if query_len is None else x[:, :query_len]
        scale = dtype(1.0 / np.sqrt(self.config.head_dim))

        w_qkv = np.concatenate(
            [p[pre + "attn.query.weight"], p[pre + "attn.key.weight"], p[pre + "attn.value.weight"]],
            axis=1,
        )
        b_qkv = np.concatenate(
            [p[pre + "attn.query.bias"], p[pre + "attn.key.bias"], p[pre + "attn.value.bias"]]
        )
        d = self.config.embed_dim
        if query_len is None:
            qkv = _dense(x, w_qkv, b_qkv)
            q, k, v = qkv[..., :d], qkv[..., d : 2 * d], qkv[..., 2 * d :]
        else:
            q = _dense(xq, w_qkv[:, :d], b_qkv[:d])
            kv = _dense(x, w_qkv[:, d:], b_qkv[d:])
            k, v = kv[..., :d], kv[..., d:]
        q, k, v = self._split_heads(q), self._split_heads(k), self._split_heads(v)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale + add_mask
        probs = softmax(scores)
        attn_drop = _dropout_mask(rng, probs.shape, dropout, dtype) if dropout > 0 else None
        probs_d = probs * attn_drop if attn_drop is not None else probs
        ctx = self._merge_heads(probs_d @ v)
        attn_out = _dense(ctx, p[pre + "attn.output.weight"], p[pre + "attn.output.bias"])
        h1, ln1 = layer_norm(xq + attn_out, p[pre + "attn_norm.scale"], p[pre + "attn_norm.offset"])

        ff_pre = _dense(h1, p[pre + "ffn.in.weight"], p[pre + "ffn.in.bias"])
        ff_act = gelu(ff_pre)
        ff_out = _dense(ff_act, p[pre + "ffn.out.weight"], p[pre + "ffn.out.bias"])
        ff_drop = _dropout_mask(rng, ff_out.shape, dropout, dtype) if dropout > 0 else None
        if ff_drop is not None:
            ff_out = ff_out * ff_drop
        out, ln2 = layer_norm(h1 + ff_out, p[pre + "ffn_norm.scale"], p[pre + "ffn_norm.offset"])

        if not keep_cache:
            return out, None
        return out, dict(
            x=x, xq=xq, w_qkv=w_qkv, q=q, k=k, v=v, probs=probs, attn_drop=attn_drop, probs_d=probs_d,
            ctx=ctx, ln1=ln1, h1=h1, ff_pre=ff_pre, ff_act=ff_act, ff_drop=ff_drop, ln2=ln2,
        )

    def backward(self, grad_hidden, cache: ForwardCache | None) -> dict[str, np.ndarray]:
        """Gradients of every trunk tensor given dLoss/dHidden."""
        if cache is None or not cache.layers or cache.embed_norm is None:
            raise ValueError("backward needs the cache of a forward_with_cache call")
        p = self.params
        grads = {name: None for name in p}
        dx = np.asarray(grad_hidden, dtype=self.dtype)

        for i in reversed(range(self.config.n_layers)):
            dx = self._layer_backward(i, dx, cache.layers[i], grads)

        dx, grads["embed.norm.scale"], grads["embed.norm.offset"] = layer_norm_backward(
            dx, cache.embed_norm, p["embed.norm.scale"]
        )
        length = cache.ids.shape[1]
        dpos = np.zeros_like(p["embed.position"])
        dpos[:length] = dx.sum(axis=0)
        grads["embed.position"] = dpos
        flat_ids = cache.ids.reshape(-1)
        scatter = sparse.csr_matrix(
            (np.ones(flat_ids.size, dtype=dx.dtype), (flat_ids, np.arange(flat_ids.size))),
            shape=(self.config.vocab_size, flat_ids.size),
        )
        grads["embed.token"] = np.asarray(scatter @ dx.reshape(-1, dx.shape[-1]))
        return grads

    def _layer_backward(self, i, dout, c, grads):
        p = self.params
        pre = f"layer{i}."
        scale = self.dtype(1.0 / np.sqrt(self.config.head_dim))

        dres2, grads[pre + "ffn_norm.scale"], grads[pre + "ffn_norm.offset"] = layer_norm_backward(
            dout, c["ln2"], p[pre + "ffn_norm.scale"]
        )
        dff_out = dres2 * c["ff_drop"] if c["ff_drop"] is not None else dres2
        dff_act, grads[pre + "ffn.out.weight"], grads[pre + "ffn.out.bias"] = _dense_backward(
            dff_out, c["ff_act"], p[pre + "ffn.out.weight"]
        )
        dff_pre = dff_act * gelu_grad(c["ff_pre"])
        dh1, grads[pre + "ffn.in.weight"], grads[pre + "ffn.in.bias"] = _dense_backward(
            dff_pre, c["h1"], p[pre + "ffn.in.weight"]
        )
        dh1 += dres2

        dres1, grads[pre + "attn_norm.scale"], grads[pre + "attn_norm.offset"] = layer_norm_backward(
            dh1, c["ln1"], p[pre + "attn_norm.scale"]
        )
        dctx, grads[pre + "attn.output.weight"], grads[pre + "attn.output.bias"] = _dense_backward(
            dres1, c["ctx"], p[pre + "attn.output.weight"]
        )
        dctx = self._split_heads(dctx)
        dprobs_d = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = dprobs_d * c["attn_drop"] if c["attn_drop"] is not None else dprobs_d
        probs = c["probs"]
        dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
        dscores *= scale
        dq = dscores @ c["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"]

        d = self.config.embed_dim
        w_qkv = c["w_qkv"]
        dq, dk, dv = self._merge_heads(dq), self._merge_heads(dk), self._merge_heads(dv)
        if c["xq"] is c["x"]:
            dx, dw, db = _dense_backward(np.concatenate([dq, dk, dv], axis=-1), c["x"], w_qkv)
            dx += dres1
        else:
            dx, dw_kv, db_kv = _dense_backward(np.concatenate([dk, dv], axis=-1), c["x"], w_qkv[:, d:])
            dxq, dw_q, db_q = _dense_backward(dq, c["xq"], w_qkv[:, :d])
            dx[:, : dxq.shape[1]] += dxq + dres1
            dw = np.concatenate([dw_q, dw_kv], axis=1)
            db = np.concatenate([db_q, db_kv])
        for j, proj in enumerate(("query", "key", "value")):
            grads[pre + f"attn.{proj}.weight"] = dw[:, j * d : (j + 1) * d]
            grads[pre + f"attn.{proj}.bias"] = db[j * d : (j + 1) * d]
        return dx
