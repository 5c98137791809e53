"""Two-stage training: replaced-token warm-up, then hyperspherical separation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .das import Discriminator
from .encoder import EncoderConfig
from .exceptions import DataError, NumericError
from .mgag import MLMGenerator, apply_mask, random_generate, sample_masks
from .vocab import PAD, Vocabulary

logger = logging.getLogger(__name__)

GENERATORS = ("random", "mlm")


@dataclass
class TrainConfig:
    generator: str = "mlm"
    mask_ratio: float = 0.5
    hst_weight: float = 1.0
    stage1_epochs: int = 10
    stage2_epochs: int = 20
    rtd: bool = True
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    embed_dim: int = 256
    n_layers: int = 4
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 512
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.hst_weight <= 0:
            raise ValueError("hst_weight must be positive")
        if self.stage1_epochs < 0 or self.stage2_epochs < 1:
            raise ValueError("need stage1_epochs >= 0 and stage2_epochs >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size, max_len=self.max_len, embed_dim=self.embed_dim,
            n_layers=self.n_layers, n_heads=self.n_heads, ff_dim=self.ff_dim,
            dropout_rate=self.dropout_rate,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class Adam:
    """Adaptive-moment updates applied in place to a dict of arrays."""

    def __init__(self, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        step = self.lr * np.sqrt(c2) / c1
        for name, g in grads.items():
            p, m, v = self.params[name], self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (step * m / (np.sqrt(v) + self.eps * np.sqrt(c2))).astype(p.dtype)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if not np.isfinite(total):
        raise NumericError("non-finite gradient norm")
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


def length_bucketed_batches(lengths: np.ndarray, batch_size: int, rng, pool_batches: int = 50):
    """Shuffled batches whose members have similar lengths (less padding)."""
    order = rng.permutation(len(lengths))
    pool = batch_size * pool_batches
    batches = []
    for start in range(0, len(order), pool):
        chunk = order[start : start + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i : i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append(row)

    def to_csv(self) -> str:
        cols = ["stage", "epoch", "mlm_loss", "rtd_loss", "hst_loss", "seconds"]
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join("" if row.get(c) is None else _fmt(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _fmt(value):
    return f"{value:.6g}" if isinstance(value, float) else str(value)


@dataclass
class TrainResult:
    discriminator: Discriminator
    generator: MLMGenerator | None
    report: TrainReport


class _Batcher:
    def __init__(self, seqs, vocab: Vocabulary, max_len: int):
        self.ids, _ = vocab.encode_batch(seqs, max_len, with_cls=True)
        self.lengths = (self.ids != PAD).sum(axis=1)

    def __len__(self):
        return len(self.lengths)

    def get(self, idx):
        width = int(self.lengths[idx].max())
        ids = self.ids[idx, :width]
        return ids, (ids != PAD).astype(np.int8)


def _epoch_rng(seed, stage, epoch):
    return np.random.default_rng([seed, stage, epoch])


def _check_loss(value, what):
    if not np.isfinite(value):
        raise NumericError(f"{what} became non-finite")


def pseudo_anomalies(ids, attn_mask, config: TrainConfig, generator, vocab_size, rng):
    """Masks plus generator output for a CLS-prefixed batch (generator in eval mode)."""
    m = sample_masks(attn_mask, config.mask_ratio, rng)
    if config.generator == "random":
        return random_generate(ids, m, vocab_size, rng), m
    if generator is None:
        raise DataError("the mlm variant needs a generator")
    if not m.any():
        return ids.copy(), m
    out = generator.forward(apply_mask(ids, m), attn_mask, m)
    return generator.generate_from(out, ids, rng), m


def train_stage1(train_seqs, vocab: Vocabulary, config: TrainConfig, generator=None,
                 discriminator=None, report=None):
    """Warm-up epochs: MLM on the generator (mlm variant) and RTD on the discriminator."""
    if len(train_seqs) == 0:
        raise DataError("empty training set")
    if any(getattr(s, "label", 0) for s in train_seqs):
        raise DataError("training sequences must all be normal (label 0)")
    report = TrainReport() if report is None else report
    enc_cfg = config.encoder_config(len(vocab))
    if discriminator is None:
        discriminator = Discriminator(enc_cfg, rng=np.random.default_rng([config.seed, 0, 1]))
    if config.generator == "mlm" and generator is None:
        generator = MLMGenerator(enc_cfg, rng=np.random.default_rng([config.seed, 0, 0]))
    if config.generator == "random":
        generator = None
    train_gen = generator is not None
    if config.stage1_epochs == 0 or not (config.rtd or train_gen):
        return generator, discriminator, report

    batcher = _Batcher(train_seqs, vocab, config.max_len)
    # Adam updates the model's own arrays in place.
    adam_kw = dict(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    disc_opt = Adam(discriminator.params, **adam_kw) if config.rtd else None
    gen_opt = Adam(generator.params, **adam_kw) if train_gen else None

    for epoch in range(config.stage1_epochs):
        t0 = time.perf_counter()
        rng = _epoch_rng(config.seed, 1, epoch)
        mlm_losses, rtd_losses = [], []
        for idx in length_bucketed_batches(batcher.lengths, config.batch_size, rng):
            ids, attn = batcher.get(idx)
            m = sample_masks(attn, config.mask_ratio, rng)
            if train_gen:
                if m.any():
                    out = generator.forward(apply_mask(ids, m), attn, m, train=True, rng=rng, keep_cache=True)
                    loss, grads = generator.loss_and_grads(out, ids[m])
                    _check_loss(loss, "MLM loss")
                    clip_global_norm(grads, config.clip_norm)
                    gen_opt.step(grads)
                    mlm_losses.append(loss)
                    corrupted = generator.generate_from(out, ids, rng)
                else:
                    corrupted = ids.copy()
            else:
                corrupted = random_generate(ids, m, len(vocab), rng)
            if config.rtd:
                loss, grads = discriminator.rtd_step(corrupted, attn, m, rng=rng)
                _check_loss(loss, "RTD loss")
                clip_global_norm(grads, config.clip_norm)
                disc_opt.step(grads)
                rtd_losses.append(loss)
        row = dict(
            stage=1, epoch=epoch,
            mlm_loss=float(np.mean(mlm_losses)) if mlm_losses else None,
            rtd_loss=float(np.mean(rtd_losses)) if rtd_losses else None,
            hst_loss=None, seconds=time.perf_counter() - t0,
        )
        report.add(**row)
        logger.info("stage 1 epoch %d: mlm=%s rtd=%s (%.1fs)", epoch, row["mlm_loss"], row["rtd_loss"], row["seconds"])
    return generator, discriminator, report


def train_stage2(train_seqs, vocab: Vocabulary, config: TrainConfig, generator, discriminator,
                 report=None):
    """Hyperspherical separation: each normal sequence is paired with a fresh pseudo-anomaly."""
    if len(train_seqs) == 0:
        raise DataError("empty training set")
    if config.generator == "mlm" and generator is None:
        raise DataError("the mlm variant needs a trained generator for stage 2")
    report = TrainReport() if report is None else report
    batcher = _Batcher(train_seqs, vocab, config.max_len)
    trunk = discriminator.encoder.params
    opt = Adam(trunk, lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)

    for epoch in range(config.stage2_epochs):
        t0 = time.perf_counter()
        rng = _epoch_rng(config.seed, 2, epoch)
        losses = []
        for idx in length_bucketed_batches(batcher.lengths, config.batch_size, rng):
            ids, attn = batcher.get(idx)
            corrupted, _ = pseudo_anomalies(ids, attn, config, generator, len(vocab), rng)
            both = np.concatenate([ids, corrupted])
            y = np.concatenate([np.zeros(len(ids)), np.ones(len(ids))])
            loss, _, grads = discriminator.hst_step(
                both, np.concatenate([attn, attn]), y, config.hst_weight, rng=rng
            )
            _check_loss(loss, "HST loss")
            clip_global_norm(grads, config.clip_norm)
            opt.step(grads)
            losses.append(loss)
        row = dict(stage=2, epoch=epoch, mlm_loss=None, rtd_loss=None,
                   hst_loss=float(np.mean(losses)), seconds=time.perf_counter() - t0)
        report.add(**row)
        logger.info("stage 2 epoch %d: hst=%.4f (%.1fs)", epoch, row["hst_loss"], row["seconds"])
    return discriminator, report


def validation_norms(seqs, vocab, config: TrainConfig, discriminator, generator=None, batch_size=256):
    """Scores of ``seqs`` and of one pseudo-anomaly per sequence (fixed seed)."""
    batcher = _Batcher(seqs, vocab, config.max_len)
    rng = _epoch_rng(config.seed, 3, 0)
    normal, pseudo = [], []
    for start in range(0, len(batcher), batch_size):
        idx = np.arange(start, min(start + batch_size, len(batcher)))
        ids, attn = batcher.get(idx)
        normal.append(discriminator.score(ids, attn))
        corrupted, _ = pseudo_anomalies(ids, attn, config, generator, len(vocab), rng)
        pseudo.append(discriminator.score(corrupted, attn))
    return np.concatenate(normal), np.concatenate(pseudo)


def train(train_seqs, vocab: Vocabulary, config: TrainConfig, val_seqs=None) -> TrainResult:
    """Stage 1 for ``stage1_epochs`` then stage 2 for ``stage2_epochs``."""
    generator, discriminator, report = train_stage1(train_seqs, vocab, config)
    discriminator, report = train_stage2(train_seqs, vocab, config, generator, discriminator, report)
    if val_seqs:
        normal, pseudo = validation_norms(val_seqs, vocab, config, discriminator, generator)
        report.final = dict(
            val_normal_mean=float(normal.mean()), val_normal_median=float(np.median(normal)),
            val_pseudo_mean=float(pseudo.mean()), val_pseudo_median=float(np.median(pseudo)),
        )
    return TrainResult(discriminator=discriminator, generator=generator, report=report)
