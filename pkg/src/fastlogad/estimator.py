"""Scikit-learn style wrapper around vocabulary building, training and calibration."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.exceptions import NotFittedError

from .detector import Threshold, anomaly_scores, calibrate, detect
from .exceptions import DataError
from .grouper import EventSequence
from .ingest import load_checkpoint, load_vocab, model_from_checkpoint, save_checkpoint, save_vocab
from .trainer import TrainConfig, train
from .vocab import Vocabulary


def as_sequences(X) -> list[EventSequence]:
    """Accept EventSequence objects or plain lists of template ids."""
    if X is None:
        raise DataError("no sequences given")
    out = []
    for i, item in enumerate(X):
        if isinstance(item, EventSequence):
            out.append(item)
        else:
            events = [int(e) for e in item]
            if not events:
                raise DataError(f"sequence {i} is empty")
            out.append(EventSequence(str(i), events, 0, float(i)))
    return out


class FastLogAD(OutlierMixin, BaseEstimator):
    """Unsupervised sequence anomaly detector trained on normal sequences only.

    ``predict`` returns 1 for anomalies and 0 for normal sequences (the log
    anomaly convention, not sklearn's +1/-1 outlier convention).
    """

    def __init__(self, generator="mlm", mask_ratio=0.5, hst_weight=1.0, stage1_epochs=10,
                 stage2_epochs=20, rtd=True, batch_size=32, learning_rate=1e-4, beta1=0.9,
                 beta2=0.999, adam_eps=1e-8, clip_norm=1.0, seed=0, embed_dim=256, n_layers=4,
                 n_heads=4, ff_dim=256, max_len=512, dropout_rate=0.1, quantile=0.99,
                 val_fraction=0.1):
        self.generator = generator
        self.mask_ratio = mask_ratio
        self.hst_weight = hst_weight
        self.stage1_epochs = stage1_epochs
        self.stage2_epochs = stage2_epochs
        self.rtd = rtd
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.clip_norm = clip_norm
        self.seed = seed
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.max_len = max_len
        self.dropout_rate = dropout_rate
        self.quantile = quantile
        self.val_fraction = val_fraction

    def train_config(self) -> TrainConfig:
        params = self.get_params()
        return TrainConfig(**{k: params[k] for k in TrainConfig.field_names()})

    def fit(self, X, y=None, X_val=None):
        """Train on normal sequences ``X``; calibrate on ``X_val`` or a held-out tail of ``X``."""
        seqs = as_sequences(X)
        if y is not None and np.any(np.asarray(y) != 0):
            raise DataError("training labels must all be 0 (normal)")
        if X_val is None:
            n_val = int(round(self.val_fraction * len(seqs)))
            if n_val < 1 or n_val >= len(seqs):
                raise DataError("not enough sequences to hold out a validation set")
            seqs, val = seqs[:-n_val], seqs[-n_val:]
        else:
            val = as_sequences(X_val)
        config = self.train_config()
        self.vocab_ = Vocabulary.build(seqs)
        result = train(seqs, self.vocab_, config, val)
        self.discriminator_ = result.discriminator
        self.generator_ = result.generator
        self.report_ = result.report
        self.threshold_ = calibrate(self.anomaly_score(val), self.quantile)
        return self

    def _check_fitted(self):
        if not hasattr(self, "discriminator_"):
            raise NotFittedError("FastLogAD is not fitted yet; call fit or load first")

    def anomaly_score(self, X) -> np.ndarray:
        """Norm of the final [CLS] embedding; larger means more anomalous."""
        self._check_fitted()
        return anomaly_scores(as_sequences(X), self.discriminator_, self.vocab_)

    def decision_function(self, X) -> np.ndarray:
        """Score minus threshold: positive values are flagged."""
        self._check_fitted()
        return self.anomaly_score(X) - self.threshold_.epsilon

    def score_samples(self, X) -> np.ndarray:
        return -self.anomaly_score(X)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        verdicts = detect(as_sequences(X), self.discriminator_, self.vocab_, self.threshold_)
        return np.array([int(v.is_anomaly) for v in verdicts], dtype=np.int64)

    def fit_predict(self, X, y=None, **kwargs):
        return self.fit(X, y, **kwargs).predict(X)

    # -- persistence -----------------------------------------------------
    def save(self, directory) -> None:
        self._check_fitted()
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        save_vocab(out / "vocab.tsv", self.vocab_)
        save_checkpoint(out / "discriminator.ckpt", self.discriminator_, "discriminator", self.vocab_)
        if self.generator_ is not None:
            save_checkpoint(out / "generator.ckpt", self.generator_, "generator", self.vocab_)
        (out / "threshold.json").write_text(json.dumps(vars(self.threshold_), indent=2, sort_keys=True) + "\n")
        (out / "estimator.json").write_text(json.dumps(self.get_params(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "FastLogAD":
        src = Path(directory)
        if not (src / "estimator.json").exists():
            raise DataError(f"{src} does not hold a saved FastLogAD model")
        model = cls(**json.loads((src / "estimator.json").read_text()))
        model.vocab_ = load_vocab(src / "vocab.tsv")
        model.discriminator_ = model_from_checkpoint(load_checkpoint(src / "discriminator.ckpt", model.vocab_))
        gen_path = src / "generator.ckpt"
        model.generator_ = model_from_checkpoint(load_checkpoint(gen_path, model.vocab_)) if gen_path.exists() else None
        model.threshold_ = Threshold(**json.loads((src / "threshold.json").read_text()))
        return model
