"""FastLogAD: log anomaly detection from normal data only.

Raw logs are parsed into templates, grouped into event sequences and
tokenized. A discriminator learns to keep the [CLS] embedding of normal
sequences near the origin and push pseudo-anomalies (masked sequences
refilled by a generator) away from it; the embedding norm is the anomaly
score.
"""

__version__ = "0.1.0"

from .detector import AnomalyVerdict, Threshold, anomaly_scores, bench, calibrate, detect
from .encoder import EncoderConfig, TransformerEncoder
from .estimator import FastLogAD
from .exceptions import DataError, FastLogADError, NumericError
from .grouper import EventSequence, WindowSpec, chronological_split, group_session, group_sliding
from .metrics import evaluate
from .parser import DrainParser
from .synth import synthetic_benchmark
from .trainer import TrainConfig, train
from .vocab import Vocabulary

__all__ = [
    "AnomalyVerdict", "DataError", "DrainParser", "EncoderConfig", "EventSequence", "FastLogAD",
    "FastLogADError", "NumericError", "Threshold", "TrainConfig", "TransformerEncoder", "Vocabulary",
    "WindowSpec", "anomaly_scores", "bench", "calibrate", "chronological_split", "detect", "evaluate",
    "group_session", "group_sliding", "synthetic_benchmark", "train",
]
