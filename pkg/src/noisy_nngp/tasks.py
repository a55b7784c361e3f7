"""Classification as multi-output regression.

Labels become rows with 0.9 at the true class and -0.1 elsewhere; a
prediction is the argmax of the posterior mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DatasetError

POSITIVE = 0.9
NEGATIVE = -0.1


@dataclass(frozen=True)
class ClassTargets:
    labels: np.ndarray
    encoded: np.ndarray


def encode_labels(labels, num_classes: int) -> ClassTargets:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DatasetError("labels must be a 1-D vector")
    if num_classes < 1:
        raise DatasetError("num_classes must be >= 1")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes
                        or not np.all(labels == np.floor(labels))):
        raise DatasetError(f"labels must be integers in [0, {num_classes})")
    labels = labels.astype(np.int64)
    encoded = np.full((labels.size, num_classes), NEGATIVE)
    encoded[np.arange(labels.size), labels] = POSITIVE
    return ClassTargets(labels, encoded)


def decode_prediction(mean_vec) -> int:
    """Index of the largest channel; ties go to the lowest index."""
    return int(np.argmax(np.asarray(mean_vec)))


def decode_batch(means) -> np.ndarray:
    return np.argmax(np.asarray(means), axis=1)


def accuracy(predicted, truth) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(np.mean(predicted == truth))


def mean_predictive_variance(preds) -> float:
    """Average predictive variance over a list of predictions (or a raw array)."""
    if isinstance(preds, np.ndarray):
        values = preds.ravel()
    else:
        values = np.array([getattr(p, "variance", p) for p in preds], dtype=float)
    if values.size == 0:
        raise ValueError("mean over an empty prediction set")
    return float(np.mean(values))
