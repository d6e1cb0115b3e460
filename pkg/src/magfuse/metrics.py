"""Evaluation columns: binary accuracy, F1, MAE, Pearson r, per-emotion MAE.

Binary metrics drop instances whose label is exactly 0 and count a prediction
of exactly 0 as positive.
"""

from dataclasses import asdict, dataclass

import numpy as np

from magfuse.errors import DataError, NumericError


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    mae: float
    corr: float
    n_evaluated: int
    n_excluded_zero_labels: int
    emotion_mae: list = None

    def to_dict(self):
        d = asdict(self)
        if d["corr"] != d["corr"]:
            d["corr"] = None  # undefined correlation, not a silent zero
        return d


def _pair(preds, labels, min_len=1):
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise DataError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if p.size < min_len:
        raise DataError(f"need at least {min_len} values, got {p.size}")
    return p, y


def _nonzero(preds, labels):
    p, y = _pair(preds, labels)
    keep = y != 0
    if not keep.any():
        raise DataError("no instances left after excluding zero labels")
    return p[keep] >= 0, y[keep] > 0, int((~keep).sum())


def binary_accuracy(preds, labels):
    pred_pos, true_pos, _ = _nonzero(preds, labels)
    return float(np.mean(pred_pos == true_pos))


def f1_binary(preds, labels):
    pred_pos, true_pos, _ = _nonzero(preds, labels)
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def mae(preds, labels):
    p, y = _pair(preds, labels)
    return float(np.mean(np.abs(p - y)))


def pearson(preds, labels):
    """Sample Pearson r, two-pass. Raises when either vector is constant."""
    p, y = _pair(preds, labels, min_len=2)
    dp, dy = p - p.mean(), y - y.mean()
    sp, sy = np.sqrt(np.dot(dp, dp)), np.sqrt(np.dot(dy, dy))
    if sp == 0 or sy == 0:
        raise NumericError("Pearson correlation undefined for a constant vector")
    r = float(np.dot(dp, dy) / (sp * sy))
    return max(-1.0, min(1.0, r))


def emotion_mae(preds, labels):
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise DataError(f"emotion arrays must share an n x 6 shape, got {p.shape} and {y.shape}")
    return [float(x) for x in np.mean(np.abs(p - y), axis=0)]


def evaluate(preds, labels, emotion_preds=None, emotion_labels=None):
    p, y = _pair(preds, labels)
    excluded = int(np.sum(y == 0))
    try:
        corr = pearson(p, y)
    except NumericError:
        corr = float("nan")
    emo = None
    if emotion_preds is not None and emotion_labels is not None:
        emo = emotion_mae(emotion_preds, emotion_labels)
    return MetricsReport(
        accuracy=binary_accuracy(p, y),
        f1=f1_binary(p, y),
        mae=mae(p, y),
        corr=corr,
        n_evaluated=p.size - excluded,
        n_excluded_zero_labels=excluded,
        emotion_mae=emo,
    )
