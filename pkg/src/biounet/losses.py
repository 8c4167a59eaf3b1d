"""Training losses and evaluation metrics.

Losses take and return :class:`~biounet.tensor.Tensor` objects so they can
be differentiated; metrics work on plain arrays.
"""
import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from biounet import tensor as T
from biounet.errors import ContractError, DimensionError, NumericError

BCE_CLAMP = 1e-7
DICE_EPS = 1e-7
_MASKED = -1e9


def bce_loss(pred, target):
    """Binary cross-entropy on probabilities.

    A 1-D ``pred`` is one probability per sample. A 2-D ``pred`` has one
    column per head; the per-sample loss sums the heads before the batch
    mean.
    """
    pred = T.as_tensor(pred)
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    if not np.all((target == 0) | (target == 1)):
        raise ContractError("BCE targets must be 0 or 1")
    p = T.clip(pred, BCE_CLAMP, 1 - BCE_CLAMP)
    nll = -(T.log(p) * target + T.log(1 - p) * (1 - target))
    if nll.ndim == 1:
        return nll.mean()
    return nll.sum(axis=tuple(range(1, nll.ndim))).mean()


def soft_dice_loss(y_pred, y_true):
    """``1 - 2 sum(t p) / (sum(t^2) + sum(p^2) + eps)``.

    Rank-4 inputs (N, 1, H, W) are scored per sample and averaged over the
    batch; any other rank is treated as a single mask.
    """
    y_pred = T.as_tensor(y_pred)
    y_true = np.asarray(y_true, dtype=y_pred.dtype)
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"mask shapes differ: {y_pred.shape} vs {y_true.shape}")
    axes = (1, 2, 3) if y_pred.ndim == 4 else None
    inter = (y_pred * y_true).sum(axis=axes)
    denom = (y_pred * y_pred).sum(axis=axes) + (y_true ** 2).sum(axis=axes) + DICE_EPS
    return (1 - 2 * inter / denom).mean()


def nt_xent_loss(embeddings, tau=0.5):
    """Contrastive loss over 2N views; rows 2i and 2i+1 are a positive pair."""
    z = T.as_tensor(embeddings)
    if z.ndim != 2 or z.shape[0] % 2:
        raise DimensionError(f"expected (2N, D) embeddings, got {z.shape}")
    if tau <= 0:
        raise ContractError("temperature must be positive")
    norms = T.sqrt((z * z).sum(axis=1, keepdims=True))
    if np.any(norms.data < 1e-8):
        raise NumericError("an embedding has (near) zero norm; cosine similarity is undefined")
    zn = z / norms
    sim = T.matmul(zn, zn.T) * (1.0 / tau)
    n2 = z.shape[0]
    self_mask = np.eye(n2, dtype=z.dtype) * _MASKED
    logits = sim + self_mask
    rows = np.arange(n2)
    positive = logits[rows, rows ^ 1]
    return (T.logsumexp(logits, axis=1) - positive).mean()


def dice_coefficient(a, b):
    """Classic Dice of two binary masks; two empty masks agree perfectly."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return 2.0 * np.logical_and(a, b).sum() / total


def continuous_dice(ground_truth, prediction):
    """Continuous Dice of a binary mask A against a soft mask B in [0, 1]."""
    a = np.asarray(ground_truth, dtype=np.float64)
    b = np.asarray(prediction, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not a.any():
        return 1.0 if not b.any() else 0.0
    overlap = (a * b).sum()
    support = (a * np.sign(b)).sum()
    c = overlap / support if support > 0 else 1.0
    return float(2.0 * overlap / (c * a.sum() + b.sum()))


def auc_score(scores, labels):
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC is undefined when only one class is present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class ClassificationMetrics:
    accuracy: float
    auc: float = None
    auc_error: str = None


def classification_metrics(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    acc = float(np.mean((scores >= 0.5) == (labels == 1)))
    try:
        return ClassificationMetrics(acc, auc_score(scores, labels))
    except ContractError as exc:
        return ClassificationMetrics(acc, None, str(exc))


class MetricLog:
    """Flat metric records, one dict per epoch (or per evaluation)."""

    def __init__(self):
        self.records = []

    def append(self, **record):
        self.records.append(record)

    def fields(self):
        names = []
        for rec in self.records:
            names.extend(k for k in rec if k not in names)
        return names

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.fields(), lineterminator="\n")
            writer.writeheader()
            for rec in self.records:
                writer.writerow({k: _fmt(v) for k, v in rec.items()})

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.records, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")
