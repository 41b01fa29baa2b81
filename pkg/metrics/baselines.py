"""
Confusion-matrix measures and loss values used as benchmarks for MPCS.

Multi-class precision, recall and F1 are one-vs-rest per class, then
macro-averaged; a 0/0 ratio contributes 0. MCC uses the generalized
multi-class formula over the full matrix.
"""

import logging
from typing import Iterable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .core import (
    LabeledPrediction,
    MpcsConfig,
    PredictionBatch,
    ReleaseRule,
    as_batch,
    release_matrix,
    require_non_empty,
)
from .scoring import dataset_mpcs

logger = logging.getLogger(__name__)

CE_CLAMP = 1e-12

Predictions = PredictionBatch | Iterable[LabeledPrediction]


class ConfusionMatrix(BaseModel):
    """Counts ``m_ij`` of samples of actual class i predicted as class j."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    counts: np.ndarray

    @property
    def class_count(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def errors(self) -> int:
        return self.total - int(np.trace(self.counts))

    def tolist(self) -> list[list[int]]:
        return self.counts.tolist()


class PerClassStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int
    fn: int
    fp: int
    tn: int


class MetricReport(BaseModel):
    """Every measure computed for one prediction set."""

    model_config = ConfigDict(frozen=True)

    accuracy: float = Field(ge=0.0, le=1.0)
    macro_precision: float = Field(ge=0.0, le=1.0)
    macro_recall: float = Field(ge=0.0, le=1.0)
    macro_f1: float = Field(ge=0.0, le=1.0)
    mcc: float = Field(ge=-1.0, le=1.0)
    ms_loss: float | None = Field(default=None, ge=0.0)
    ce_loss: float | None = Field(default=None, ge=0.0)
    mpcs: float | None = Field(default=None, ge=0.0)
    dangerous_count: int | None = Field(default=None, ge=0)


def confusion_matrix(preds: Predictions, class_count: int | None = None) -> ConfusionMatrix:
    batch = as_batch(preds)
    require_non_empty(batch)
    c = class_count or batch.class_count
    predicted = batch.predicted_labels()
    flat = np.bincount(batch.labels * c + predicted, minlength=c * c)
    return ConfusionMatrix(counts=flat.reshape(c, c))


def per_class_stats(matrix: ConfusionMatrix, label: int) -> PerClassStats:
    counts = matrix.counts
    tp = int(counts[label, label])
    row = int(counts[label, :].sum())
    col = int(counts[:, label].sum())
    return PerClassStats(
        tp=tp, fn=row - tp, fp=col - tp, tn=matrix.total - row - col + tp
    )


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros_like(numerator, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return out


def multiclass_mcc(matrix: ConfusionMatrix) -> float:
    counts = matrix.counts.astype(np.float64)
    s = counts.sum()
    c = np.trace(counts)
    tk = counts.sum(axis=1)
    pk = counts.sum(axis=0)
    cov_pred = s**2 - np.dot(pk, pk)
    cov_true = s**2 - np.dot(tk, tk)
    denominator = np.sqrt(cov_pred * cov_true)
    if denominator == 0:
        return 0.0
    value = (c * s - np.dot(tk, pk)) / denominator
    return float(np.clip(value, -1.0, 1.0))


def measures(matrix: ConfusionMatrix) -> MetricReport:
    """Accuracy, macro precision/recall/F1 and MCC; the loss fields stay empty."""
    counts = matrix.counts.astype(np.float64)
    tp = np.diag(counts)
    actual = counts.sum(axis=1)
    predicted = counts.sum(axis=0)

    precision = _ratio(tp, predicted)
    recall = _ratio(tp, actual)
    f1 = _ratio(2 * precision * recall, precision + recall)

    return MetricReport(
        accuracy=float(tp.sum() / counts.sum()),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        mcc=multiclass_mcc(matrix),
    )


def _one_hot(batch: PredictionBatch) -> np.ndarray:
    target = np.zeros_like(batch.probs)
    target[np.arange(len(batch)), batch.labels] = 1.0
    return target


def ms_loss(preds: Predictions) -> float:
    """Half the summed squared error per sample, averaged over samples."""
    batch = as_batch(preds)
    require_non_empty(batch)
    diff = batch.probs - _one_hot(batch)
    return float((diff * diff).sum() / (2 * len(batch)))


def ce_loss(preds: Predictions, base: str = "e", reduction: str = "mean") -> float:
    """Cross entropy of the true labels.

    ``base="10"`` with ``reduction="sum"`` reproduces the confidence-threshold
    scenario figures; the default is the usual natural-log mean.
    """
    batch = as_batch(preds)
    require_non_empty(batch)
    correct = batch.probs[np.arange(len(batch)), batch.labels]
    logs = np.log(np.maximum(correct, CE_CLAMP))
    if base == "10":
        logs = logs / np.log(10.0)
    elif base != "e":
        raise ValueError(f"unsupported log base {base!r}")
    total = -logs.sum()
    if reduction == "mean":
        return float(total / len(batch))
    if reduction == "sum":
        return float(total)
    raise ValueError(f"unsupported reduction {reduction!r}")


def dangerous_count(preds: Predictions, release_list: Iterable[ReleaseRule]) -> int:
    """Misclassified samples whose (true, predicted) pair no rule releases."""
    batch = as_batch(preds)
    if len(batch) == 0:
        return 0
    predicted = batch.predicted_labels()
    wrong = predicted != batch.labels
    released = release_matrix(release_list, batch.class_count)[batch.labels, predicted]
    return int((wrong & ~released).sum())


def metric_report(preds: Predictions, cfg: MpcsConfig, include_mpcs: bool = True) -> MetricReport:
    """Full report for one prediction set under ``cfg``."""
    batch = as_batch(preds)
    require_non_empty(batch)
    report = measures(confusion_matrix(batch))
    return report.model_copy(
        update={
            "ms_loss": ms_loss(batch),
            "ce_loss": ce_loss(batch, base=cfg.log_base, reduction=cfg.ce_reduction),
            "mpcs": dataset_mpcs(batch, cfg) if include_mpcs else None,
            "dangerous_count": dangerous_count(batch, cfg.release_list),
        }
    )
