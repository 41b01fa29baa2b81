"""
Concern degrees, interval punishments and the meta pattern concern score.

Two evaluation paths share one semantics:

- ``concern_degree`` / ``sample_score`` follow the per-sample algorithm step
  by step and are the reference for a single prediction;
- ``score_samples`` evaluates a whole batch with numpy and backs
  ``dataset_mpcs``.

Both use the natural logarithm and replace a confidence level of exactly 0
by ``PUNISHMENT_FLOOR`` before taking it.
"""

import logging
import math
from typing import Iterable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .core import (
    LabeledPrediction,
    MpcsConfig,
    PredictionBatch,
    as_batch,
    require_non_empty,
)
from .metapattern import MetaPattern, build_meta_pattern

logger = logging.getLogger(__name__)

PUNISHMENT_FLOOR = 1e-7


class ConcernDegree(BaseModel):
    model_config = ConfigDict(frozen=True)

    weights: tuple[float, ...]
    normalized: tuple[float, ...]


class SampleScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = Field(ge=0.0)
    punishments: tuple[float, ...]


class LimitComparison(BaseModel):
    """Per-sample MPCS next to per-sample cross entropy."""

    model_config = ConfigDict(frozen=True)

    sample_ids: tuple[int, ...]
    pairs: tuple[tuple[float, float], ...]
    excluded: tuple[int, ...] = ()


def _degenerate_weights(k: int, correct_index: int) -> list[float]:
    # All weights are zero only with the correct label present, f_R = 0 and every
    # other label released. Use the f_R -> 0+ limit: half on the correct position,
    # the rest spread evenly.
    if k == 1:
        return [1.0]
    return [0.5 if j == correct_index else 0.5 / (k - 1) for j in range(k)]


def concern_degree(pattern: MetaPattern, cfg: MpcsConfig) -> ConcernDegree:
    k = pattern.k
    weights = [1.0] * k
    i = pattern.correct_index
    if i is not None:
        for rule in cfg.release_list:
            if rule.true_label != pattern.pred[i]:
                continue
            for j in range(k):
                if j != i and pattern.pred[j] in rule.released_predictions:
                    weights[j] = cfg.release_factor
        weights[i] = sum(weights) - 1.0

    total = sum(weights)
    if total > 0:
        normalized = [w / total for w in weights]
    else:
        normalized = _degenerate_weights(k, i)
    return ConcernDegree(weights=tuple(weights), normalized=tuple(normalized))


def sample_score(pattern: MetaPattern, degree: ConcernDegree, cfg: MpcsConfig) -> SampleScore:
    top_level = cfg.t - 1
    punishments = []
    for level in pattern.conf:
        level = level if level != 0 else PUNISHMENT_FLOOR
        punishments.append(-math.log(level / top_level))
    value = sum(p * w for p, w in zip(punishments, degree.normalized))
    return SampleScore(value=value, punishments=tuple(punishments))


def score_sample(pred: LabeledPrediction, cfg: MpcsConfig) -> SampleScore:
    """Per-sample score of one validated prediction."""
    pattern = build_meta_pattern(pred, cfg)
    return sample_score(pattern, concern_degree(pattern, cfg), cfg)


def score_samples(preds: PredictionBatch | Iterable[LabeledPrediction], cfg: MpcsConfig) -> np.ndarray:
    """Per-sample scores of a whole batch, in batch row order."""
    batch = as_batch(preds)
    n = len(batch)
    if n == 0:
        return np.zeros(0)
    c = batch.class_count
    k, t = cfg.k, cfg.t
    if k > c:
        raise ValueError(f"k={k} exceeds the {c} classes")

    probs = batch.probs
    labels = batch.labels
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(probs, order, axis=1)

    raw = t - np.floor(top * t) - 1
    raw[raw == -1] = 0
    correct = order == labels[:, None]
    levels = np.where(correct, t - raw - 1, raw)

    has_correct = correct.any(axis=1)
    weights = np.ones((n, k))
    released = cfg.release_matrix(c)[labels[:, None], order]
    weights[released & ~correct & has_correct[:, None]] = cfg.release_factor
    weights[correct] = weights.sum(axis=1)[has_correct] - 1.0

    totals = weights.sum(axis=1)
    degenerate = totals == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        normalized = weights / totals[:, None]
    if degenerate.any():
        if k == 1:
            normalized[degenerate] = 1.0
        else:
            normalized[degenerate] = np.where(correct[degenerate], 0.5, 0.5 / (k - 1))

    levels = np.where(levels == 0, PUNISHMENT_FLOOR, levels)
    punishments = -np.log(levels / (t - 1))
    return (punishments * normalized).sum(axis=1)


def dataset_mpcs(preds: PredictionBatch | Iterable[LabeledPrediction], cfg: MpcsConfig) -> float:
    """Mean per-sample score, accumulated sequentially in ascending sample id order."""
    batch = as_batch(preds)
    require_non_empty(batch, "dataset")
    scores = score_samples(batch.in_id_order(), cfg)
    return float(np.cumsum(scores)[-1] / len(scores))


def ce_limit_check(
    preds: PredictionBatch | Iterable[LabeledPrediction], t: int = 10**7
) -> LimitComparison:
    """Pair k=1 scores at fine granularity ``t`` with ``-ln(c_correct)``.

    The two only converge when the top-1 label is the true one; other samples
    are reported in ``excluded``.
    """
    batch = as_batch(preds)
    require_non_empty(batch)
    hit = batch.predicted_labels() == batch.labels
    excluded = tuple(int(i) for i in batch.sample_ids[~hit])
    if excluded:
        logger.info("%d samples with a wrong top-1 label left out of the limit check", len(excluded))

    kept = PredictionBatch(
        sample_ids=batch.sample_ids[hit], labels=batch.labels[hit], probs=batch.probs[hit]
    )
    cfg = MpcsConfig(k=1, t=t, release_factor=1.0)
    mpcs = score_samples(kept, cfg)
    ce = -np.log(kept.probs[np.arange(len(kept)), kept.labels])
    return LimitComparison(
        sample_ids=tuple(int(i) for i in kept.sample_ids),
        pairs=tuple(zip(mpcs.tolist(), ce.tolist())),
        excluded=excluded,
    )
