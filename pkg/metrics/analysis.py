"""
Per-epoch metric trajectories, their rank similarity, and checkpoint
selection across a training run.
"""

import logging
import math
import time
from pathlib import Path
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import rankdata

from concern.datasets.dumps import read_dump

from .baselines import (
    MetricReport,
    ce_loss,
    confusion_matrix,
    dangerous_count,
    measures,
    ms_loss,
)
from .core import MpcsConfig, PredictionBatch, ReleaseRule
from .scoring import dataset_mpcs

logger = logging.getLogger(__name__)

Direction = Literal["lower", "higher"]

METRIC_DIRECTIONS: dict[str, Direction] = {
    "accuracy": "higher",
    "macro_precision": "higher",
    "macro_recall": "higher",
    "macro_f1": "higher",
    "mcc": "higher",
    "ms_loss": "lower",
    "ce_loss": "lower",
    "mpcs": "lower",
    "dangerous_count": "lower",
}

BENCHMARK_METRICS = ("accuracy", "macro_f1", "mcc", "ms_loss", "ce_loss")


class MetricTrajectory(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    values: tuple[float, ...]
    direction: Direction

    @field_validator("values")
    @classmethod
    def check_finite(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("trajectory values must be finite")
        return value


class CheckpointRecord(BaseModel):
    """One epoch's snapshot: its report and, optionally, its prediction dump."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    epoch: int = Field(ge=0)
    report: MetricReport
    learning_rate: float | None = None
    predictions: PredictionBatch | None = None
    dump_path: Path | None = None


class TradeoffReport(BaseModel):
    """Comparison of checkpoint ``b`` against checkpoint ``a``; deltas are b - a."""

    model_config = ConfigDict(frozen=True)

    epoch_a: int
    epoch_b: int
    accuracy_a: float
    accuracy_b: float
    accuracy_delta: float
    errors_a: int
    errors_b: int
    errors_delta: int
    dangerous_a: int
    dangerous_b: int
    dangerous_delta: int
    destructive_rate_a: float | None
    destructive_rate_b: float | None


def spearman(a: Sequence[float], b: Sequence[float]) -> float | None:
    """Rank correlation with average ranks for ties.

    Returns ``None`` when either series has no rank variance.
    """
    if len(a) != len(b):
        raise ValueError(f"series lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("rank correlation needs at least two points")
    ra = rankdata(np.asarray(a, dtype=np.float64), method="average")
    rb = rankdata(np.asarray(b, dtype=np.float64), method="average")
    da = ra - ra.mean()
    db = rb - rb.mean()
    denominator = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denominator == 0:
        return None
    return float(np.clip(np.dot(da, db) / denominator, -1.0, 1.0))


def trajectories_from_records(
    records: Sequence[CheckpointRecord], names: Iterable[str] | None = None
) -> list[MetricTrajectory]:
    names = list(names or METRIC_DIRECTIONS)
    trajectories = []
    for name in names:
        values = [getattr(r.report, name) for r in records]
        if any(v is None for v in values):
            continue
        trajectories.append(
            MetricTrajectory(
                name=name,
                values=tuple(float(v) for v in values),
                direction=METRIC_DIRECTIONS[name],
            )
        )
    return trajectories


def similarity_table(
    trajectories: Sequence[MetricTrajectory], target: str = "mpcs"
) -> dict[str, float | None]:
    by_name = {tr.name: tr for tr in trajectories}
    if target not in by_name:
        raise KeyError(f"no trajectory named {target!r}")
    reference = by_name[target]
    table = {}
    for tr in trajectories:
        if tr.name == target:
            continue
        if len(tr.values) != len(reference.values):
            raise ValueError(
                f"trajectory {tr.name!r} has {len(tr.values)} epochs, "
                f"{target!r} has {len(reference.values)}"
            )
        table[tr.name] = spearman(reference.values, tr.values)
    return table


def select_checkpoint(records: Sequence[CheckpointRecord], metric: str) -> CheckpointRecord:
    """Best record for ``metric``; ties go to the earliest epoch."""
    if metric not in METRIC_DIRECTIONS:
        raise KeyError(f"unknown metric {metric!r}")
    if not records:
        raise ValueError("no checkpoint records to select from")
    higher = METRIC_DIRECTIONS[metric] == "higher"
    best = None
    best_value = None
    for record in sorted(records, key=lambda r: r.epoch):
        value = getattr(record.report, metric)
        if value is None:
            raise ValueError(f"epoch {record.epoch} has no {metric} value")
        if best is None or (value > best_value if higher else value < best_value):
            best, best_value = record, value
    return best


def destructive_rate(dangerous: int, errors: int) -> float | None:
    """Share of errors that are dangerous; undefined without errors."""
    if errors == 0:
        return None
    return dangerous / errors


def _load_predictions(record: CheckpointRecord) -> PredictionBatch:
    if record.predictions is not None:
        return record.predictions
    if record.dump_path is not None:
        return read_dump(record.dump_path).predictions
    raise ValueError(f"epoch {record.epoch} carries no prediction dump")


def tradeoff_report(
    a: CheckpointRecord, b: CheckpointRecord, release_list: Iterable[ReleaseRule]
) -> TradeoffReport:
    release_list = tuple(release_list)
    side = {}
    for key, record in (("a", a), ("b", b)):
        batch = _load_predictions(record)
        matrix = confusion_matrix(batch)
        side[key] = (
            measures(matrix).accuracy,
            matrix.errors,
            dangerous_count(batch, release_list),
        )
    (acc_a, err_a, dan_a), (acc_b, err_b, dan_b) = side["a"], side["b"]
    return TradeoffReport(
        epoch_a=a.epoch,
        epoch_b=b.epoch,
        accuracy_a=acc_a,
        accuracy_b=acc_b,
        accuracy_delta=acc_b - acc_a,
        errors_a=err_a,
        errors_b=err_b,
        errors_delta=err_b - err_a,
        dangerous_a=dan_a,
        dangerous_b=dan_b,
        dangerous_delta=dan_b - dan_a,
        destructive_rate_a=destructive_rate(dan_a, err_a),
        destructive_rate_b=destructive_rate(dan_b, err_b),
    )


def summarize_runs(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation over independent runs."""
    if not values:
        raise ValueError("no runs to summarize")
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std())


def time_metrics(batch: PredictionBatch, cfg: MpcsConfig, repeats: int = 5) -> dict[str, float]:
    """Average wall time in seconds of each metric over ``repeats`` runs."""
    timed: dict[str, Callable[[], object]] = {
        "accuracy": lambda: measures(confusion_matrix(batch)).accuracy,
        "macro_f1": lambda: measures(confusion_matrix(batch)).macro_f1,
        "mcc": lambda: measures(confusion_matrix(batch)).mcc,
        "ms_loss": lambda: ms_loss(batch),
        "ce_loss": lambda: ce_loss(batch, base=cfg.log_base, reduction=cfg.ce_reduction),
        "mpcs": lambda: dataset_mpcs(batch, cfg),
    }
    costs = {}
    for name, fn in timed.items():
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        costs[name] = (time.perf_counter() - start) / repeats
    logger.debug("metric time costs: %s", costs)
    return costs
