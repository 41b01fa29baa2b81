"""
Domain types, configuration documents and input validation shared by the
metapattern, scoring, baselines and analysis modules.

Labels are dense integers in ``[0, c)``; class names are presentation only.
Every type here is frozen after construction and safe to share between
workers.
"""

import json
import logging
import math
from pathlib import Path
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

logger = logging.getLogger(__name__)

# Probability rows whose sum drifts from 1 by more than this are rejected
SUM_TOLERANCE = 1e-3
# Drift below this is left untouched, which keeps validation idempotent
RENORMALIZE_TOLERANCE = 1e-12
# Invariant checked on every ProbabilityVector
VECTOR_TOLERANCE = 1e-6

InputMode = Literal["logits", "probs"]


class MpcsError(Exception):
    """Base class for errors raised while evaluating or training."""

    # Process exit status used by the management commands
    exit_code = 2


class PredictionValidationError(MpcsError, ValueError):
    """A prediction record does not fit its label space."""

    def __init__(self, message: str, sample_id: int | None = None):
        super().__init__(message)
        self.sample_id = sample_id


class ConfigError(MpcsError, ValueError):
    """An MPCS config document is malformed or out of range."""


class LabelSpace(BaseModel):
    """The ``c`` classes of a classification task."""

    model_config = ConfigDict(frozen=True)

    class_count: int = Field(ge=2, description="Number of classes c")
    class_names: tuple[str, ...] | None = Field(
        default=None, description="Optional display name per label"
    )

    @model_validator(mode="after")
    def check_names(self) -> "LabelSpace":
        if self.class_names is not None and len(self.class_names) != self.class_count:
            raise ValueError(
                f"{len(self.class_names)} class names given for {self.class_count} classes"
            )
        return self

    def contains(self, label: int) -> bool:
        return 0 <= label < self.class_count

    def name_of(self, label: int) -> str:
        if self.class_names is None:
            return str(label)
        return self.class_names[label]


class ProbabilityVector(BaseModel):
    """A normalized class-probability output."""

    model_config = ConfigDict(frozen=True)

    probs: tuple[float, ...]

    @field_validator("probs")
    @classmethod
    def check_distribution(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if len(value) < 2:
            raise ValueError("a probability vector needs at least two classes")
        for p in value:
            if not math.isfinite(p) or p < 0.0 or p > 1.0:
                raise ValueError(f"probability {p!r} outside [0, 1]")
        total = math.fsum(value)
        if abs(total - 1.0) > VECTOR_TOLERANCE:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        return value


class LabeledPrediction(BaseModel):
    """One sample's supervised label and the classifier's raw output.

    ``probs`` holds whatever the classifier produced; only records returned by
    :func:`validate_prediction` are guaranteed to be normalized.
    """

    model_config = ConfigDict(frozen=True)

    sample_id: int
    true_label: int = Field(ge=0)
    probs: tuple[float, ...]

    @property
    def class_count(self) -> int:
        return len(self.probs)


class ReleaseRule(BaseModel):
    """Predicted labels whose confusion with ``true_label`` is less destructive."""

    model_config = ConfigDict(frozen=True)

    true_label: int = Field(ge=0)
    released_predictions: frozenset[int]

    @field_validator("released_predictions")
    @classmethod
    def check_released(cls, value: frozenset[int]) -> frozenset[int]:
        if not value:
            raise ValueError("a release rule must release at least one prediction")
        if min(value) < 0:
            raise ValueError("released labels must be non-negative")
        return value

    @model_validator(mode="after")
    def check_not_self(self) -> "ReleaseRule":
        if self.true_label in self.released_predictions:
            raise ValueError(
                f"rule for label {self.true_label} releases its own true label"
            )
        return self

    def releases(self, true_label: int, predicted: int) -> bool:
        return true_label == self.true_label and predicted in self.released_predictions

    def as_row(self) -> list[int]:
        """Document form: true label first, released labels after."""
        return [self.true_label, *sorted(self.released_predictions)]


class MpcsConfig(BaseModel):
    """Human-value parameters of the score plus evaluation knobs.

    ``release_list`` accepts rows ``[true, released, ...]``; rows sharing a
    true label are merged by set union, so at most one rule exists per label.
    """

    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=1, description="Top-k labels kept in the prediction pattern")
    t: int = Field(ge=2, description="Number of confidence intervals")
    release_factor: float = Field(ge=0.0, le=1.0)
    release_list: tuple[ReleaseRule, ...] = ()
    input_mode: InputMode = "probs"
    log_base: Literal["e", "10"] = "e"
    ce_reduction: Literal["mean", "sum"] = "mean"

    @field_validator("release_list", mode="before")
    @classmethod
    def merge_rules(cls, value):
        merged: dict[int, set[int]] = {}
        for entry in value or ():
            if isinstance(entry, ReleaseRule):
                true_label, released = entry.true_label, entry.released_predictions
            elif isinstance(entry, dict):
                true_label = entry["true_label"]
                released = entry["released_predictions"]
            else:
                row = list(entry)
                if len(row) < 2:
                    raise ValueError(
                        f"release rule {row} needs a true label and a released label"
                    )
                true_label, released = row[0], row[1:]
            merged.setdefault(int(true_label), set()).update(int(x) for x in released)
        return [
            {"true_label": label, "released_predictions": sorted(released)}
            for label, released in sorted(merged.items())
        ]

    @field_validator("log_base", mode="before")
    @classmethod
    def coerce_log_base(cls, value):
        return str(value)

    def rule_for(self, true_label: int) -> ReleaseRule | None:
        for rule in self.release_list:
            if rule.true_label == true_label:
                return rule
        return None

    def releases(self, true_label: int, predicted: int) -> bool:
        rule = self.rule_for(true_label)
        return rule is not None and predicted in rule.released_predictions

    def release_matrix(self, class_count: int) -> np.ndarray:
        """Boolean ``c x c`` lookup, ``[true, predicted]`` set when released."""
        return release_matrix(self.release_list, class_count)


def release_matrix(rules: Iterable[ReleaseRule], class_count: int) -> np.ndarray:
    matrix = np.zeros((class_count, class_count), dtype=bool)
    for rule in rules:
        if rule.true_label >= class_count:
            continue
        for predicted in rule.released_predictions:
            if predicted < class_count:
                matrix[rule.true_label, predicted] = True
    return matrix


def load_config(text: str) -> MpcsConfig:
    """Parse and validate a JSON config document."""
    try:
        return MpcsConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"invalid MPCS config: {exc}") from exc


def load_config_file(path: str | Path) -> MpcsConfig:
    return load_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: MpcsConfig) -> str:
    """Serialize ``cfg`` to the document form read by :func:`load_config`."""
    document = {
        "k": cfg.k,
        "t": cfg.t,
        "release_factor": cfg.release_factor,
        "release_list": [rule.as_row() for rule in cfg.release_list],
        "input_mode": cfg.input_mode,
        "log_base": cfg.log_base,
        "ce_reduction": cfg.ce_reduction,
    }
    return json.dumps(document, indent=2)


def check_config_against(cfg: MpcsConfig, space: LabelSpace) -> None:
    """Enforce the invariants that depend on the number of classes."""
    c = space.class_count
    if cfg.k > c:
        raise ConfigError(f"k={cfg.k} exceeds the {c} classes of the label space")
    for rule in cfg.release_list:
        labels = [rule.true_label, *rule.released_predictions]
        if max(labels) >= c:
            raise ConfigError(
                f"release rule {rule.as_row()} references a label outside [0, {c})"
            )


def validate_prediction(
    pred: LabeledPrediction, space: LabelSpace, mode: InputMode = "probs"
) -> LabeledPrediction:
    """Normalize one record's output and check it against ``space``.

    ``logits`` mode applies a max-shifted softmax; ``probs`` mode accepts sums
    within ``SUM_TOLERANCE`` of 1 and renormalizes them. Validating an already
    validated record in ``probs`` mode returns it unchanged.
    """
    c = space.class_count
    values = pred.probs
    if len(values) != c:
        raise PredictionValidationError(
            f"sample {pred.sample_id}: expected {c} outputs, got {len(values)}",
            pred.sample_id,
        )
    if not all(math.isfinite(v) for v in values):
        raise PredictionValidationError(
            f"sample {pred.sample_id}: non-finite output", pred.sample_id
        )
    if not space.contains(pred.true_label):
        raise PredictionValidationError(
            f"sample {pred.sample_id}: label {pred.true_label} outside [0, {c})",
            pred.sample_id,
        )

    if mode == "logits":
        probs = _softmax(values)
    else:
        probs = _renormalize(values, pred.sample_id)

    vector = ProbabilityVector(probs=probs)
    return pred.model_copy(update={"probs": vector.probs})


def _softmax(values: Sequence[float]) -> tuple[float, ...]:
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = math.fsum(exps)
    return tuple(e / total for e in exps)


def _renormalize(values: Sequence[float], sample_id: int) -> tuple[float, ...]:
    for p in values:
        if p < 0.0 or p > 1.0:
            raise PredictionValidationError(
                f"sample {sample_id}: probability {p!r} outside [0, 1]", sample_id
            )
    total = math.fsum(values)
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise PredictionValidationError(
            f"sample {sample_id}: probabilities sum to {total!r}", sample_id
        )
    if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
        logger.warning(
            "sample %s: probabilities sum to %.9f, renormalizing", sample_id, total
        )
        return tuple(p / total for p in values)
    return tuple(values)


class PredictionBatch(BaseModel):
    """Columnar form of a sequence of :class:`LabeledPrediction`.

    Arrays are copied on construction and marked read-only.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sample_ids: np.ndarray
    labels: np.ndarray
    probs: np.ndarray

    @field_validator("sample_ids", "labels", mode="before")
    @classmethod
    def as_index_array(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.int64).reshape(-1)
        array.setflags(write=False)
        return array

    @field_validator("probs", mode="before")
    @classmethod
    def as_matrix(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64)
        if array.ndim != 2:
            raise ValueError(f"probabilities must form an n x c matrix, got shape {array.shape}")
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def check_rows(self) -> "PredictionBatch":
        n = self.probs.shape[0]
        if self.sample_ids.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError(
                f"row counts differ: {self.sample_ids.shape[0]} ids, "
                f"{self.labels.shape[0]} labels, {n} probability rows"
            )
        return self

    @classmethod
    def from_predictions(cls, preds: Iterable[LabeledPrediction]) -> "PredictionBatch":
        preds = list(preds)
        if not preds:
            return cls(sample_ids=[], labels=[], probs=np.empty((0, 0)))
        width = preds[0].class_count
        for pred in preds:
            if pred.class_count != width:
                raise PredictionValidationError(
                    f"sample {pred.sample_id}: {pred.class_count} outputs, expected {width}",
                    pred.sample_id,
                )
        return cls(
            sample_ids=[p.sample_id for p in preds],
            labels=[p.true_label for p in preds],
            probs=[p.probs for p in preds],
        )

    def __len__(self) -> int:
        return int(self.probs.shape[0])

    @property
    def class_count(self) -> int:
        return int(self.probs.shape[1])

    def rows(self) -> Iterator[LabeledPrediction]:
        for sample_id, label, probs in zip(self.sample_ids, self.labels, self.probs):
            yield LabeledPrediction(
                sample_id=int(sample_id),
                true_label=int(label),
                probs=tuple(float(p) for p in probs),
            )

    def predicted_labels(self) -> np.ndarray:
        """Argmax per row; ties go to the lowest label."""
        return np.argmax(self.probs, axis=1)

    def in_id_order(self) -> "PredictionBatch":
        ids = self.sample_ids
        if len(ids) < 2 or bool(np.all(ids[1:] > ids[:-1])):
            return self
        order = np.argsort(ids, kind="stable")
        return PredictionBatch(
            sample_ids=ids[order], labels=self.labels[order], probs=self.probs[order]
        )


def as_batch(preds: "PredictionBatch | Iterable[LabeledPrediction]") -> PredictionBatch:
    if isinstance(preds, PredictionBatch):
        return preds
    return PredictionBatch.from_predictions(preds)


def require_non_empty(batch: PredictionBatch, what: str = "prediction set") -> None:
    if len(batch) == 0:
        raise PredictionValidationError(f"empty {what}")


def validate_batch(
    batch: PredictionBatch | Iterable[LabeledPrediction],
    space: LabelSpace,
    mode: InputMode = "probs",
) -> PredictionBatch:
    """Vectorized :func:`validate_prediction` over a whole batch."""
    batch = as_batch(batch)
    c = space.class_count
    if len(batch) and batch.class_count != c:
        raise PredictionValidationError(
            f"expected {c} outputs per row, got {batch.class_count}"
        )
    probs = batch.probs
    ids = batch.sample_ids

    finite = np.isfinite(probs).all(axis=1)
    if not finite.all():
        row = int(np.argmin(finite))
        raise PredictionValidationError(
            f"sample {ids[row]}: non-finite output", int(ids[row])
        )
    bad_label = (batch.labels < 0) | (batch.labels >= c)
    if bad_label.any():
        row = int(np.argmax(bad_label))
        raise PredictionValidationError(
            f"sample {ids[row]}: label {batch.labels[row]} outside [0, {c})", int(ids[row])
        )

    if mode == "logits":
        exps = np.exp(probs - probs.max(axis=1, keepdims=True))
        probs = exps / exps.sum(axis=1, keepdims=True)
    else:
        out_of_range = ((probs < 0.0) | (probs > 1.0)).any(axis=1)
        if out_of_range.any():
            row = int(np.argmax(out_of_range))
            raise PredictionValidationError(
                f"sample {ids[row]}: probability outside [0, 1]", int(ids[row])
            )
        drift = np.abs(probs.sum(axis=1) - 1.0)
        if (drift > SUM_TOLERANCE).any():
            row = int(np.argmax(drift > SUM_TOLERANCE))
            raise PredictionValidationError(
                f"sample {ids[row]}: probabilities sum to {probs[row].sum()!r}", int(ids[row])
            )
        fix = drift > RENORMALIZE_TOLERANCE
        if fix.any():
            logger.warning("renormalizing %d of %d probability rows", int(fix.sum()), len(batch))
            probs = probs.copy()
            probs[fix] /= probs[fix].sum(axis=1, keepdims=True)

    return PredictionBatch(sample_ids=ids, labels=batch.labels, probs=probs)
