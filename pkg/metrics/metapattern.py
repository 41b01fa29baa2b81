"""
Meta pattern construction: the top-k prediction pattern and its paired
confidence pattern, built from one validated prediction.
"""

import math

from pydantic import BaseModel, ConfigDict, model_validator

from .core import LabeledPrediction, MpcsConfig


class MetaPattern(BaseModel):
    """Abstract view of one probabilistic prediction.

    ``pred`` lists the k most probable labels in descending order, ``conf``
    their integer confidence levels in ``[0, t-1]`` (high is good), and
    ``correct_index`` the position of the true label when it made the cut.
    """

    model_config = ConfigDict(frozen=True)

    pred: tuple[int, ...]
    conf: tuple[int, ...]
    correct_index: int | None = None
    t: int

    @model_validator(mode="after")
    def check_pattern(self) -> "MetaPattern":
        if len(self.pred) != len(self.conf):
            raise ValueError("prediction and confidence patterns differ in length")
        if len(set(self.pred)) != len(self.pred):
            raise ValueError(f"prediction pattern {self.pred} repeats a label")
        for level in self.conf:
            if not 0 <= level <= self.t - 1:
                raise ValueError(f"confidence level {level} outside [0, {self.t - 1}]")
        if self.correct_index is not None and not 0 <= self.correct_index < len(self.pred):
            raise ValueError(f"correct index {self.correct_index} outside the pattern")
        return self

    @property
    def k(self) -> int:
        return len(self.pred)


def build_prediction_pattern(pred: LabeledPrediction, k: int) -> list[int]:
    """The k labels with highest probability, descending, ties to the lower label."""
    c = len(pred.probs)
    if k > c:
        raise ValueError(f"k={k} exceeds the {c} classes")
    probs = pred.probs
    return sorted(range(c), key=lambda label: (-probs[label], label))[:k]


def confidence_level(c_i: float, t: int, is_correct: bool) -> int:
    raw = t - math.floor(t * c_i) - 1
    if raw == -1:
        raw = 0
    if is_correct:
        return t - raw - 1
    return raw


def build_meta_pattern(pred: LabeledPrediction, cfg: MpcsConfig) -> MetaPattern:
    labels = build_prediction_pattern(pred, cfg.k)
    try:
        correct_index = labels.index(pred.true_label)
    except ValueError:
        correct_index = None
    levels = [
        confidence_level(pred.probs[label], cfg.t, position == correct_index)
        for position, label in enumerate(labels)
    ]
    return MetaPattern(
        pred=tuple(labels), conf=tuple(levels), correct_index=correct_index, t=cfg.t
    )
