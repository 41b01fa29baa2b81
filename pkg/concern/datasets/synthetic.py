"""
Seeded Gaussian-blob datasets with adjustable confusable class pairs.

Pulling a pair's centers together concentrates the classifier's errors on
that pair, the desk-scale stand-in for labels that sit next to each other in
a learned embedding. The release list of a case study is then those pairs.
"""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from metrics.core import LabelSpace, ReleaseRule

from .tabular import TabularDataset

logger = logging.getLogger(__name__)


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = 0
    class_count: int = Field(default=3, ge=2)
    per_class: int = Field(default=200, ge=1)
    feature_count: int = Field(default=2, ge=2)
    spread: float = Field(default=3.0, gt=0.0, description="Distance scale of class centers")
    noise_std: float = Field(default=1.0, ge=0.0)
    confusable_pairs: tuple[tuple[int, int], ...] = ()
    # Fraction of the original center distance kept for a confusable pair
    pair_separation: float = Field(default=0.3, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def check_pairs(self) -> "SyntheticSpec":
        for a, b in self.confusable_pairs:
            if a == b:
                raise ValueError(f"confusable pair ({a}, {b}) repeats a label")
            if not (0 <= a < self.class_count and 0 <= b < self.class_count):
                raise ValueError(f"confusable pair ({a}, {b}) outside [0, {self.class_count})")
        return self

    def release_rules(self) -> list[ReleaseRule]:
        """Both directions of every confusable pair, as release rules."""
        released: dict[int, set[int]] = {}
        for a, b in self.confusable_pairs:
            released.setdefault(a, set()).add(b)
            released.setdefault(b, set()).add(a)
        return [
            ReleaseRule(true_label=label, released_predictions=frozenset(others))
            for label, others in sorted(released.items())
        ]


def _centers(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    c, d = spec.class_count, spec.feature_count
    if d >= c:
        # Orthonormal directions keep every pair equally far apart
        q, _ = np.linalg.qr(rng.standard_normal((d, c)))
        centers = spec.spread * q.T
    else:
        phase = rng.uniform(0.0, 2 * np.pi)
        angles = phase + 2 * np.pi * np.arange(c) / c
        centers = np.zeros((c, d))
        centers[:, 0] = spec.spread * np.cos(angles)
        centers[:, 1] = spec.spread * np.sin(angles)
    for a, b in spec.confusable_pairs:
        centers[b] = centers[a] + spec.pair_separation * (centers[b] - centers[a])
    return centers


def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    rng = np.random.default_rng(spec.seed)
    centers = _centers(rng, spec)
    labels = np.repeat(np.arange(spec.class_count), spec.per_class)
    noise = spec.noise_std * rng.standard_normal((labels.size, spec.feature_count))
    features = centers[labels] + noise
    order = rng.permutation(labels.size)
    logger.debug(
        "Generated %d synthetic samples (seed %d, pairs %s)",
        labels.size,
        spec.seed,
        spec.confusable_pairs,
    )
    return TabularDataset(
        features=features[order],
        labels=labels[order],
        space=LabelSpace(class_count=spec.class_count),
        centers=centers,
    )
