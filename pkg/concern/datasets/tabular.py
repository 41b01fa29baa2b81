"""
Feature/label datasets: CSV tables and IDX image files.
"""

import gzip
import logging
import struct
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from metrics.core import LabelSpace, MpcsError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

STD_CLAMP = 1e-12


class DatasetFormatError(MpcsError, ValueError):
    """A dataset file cannot be parsed into a valid dataset."""


class TabularDataset(BaseModel):
    """An ``n x d`` feature matrix with one dense integer label per row."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    features: np.ndarray
    labels: np.ndarray
    space: LabelSpace
    # Configured class centers, when the data was generated
    centers: np.ndarray | None = None

    @field_validator("features", mode="before")
    @classmethod
    def as_features(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64)
        if array.ndim != 2:
            raise ValueError(f"features must be an n x d matrix, got shape {array.shape}")
        if not np.isfinite(array).all():
            raise ValueError("features must be finite")
        array.setflags(write=False)
        return array

    @field_validator("labels", mode="before")
    @classmethod
    def as_labels(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.int64).reshape(-1)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def check_rows(self) -> "TabularDataset":
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.space.class_count
        ):
            raise ValueError(f"labels outside [0, {self.space.class_count})")
        return self

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_count(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.space.class_count)


class LabelSchema(BaseModel):
    """Where the label lives in a CSV table and how to read it.

    With ``class_names`` the column holds names; otherwise dense non-negative
    integers, and ``class_count`` (or the largest label + 1) sets ``c``.
    """

    model_config = ConfigDict(frozen=True)

    column: str = "label"
    class_names: tuple[str, ...] | None = None
    class_count: int | None = Field(default=None, ge=2)


def zscore(features: np.ndarray) -> np.ndarray:
    """Per-column standardization; constant columns map to zeros."""
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), STD_CLAMP)
    return (features - mean) / std


def load_csv_dataset(
    path: str | Path, schema: LabelSchema | None = None, normalize: bool = False
) -> TabularDataset:
    schema = schema or LabelSchema()
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DatasetFormatError(f"{path}: no data") from exc

    if frame.empty:
        raise DatasetFormatError(f"{path}: no data rows")
    ragged = frame.isna().any(axis=1) | (frame == "").any(axis=1)
    if ragged.any():
        row = int(np.argmax(ragged.to_numpy()))
        raise DatasetFormatError(
            f"{path}: row {row + 2} is missing fields (expected {frame.shape[1]})"
        )
    if schema.column not in frame.columns:
        raise DatasetFormatError(f"{path}: no label column {schema.column!r}")

    feature_columns = [col for col in frame.columns if col != schema.column]
    if not feature_columns:
        raise DatasetFormatError(f"{path}: no feature columns")
    numeric = frame[feature_columns].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DatasetFormatError(
            f"{path}: row {row + 2}, column {feature_columns[col]!r}: "
            f"non-numeric value {frame[feature_columns[col]].iloc[row]!r}"
        )
    features = numeric.to_numpy(dtype=np.float64)
    if not np.isfinite(features).all():
        row = int(np.argmax(~np.isfinite(features).all(axis=1)))
        raise DatasetFormatError(f"{path}: row {row + 2} has a non-finite feature")

    raw_labels = frame[schema.column].tolist()
    if schema.class_names is not None:
        index = {name: i for i, name in enumerate(schema.class_names)}
        labels = []
        for row, value in enumerate(raw_labels):
            if value not in index:
                raise DatasetFormatError(f"{path}: row {row + 2}: unknown label {value!r}")
            labels.append(index[value])
        space = LabelSpace(
            class_count=len(schema.class_names), class_names=schema.class_names
        )
    else:
        labels = []
        for row, value in enumerate(raw_labels):
            try:
                label = int(value)
            except ValueError:
                raise DatasetFormatError(
                    f"{path}: row {row + 2}: unknown label {value!r}"
                ) from None
            if label < 0 or (schema.class_count is not None and label >= schema.class_count):
                raise DatasetFormatError(f"{path}: row {row + 2}: unknown label {value!r}")
            labels.append(label)
        space = LabelSpace(class_count=schema.class_count or max(max(labels) + 1, 2))

    if normalize:
        features = zscore(features)
    logger.info("Loaded %d rows x %d features from %s", *features.shape, path)
    return TabularDataset(features=features, labels=labels, space=space)


def _open_binary(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_header(stream, path: Path, fields: int) -> tuple[int, ...]:
    data = stream.read(4 * fields)
    if len(data) < 4 * fields:
        raise DatasetFormatError(f"{path}: truncated IDX header")
    return struct.unpack(f">{fields}I", data)


def load_idx(
    images_path: str | Path, labels_path: str | Path, class_count: int | None = None
) -> TabularDataset:
    """Read an IDX image/label file pair (optionally gzip-compressed).

    Pixels are scaled to ``[0, 1]`` and each image is flattened row-major.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)

    with _open_binary(images_path) as stream:
        magic, count, rows, cols = _read_header(stream, images_path, 4)
        if magic != IDX_IMAGES_MAGIC:
            raise DatasetFormatError(f"{images_path}: bad image magic {magic:#010x}")
        pixels = np.frombuffer(stream.read(), dtype=np.uint8)
    if pixels.size != count * rows * cols:
        raise DatasetFormatError(
            f"{images_path}: expected {count * rows * cols} pixels, found {pixels.size}"
        )

    with _open_binary(labels_path) as stream:
        magic, label_count = _read_header(stream, labels_path, 2)
        if magic != IDX_LABELS_MAGIC:
            raise DatasetFormatError(f"{labels_path}: bad label magic {magic:#010x}")
        labels = np.frombuffer(stream.read(), dtype=np.uint8)
    if label_count != count or labels.size != count:
        raise DatasetFormatError(
            f"{images_path} holds {count} images but {labels_path} holds {labels.size} labels"
        )

    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    c = class_count or max(int(labels.max()) + 1 if count else 2, 2)
    logger.info("Loaded %d IDX images of %dx%d", count, rows, cols)
    return TabularDataset(
        features=features, labels=labels.astype(np.int64), space=LabelSpace(class_count=c)
    )
