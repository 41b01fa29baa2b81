"""
Prediction dumps: one CSV file per (model, epoch) holding every sample's
label and probability row.

Layout::

    #c=<c>,tag=<tag>,epoch=<epoch>
    sample_id,true_label,p_0,...,p_{c-1}

Probabilities are written with 17 significant digits, so reading a dump
back yields bit-identical floats.
"""

import logging
import re
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from metrics.core import (
    InputMode,
    LabeledPrediction,
    LabelSpace,
    MpcsError,
    PredictionBatch,
    as_batch,
    validate_batch,
)

logger = logging.getLogger(__name__)

TAG_PATTERN = re.compile(r"^[A-Za-z0-9_.\-]*$")


class DumpFormatError(MpcsError, ValueError):
    """A prediction dump file is malformed."""


class PredictionDump(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    class_count: int = Field(ge=2)
    tag: str = ""
    epoch: int = 0
    predictions: PredictionBatch

    @field_validator("tag")
    @classmethod
    def check_tag(cls, value: str) -> str:
        if not TAG_PATTERN.match(value):
            raise ValueError(f"tag {value!r} may only hold letters, digits, '_', '.', '-'")
        return value

    @property
    def space(self) -> LabelSpace:
        return LabelSpace(class_count=self.class_count)

    def rows(self) -> Iterable[LabeledPrediction]:
        return self.predictions.rows()


def write_dump(
    path: str | Path,
    preds: PredictionBatch | Iterable[LabeledPrediction],
    tag: str = "",
    epoch: int = 0,
) -> PredictionDump:
    batch = as_batch(preds)
    dump = PredictionDump(
        class_count=batch.class_count, tag=tag, epoch=epoch, predictions=batch
    )
    frame = pd.DataFrame(batch.probs)
    frame.insert(0, "true_label", batch.labels)
    frame.insert(0, "sample_id", batch.sample_ids)

    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"#c={dump.class_count},tag={tag},epoch={epoch}\n")
        frame.to_csv(
            handle, header=False, index=False, float_format="%.17g", lineterminator="\n"
        )
    logger.debug("Wrote %d predictions to %s", len(batch), path)
    return dump


def _parse_header(line: str, path: Path) -> dict[str, str]:
    if not line.startswith("#"):
        raise DumpFormatError(f"{path}: missing '#c=...,tag=...,epoch=...' header")
    fields = {}
    for item in line[1:].strip().split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise DumpFormatError(f"{path}: malformed header field {item!r}")
        fields[key.strip()] = value.strip()
    missing = {"c", "tag", "epoch"} - fields.keys()
    if missing:
        raise DumpFormatError(f"{path}: header lacks {', '.join(sorted(missing))}")
    return fields


def read_dump(path: str | Path, mode: InputMode = "probs") -> PredictionDump:
    """Parse and validate a dump; ``mode="logits"`` softmaxes raw output rows."""
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        meta = _parse_header(handle.readline(), path)
        try:
            c = int(meta["c"])
            epoch = int(meta["epoch"])
        except ValueError as exc:
            raise DumpFormatError(f"{path}: {exc}") from exc
        if c < 2:
            raise DumpFormatError(f"{path}: class count {c} below 2")
        try:
            frame = pd.read_csv(handle, header=None, float_precision="round_trip")
        except pd.errors.EmptyDataError:
            frame = pd.DataFrame(np.empty((0, c + 2)))
        except pd.errors.ParserError as exc:
            raise DumpFormatError(f"{path}: {exc}") from exc

    if frame.shape[1] != c + 2:
        raise DumpFormatError(
            f"{path}: rows hold {frame.shape[1]} fields, header announces c={c} "
            f"({c + 2} fields)"
        )
    incomplete = frame.isna().any(axis=1).to_numpy()
    if incomplete.any():
        row = int(np.argmax(incomplete))
        raise DumpFormatError(f"{path}: line {row + 2} has fewer than {c + 2} fields")

    for column in frame.columns:
        if frame[column].dtype != object:
            continue
        coerced = pd.to_numeric(frame[column], errors="coerce")
        bad = coerced.isna().to_numpy()
        if bad.any():
            row = int(np.argmax(bad))
            raise DumpFormatError(
                f"{path}: line {row + 2}, field {column + 1}: "
                f"non-numeric value {frame[column].iloc[row]!r}"
            )
        frame[column] = coerced

    # sample_id and true_label must be whole numbers; never truncate them
    for column, name in ((0, "sample_id"), (1, "true_label")):
        values = frame[column].to_numpy()
        if values.dtype.kind != "f":
            continue
        fractional = ~np.isfinite(values) | (values != np.floor(values))
        if fractional.any():
            row = int(np.argmax(fractional))
            raise DumpFormatError(
                f"{path}: line {row + 2}: {name} {values[row]!r} is not an integer"
            )

    batch = PredictionBatch(
        sample_ids=frame[0].to_numpy().astype(np.int64),
        labels=frame[1].to_numpy().astype(np.int64),
        probs=frame.iloc[:, 2:].to_numpy(dtype=np.float64),
    )
    batch = validate_batch(batch, LabelSpace(class_count=c), mode=mode)
    return PredictionDump(class_count=c, tag=meta["tag"], epoch=epoch, predictions=batch)


def is_dump(path: str | Path) -> bool:
    """Whether ``path`` starts with a dump header line."""
    with open(path, encoding="utf-8") as handle:
        return handle.readline().startswith("#c=")


def dump_paths(directory: str | Path) -> list[Path]:
    """Dump files of a directory in name order.

    Other CSV files living next to the dumps (``training_log.csv``) are skipped.
    """
    paths = []
    for path in sorted(Path(directory).glob("*.csv")):
        if is_dump(path):
            paths.append(path)
        else:
            logger.debug("Skipping %s: no dump header", path)
    return paths
