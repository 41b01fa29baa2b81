"""
Minibatch CE training with per-epoch checkpoints and optional MPCS-driven
learning-rate modulation.

With modulation on, the learning rate of epoch ``e`` is
``base * clamp(S[e-1] / S[0], floor, cap)`` where ``S`` is the training-set
MPCS and ``S[0]`` is measured on the freshly initialized model.
"""

import logging
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from concern.datasets import TabularDataset, write_dump
from metrics.analysis import CheckpointRecord
from metrics.baselines import metric_report
from metrics.core import (
    ConfigError,
    MpcsConfig,
    MpcsError,
    PredictionBatch,
    check_config_against,
)
from metrics.scoring import dataset_mpcs

from .model import MlpClassifier, ModelConfig, build_model, predict_proba, to_tensor

logger = logging.getLogger(__name__)

TRAINING_LOG_COLUMNS = ["epoch", "lr", "ce", "mpcs", "accuracy", "dangerous_count"]


class TrainingDivergedError(MpcsError):
    """The loss or the parameters stopped being finite."""

    exit_code = 3

    def __init__(self, epoch: int, records: Sequence[CheckpointRecord]):
        super().__init__(f"training diverged in epoch {epoch}")
        self.epoch = epoch
        self.records = list(records)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(ge=1)
    learning_rate: float = Field(gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    optimizer: Literal["sgd", "adam"] = "adam"
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    seed: int = 0
    lr_modulation: Literal["off", "mpcs"] = "off"
    lr_floor: float = Field(default=0.1, gt=0.0)
    lr_cap: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def check_clamp(self) -> "TrainConfig":
        if self.lr_floor > self.lr_cap:
            raise ValueError(f"lr_floor {self.lr_floor} exceeds lr_cap {self.lr_cap}")
        return self


def modulated_lr(
    base: float, s_prev: float, s_ref: float, floor: float = 0.1, cap: float = 1.0
) -> float:
    if s_ref <= 0:
        raise ValueError(f"reference MPCS must be positive, got {s_ref}")
    return base * min(max(s_prev / s_ref, floor), cap)


def _make_optimizer(model: MlpClassifier, config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == "adam":
        return torch.optim.Adam(
            model.parameters(),
            lr=config.learning_rate,
            betas=(config.beta1, config.beta2),
            eps=config.eps,
        )
    return torch.optim.SGD(model.parameters(), lr=config.learning_rate)


def _predictions(model: MlpClassifier, dataset: TabularDataset) -> PredictionBatch:
    return PredictionBatch(
        sample_ids=np.arange(len(dataset)),
        labels=dataset.labels,
        probs=predict_proba(model, dataset.features),
    )


def _parameters_finite(model: MlpClassifier) -> bool:
    return all(bool(torch.isfinite(p).all()) for p in model.parameters())


def train(
    dataset: TabularDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    mpcs_config: MpcsConfig,
    dump_dir: str | Path | None = None,
    measure_mpcs: bool = True,
    tag: str = "",
) -> list[CheckpointRecord]:
    """Train a fresh model and return one record per epoch, epochs ``1..E``.

    With ``dump_dir`` each epoch's predictions are written there as
    ``epoch_NNN.csv`` and records point at the files; otherwise records keep
    the predictions in memory. MPCS is always measured while modulating.
    """
    if model_config.input_dim != dataset.feature_count:
        raise ConfigError(
            f"model expects {model_config.input_dim} features, dataset has {dataset.feature_count}"
        )
    if model_config.class_count != dataset.space.class_count:
        raise ConfigError(
            f"model predicts {model_config.class_count} classes, "
            f"dataset has {dataset.space.class_count}"
        )
    check_config_against(mpcs_config, dataset.space)
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)

    model = build_model(model_config, train_config.seed)
    optimizer = _make_optimizer(model, train_config)
    shuffle = torch.Generator().manual_seed(train_config.seed + 1)
    features = to_tensor(dataset.features)
    labels = to_tensor(dataset.labels, torch.long)
    n = len(dataset)
    base = train_config.learning_rate

    modulating = train_config.lr_modulation == "mpcs"
    s_ref = s_prev = None
    if modulating:
        s_ref = s_prev = dataset_mpcs(_predictions(model, dataset), mpcs_config)
        if s_ref <= 0:
            logger.warning("Initial MPCS is %s, training at the base learning rate", s_ref)
            modulating = False

    records: list[CheckpointRecord] = []
    for epoch in range(1, train_config.epochs + 1):
        lr = base
        if modulating:
            lr = modulated_lr(base, s_prev, s_ref, train_config.lr_floor, train_config.lr_cap)
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        order = torch.randperm(n, generator=shuffle)
        for start in range(0, n, train_config.batch_size):
            index = order[start : start + train_config.batch_size]
            optimizer.zero_grad()
            loss = F.cross_entropy(model(features[index]), labels[index])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, records)
            loss.backward()
            optimizer.step()
        if not _parameters_finite(model):
            raise TrainingDivergedError(epoch, records)

        batch = _predictions(model, dataset)
        if not np.isfinite(batch.probs).all():
            raise TrainingDivergedError(epoch, records)
        report = metric_report(batch, mpcs_config, include_mpcs=measure_mpcs or modulating)
        if dump_dir is not None:
            dump_path = dump_dir / f"epoch_{epoch:03d}.csv"
            write_dump(dump_path, batch, tag=tag, epoch=epoch)
            record = CheckpointRecord(
                epoch=epoch, report=report, learning_rate=lr, dump_path=dump_path
            )
        else:
            record = CheckpointRecord(
                epoch=epoch, report=report, learning_rate=lr, predictions=batch
            )
        records.append(record)
        if modulating:
            s_prev = report.mpcs

        logger.info(
            "epoch %d/%d lr=%.4g ce=%.6f mpcs=%s accuracy=%.4f",
            epoch,
            train_config.epochs,
            lr,
            report.ce_loss,
            "-" if report.mpcs is None else f"{report.mpcs:.6f}",
            report.accuracy,
        )
    return records


def training_log(records: Sequence[CheckpointRecord]) -> pd.DataFrame:
    """One row per epoch, the columns of ``TRAINING_LOG_COLUMNS``."""
    rows = [
        {
            "epoch": r.epoch,
            "lr": r.learning_rate,
            "ce": r.report.ce_loss,
            "mpcs": r.report.mpcs,
            "accuracy": r.report.accuracy,
            "dangerous_count": r.report.dangerous_count,
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=TRAINING_LOG_COLUMNS)


def write_training_log(path: str | Path, records: Sequence[CheckpointRecord]) -> None:
    training_log(records).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
