"""
Small fully connected softmax classifier used for the desk-scale runs.

Everything runs in float64 on the CPU so that finite-difference checks and
seeded reruns compare exactly.
"""

import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import nn

logger = logging.getLogger(__name__)

DTYPE = torch.float64

FINITE_DIFFERENCE_STEP = 1e-5


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(ge=1)
    hidden: tuple[int, ...] = (32,)
    class_count: int = Field(ge=2)

    @field_validator("hidden")
    @classmethod
    def check_hidden(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(size < 1 for size in value):
            raise ValueError(f"hidden layer sizes must be positive, got {list(value)}")
        return value

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.class_count]


class MlpClassifier(nn.Module):
    """ReLU hidden layers and a linear output; ``forward`` returns logits."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        sizes = config.layer_sizes
        self.layers = nn.ModuleList(
            nn.Linear(fan_in, fan_out, dtype=DTYPE) for fan_in, fan_out in zip(sizes, sizes[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            x = F.relu(layer(x))
        return self.layers[-1](x)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: ModelConfig, seed: int) -> MlpClassifier:
    """He-scaled normal weights and zero biases drawn from a generator seeded with ``seed``."""
    model = MlpClassifier(config)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in model.layers:
            std = math.sqrt(2.0 / layer.in_features)
            layer.weight.copy_(
                torch.randn(layer.weight.shape, generator=generator, dtype=DTYPE) * std
            )
            layer.bias.zero_()
    logger.debug("Built MLP %s with %d parameters", config.layer_sizes, model.parameter_count())
    return model


def to_tensor(values: np.ndarray | torch.Tensor, dtype: torch.dtype = DTYPE) -> torch.Tensor:
    """Tensor of ``values``; numpy input is copied, so read-only arrays are fine."""
    if isinstance(values, torch.Tensor):
        return values.to(dtype)
    return torch.tensor(np.asarray(values), dtype=dtype)


def predict_proba(model: MlpClassifier, features: np.ndarray | torch.Tensor) -> np.ndarray:
    """Softmax class probabilities for every row of ``features``."""
    x = to_tensor(features)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        probs = torch.softmax(model(x), dim=1)
    model.train(was_training)
    return probs.numpy()


def _loss(model: MlpClassifier, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(model(x), y)


def analytic_gradient(
    model: MlpClassifier, features: np.ndarray | torch.Tensor, labels: np.ndarray | torch.Tensor
) -> torch.Tensor:
    """Flattened autograd gradient of the mean CE loss, in ``parameters()`` order."""
    x = to_tensor(features)
    y = to_tensor(labels, torch.long)
    model.zero_grad()
    _loss(model, x, y).backward()
    gradient = torch.cat([p.grad.reshape(-1) for p in model.parameters()]).clone()
    model.zero_grad()
    return gradient


def numeric_gradient(
    model: MlpClassifier,
    features: np.ndarray | torch.Tensor,
    labels: np.ndarray | torch.Tensor,
    step: float = FINITE_DIFFERENCE_STEP,
) -> torch.Tensor:
    """Central finite differences of the mean CE loss, one parameter at a time."""
    x = to_tensor(features)
    y = to_tensor(labels, torch.long)
    values = []
    with torch.no_grad():
        for parameter in model.parameters():
            flat = parameter.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                up = _loss(model, x, y).item()
                flat[i] = original - step
                down = _loss(model, x, y).item()
                flat[i] = original
                values.append((up - down) / (2 * step))
    return torch.tensor(values, dtype=DTYPE)


def gradient_check(
    model: MlpClassifier, features: np.ndarray | torch.Tensor, labels: np.ndarray | torch.Tensor
) -> float:
    """Largest gap between the autograd and finite-difference gradients.

    The gap is relative to the largest gradient component of either side, so
    components that are zero on both sides do not inflate it. Meant for models
    of at most a thousand parameters.
    """
    analytic = analytic_gradient(model, features, labels)
    numeric = numeric_gradient(model, features, labels)
    scale = max(analytic.abs().max().item(), numeric.abs().max().item())
    if scale == 0.0:
        return 0.0
    error = (analytic - numeric).abs().max().item() / scale
    logger.debug("gradient check over %d parameters: %.3e", analytic.numel(), error)
    return error
