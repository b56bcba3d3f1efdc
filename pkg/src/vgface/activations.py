"""Rectifier activations: plain ReLU and the average-biased variant.

The average-biased rectifier (AB-ReLU) makes the cut point data dependent:
instead of thresholding at zero it thresholds at

    beta = alpha * mean(volume)

recomputed per call on the layer's whole input volume for one sample.  A
volume with negative mean gets a negative beta, so some prominent negative
signals survive (shifted up); a volume with positive mean gets a positive
beta, which also drops the weaker positive signals.  With alpha = 0 the
bias vanishes and the function is exactly plain ReLU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, mean_volume

RELU = "relu"
ABRELU = "abrelu"

DEFAULT_ALPHA = 1.0


@dataclass(frozen=True)
class ActivationKind:
    """Either plain ReLU or the average-biased rectifier with its alpha.

    Serializes in configs as "relu" or "abrelu:<alpha>".
    """

    name: str
    alpha: float | None = None

    def __post_init__(self):
        if self.name == RELU:
            if self.alpha is not None:
                raise ValueError("relu takes no alpha")
        elif self.name == ABRELU:
            alpha = DEFAULT_ALPHA if self.alpha is None else float(self.alpha)
            if not math.isfinite(alpha) or alpha < 0:
                raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
            object.__setattr__(self, "alpha", alpha)
        else:
            raise ValueError(f"unknown activation kind {self.name!r}")

    @classmethod
    def relu(cls) -> "ActivationKind":
        return cls(RELU)

    @classmethod
    def abrelu(cls, alpha: float = DEFAULT_ALPHA) -> "ActivationKind":
        return cls(ABRELU, alpha)

    @classmethod
    def parse(cls, text: str) -> "ActivationKind":
        """Parse the config form: "relu", "abrelu" or "abrelu:<alpha>"."""
        text = text.strip()
        if text == RELU:
            return cls.relu()
        if text == ABRELU:
            return cls.abrelu()
        if text.startswith(ABRELU + ":"):
            try:
                alpha = float(text.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad activation spec {text!r}") from None
            try:
                return cls.abrelu(alpha)
            except ValueError as e:
                raise ConfigError(str(e)) from None
        raise ConfigError(
            f"unknown activation {text!r} (expected 'relu' or 'abrelu:<alpha>')"
        )

    def serialize(self) -> str:
        if self.name == RELU:
            return RELU
        return f"{ABRELU}:{self.alpha:g}"


def relu(x: Tensor) -> Tensor:
    """max(value, 0) elementwise; strictly positive values pass unchanged."""
    a = x.data
    return Tensor._wrap(np.where(a > 0, a, np.float32(0.0)))


def ab_relu(x: Tensor, alpha: float = DEFAULT_ALPHA) -> Tensor:
    """Shift by beta = alpha * mean(volume), then rectify at zero.

    The mean is taken over the whole input volume (one sample, all
    dimensions).  An element passes iff value - beta > 0, in which case the
    shifted value is emitted.
    """
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    beta = np.float32(alpha * mean_volume(x))
    shifted = x.data - beta
    return Tensor._wrap(np.where(shifted > 0, shifted, np.float32(0.0)))


def apply_activation(kind: ActivationKind, x: Tensor) -> Tensor:
    if kind.name == RELU:
        return relu(x)
    return ab_relu(x, kind.alpha)
