"""Smooth stand-ins for the spike step function's derivative.

Backprop through a Heaviside spike uses one of these derivatives in place of
the (almost-everywhere zero) true one.  Each kind also exposes the primitive
whose exact derivative it is, so gradient certification can run the forward
pass through the smooth primitive and compare against the same backward code.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class SurrogateKind(Enum):
    ARCTAN = "arctan"
    RATIONAL = "rational"


@dataclass(frozen=True)
class SurrogateConfig:
    kind: SurrogateKind = SurrogateKind.ARCTAN
    alpha: float = 2.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def spike_backward(x, cfg: SurrogateConfig) -> np.ndarray:
    """Elementwise surrogate derivative at pre-threshold values x."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.kind is SurrogateKind.ARCTAN:
        return cfg.alpha / (2.0 * (1.0 + (0.5 * np.pi * cfg.alpha * x) ** 2))
    if cfg.kind is SurrogateKind.RATIONAL:
        return 1.0 / (1.0 + cfg.alpha * x * x)
    raise ValueError(f"unknown surrogate kind {cfg.kind!r}")


def spike_primitive(x, cfg: SurrogateConfig) -> np.ndarray:
    """Antiderivative of :func:`spike_backward`, centered at 0.5.

    A soft spike: monotone, 0.5 at the threshold, with exact derivative
    equal to the surrogate.  Used only by finite-difference certification.
    """
    x = np.asarray(x, dtype=np.float64)
    if cfg.kind is SurrogateKind.ARCTAN:
        return np.arctan(0.5 * np.pi * cfg.alpha * x) / np.pi + 0.5
    if cfg.kind is SurrogateKind.RATIONAL:
        r = np.sqrt(cfg.alpha)
        return np.arctan(r * x) / r + 0.5
    raise ValueError(f"unknown surrogate kind {cfg.kind!r}")
