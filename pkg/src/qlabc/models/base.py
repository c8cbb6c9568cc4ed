"""Shared simulator/prior plumbing for the built-in models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SimulatorSpec",
    "StandardNormalPrior",
    "UniformBoxPrior",
    "LogScaleExponentialPrior",
]


@dataclass(frozen=True)
class SimulatorSpec:
    """Static description of a simulator: dimensions, box, sample size.

    The statistic dimension always equals the parameter dimension (one
    estimating function per unknown).
    """

    name: str
    param_dim: int
    statistic_dim: int
    param_box: np.ndarray
    sample_size: int
    prior: str

    def __post_init__(self):
        if self.statistic_dim != self.param_dim:
            raise ValueError("statistic_dim must equal param_dim")
        box = np.asarray(self.param_box, dtype=np.float64)
        if box.shape != (self.param_dim, 2):
            raise ValueError(f"param_box must be ({self.param_dim}, 2)")
        if not np.all(np.isfinite(box)) or np.any(box[:, 0] >= box[:, 1]):
            raise ValueError("param_box must be finite with lo < hi per coordinate")
        object.__setattr__(self, "param_box", box)


class StandardNormalPrior:
    """Independent standard normals on each coordinate."""

    def __init__(self, dim: int):
        self.dim = dim
        self._const = -0.5 * dim * np.log(2.0 * np.pi)

    def logpdf(self, theta) -> float:
        t = np.asarray(theta, dtype=np.float64)
        return float(self._const - 0.5 * t @ t)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim)


class UniformBoxPrior:
    """Uniform over an axis-aligned box."""

    def __init__(self, box):
        self.box = np.asarray(box, dtype=np.float64)
        self.dim = self.box.shape[0]
        self._log_volume = float(np.sum(np.log(self.box[:, 1] - self.box[:, 0])))

    def logpdf(self, theta) -> float:
        t = np.asarray(theta, dtype=np.float64)
        if np.any(t < self.box[:, 0]) or np.any(t > self.box[:, 1]):
            return -np.inf
        return -self._log_volume

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.dim)
        return self.box[:, 0] + u * (self.box[:, 1] - self.box[:, 0])


class LogScaleExponentialPrior:
    """Unit-rate exponential on exp(theta), expressed for theta.

    Density exp(theta - e^theta): the change of variables of Exp(1)
    under theta = log(rate).
    """

    dim = 1

    def logpdf(self, theta) -> float:
        t = float(np.asarray(theta, dtype=np.float64).reshape(-1)[0])
        return t - np.exp(t)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([np.log(rng.exponential(1.0))])
