"""Gamma model with log-moment statistics.

Observations are Gamma with mean exp(t1 - t2) and variance
exp(t1 - 2 t2), i.e. shape exp(t1) and scale exp(-t2); the statistics
are the log of the sample mean and the log of the sample standard
deviation (ddof=1). The likelihood is tractable, which makes this the
validation case: the benchmark compares against a quadrature posterior.
"""

from __future__ import annotations

import numpy as np

from .base import SimulatorSpec, StandardNormalPrior

__all__ = ["GammaModel", "simulate_gamma"]

DEFAULT_BOX = ((-2.0, 2.0), (-2.0, 2.0))


def simulate_gamma(theta, n: int, rng: np.random.Generator) -> np.ndarray:
    """One statistic draw (log sample mean, log sample sd) at theta."""
    if n < 2:
        raise ValueError("need at least two observations")
    shape = np.exp(float(theta[0]))
    scale = np.exp(-float(theta[1]))
    y = rng.gamma(shape, scale, size=n)
    return np.array([np.log(y.mean()), np.log(y.std(ddof=1))])


class GammaModel:
    """Two-parameter benchmark with a tractable likelihood."""

    name = "gamma"

    def __init__(self, sample_size: int = 10, box=DEFAULT_BOX):
        self.sample_size = int(sample_size)
        self.spec = SimulatorSpec(
            name=self.name,
            param_dim=2,
            statistic_dim=2,
            param_box=np.asarray(box, dtype=np.float64),
            sample_size=self.sample_size,
            prior="independent standard normals",
        )
        self.prior = StandardNormalPrior(2)

    def simulate(self, theta, rng: np.random.Generator):
        return simulate_gamma(theta, self.sample_size, rng), None
