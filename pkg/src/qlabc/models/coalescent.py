"""Infinitely-many-sites coalescent: segregating-site counts on log scales.

The observable is the number of segregating sites S' in a sample of n
DNA sequences. The tree length T_n = sum_{j=2..n} j W_j with W_j
independent exponentials of mean 2/(j(j-1)); given the tree,
S' | T_n ~ Poisson(rate * T_n / 2). Everything here works on the
transformed scales theta = log(rate) and s = log(S' + 1).
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .base import LogScaleExponentialPrior, SimulatorSpec

__all__ = [
    "CoalescentModel",
    "coalescent_parametric_posterior",
    "simulate_coalescent",
    "simulate_tree_length",
]

DEFAULT_BOX = ((-6.0, 3.0),)


def _branch_scales(n: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(2, n + 1, dtype=np.float64)
    return j, 2.0 / (j * (j - 1.0))


def simulate_tree_length(n: int, rng: np.random.Generator, size: int | None = None):
    """Draw T_n = sum j W_j; vectorized when `size` is given."""
    j, scales = _branch_scales(n)
    if size is None:
        return float(rng.exponential(scales) @ j)
    w = rng.exponential(scales, size=(size, j.size))
    return w @ j


def simulate_coalescent(theta: float, n: int, rng: np.random.Generator) -> float:
    """One draw of s = log(S' + 1) at log-rate theta."""
    if n < 2:
        raise ValueError("need at least two sequences")
    tn = simulate_tree_length(n, rng)
    s_count = rng.poisson(np.exp(theta) * tn / 2.0)
    return float(np.log(s_count + 1.0))


def _poisson_pmf(k: int, mu: np.ndarray) -> np.ndarray:
    out = np.exp(k * np.log(mu) - mu - gammaln(k + 1.0))
    return out


def coalescent_parametric_posterior(
    s_obs_count: int,
    n: int,
    prior_density,
    K: int,
    rng: np.random.Generator,
    grid: np.ndarray | None = None,
):
    """Reference posterior over the positive rate by marginalising the tree.

    Averages the Poisson likelihood of the observed segregating-site
    count over K simulated tree lengths, multiplies by the prior
    density on the rate scale, and normalises on the grid by the
    trapezoid rule. Returns (grid, density).
    """
    if K < 10**4:
        raise ValueError("need at least 1e4 tree draws")
    tn = simulate_tree_length(n, rng, size=K)
    if grid is None:
        harmonic = float(np.sum(1.0 / np.arange(1, n, dtype=np.float64)))
        top = max(10.0, 4.0 * (s_obs_count + 1.0) / harmonic)
        grid = np.linspace(1e-4, top, 2001)
    grid = np.asarray(grid, dtype=np.float64)
    lik = np.empty(grid.size)
    chunk = max(1, int(2e6 // K))
    for start in range(0, grid.size, chunk):
        rates = grid[start : start + chunk]
        mu = rates[:, None] * tn[None, :] / 2.0
        lik[start : start + chunk] = _poisson_pmf(s_obs_count, mu).mean(axis=1)
    density = lik * np.asarray([prior_density(r) for r in grid])
    mass = np.trapezoid(density, grid)
    return grid, density / mass


class CoalescentModel:
    """Scalar benchmark: segregating sites vs log mutation rate."""

    name = "coalescent"

    def __init__(self, sample_size: int = 100, box=DEFAULT_BOX):
        self.sample_size = int(sample_size)
        self._j, self._scales = _branch_scales(self.sample_size)
        self.spec = SimulatorSpec(
            name=self.name,
            param_dim=1,
            statistic_dim=1,
            param_box=np.asarray(box, dtype=np.float64),
            sample_size=self.sample_size,
            prior="Exp(1) on the rate scale",
        )
        self.prior = LogScaleExponentialPrior()

    def simulate(self, theta, rng: np.random.Generator):
        tn = float(rng.exponential(self._scales) @ self._j)
        s_count = rng.poisson(np.exp(float(theta[0])) * tn / 2.0)
        return np.array([np.log(s_count + 1.0)]), None
