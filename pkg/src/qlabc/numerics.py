"""Deterministic numerical kernels shared by the whole package.

Random variate generation (counter-based, reproducible streams),
Cholesky factorisation for proposal sampling, Richardson-extrapolated
numerical Jacobians, and a damped-Newton nonlinear solver with a
bisection fallback in one dimension.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DimensionMismatch,
    DomainViolation,
    NonConverged,
    NotPositiveDefinite,
)

__all__ = [
    "RandomStream",
    "as_generator",
    "as_matrix",
    "as_vector",
    "cholesky_factor",
    "richardson_jacobian",
    "sample_mvn",
    "solve_nonlinear",
]


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-d float array, optionally checking length."""
    v = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    if dim is not None and v.size != dim:
        raise DimensionMismatch(f"expected length {dim}, got {v.size}")
    return v


def as_matrix(m, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce to a finite 2-d float array, optionally checking shape."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    if shape is not None and a.shape != shape:
        raise DimensionMismatch(f"expected shape {shape}, got {a.shape}")
    return a


class RandomStream:
    """Reproducible random stream keyed by (master_seed, stream_id).

    Backed by the Philox counter-based bit generator, so equal keys give
    identical variate sequences on any platform and distinct stream ids
    give statistically independent streams. Derive one stream per
    concurrent task; a single stream must not be shared across tasks.
    """

    GENERATOR = "philox4x64"
    VERSION = 1

    def __init__(self, master_seed: int, stream_id: int = 0):
        if stream_id < 0:
            raise ValueError("stream_id must be non-negative")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        key = np.array(
            [self.master_seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF],
            dtype=np.uint64,
        )
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream_id: int) -> "RandomStream":
        """Fresh stream with the same master seed and a new id."""
        return RandomStream(self.master_seed, stream_id)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RandomStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


def as_generator(rng) -> np.random.Generator:
    """Accept either a RandomStream or a bare numpy Generator."""
    if isinstance(rng, RandomStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(rng)!r}")


def cholesky_factor(m) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m for symmetric positive-definite m.

    Raises NotPositiveDefinite when a pivot falls at or below
    1e-12 * trace(m) / rows, the threshold treating near-semidefinite
    input as failure.
    """
    a = as_matrix(m)
    n, ncols = a.shape
    if n != ncols:
        raise DimensionMismatch(f"matrix must be square, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > 1e-10 * scale:
        raise ValueError("matrix must be symmetric to tolerance 1e-10")
    pivot_floor = 1e-12 * float(np.trace(a)) / n
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d <= pivot_floor:
            raise NotPositiveDefinite(
                f"pivot {d:.3e} at column {j} is below threshold {pivot_floor:.3e}"
            )
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def sample_mvn(mean, chol_lower, rng) -> np.ndarray:
    """Draw mean + L z with z i.i.d. standard normal."""
    mu = as_vector(mean)
    L = as_matrix(chol_lower, shape=(mu.size, mu.size))
    gen = as_generator(rng)
    z = gen.standard_normal(mu.size)
    return mu + L @ z


def _default_steps(x: np.ndarray) -> np.ndarray:
    return 1e-3 * np.maximum(1.0, np.abs(x))


def richardson_jacobian(
    f: Callable[[np.ndarray], Sequence[float]],
    x,
    h0=None,
    bounds=None,
    levels: int = 2,
) -> np.ndarray:
    """Jacobian of a vector map by central differences with Richardson extrapolation.

    Column j uses per-coordinate initial step h0[j] (default
    1e-3 * max(1, |x_j|)) halved `levels` times; the extrapolation
    tableau removes the leading error terms, giving at least O(h^4)
    accuracy and exactness on polynomials of degree <= 3.

    When `bounds` (a (p, 2) box) is given and a perturbed point would
    leave it, raises DomainViolation: the caller must shrink h0.
    """
    x = as_vector(x)
    p = x.size
    if h0 is None:
        steps = _default_steps(x)
    else:
        steps = np.broadcast_to(np.asarray(h0, dtype=np.float64), (p,)).copy()
        if np.any(steps <= 0):
            raise ValueError("h0 must be positive")
    if levels < 2:
        raise ValueError("need at least two step halvings")
    box = None if bounds is None else as_matrix(bounds, shape=(p, 2))

    columns = []
    for j in range(p):
        h = steps[j]
        if box is not None:
            if x[j] - h < box[j, 0] or x[j] + h > box[j, 1]:
                raise DomainViolation(
                    f"step {h:.3e} in coordinate {j} leaves the declared domain"
                )
        tableau: list[np.ndarray] = []
        for level in range(levels + 1):
            hl = h / (2.0**level)
            xp = x.copy()
            xm = x.copy()
            xp[j] += hl
            xm[j] -= hl
            d = (np.asarray(f(xp), dtype=np.float64) - np.asarray(f(xm), dtype=np.float64)) / (2.0 * hl)
            row = [d]
            for m in range(1, level + 1):
                factor = 4.0**m
                row.append((factor * row[m - 1] - tableau[level - 1][m - 1]) / (factor - 1.0))
            tableau.append(row)
        columns.append(tableau[levels][levels])
    return np.column_stack(columns)


def solve_nonlinear(
    f: Callable[[np.ndarray], Sequence[float]],
    target,
    x0,
    bounds,
    jac: Callable[[np.ndarray], np.ndarray] | None = None,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> np.ndarray:
    """Solve f(x) = target inside a box by damped Newton iteration.

    Steps are halved (up to 10 times) until the max-norm residual
    decreases, and iterates are clipped to `bounds`; damping matters
    because fitted forward maps can be nearly flat where a statistic is
    locally uninformative. For p = 1 a bisection fallback over the
    bounds is tried before giving up. On failure raises NonConverged
    carrying the best iterate and residual.
    """
    t = as_vector(target)
    x = as_vector(x0, dim=t.size)
    box = as_matrix(bounds, shape=(x.size, 2))
    if np.any(x < box[:, 0]) or np.any(x > box[:, 1]):
        raise ValueError("x0 must lie inside bounds")
    jac_fn = jac if jac is not None else (lambda z: richardson_jacobian(f, z))

    def residual(z: np.ndarray) -> np.ndarray:
        return np.asarray(f(z), dtype=np.float64) - t

    r = residual(x)
    best_x, best_norm = x.copy(), float(np.abs(r).max())
    for _ in range(max_iter):
        if float(np.abs(r).max()) < tol:
            return x
        J = np.atleast_2d(np.asarray(jac_fn(x), dtype=np.float64))
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        alpha = 1.0
        improved = False
        for _ in range(10):
            x_new = np.clip(x + alpha * step, box[:, 0], box[:, 1])
            r_new = residual(x_new)
            if float(np.abs(r_new).max()) < float(np.abs(r).max()):
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        x, r = x_new, r_new
        norm = float(np.abs(r).max())
        if norm < best_norm:
            best_x, best_norm = x.copy(), norm
    if float(np.abs(r).max()) < tol:
        return x

    if x.size == 1:
        lo, hi = float(box[0, 0]), float(box[0, 1])
        g = lambda z: float(np.asarray(f(np.array([z])), dtype=np.float64)[0] - t[0])
        glo, ghi = g(lo), g(hi)
        if glo == 0.0:
            return np.array([lo])
        if ghi == 0.0:
            return np.array([hi])
        if glo * ghi < 0:
            root = brentq(g, lo, hi, xtol=1e-14, rtol=8.9e-16)
            x_b = np.array([root])
            norm = float(np.abs(residual(x_b)).max())
            if norm < tol:
                return x_b
            if norm < best_norm:
                best_x, best_norm = x_b, norm

    raise NonConverged(
        f"no solution with residual < {tol:.1e} after {max_iter} iterations "
        f"(best residual {best_norm:.3e})",
        best=best_x,
        residual=best_norm,
    )
