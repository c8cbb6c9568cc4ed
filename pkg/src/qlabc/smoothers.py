"""Smoothing-spline regression with analytic derivatives.

Three estimators: a penalized cubic smoothing spline with generalized
cross-validation (scalar regressions), a backfitted additive surface
(one spline per input coordinate, multivariate regressions), and a
log-scale variance regression that stays strictly positive. Fitted
objects store per-interval polynomial coefficients so evaluation and
differentiation are exact piecewise-polynomial operations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import solve_triangular
from scipy.special import digamma

from ._kernels import ppoly_eval
from .errors import DegenerateDesign, InsufficientData, NonConvergedBackfit, OutOfDomain

__all__ = [
    "AdditiveSurface",
    "SmoothingSpline",
    "VarianceSurface",
    "eval_spline",
    "eval_spline_derivative",
    "fit_additive",
    "fit_spline",
    "fit_variance",
]

RESIDUAL_FLOOR = 1e-12
# E[log chi^2_1] = digamma(1/2) + log 2 ~ -1.27: exp of a log-squared-
# residual regression therefore targets ~0.28x the variance under
# Gaussian residuals. Deliberately NOT corrected: the fit doubles as a
# robust (geometric-mean) scale when residuals carry structural misfit,
# and downstream tolerance selection adapts to the proposal scale.
LOG_CHI2_1_MEAN = float(digamma(0.5) + np.log(2.0))

_MAX_BREAKS = 33
# additive components get a tighter basis: their effects are simple
# monotone-ish curves, and a lean basis keeps the fitted Jacobian
# smooth enough for lattice interpolation (same R^2 in practice)
_MAX_BREAKS_ADDITIVE = 11
_PENALTY_GRID = 10.0 ** np.linspace(-8.0, 8.0, 81)
_RIDGE = 1e-10


@dataclass(frozen=True)
class SmoothingSpline:
    """Piecewise cubic in local-power form.

    `coefficients[m, i]` multiplies (x - knots[i])**(3-m) on interval
    [knots[i], knots[i+1]]; the construction guarantees continuous
    value, first and second derivative at interior knots.
    """

    knots: np.ndarray
    coefficients: np.ndarray
    domain: tuple[float, float]
    smoothing_penalty: float

    def _check_domain(self, x: np.ndarray) -> None:
        lo, hi = self.domain
        pad = 1e-9 * max(1.0, abs(hi - lo))
        if np.any(x < lo - pad) or np.any(x > hi + pad):
            raise OutOfDomain(f"evaluation outside domain [{lo}, {hi}]")

    def value(self, x):
        arr = np.asarray(x, dtype=np.float64)
        self._check_domain(arr)
        out = ppoly_eval(self.knots, self.coefficients, arr, 0)
        return float(out) if arr.ndim == 0 else out

    def derivative(self, x):
        arr = np.asarray(x, dtype=np.float64)
        self._check_domain(arr)
        out = ppoly_eval(self.knots, self.coefficients, arr, 1)
        return float(out) if arr.ndim == 0 else out

    def value_unchecked(self, x):
        """Evaluate through the polynomial extension, no domain check."""
        return ppoly_eval(self.knots, self.coefficients, np.asarray(x, dtype=np.float64), 0)

    def __call__(self, x):
        return self.value(x)


def eval_spline(s: SmoothingSpline, x):
    return s.value(x)


def eval_spline_derivative(s: SmoothingSpline, x):
    return s.derivative(x)


@dataclass(frozen=True)
class AdditiveSurface:
    """Sum of an intercept and one spline per input coordinate.

    Each component is centered to mean zero over the training design,
    which pins the intercept and makes the decomposition identifiable.
    """

    intercept: float
    components: tuple[SmoothingSpline, ...]
    input_dim: int

    def predict(self, theta) -> np.ndarray | float:
        arr = np.asarray(theta, dtype=np.float64)
        single = arr.ndim == 1
        pts = arr[None, :] if single else arr
        out = np.full(pts.shape[0], self.intercept)
        for j, comp in enumerate(self.components):
            out = out + comp.value(pts[:, j])
        return float(out[0]) if single else out

    def predict_unchecked(self, theta) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        out = np.full(pts.shape[0], self.intercept)
        for j, comp in enumerate(self.components):
            out = out + comp.value_unchecked(pts[:, j])
        return out


@dataclass(frozen=True)
class VarianceSurface:
    """Positive variance model: a constant or exp of a smooth log fit."""

    kind: str
    constant_value: float | None = None
    log_model: SmoothingSpline | AdditiveSurface | None = None
    log_offset: float = 0.0

    def value_at(self, theta) -> float:
        if self.kind == "constant":
            return self.constant_value
        if isinstance(self.log_model, AdditiveSurface):
            log_var = self.log_model.predict(np.asarray(theta, dtype=np.float64))
        else:
            log_var = self.log_model.value(float(np.squeeze(theta)))
        return float(np.exp(log_var + self.log_offset))


class _PenalizedBasis:
    """Cubic B-spline basis with curvature penalty on fixed abscissae.

    Precomputes the Demmler-Reinsch decomposition for the (weighted)
    design so repeated fits with new responses (backfitting sweeps,
    penalty grids) cost a few small matrix-vector products.
    """

    def __init__(self, x_unique: np.ndarray, weights: np.ndarray, max_breaks: int = _MAX_BREAKS):
        self.x = x_unique
        self.w = weights
        n_breaks = min(x_unique.size, max_breaks)
        breaks = np.unique(np.quantile(x_unique, np.linspace(0.0, 1.0, n_breaks)))
        if breaks.size < 2:
            raise DegenerateDesign("x range is zero")
        self.breaks = breaks
        self.t = np.concatenate([np.repeat(breaks[0], 4), breaks[1:-1], np.repeat(breaks[-1], 4)])
        self.k = self.t.size - 4
        self.B = BSpline.design_matrix(x_unique, self.t, 3).toarray()

        self.S = self._penalty_matrix()
        bw = self.B * weights[:, None]
        C = self.B.T @ bw
        ridge = _RIDGE * (np.trace(C) / self.k)
        self.L = np.linalg.cholesky(C + ridge * np.eye(self.k))
        Linv_S = solve_triangular(self.L, self.S, lower=True)
        M1 = solve_triangular(self.L, Linv_S.T, lower=True)
        d, U = np.linalg.eigh((M1 + M1.T) / 2.0)
        self.d = np.clip(d, 0.0, None)
        self.U = U
        self.Btw = bw.T  # maps full response means to B^T W y
        trace_S = float(np.trace(self.S))
        scale = float(np.trace(C)) / trace_S if trace_S > 0 else 1.0
        self.penalty_grid = _PENALTY_GRID * scale

    def _penalty_matrix(self) -> np.ndarray:
        # S_ij = integral of B_i'' B_j'': second derivatives are piecewise
        # linear, so 2-point Gauss-Legendre per interval is exact.
        lo = self.breaks[:-1]
        hi = self.breaks[1:]
        half = (hi - lo) / 2.0
        mid = (hi + lo) / 2.0
        offs = half / np.sqrt(3.0)
        pts = np.concatenate([mid - offs, mid + offs])
        wts = np.concatenate([half, half])
        d2 = BSpline(self.t, np.eye(self.k), 3).derivative(2)(pts)
        return d2.T @ (d2 * wts[:, None])

    def fit(self, ybar: np.ndarray, penalty, n_total: float, rss_offset: float = 0.0):
        """Return (coefficients, penalty); penalty='auto' minimises GCV."""
        b = self.Btw @ ybar
        z = self.U.T @ solve_triangular(self.L, b, lower=True)
        if penalty == "auto":
            best = (np.inf, None)
            for lam in self.penalty_grid:
                a = z / (1.0 + lam * self.d)
                beta = solve_triangular(self.L, self.U @ a, lower=True, trans="T")
                fitted = self.B @ beta
                rss = float(self.w @ (ybar - fitted) ** 2) + rss_offset
                edf = float(np.sum(1.0 / (1.0 + lam * self.d)))
                denom = n_total - edf
                gcv = n_total * rss / (denom * denom) if denom > 1e-9 else np.inf
                if gcv < best[0]:
                    best = (gcv, lam)
            lam = best[1] if best[1] is not None else float(self.penalty_grid[-1])
        else:
            lam = float(penalty)
        a = z / (1.0 + lam * self.d)
        beta = solve_triangular(self.L, self.U @ a, lower=True, trans="T")
        return beta, lam

    def to_spline(self, beta: np.ndarray, lam: float, shift: float = 0.0) -> SmoothingSpline:
        bs = BSpline(self.t, beta, 3)
        left = self.breaks[:-1]
        mids = (self.breaks[:-1] + self.breaks[1:]) / 2.0
        c3 = bs(left) - shift
        c2 = bs.derivative(1)(left)
        c1 = bs.derivative(2)(left) / 2.0
        c0 = bs.derivative(3)(mids) / 6.0
        coefs = np.vstack([c0, c1, c2, c3])
        return SmoothingSpline(
            knots=self.breaks.copy(),
            coefficients=coefs,
            domain=(float(self.x[0]), float(self.x[-1])),
            smoothing_penalty=float(lam),
        )


def _collapse(x: np.ndarray, y: np.ndarray):
    """Group duplicate abscissae: unique x, counts, group means, within-group SS."""
    xu, inv = np.unique(x, return_inverse=True)
    w = np.bincount(inv).astype(np.float64)
    ybar = np.bincount(inv, weights=y) / w
    ssw = float(y @ y - w @ ybar**2)
    return xu, inv, w, ybar, max(ssw, 0.0)


def fit_spline(x, y, penalty="auto") -> SmoothingSpline:
    """Penalized least-squares cubic smoothing spline.

    penalty='auto' selects the curvature penalty by generalized
    cross-validation over a logarithmic grid; a float fixes it.
    Duplicate x values are handled exactly via weighted group means.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("x and y must be equal-length 1-d arrays")
    if x.size < 10:
        raise InsufficientData(f"need at least 10 points, got {x.size}")
    if float(x.max() - x.min()) <= 0.0:
        raise DegenerateDesign("x range is zero")
    xu, _, w, ybar, ssw = _collapse(x, y)
    basis = _PenalizedBasis(xu, w)
    beta, lam = basis.fit(ybar, penalty, n_total=float(x.size), rss_offset=ssw)
    return basis.to_spline(beta, lam)


def fit_additive(
    design,
    y,
    penalty="auto",
    max_sweeps: int = 100,
    tol: float = 1e-6,
    max_breaks: int = _MAX_BREAKS_ADDITIVE,
) -> AdditiveSurface:
    """Backfitted additive model: intercept plus one spline per column.

    Gauss-Seidel over coordinates; per-component penalties are
    re-selected by GCV during the first sweeps, then frozen so the
    iteration has a fixed point. Stops when the largest change of any
    component at the training points drops below `tol`, else warns
    NonConvergedBackfit and returns the best fit.
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("design must be (n, p) with one response per row")
    n, p = X.shape
    cols = []
    for j in range(p):
        xu, inv, w, _, _ = _collapse(X[:, j], y)
        if xu.size < 10:
            raise InsufficientData(f"design column {j} has {xu.size} distinct values, need 10")
        cols.append({"xu": xu, "inv": inv, "w": w, "basis": _PenalizedBasis(xu, w, max_breaks)})

    intercept = float(y.mean())
    fitted = [np.zeros(c["xu"].size) for c in cols]  # centered values at unique points
    betas = [np.zeros(c["basis"].k) for c in cols]
    shifts = [0.0] * p
    lams: list[float | None] = [None] * p

    converged = False
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j, c in enumerate(cols):
            partial = y - intercept
            for l in range(p):
                if l != j:
                    partial = partial - fitted[l][cols[l]["inv"]]
            rbar = np.bincount(c["inv"], weights=partial) / c["w"]
            pen = penalty if (penalty != "auto" or sweep < 3 or lams[j] is None) else lams[j]
            beta, lam = c["basis"].fit(rbar, pen, n_total=float(n))
            g = c["basis"].B @ beta
            shift = float(c["w"] @ g) / n
            g = g - shift
            intercept += shift
            max_change = max(max_change, float(np.abs(g - fitted[j]).max()))
            fitted[j] = g
            betas[j] = beta
            shifts[j] = shift
            lams[j] = lam
        if max_change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"backfitting stopped at {max_sweeps} sweeps with max change {max_change:.2e}",
            NonConvergedBackfit,
        )
    components = tuple(
        cols[j]["basis"].to_spline(betas[j], lams[j], shift=shifts[j]) for j in range(p)
    )
    return AdditiveSurface(intercept=float(intercept), components=components, input_dim=p)


def fit_variance(design, residuals, kind: str = "smooth", penalty="auto") -> VarianceSurface:
    """Variance model from regression residuals.

    kind='constant' returns the mean squared residual. kind='smooth'
    regresses log(e^2 + floor) on the design and exponentiates the fit
    directly (a geometric-mean-type scale, low by the factor
    exp(E[log chi^2_1]) ~ 0.28 under Gaussian residuals; see
    LOG_CHI2_1_MEAN). Strictly positive either way.
    """
    e = np.asarray(residuals, dtype=np.float64)
    X = np.asarray(design, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != e.size:
        raise InsufficientData("residuals must match design rows")
    if kind == "constant":
        mean_sq = float(np.mean(e**2))
        return VarianceSurface(kind="constant", constant_value=max(mean_sq, RESIDUAL_FLOOR))
    if kind != "smooth":
        raise ValueError(f"unknown variance kind {kind!r}")
    z = np.log(e**2 + RESIDUAL_FLOOR)
    if X.shape[1] == 1:
        model: SmoothingSpline | AdditiveSurface = fit_spline(X[:, 0], z, penalty=penalty)
    else:
        model = fit_additive(X, z, penalty=penalty)
    return VarianceSurface(kind="smooth", log_model=model, log_offset=0.0)
