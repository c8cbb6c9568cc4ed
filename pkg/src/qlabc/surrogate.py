"""Pilot-run machinery: design, simulation sweep, and the fitted forward map.

A pilot run simulates the model once per node of a regular parameter
lattice, fits the regression of each statistic on the parameters
(smoothing spline for one parameter, backfitted additive surfaces
otherwise) together with a variance model, and tabulates the fitted
forward values and Jacobians on the lattice. The tables seed Newton
inversions and provide cheap interpolated Jacobians, so MCMC steps cost
interpolations instead of fresh numerical differentiation. The fitted
model is independent of any observed dataset and can be reused across
analyses; `save_surrogate`/`load_surrogate` give it a stable on-disk
form.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    CoverageWarning,
    MonotonicityWarning,
    OutOfDomain,
    OutsideImage,
    SchemaMismatch,
)
from ._kernels import additive_eval, additive_jac, interp_multilinear
from .numerics import RandomStream, as_vector
from .smoothers import AdditiveSurface, SmoothingSpline, VarianceSurface, fit_additive, fit_spline, fit_variance

__all__ = [
    "PilotData",
    "PilotDesign",
    "SurrogateModel",
    "check_image_coverage",
    "default_points_per_dim",
    "fit_surrogate",
    "forward",
    "inverse",
    "jacobian_logdet",
    "load_pilot_csv",
    "load_surrogate",
    "run_pilot",
    "save_pilot_csv",
    "save_surrogate",
    "variance_at",
]

SCHEMA_VERSION = 1
FILE_FORMAT = "qlabc-surrogate"

_INVERSE_TOL = 1e-6
_IMAGE_MARGIN = 0.10


def default_points_per_dim(param_dim: int) -> int:
    """Pilot lattice resolution: dense for p=1, coarser as p grows."""
    if param_dim == 1:
        return 1000
    if param_dim <= 3:
        return 30
    return 10


@dataclass(frozen=True)
class PilotDesign:
    """Regular lattice over a parameter box, row-major node order."""

    param_box: np.ndarray
    points_per_dim: int

    def __post_init__(self):
        box = np.asarray(self.param_box, dtype=np.float64)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ValueError("param_box must be (p, 2)")
        if np.any(box[:, 0] >= box[:, 1]) or not np.all(np.isfinite(box)):
            raise ValueError("param_box must be finite with lo < hi")
        if self.points_per_dim < 10:
            raise ValueError("need at least 10 lattice points per dimension")
        object.__setattr__(self, "param_box", box)

    @property
    def param_dim(self) -> int:
        return self.param_box.shape[0]

    @property
    def total_points(self) -> int:
        return self.points_per_dim**self.param_dim

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(lo, hi, self.points_per_dim) for lo, hi in self.param_box
        ]

    def lattice(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1).reshape(-1, self.param_dim)


@dataclass(frozen=True)
class PilotData:
    """Simulated statistics at the lattice nodes, one rng stream per node."""

    design: PilotDesign
    thetas: np.ndarray
    stats: np.ndarray
    master_seed: int
    model_name: str = ""

    def __post_init__(self):
        if self.thetas.shape != self.stats.shape or self.thetas.shape[0] != self.design.total_points:
            raise ValueError("thetas/stats must be (total_points, p)")


def run_pilot(design: PilotDesign, model, master_seed: int) -> PilotData:
    """Simulate one statistic vector per lattice node.

    Node m uses RandomStream(master_seed, m), so nodes are reproducible
    individually and the sweep could be distributed without changing
    the output.
    """
    box = model.spec.param_box
    if np.any(design.param_box[:, 0] < box[:, 0]) or np.any(design.param_box[:, 1] > box[:, 1]):
        raise ValueError("pilot box must lie inside the simulator's parameter box")
    lattice = design.lattice()
    stats = np.empty_like(lattice)
    for m, theta in enumerate(lattice):
        try:
            stats[m], _ = model.simulate(theta, RandomStream(master_seed, m).generator)
        except Exception as exc:
            exc.args = (f"{exc} (pilot node {m} at theta={theta.tolist()})",)
            raise
    return PilotData(
        design=design,
        thetas=lattice,
        stats=stats,
        master_seed=int(master_seed),
        model_name=getattr(model, "name", ""),
    )


def save_pilot_csv(data: PilotData, path) -> None:
    p = data.design.param_dim
    header = [f"theta_{j+1}" for j in range(p)] + [f"s_{j+1}" for j in range(p)]
    tmp = Path(path).with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row_t, row_s in zip(data.thetas, data.stats):
            writer.writerow([repr(float(v)) for v in row_t] + [repr(float(v)) for v in row_s])
    tmp.replace(path)


def load_pilot_csv(path, design: PilotDesign, master_seed: int = 0, model_name: str = "") -> PilotData:
    p = design.param_dim
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [f"theta_{j+1}" for j in range(p)] + [f"s_{j+1}" for j in range(p)]
        if header != expected:
            raise SchemaMismatch(f"pilot CSV header {header} does not match {expected}")
        rows = np.array([[float(v) for v in row] for row in reader])
    if rows.shape != (design.total_points, 2 * p):
        raise SchemaMismatch(
            f"pilot CSV has shape {rows.shape}, expected ({design.total_points}, {2 * p})"
        )
    return PilotData(
        design=design,
        thetas=rows[:, :p],
        stats=rows[:, p:],
        master_seed=master_seed,
        model_name=model_name,
    )


class SurrogateModel:
    """Fitted forward map with variance model and lattice tables."""

    def __init__(
        self,
        model_name: str,
        domain: np.ndarray,
        forward_spline: SmoothingSpline | None = None,
        forward_surfaces: tuple[AdditiveSurface, ...] | None = None,
        variance_surfaces: tuple[VarianceSurface, ...] | None = None,
        variance_matrix: np.ndarray | None = None,
        axes: list[np.ndarray] | None = None,
        forward_table: np.ndarray | None = None,
        jacobian_table: np.ndarray | None = None,
        fit_report: dict | None = None,
    ):
        self.model_name = model_name
        self.domain = np.asarray(domain, dtype=np.float64)
        self.param_dim = self.domain.shape[0]
        self.forward_spline = forward_spline
        self.forward_surfaces = forward_surfaces
        self.variance_surfaces = variance_surfaces
        self.variance_matrix = None if variance_matrix is None else np.asarray(variance_matrix)
        self.axes = [np.asarray(a, dtype=np.float64) for a in (axes or [])]
        self.forward_table = np.asarray(forward_table, dtype=np.float64)
        self.jacobian_table = (
            None if jacobian_table is None else np.asarray(jacobian_table, dtype=np.float64)
        )
        self.fit_report = fit_report or {}

        if (forward_spline is None) == (forward_surfaces is None):
            raise ValueError("exactly one of forward_spline/forward_surfaces must be set")
        if self.param_dim > 1 and self.jacobian_table is None:
            raise ValueError("multivariate surrogates need a Jacobian table")

        self._lattice = None
        self._kdtree = cKDTree(self.forward_table)
        self._axis_start = np.array([a[0] for a in self.axes])
        self._axis_step = np.array([a[1] - a[0] for a in self.axes])
        self._axis_len = np.array([a.size for a in self.axes], dtype=np.int64)
        span = self.forward_table.max(axis=0) - self.forward_table.min(axis=0)
        self._image_lo = self.forward_table.min(axis=0) - _IMAGE_MARGIN * span
        self._image_hi = self.forward_table.max(axis=0) + _IMAGE_MARGIN * span
        self._setup_fast_paths()

    def _setup_fast_paths(self) -> None:
        """Pack spline coefficients for single-call chain-time evaluation."""
        if self.forward_spline is not None:
            self._packed_forward = _pack_splines([self.forward_spline], np.zeros(1))
            diffs = np.diff(self.forward_table[:, 0])
            self._scalar_increasing = bool(np.all(diffs > 0))
            self._scalar_monotone = self._scalar_increasing or bool(np.all(diffs < 0))
        else:
            splines = [c for surf in self.forward_surfaces for c in surf.components]
            intercepts = np.array([surf.intercept for surf in self.forward_surfaces])
            self._packed_forward = _pack_splines(splines, intercepts)
            self._scalar_monotone = False
            self._scalar_increasing = False

        self._const_sd = None
        self._packed_logvar = None
        self._logvar_offsets = None
        if self.variance_matrix is None:
            if all(vs.kind == "constant" for vs in self.variance_surfaces):
                self._const_sd = np.sqrt([vs.constant_value for vs in self.variance_surfaces])
            else:
                splines = []
                intercepts = []
                for vs in self.variance_surfaces:
                    if vs.kind != "smooth":
                        raise ValueError("variance surfaces must be uniformly constant or smooth")
                    if isinstance(vs.log_model, AdditiveSurface):
                        splines.extend(vs.log_model.components)
                        intercepts.append(vs.log_model.intercept)
                    else:
                        splines.append(vs.log_model)
                        intercepts.append(0.0)
                self._packed_logvar = _pack_splines(splines, np.asarray(intercepts))
                self._logvar_offsets = np.array([vs.log_offset for vs in self.variance_surfaces])

    # -- minimal-overhead evaluators for the chain loop -------------------

    def _forward_fast(self, theta: np.ndarray) -> np.ndarray:
        return additive_eval(*self._packed_forward, theta, 0)

    def _sd_fast(self, theta: np.ndarray) -> np.ndarray | None:
        """Per-coordinate proposal sd; None means full-matrix mode."""
        if self._const_sd is not None:
            return self._const_sd
        if self._packed_logvar is None:
            return None
        logv = additive_eval(*self._packed_logvar, theta, 0) + self._logvar_offsets
        return np.exp(0.5 * logv)

    def _logdetJ_fast(self, theta: np.ndarray) -> float:
        if self.forward_spline is not None:
            d = additive_eval(*self._packed_forward, theta, 1)[0]
            mag = abs(d)
        else:
            flat = interp_multilinear(
                self._axis_start, self._axis_step, self._axis_len, self.jacobian_table, theta[None, :]
            )[0]
            p = self.param_dim
            if p == 2:
                mag = abs(flat[0] * flat[3] - flat[1] * flat[2])
            elif p == 3:
                mag = abs(
                    flat[0] * (flat[4] * flat[8] - flat[5] * flat[7])
                    - flat[1] * (flat[3] * flat[8] - flat[5] * flat[6])
                    + flat[2] * (flat[3] * flat[7] - flat[4] * flat[6])
                )
            else:
                mag = abs(float(np.linalg.det(flat.reshape(p, p))))
        if mag <= 0.0:
            return -np.inf
        return math.log(mag)

    def _jac_fast(self, theta: np.ndarray) -> np.ndarray:
        if self.forward_spline is not None:
            return np.array([[additive_eval(*self._packed_forward, theta, 1)[0]]])
        flat = interp_multilinear(
            self._axis_start, self._axis_step, self._axis_len, self.jacobian_table, theta[None, :]
        )[0]
        return flat.reshape(self.param_dim, self.param_dim)

    def _inverse_scalar_monotone(self, target: float) -> np.ndarray | None:
        tab = self.forward_table[:, 0]
        axis = self.axes[0]
        sign = 1.0 if self._scalar_increasing else -1.0
        t = sign * target
        stab = sign * tab
        if t < stab[0] or t > stab[-1]:
            return None
        i = int(np.searchsorted(stab, t))
        i = min(max(i, 1), stab.size - 1)
        a, b = float(axis[i - 1]), float(axis[i])
        fa = stab[i - 1] - t
        fb = stab[i] - t
        denom = stab[i] - stab[i - 1]
        x = a + (b - a) * (t - stab[i - 1]) / denom if denom > 0 else 0.5 * (a + b)
        arr = np.empty(1)
        fx = np.inf
        for _ in range(60):
            arr[0] = x
            fx = sign * self._forward_fast(arr)[0] - t
            if abs(fx) < 1e-9:
                return arr.copy()
            if (fx > 0) == (fa > 0):
                a, fa = x, fx
            else:
                b, fb = x, fx
            d = sign * additive_eval(*self._packed_forward, arr, 1)[0]
            if d != 0.0:
                x_new = x - fx / d
                if not (min(a, b) < x_new < max(a, b)):
                    x_new = 0.5 * (a + b)
            else:
                x_new = 0.5 * (a + b)
            x = x_new
        if abs(fx) < _INVERSE_TOL:
            arr[0] = x
            return arr.copy()
        return None

    def _jac_analytic(self, theta: np.ndarray) -> np.ndarray:
        """Exact Jacobian of the fitted map (solver-side; the proposal
        density uses the tabulated/interpolated one)."""
        return additive_jac(*self._packed_forward, theta)

    def _inverse_newton(
        self, target: np.ndarray, seed: np.ndarray, max_iter: int = 40
    ) -> tuple[np.ndarray, float]:
        """Damped Newton with the analytic Jacobian; returns (best, residual).

        Bails out early when progress stalls: hopeless targets (no
        preimage) are the common case inside the chain loop and must
        fail fast.
        """
        lo = self.domain[:, 0]
        hi = self.domain[:, 1]
        x = np.clip(seed, lo, hi)
        r = self._forward_fast(x) - target
        rnorm = float(np.abs(r).max())
        stalls = 0
        for _ in range(max_iter):
            if rnorm < 1e-8:
                return x, rnorm
            J = self._jac_analytic(x)
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            alpha = 1.0
            improved = False
            for _ in range(8):
                x_new = np.clip(x + alpha * step, lo, hi)
                r_new = self._forward_fast(x_new) - target
                rnorm_new = float(np.abs(r_new).max())
                if rnorm_new < rnorm:
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
            stalls = stalls + 1 if rnorm_new > 0.7 * rnorm else 0
            x, r, rnorm = x_new, r_new, rnorm_new
            if stalls >= 3:
                break
        return x, rnorm

    def _inverse_trust_region(self, target: np.ndarray, seed: np.ndarray) -> tuple[np.ndarray, float]:
        """Last-resort least-squares polish for saturated directions."""
        from scipy.optimize import least_squares

        res = least_squares(
            lambda t: self._forward_fast(np.ascontiguousarray(t)) - target,
            seed,
            jac=lambda t: self._jac_analytic(np.ascontiguousarray(t)),
            bounds=(self.domain[:, 0], self.domain[:, 1]),
            method="trf",
            xtol=1e-14,
            ftol=1e-14,
            gtol=1e-14,
            max_nfev=200,
        )
        x = np.asarray(res.x, dtype=np.float64)
        rnorm = float(np.abs(self._forward_fast(x) - target).max())
        return x, rnorm

    def _inverse_fast(
        self, target: np.ndarray, seed: np.ndarray | None = None, thorough: bool = False
    ) -> np.ndarray | None:
        """Newton inverse; None when no preimage is found.

        `thorough` adds extra seeds and a trust-region polish; chain
        proposals keep it off (a failed inverse is just a rejection),
        one-off inversions like chain initialisation turn it on.
        """
        if self.param_dim == 1 and self._scalar_monotone and seed is None:
            return self._inverse_scalar_monotone(float(target[0]))
        if np.any(target < self._image_lo) or np.any(target > self._image_hi):
            return None
        if seed is not None:
            seeds = [seed]
        else:
            k = min(4 if thorough else 1, self.forward_table.shape[0])
            _, idx = self._kdtree.query(target, k=k)
            seeds = [self.lattice[int(i)] for i in np.atleast_1d(idx)]
        max_iter = 40 if thorough else 22
        best_x, best_norm = None, np.inf
        for sd in seeds:
            x, rnorm = self._inverse_newton(target, sd, max_iter=max_iter)
            if rnorm < best_norm:
                best_x, best_norm = x, rnorm
            if best_norm < 1e-8:
                return best_x
        if best_norm < _INVERSE_TOL:
            return best_x
        if thorough:
            x, rnorm = self._inverse_trust_region(target, best_x)
            if rnorm < _INVERSE_TOL:
                return x
        return None

    # -- basic geometry -------------------------------------------------

    @property
    def lattice(self) -> np.ndarray:
        if self._lattice is None:
            grids = np.meshgrid(*self.axes, indexing="ij")
            self._lattice = np.stack(grids, axis=-1).reshape(-1, self.param_dim)
        return self._lattice

    def contains(self, theta) -> bool:
        t = as_vector(theta, dim=self.param_dim)
        pad = 1e-9 * np.maximum(1.0, self.domain[:, 1] - self.domain[:, 0])
        return bool(np.all(t >= self.domain[:, 0] - pad) and np.all(t <= self.domain[:, 1] + pad))

    def _require_inside(self, theta) -> np.ndarray:
        t = as_vector(theta, dim=self.param_dim)
        if not self.contains(t):
            raise OutOfDomain(f"theta={t.tolist()} outside the pilot box")
        return t

    # -- forward map ----------------------------------------------------

    def forward(self, theta) -> np.ndarray:
        t = self._require_inside(theta)
        return self._forward_clipped(t)

    def _forward_clipped(self, t: np.ndarray) -> np.ndarray:
        return self._forward_fast(np.ascontiguousarray(t, dtype=np.float64))

    def forward_batch(self, thetas: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        if self.forward_spline is not None:
            return self.forward_spline.value_unchecked(pts[:, 0])[:, None]
        return np.column_stack([s.predict_unchecked(pts) for s in self.forward_surfaces])

    # -- Jacobian ---------------------------------------------------------

    def jacobian_matrix(self, theta) -> np.ndarray:
        return self._jac_fast(self._require_inside(theta))

    def jacobian_logdet(self, theta) -> float:
        return self._logdetJ_fast(self._require_inside(theta))

    # -- variance ---------------------------------------------------------

    def variance_at(self, theta) -> np.ndarray:
        t = self._require_inside(theta)
        if self.variance_matrix is not None:
            return self.variance_matrix.copy()
        values = [vs.value_at(t if self.param_dim > 1 else t[0]) for vs in self.variance_surfaces]
        return np.diag(values)

    # -- inverse ----------------------------------------------------------

    def in_image_bounds(self, s) -> bool:
        v = as_vector(s, dim=self.param_dim)
        return bool(np.all(v >= self._image_lo) and np.all(v <= self._image_hi))

    def inverse(self, s, hint=None) -> np.ndarray:
        """Solve f(theta) = s; raises OutsideImage when no preimage exists.

        Damped Newton seeded from the lattice node whose fitted
        statistic is nearest to s (or from `hint`); monotone scalar
        surrogates use a bracketed safeguarded iteration instead.
        """
        v = as_vector(s, dim=self.param_dim)
        if not self.in_image_bounds(v):
            raise OutsideImage(f"statistic {v.tolist()} outside the fitted image bounds")
        seed = None
        if hint is not None:
            seed = np.clip(as_vector(hint, dim=self.param_dim), self.domain[:, 0], self.domain[:, 1])
        root = self._inverse_fast(v, seed=seed, thorough=True)
        if root is None:
            raise OutsideImage(f"no preimage of {v.tolist()} found in the pilot box")
        return root


def _pack_splines(splines, intercepts: np.ndarray):
    """Concatenate spline knots/coefficients for the packed evaluator."""
    knot_offs = np.zeros(len(splines) + 1, dtype=np.int64)
    coef_offs = np.zeros(len(splines) + 1, dtype=np.int64)
    for k, s in enumerate(splines):
        knot_offs[k + 1] = knot_offs[k] + s.knots.size
        coef_offs[k + 1] = coef_offs[k] + s.coefficients.shape[1]
    breaks_cat = np.concatenate([s.knots for s in splines])
    coefs_cat = np.ascontiguousarray(np.hstack([s.coefficients for s in splines]))
    return (
        breaks_cat,
        coefs_cat,
        knot_offs,
        coef_offs,
        np.ascontiguousarray(np.asarray(intercepts, dtype=np.float64)),
    )


# -- fitting ---------------------------------------------------------------


def _tabulate_jacobian(surfaces: tuple[AdditiveSurface, ...], lattice: np.ndarray, levels: int = 2) -> np.ndarray:
    """Richardson central differences of the fitted map at every node.

    Vectorised over nodes; evaluations use polynomial extension so
    boundary nodes get full central stencils.
    """
    n, p = lattice.shape

    def batch_forward(pts: np.ndarray) -> np.ndarray:
        return np.column_stack([s.predict_unchecked(pts) for s in surfaces])

    J = np.empty((n, p, p))
    for j in range(p):
        h0 = 1e-3 * np.maximum(1.0, np.abs(lattice[:, j]))
        tableau: list[list[np.ndarray]] = []
        for level in range(levels + 1):
            h = h0 / (2.0**level)
            up = lattice.copy()
            dn = lattice.copy()
            up[:, j] += h
            dn[:, j] -= h
            d = (batch_forward(up) - batch_forward(dn)) / (2.0 * h)[:, None]
            row = [d]
            for m in range(1, level + 1):
                factor = 4.0**m
                row.append((factor * row[m - 1] - tableau[level - 1][m - 1]) / (factor - 1.0))
            tableau.append(row)
        J[:, :, j] = tableau[levels][levels]
    return J.reshape(n, p * p)


def _check_monotone(spline: SmoothingSpline, domain: np.ndarray) -> tuple[bool, tuple[float, float] | None]:
    grid = np.linspace(domain[0, 0], domain[0, 1], 2001)
    deriv = spline.derivative(grid)
    pos = np.count_nonzero(deriv > 0)
    neg = np.count_nonzero(deriv < 0)
    majority = 1.0 if pos >= neg else -1.0
    off = deriv * majority <= 0
    if not np.any(off):
        return True, None
    flat = grid[off]
    return False, (float(flat.min()), float(flat.max()))


def fit_surrogate(data: PilotData, variance_mode: str = "smooth") -> SurrogateModel:
    """Fit forward map, variance model and lattice tables from pilot data.

    One parameter: smoothing spline with analytic derivative plus a
    scalar variance model. Several parameters: one additive surface per
    statistic, a Jacobian table by Richardson extrapolation, and either
    a constant covariance matrix of the residuals or per-coordinate
    smooth (diagonal) variance surfaces.
    """
    if variance_mode not in ("constant", "smooth"):
        raise ValueError("variance_mode must be 'constant' or 'smooth'")
    design = data.design
    p = design.param_dim
    axes = design.axes()
    report: dict = {"variance_mode": variance_mode}

    if p == 1:
        x = data.thetas[:, 0]
        y = data.stats[:, 0]
        spline = fit_spline(x, y)
        fitted = spline.value(x)
        resid = y - fitted
        sst = float(np.sum((y - y.mean()) ** 2))
        report["r_squared"] = [1.0 - float(resid @ resid) / sst if sst > 0 else 1.0]
        variance = fit_variance(x, resid, kind=variance_mode)
        monotone, flat_region = _check_monotone(spline, design.param_box)
        report["monotone"] = monotone
        report["flat_region"] = list(flat_region) if flat_region else None
        if not monotone:
            warnings.warn(
                "fitted forward map is not monotone: derivative changes sign on "
                f"[{flat_region[0]:.4g}, {flat_region[1]:.4g}]; the statistic is "
                "locally uninformative there and the proposal density will be near zero",
                MonotonicityWarning,
            )
        forward_table = spline.value(axes[0])[:, None]
        return SurrogateModel(
            model_name=data.model_name,
            domain=design.param_box,
            forward_spline=spline,
            variance_surfaces=(variance,),
            axes=axes,
            forward_table=forward_table,
            fit_report=report,
        )

    surfaces = []
    residuals = np.empty_like(data.stats)
    r2 = []
    for j in range(p):
        surf = fit_additive(data.thetas, data.stats[:, j])
        surfaces.append(surf)
        fitted = surf.predict(data.thetas)
        residuals[:, j] = data.stats[:, j] - fitted
        sst = float(np.sum((data.stats[:, j] - data.stats[:, j].mean()) ** 2))
        r2.append(1.0 - float(residuals[:, j] @ residuals[:, j]) / sst if sst > 0 else 1.0)
    report["r_squared"] = r2
    surfaces = tuple(surfaces)

    variance_surfaces = None
    variance_matrix = None
    if variance_mode == "constant":
        variance_matrix = residuals.T @ residuals / residuals.shape[0]
    else:
        variance_surfaces = tuple(
            fit_variance(data.thetas, residuals[:, j], kind="smooth") for j in range(p)
        )

    lattice = data.thetas
    forward_table = np.column_stack([s.predict_unchecked(lattice) for s in surfaces])
    jacobian_table = _tabulate_jacobian(surfaces, lattice)
    return SurrogateModel(
        model_name=data.model_name,
        domain=design.param_box,
        forward_surfaces=surfaces,
        variance_surfaces=variance_surfaces,
        variance_matrix=variance_matrix,
        axes=axes,
        forward_table=forward_table,
        jacobian_table=jacobian_table,
        fit_report=report,
    )


def check_image_coverage(model: SurrogateModel, s_obs) -> bool:
    """Warn loudly when the observed statistic has no preimage.

    The pilot box must be wide enough that s_obs lies in the image of
    the fitted map; otherwise chains cannot start from the observation
    and proposals near it are unreachable.
    """
    try:
        model.inverse(s_obs)
        return True
    except OutsideImage:
        warnings.warn(
            f"observed statistic {np.asarray(s_obs).tolist()} is outside the fitted image; "
            "widen the pilot box and refit",
            CoverageWarning,
        )
        return False


# -- module-level operation aliases ----------------------------------------


def forward(model: SurrogateModel, theta) -> np.ndarray:
    return model.forward(theta)


def inverse(model: SurrogateModel, s, hint=None) -> np.ndarray:
    return model.inverse(s, hint=hint)


def jacobian_logdet(model: SurrogateModel, theta) -> float:
    return model.jacobian_logdet(theta)


def variance_at(model: SurrogateModel, theta) -> np.ndarray:
    return model.variance_at(theta)


# -- serialization ----------------------------------------------------------


def _spline_to_dict(s: SmoothingSpline) -> dict:
    return {
        "knots": s.knots.tolist(),
        "coefficients": s.coefficients.tolist(),
        "domain": [s.domain[0], s.domain[1]],
        "penalty": s.smoothing_penalty,
    }


def _spline_from_dict(d: dict) -> SmoothingSpline:
    return SmoothingSpline(
        knots=np.asarray(d["knots"], dtype=np.float64),
        coefficients=np.asarray(d["coefficients"], dtype=np.float64),
        domain=(float(d["domain"][0]), float(d["domain"][1])),
        smoothing_penalty=float(d["penalty"]),
    )


def _additive_to_dict(a: AdditiveSurface) -> dict:
    return {
        "intercept": a.intercept,
        "input_dim": a.input_dim,
        "components": [_spline_to_dict(c) for c in a.components],
    }


def _additive_from_dict(d: dict) -> AdditiveSurface:
    return AdditiveSurface(
        intercept=float(d["intercept"]),
        components=tuple(_spline_from_dict(c) for c in d["components"]),
        input_dim=int(d["input_dim"]),
    )


def _variance_to_dict(v: VarianceSurface) -> dict:
    out: dict = {"kind": v.kind, "log_offset": v.log_offset}
    if v.kind == "constant":
        out["constant_value"] = v.constant_value
    else:
        if isinstance(v.log_model, AdditiveSurface):
            out["log_model"] = {"type": "additive", **_additive_to_dict(v.log_model)}
        else:
            out["log_model"] = {"type": "spline", **_spline_to_dict(v.log_model)}
    return out


def _variance_from_dict(d: dict) -> VarianceSurface:
    if d["kind"] == "constant":
        return VarianceSurface(kind="constant", constant_value=float(d["constant_value"]))
    lm = d["log_model"]
    model = _additive_from_dict(lm) if lm["type"] == "additive" else _spline_from_dict(lm)
    return VarianceSurface(kind="smooth", log_model=model, log_offset=float(d["log_offset"]))


def surrogate_to_dict(model: SurrogateModel) -> dict:
    if model.forward_spline is not None:
        fwd = {"type": "spline", **_spline_to_dict(model.forward_spline)}
    else:
        fwd = {"type": "additive", "surfaces": [_additive_to_dict(s) for s in model.forward_surfaces]}
    if model.variance_matrix is not None:
        var = {"mode": "matrix", "matrix": model.variance_matrix.tolist()}
    else:
        var = {"mode": "surfaces", "surfaces": [_variance_to_dict(v) for v in model.variance_surfaces]}
    return {
        "format": FILE_FORMAT,
        "schema_version": SCHEMA_VERSION,
        "model": model.model_name,
        "param_dim": model.param_dim,
        "domain": model.domain.tolist(),
        "forward": fwd,
        "variance": var,
        "tables": {
            "axes": [a.tolist() for a in model.axes],
            "forward": model.forward_table.tolist(),
            "jacobian": None if model.jacobian_table is None else model.jacobian_table.tolist(),
        },
        "fit_report": model.fit_report,
    }


def surrogate_from_dict(payload) -> SurrogateModel:
    if not isinstance(payload, dict) or "format" not in payload:
        raise SchemaMismatch("not a surrogate file: missing format header")
    if payload["format"] != FILE_FORMAT:
        raise SchemaMismatch(f"format {payload['format']!r} is not {FILE_FORMAT!r}")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"schema version {version} unsupported (expected {SCHEMA_VERSION})")
    fwd = payload["forward"]
    kwargs: dict = {}
    if fwd["type"] == "spline":
        kwargs["forward_spline"] = _spline_from_dict(fwd)
    else:
        kwargs["forward_surfaces"] = tuple(_additive_from_dict(s) for s in fwd["surfaces"])
    var = payload["variance"]
    if var["mode"] == "matrix":
        kwargs["variance_matrix"] = np.asarray(var["matrix"], dtype=np.float64)
    else:
        kwargs["variance_surfaces"] = tuple(_variance_from_dict(v) for v in var["surfaces"])
    tables = payload["tables"]
    jac = tables["jacobian"]
    return SurrogateModel(
        model_name=payload["model"],
        domain=np.asarray(payload["domain"], dtype=np.float64),
        axes=[np.asarray(a, dtype=np.float64) for a in tables["axes"]],
        forward_table=np.asarray(tables["forward"], dtype=np.float64),
        jacobian_table=None if jac is None else np.asarray(jac, dtype=np.float64),
        fit_report=payload.get("fit_report", {}),
        **kwargs,
    )


def save_surrogate(model: SurrogateModel, path) -> None:
    tmp = Path(path).with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(surrogate_to_dict(model), fh)
    tmp.replace(path)


def load_surrogate(path) -> SurrogateModel:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"corrupted surrogate file: {exc}") from exc
    return surrogate_from_dict(payload)
