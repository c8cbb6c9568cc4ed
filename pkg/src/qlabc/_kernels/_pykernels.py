"""Numpy implementations of the hot evaluation kernels.

These mirror `_ckernels.pyx` operation-for-operation (same evaluation
order, plain Horner, no fused multiply-adds) so the two backends return
identical floating-point results.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def ppoly_eval(breaks: np.ndarray, coefs: np.ndarray, x: np.ndarray, derivative: int = 0) -> np.ndarray:
    """Evaluate a piecewise cubic in local-power form.

    `breaks` has nseg+1 ascending entries, `coefs` is (4, nseg) with
    row m holding the coefficient of (x - breaks[i])**(3-m) on segment
    i. Points beyond the first/last break are evaluated on the nearest
    segment's polynomial (polynomial extension).
    """
    x = np.asarray(x, dtype=np.float64)
    idx = np.searchsorted(breaks, x, side="right") - 1
    np.clip(idx, 0, breaks.size - 2, out=idx)
    dx = x - breaks[idx]
    c0 = coefs[0, idx]
    c1 = coefs[1, idx]
    c2 = coefs[2, idx]
    c3 = coefs[3, idx]
    if derivative == 0:
        return ((c0 * dx + c1) * dx + c2) * dx + c3
    if derivative == 1:
        return (3.0 * c0 * dx + 2.0 * c1) * dx + c2
    if derivative == 2:
        return 6.0 * c0 * dx + 2.0 * c1
    raise ValueError("derivative order must be 0, 1 or 2")


def additive_eval(
    breaks_cat: np.ndarray,
    coefs_cat: np.ndarray,
    knot_offs: np.ndarray,
    coef_offs: np.ndarray,
    intercepts: np.ndarray,
    theta: np.ndarray,
    derivative: int = 0,
) -> np.ndarray:
    """Evaluate stacked additive piecewise-cubics at a single point.

    Spline k = i * p + j (output i, input coordinate j) occupies
    breaks_cat[knot_offs[k]:knot_offs[k+1]] and the matching columns of
    coefs_cat; output i is intercepts[i] plus the sum of its p
    component evaluations. This is the chain-time hot path: one call
    per forward-map evaluation.
    """
    p = theta.shape[0]
    n_out = intercepts.shape[0]
    out = intercepts.copy()
    for i in range(n_out):
        for j in range(p):
            k = i * p + j
            breaks = breaks_cat[knot_offs[k] : knot_offs[k + 1]]
            coefs = coefs_cat[:, coef_offs[k] : coef_offs[k + 1]]
            x = theta[j]
            idx = int(np.searchsorted(breaks, x, side="right")) - 1
            if idx < 0:
                idx = 0
            elif idx > breaks.size - 2:
                idx = breaks.size - 2
            dx = x - breaks[idx]
            c0 = coefs[0, idx]
            c1 = coefs[1, idx]
            c2 = coefs[2, idx]
            c3 = coefs[3, idx]
            if derivative == 0:
                out[i] += ((c0 * dx + c1) * dx + c2) * dx + c3
            else:
                out[i] += (3.0 * c0 * dx + 2.0 * c1) * dx + c2
    return out


def additive_jac(
    breaks_cat: np.ndarray,
    coefs_cat: np.ndarray,
    knot_offs: np.ndarray,
    coef_offs: np.ndarray,
    intercepts: np.ndarray,
    theta: np.ndarray,
) -> np.ndarray:
    """Analytic Jacobian of stacked additive forms at a single point.

    Entry (i, j) is the derivative of output i's j-th component spline;
    with one spline per input coordinate this is the full Jacobian.
    """
    p = theta.shape[0]
    n_out = intercepts.shape[0]
    out = np.empty((n_out, p), dtype=np.float64)
    for i in range(n_out):
        for j in range(p):
            k = i * p + j
            breaks = breaks_cat[knot_offs[k] : knot_offs[k + 1]]
            coefs = coefs_cat[:, coef_offs[k] : coef_offs[k + 1]]
            x = theta[j]
            idx = int(np.searchsorted(breaks, x, side="right")) - 1
            if idx < 0:
                idx = 0
            elif idx > breaks.size - 2:
                idx = breaks.size - 2
            dx = x - breaks[idx]
            out[i, j] = (3.0 * coefs[0, idx] * dx + 2.0 * coefs[1, idx]) * dx + coefs[2, idx]
    return out


def interp_multilinear(
    axis_start: np.ndarray,
    axis_step: np.ndarray,
    axis_len: np.ndarray,
    table: np.ndarray,
    points: np.ndarray,
) -> np.ndarray:
    """Multilinear interpolation on a regular lattice.

    `table` is (n_nodes, k) in row-major lattice order (last axis
    fastest); `points` is (m, p). Points outside the lattice are
    clamped to its edge cell (constant extension beyond the hull).
    """
    points = np.asarray(points, dtype=np.float64)
    m, p = points.shape
    k = table.shape[1]

    u = (points - axis_start[None, :]) / axis_step[None, :]
    cell = np.floor(u).astype(np.int64)
    np.clip(cell, 0, axis_len - 2, out=cell)
    frac = u - cell
    np.clip(frac, 0.0, 1.0, out=frac)

    strides = np.ones(p, dtype=np.int64)
    for j in range(p - 2, -1, -1):
        strides[j] = strides[j + 1] * axis_len[j + 1]
    base = cell @ strides

    out = np.zeros((m, k), dtype=np.float64)
    for corner in range(1 << p):
        offset = 0
        weight = np.ones(m, dtype=np.float64)
        for j in range(p):
            if corner & (1 << (p - 1 - j)):
                offset += strides[j]
                weight = weight * frac[:, j]
            else:
                weight = weight * (1.0 - frac[:, j])
        out += weight[:, None] * table[base + offset]
    return out
