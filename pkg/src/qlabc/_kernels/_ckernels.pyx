# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy kernels in `_pykernels`.

Keep the arithmetic order identical to the numpy versions: the test
suite asserts both backends agree and the build disables FP
contraction so they match bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


cdef Py_ssize_t _bisect_right(const double[::1] breaks, double x) noexcept nogil:
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = breaks.shape[0]
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) // 2
        if x < breaks[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def ppoly_eval(breaks, coefs, x, int derivative=0):
    """See `_pykernels.ppoly_eval`."""
    if derivative < 0 or derivative > 2:
        raise ValueError("derivative order must be 0, 1 or 2")
    x_arr = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    cdef const double[::1] xv = x_arr.reshape(-1)
    cdef const double[::1] bv = np.ascontiguousarray(breaks, dtype=np.float64)
    cdef const double[:, ::1] cv = np.ascontiguousarray(coefs, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t nseg = bv.shape[0] - 2
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out_arr
    cdef Py_ssize_t i, idx
    cdef double dx, c0, c1, c2, c3
    cdef int der = derivative
    with nogil:
        for i in range(n):
            idx = _bisect_right(bv, xv[i]) - 1
            if idx < 0:
                idx = 0
            elif idx > nseg:
                idx = nseg
            dx = xv[i] - bv[idx]
            c0 = cv[0, idx]
            c1 = cv[1, idx]
            c2 = cv[2, idx]
            c3 = cv[3, idx]
            if der == 0:
                ov[i] = ((c0 * dx + c1) * dx + c2) * dx + c3
            elif der == 1:
                ov[i] = (3.0 * c0 * dx + 2.0 * c1) * dx + c2
            else:
                ov[i] = 6.0 * c0 * dx + 2.0 * c1
    return out_arr.reshape(np.shape(np.asarray(x, dtype=np.float64)))


def additive_eval(
    const double[::1] breaks_cat,
    const double[:, ::1] coefs_cat,
    const long long[::1] knot_offs,
    const long long[::1] coef_offs,
    const double[::1] intercepts,
    const double[::1] theta,
    int derivative=0,
):
    """See `_pykernels.additive_eval`."""
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t n_out = intercepts.shape[0]
    out_arr = np.empty(n_out, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, k, idx, lo, hi, mid, b0, nb, c0_off
    cdef double x, dx, c0, c1, c2, c3, acc
    cdef int der = derivative
    with nogil:
        for i in range(n_out):
            acc = intercepts[i]
            for j in range(p):
                k = i * p + j
                b0 = knot_offs[k]
                nb = knot_offs[k + 1] - b0
                x = theta[j]
                lo = 0
                hi = nb
                while lo < hi:
                    mid = (lo + hi) // 2
                    if x < breaks_cat[b0 + mid]:
                        hi = mid
                    else:
                        lo = mid + 1
                idx = lo - 1
                if idx < 0:
                    idx = 0
                elif idx > nb - 2:
                    idx = nb - 2
                dx = x - breaks_cat[b0 + idx]
                c0_off = coef_offs[k] + idx
                c0 = coefs_cat[0, c0_off]
                c1 = coefs_cat[1, c0_off]
                c2 = coefs_cat[2, c0_off]
                c3 = coefs_cat[3, c0_off]
                if der == 0:
                    acc += ((c0 * dx + c1) * dx + c2) * dx + c3
                else:
                    acc += (3.0 * c0 * dx + 2.0 * c1) * dx + c2
            out[i] = acc
    return out_arr


def additive_jac(
    const double[::1] breaks_cat,
    const double[:, ::1] coefs_cat,
    const long long[::1] knot_offs,
    const long long[::1] coef_offs,
    const double[::1] intercepts,
    const double[::1] theta,
):
    """See `_pykernels.additive_jac`."""
    cdef Py_ssize_t p = theta.shape[0]
    cdef Py_ssize_t n_out = intercepts.shape[0]
    out_arr = np.empty((n_out, p), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k, idx, lo, hi, mid, b0, nb, coff
    cdef double x, dx
    with nogil:
        for i in range(n_out):
            for j in range(p):
                k = i * p + j
                b0 = knot_offs[k]
                nb = knot_offs[k + 1] - b0
                x = theta[j]
                lo = 0
                hi = nb
                while lo < hi:
                    mid = (lo + hi) // 2
                    if x < breaks_cat[b0 + mid]:
                        hi = mid
                    else:
                        lo = mid + 1
                idx = lo - 1
                if idx < 0:
                    idx = 0
                elif idx > nb - 2:
                    idx = nb - 2
                dx = x - breaks_cat[b0 + idx]
                coff = coef_offs[k] + idx
                out[i, j] = (3.0 * coefs_cat[0, coff] * dx + 2.0 * coefs_cat[1, coff]) * dx + coefs_cat[2, coff]
    return out_arr


def interp_multilinear(axis_start, axis_step, axis_len, table, points):
    """See `_pykernels.interp_multilinear`."""
    cdef const double[::1] start = np.ascontiguousarray(axis_start, dtype=np.float64)
    cdef const double[::1] step = np.ascontiguousarray(axis_step, dtype=np.float64)
    cdef const long long[::1] alen = np.ascontiguousarray(axis_len, dtype=np.int64)
    cdef const double[:, ::1] tab = np.ascontiguousarray(table, dtype=np.float64)
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t m = pts.shape[0]
    cdef Py_ssize_t p = pts.shape[1]
    cdef Py_ssize_t k = tab.shape[1]
    out_arr = np.zeros((m, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr

    cdef long long[::1] strides = np.ones(p, dtype=np.int64)
    cdef Py_ssize_t j
    for j in range(p - 2, -1, -1):
        strides[j] = strides[j + 1] * alen[j + 1]

    cdef Py_ssize_t i, corner, v
    cdef long long cell, base, offset
    cdef double u, frac, weight
    cdef double[::1] fracs = np.empty(p, dtype=np.float64)
    with nogil:
        for i in range(m):
            base = 0
            for j in range(p):
                u = (pts[i, j] - start[j]) / step[j]
                cell = <long long>u
                if u < 0:
                    cell = 0
                if cell > alen[j] - 2:
                    cell = alen[j] - 2
                frac = u - cell
                if frac < 0.0:
                    frac = 0.0
                elif frac > 1.0:
                    frac = 1.0
                fracs[j] = frac
                base += cell * strides[j]
            for corner in range(1 << p):
                offset = 0
                weight = 1.0
                for j in range(p):
                    if corner & (1 << (p - 1 - j)):
                        offset += strides[j]
                        weight = weight * fracs[j]
                    else:
                        weight = weight * (1.0 - fracs[j])
                for v in range(k):
                    out[i, v] += weight * tab[base + offset, v]
    return out_arr
