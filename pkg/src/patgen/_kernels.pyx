# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``_kernels_py``."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def _pack(a):
    """Rows of 0/1 bytes packed into 64-bit words (zero padded)."""
    bits = np.packbits(np.ascontiguousarray(a, dtype=np.uint8), axis=1)
    pad = (-bits.shape[1]) % 8
    if pad:
        bits = np.pad(bits, ((0, 0), (0, pad)))
    return np.ascontiguousarray(bits).view(np.uint64)


def hamming(x, d):
    x = np.asarray(x)
    d = np.asarray(d)
    if x.ndim != 2 or d.ndim != 2 or x.shape[1] != d.shape[1]:
        raise ValueError("row length mismatch")
    cdef const unsigned long long[:, ::1] xv = _pack(x)
    cdef const unsigned long long[:, ::1] dv = _pack(d)
    cdef Py_ssize_t B = xv.shape[0], N = dv.shape[0], W = xv.shape[1]
    out = np.zeros((B, N), dtype=np.int64)
    cdef long long[:, ::1] ov = out
    cdef Py_ssize_t b, r, w
    cdef long long c
    with nogil:
        for b in range(B):
            for r in range(N):
                c = 0
                for w in range(W):
                    c += __builtin_popcountll(xv[b, w] ^ dv[r, w])
                ov[b, r] = c
    return out


cdef inline void _rank1_range(double[:, ::1] H, double[::1] rhs, Py_ssize_t s, Py_ssize_t t,
                              double e) noexcept nogil:
    cdef Py_ssize_t a, b
    for a in range(s, t):
        rhs[a] += e
        for b in range(s, t):
            H[a, b] += 1.0


def penalty(z, Py_ssize_t nx, lin_start, lin_stop, lin_bound, poly_ptr, cell_i, cell_j,
            area_lo, area_hi, bint system):
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const long long[::1] ls = np.ascontiguousarray(lin_start, dtype=np.int64)
    cdef const long long[::1] lt = np.ascontiguousarray(lin_stop, dtype=np.int64)
    cdef const double[::1] lb = np.ascontiguousarray(lin_bound, dtype=np.float64)
    cdef const long long[::1] pp = np.ascontiguousarray(poly_ptr, dtype=np.int64)
    cdef const long long[::1] ci = np.ascontiguousarray(cell_i, dtype=np.int64)
    cdef const long long[::1] cj = np.ascontiguousarray(cell_j, dtype=np.int64)
    cdef const double[::1] alo = np.ascontiguousarray(area_lo, dtype=np.float64)
    cdef const double[::1] ahi = np.ascontiguousarray(area_hi, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0]
    cdef Py_ssize_t nlin = ls.shape[0]
    cdef Py_ssize_t npoly = pp.shape[0] - 1

    cs_arr = np.empty(n + 1)
    cdef double[::1] cs = cs_arr
    grad_arr = np.empty(n)
    cdef double[::1] g = grad_arr
    H_arr = np.zeros((n, n)) if system else np.zeros((1, 1))
    rhs_arr = np.zeros(n) if system else np.zeros(1)
    cdef double[:, ::1] H = H_arr
    cdef double[::1] rhs = rhs_arr

    cdef Py_ssize_t k, p, a, b, s, t, side
    cdef double e, phi = 0.0, maxv = -1e300, area, sgn
    cdef bint any_c = nlin > 0 or npoly > 0

    with nogil:
        cs[0] = 0.0
        for k in range(n):
            cs[k + 1] = cs[k] + zv[k]
        for k in range(nlin):
            s = ls[k]
            t = lt[k]
            e = lb[k] - (cs[t] - cs[s])
            if e > maxv:
                maxv = e
            if e > 0:
                phi += 0.5 * e * e
                if system:
                    _rank1_range(H, rhs, s, t, e)
        for p in range(npoly):
            area = 0.0
            for k in range(pp[p], pp[p + 1]):
                area += zv[cj[k]] * zv[nx + ci[k]]
            for side in range(2):
                if side == 0:
                    sgn = 1.0
                    e = alo[p] - area
                else:
                    sgn = -1.0
                    e = area - ahi[p]
                if e > maxv:
                    maxv = e
                if e <= 0:
                    continue
                phi += 0.5 * e * e
                if not system:
                    continue
                for a in range(n):
                    g[a] = 0.0
                for k in range(pp[p], pp[p + 1]):
                    g[cj[k]] += sgn * zv[nx + ci[k]]
                    g[nx + ci[k]] += sgn * zv[cj[k]]
                for a in range(n):
                    if g[a] == 0.0:
                        continue
                    rhs[a] += e * g[a]
                    for b in range(n):
                        H[a, b] += g[a] * g[b]
    if not any_c:
        maxv = 0.0
    if not system:
        return phi, maxv, None, None
    return phi, maxv, H_arr, rhs_arr
