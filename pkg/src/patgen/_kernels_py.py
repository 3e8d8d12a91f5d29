"""Pure numpy implementations of the hot kernels (fallback for the compiled module)."""

import numpy as np


def hamming(x, d):
    """Pairwise mismatch counts between rows of ``x`` (B, n) and ``d`` (N, n), both 0/1."""
    xf = np.asarray(x, dtype=np.float64)
    df = np.asarray(d, dtype=np.float64)
    cross = xf @ df.T
    out = xf.sum(axis=1)[:, None] + df.sum(axis=1)[None, :] - 2.0 * cross
    return np.rint(out).astype(np.int64)


def penalty(z, nx, lin_start, lin_stop, lin_bound, poly_ptr, cell_i, cell_j, area_lo, area_hi, system):
    """Squared-hinge penalty of range-sum and polygon-area constraints.

    Returns ``(phi, max_violation, H, rhs)`` where ``phi = 0.5 * sum(e**2)`` over
    violated constraints ``g(z) >= b`` with ``e = b - g``; ``H = sum(grad g grad g^T)``
    and ``rhs = sum(e * grad g)`` are only formed when ``system`` is true.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    cs = np.concatenate([[0.0], np.cumsum(z)])
    e_lin = lin_bound - (cs[lin_stop] - cs[lin_start])
    act = e_lin > 0

    npoly = len(poly_ptr) - 1
    if npoly:
        pid = np.repeat(np.arange(npoly), np.diff(poly_ptr))
        dx = z[:nx]
        dy = z[nx:]
        area = np.bincount(pid, weights=dx[cell_j] * dy[cell_i], minlength=npoly)
        e_lo = area_lo - area
        e_hi = area - area_hi
    else:
        e_lo = e_hi = np.zeros(0)
    viols = np.concatenate([e_lin, e_lo, e_hi])
    maxv = float(viols.max()) if viols.size else 0.0
    pos = viols[viols > 0]
    phi = 0.5 * float(pos @ pos)
    if not system:
        return phi, maxv, None, None

    idx = np.arange(n)
    rows = []
    errs = []
    if act.any():
        s = lin_start[act][:, None]
        t = lin_stop[act][:, None]
        rows.append(((idx >= s) & (idx < t)).astype(np.float64))
        errs.append(e_lin[act])
    if npoly:
        grad = np.zeros((npoly, n))
        np.add.at(grad, (pid, cell_j), dy[cell_i])
        np.add.at(grad, (pid, nx + cell_i), dx[cell_j])
        lo_act = e_lo > 0
        hi_act = e_hi > 0
        if lo_act.any():
            rows.append(grad[lo_act])
            errs.append(e_lo[lo_act])
        if hi_act.any():
            rows.append(-grad[hi_act])
            errs.append(e_hi[hi_act])
    if rows:
        J = np.vstack(rows)
        e = np.concatenate(errs)
        return phi, maxv, J.T @ J, J.T @ e
    return phi, maxv, np.zeros((n, n)), np.zeros(n)
