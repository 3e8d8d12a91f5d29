"""Assign legal interval vectors to a topology.

For a topology the unknowns are the column widths ``dx`` and row heights
``dy`` in normalized units.  They must be positive, each sum to the total
extent, keep every 1-run of a row (column) at least ``width_min`` wide, every
0-run between two 1-runs at least ``space_min`` wide, and keep every polygon
area (a bilinear form in ``dx``, ``dy``) inside ``[area_min, area_max]``.

:func:`solve` finds a feasible point by minimizing the squared hinge of all
violations with projected Gauss-Newton steps over the set
``{v >= floor, sum(v) = extent}`` of each axis.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import drc, kernels
from .geometry import Layout, SquishPattern, decode_squish
from .rules import DesignRules

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
_AIM = 1e-3  # solver targets bounds this far inside the feasible region


class PrefilterError(ValueError):
    pass


class SolveFailure(RuntimeError):
    def __init__(self, residual: float, iterations: int, reason: str):
        super().__init__(f"{reason} (best residual {residual:.3g} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class RangeConstraint:
    axis: str  # "x" constrains dx (from a row), "y" constrains dy (from a column)
    index: int  # the row (or column) it was read from
    a: int
    b: int  # inclusive


@dataclass
class ConstraintSet:
    n_x: int
    n_y: int
    set_S: list[RangeConstraint] = field(default_factory=list)
    set_W: list[RangeConstraint] = field(default_factory=list)
    polygons: list[frozenset[tuple[int, int]]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class GeometrySolution:
    dx: np.ndarray
    dy: np.ndarray
    residual: float = 0.0
    iterations: int = 0


@dataclass(frozen=True)
class Budget:
    max_iters: int = 300
    max_time: float = 2.0


# -- constraint extraction -------------------------------------------------------------


def _label4(topo: np.ndarray) -> list[frozenset[tuple[int, int]]]:
    rows, cols = topo.shape
    seen = np.zeros(topo.shape, dtype=bool)
    comps = []
    for i in range(rows):
        for j in range(cols):
            if not topo[i, j] or seen[i, j]:
                continue
            seen[i, j] = True
            stack = [(i, j)]
            cells = []
            while stack:
                r, c = stack.pop()
                cells.append((r, c))
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < rows and 0 <= cc < cols and topo[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            comps.append(frozenset(cells))
    return comps


def _line_constraints(line, axis, index, set_S, set_W):
    ones = []
    j = 0
    n = len(line)
    while j < n:
        if line[j]:
            k = j
            while k + 1 < n and line[k + 1]:
                k += 1
            ones.append((j, k))
            j = k + 1
        else:
            j += 1
    for a, b in ones:
        set_W.append(RangeConstraint(axis, index, a, b))
    for (_, b0), (a1, _) in zip(ones, ones[1:]):
        set_S.append(RangeConstraint(axis, index, b0 + 1, a1 - 1))


def extract_constraints(topology) -> ConstraintSet:
    topo = np.asarray(topology, dtype=np.uint8)
    if not drc.prefilter(topo):
        raise PrefilterError("topology fails the pre-filter (bow-tie)")
    rows, cols = topo.shape
    cs = ConstraintSet(n_x=cols, n_y=rows)
    for i in range(rows):
        _line_constraints(topo[i], "x", i, cs.set_S, cs.set_W)
    for j in range(cols):
        _line_constraints(topo[:, j], "y", j, cs.set_S, cs.set_W)
    cs.polygons = _label4(topo)
    return cs


@dataclass(frozen=True, eq=False)
class _Compiled:
    nx: int
    lin_start: np.ndarray
    lin_stop: np.ndarray
    lin_bound: np.ndarray
    poly_ptr: np.ndarray
    cell_i: np.ndarray
    cell_j: np.ndarray
    area_lo: np.ndarray
    area_hi: np.ndarray

    def with_slack(self, lin: float, area: float) -> "_Compiled":
        return _Compiled(
            self.nx, self.lin_start, self.lin_stop, self.lin_bound + lin,
            self.poly_ptr, self.cell_i, self.cell_j, self.area_lo + area, self.area_hi - area,
        )

    def penalty(self, z, system):
        return kernels.penalty(
            z, self.nx, self.lin_start, self.lin_stop, self.lin_bound,
            self.poly_ptr, self.cell_i, self.cell_j, self.area_lo, self.area_hi, system,
        )


def _compile(cs: ConstraintSet, rules: DesignRules) -> _Compiled:
    bounds: dict[tuple[int, int], float] = {}
    for group, value in ((cs.set_W, rules.width_min), (cs.set_S, rules.space_min)):
        for c in group:
            off = 0 if c.axis == "x" else cs.n_x
            key = (off + c.a, off + c.b + 1)
            bounds[key] = max(bounds.get(key, 0.0), value)
    keys = sorted(bounds)
    ptr = [0]
    ci: list[int] = []
    cj: list[int] = []
    for poly in cs.polygons:
        for i, j in sorted(poly):
            ci.append(i)
            cj.append(j)
        ptr.append(len(ci))
    npoly = len(cs.polygons)
    return _Compiled(
        nx=cs.n_x,
        lin_start=np.array([k[0] for k in keys], dtype=np.int64),
        lin_stop=np.array([k[1] for k in keys], dtype=np.int64),
        lin_bound=np.array([bounds[k] for k in keys], dtype=np.float64),
        poly_ptr=np.array(ptr, dtype=np.int64),
        cell_i=np.array(ci, dtype=np.int64),
        cell_j=np.array(cj, dtype=np.int64),
        area_lo=np.full(npoly, float(rules.area_min)),
        area_hi=np.full(npoly, float(rules.area_max)),
    )


def constraint_violation(cs: ConstraintSet, rules: DesignRules, dx, dy) -> float:
    """Largest violation of any constraint at ``(dx, dy)``, by direct substitution.

    Positivity and the two sum constraints are included.  Non-positive means feasible.
    """
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    E = rules.total_extent
    worst = max(abs(dx.sum() - E), abs(dy.sum() - E), -min(dx.min(), dy.min()))
    for group, bound in ((cs.set_W, rules.width_min), (cs.set_S, rules.space_min)):
        for c in group:
            v = dx if c.axis == "x" else dy
            worst = max(worst, bound - v[c.a : c.b + 1].sum())
    for poly in cs.polygons:
        area = sum(dx[j] * dy[i] for i, j in poly)
        worst = max(worst, rules.area_min - area, area - rules.area_max)
    return float(worst)


# -- solver --------------------------------------------------------------------------


def _project(v: np.ndarray, floor: float, total: float) -> np.ndarray:
    """Euclidean projection onto ``{x >= floor, sum(x) = total}``."""
    n = v.size
    u = v - floor
    target = total - floor * n
    srt = np.sort(u)[::-1]
    css = np.cumsum(srt) - target
    k = np.arange(1, n + 1)
    rho = np.nonzero(srt - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(u - tau, 0.0) + floor


def _rescale(v, total):
    v = np.asarray(v, dtype=np.float64)
    return v * (total / v.sum())


def solve(
    cs: ConstraintSet,
    rules: DesignRules,
    init: GeometrySolution,
    budget: Budget | None = None,
    *,
    floor: float | None = None,
    slack: tuple[float, float] = (0.0, 0.0),
) -> GeometrySolution:
    """Find ``(dx, dy)`` satisfying every constraint of ``cs`` under ``rules``.

    ``slack = (linear, area)`` tightens space/width minima and both area bounds
    beyond the rules, e.g. to absorb later rounding.  ``floor`` is the
    smallest allowed interval (default ``1e-3`` of the mean interval).
    Raises :class:`SolveFailure` when the budget runs out.
    """
    budget = budget or Budget()
    rules = rules.for_side(max(cs.n_x, cs.n_y))
    E = float(rules.total_extent)
    nx, ny = cs.n_x, cs.n_y
    if floor is None:
        floor = 1e-3 * E / max(nx, ny)
    if floor * max(nx, ny) >= E:
        raise SolveFailure(float("inf"), 0, "interval floor leaves no room")
    base = _compile(cs, rules).with_slack(*slack)
    aimed = base.with_slack(_AIM, _AIM)
    dx0 = np.asarray(init.dx, dtype=np.float64)
    dy0 = np.asarray(init.dy, dtype=np.float64)
    if dx0.shape != (nx,) or dy0.shape != (ny,) or dx0.min() <= 0 or dy0.min() <= 0:
        raise ValueError("init must be strictly positive with one entry per interval")

    def proj(v):
        return np.concatenate([_project(v[:nx], floor, E), _project(v[nx:], floor, E)])

    z = proj(np.concatenate([_rescale(dx0, E), _rescale(dy0, E)]))
    n = nx + ny
    C = np.zeros((2, n))
    C[0, :nx] = 1.0
    C[1, nx:] = 1.0
    kkt = np.zeros((n + 2, n + 2))
    kkt[:n, n:] = C.T
    kkt[n:, :n] = C
    mu = 1e-6
    t0 = time.perf_counter()
    history: deque[float] = deque(maxlen=25)
    best = float("inf")
    it = 0
    for it in range(budget.max_iters + 1):
        _, viol, _, _ = base.penalty(z, False)
        best = min(best, viol)
        if viol <= FEAS_TOL:
            return GeometrySolution(z[:nx].copy(), z[nx:].copy(), max(viol, 0.0), it)
        if it == budget.max_iters or time.perf_counter() - t0 > budget.max_time:
            break
        phi, _, H, rhs = aimed.penalty(z, True)
        history.append(phi)
        if len(history) == history.maxlen and history[-1] > 0.999 * history[0]:
            raise SolveFailure(best, it, "stalled")
        while True:
            kkt[:n, :n] = H
            kkt[np.arange(n), np.arange(n)] += mu
            rhs_full = np.concatenate([rhs, [0.0, 0.0]])
            step = np.linalg.solve(kkt, rhs_full)[:n]
            t = 1.0
            accepted = False
            for _ in range(6):
                zn = proj(z + t * step)
                phin = aimed.penalty(zn, False)[0]
                if phin < phi:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                z = zn
                mu = max(mu * 0.3, 1e-9)
                break
            mu *= 10.0
            if mu > 1e6:
                raise SolveFailure(best, it, "no descent direction")
    raise SolveFailure(best, it, "budget exhausted")


# -- initializations -----------------------------------------------------------------


def _uniform(cs: ConstraintSet, E: float) -> GeometrySolution:
    return GeometrySolution(np.full(cs.n_x, E / cs.n_x), np.full(cs.n_y, E / cs.n_y))


def init_random(cs: ConstraintSet, rules: DesignRules, rng=None) -> GeometrySolution:
    """Solving-R: i.i.d. uniform draws rescaled to the extent (uniform when ``rng`` is None)."""
    E = float(rules.for_side(max(cs.n_x, cs.n_y)).total_extent)
    if rng is None:
        return _uniform(cs, E)
    dx = rng.random(cs.n_x)
    dy = rng.random(cs.n_y)
    if dx.sum() <= 0 or dy.sum() <= 0 or dx.min() <= 0 or dy.min() <= 0:
        return _uniform(cs, E)
    return GeometrySolution(_rescale(dx, E), _rescale(dy, E))


def init_existing(library: Sequence[tuple], cs: ConstraintSet, rules: DesignRules, rng) -> GeometrySolution:
    """Solving-E: a uniformly drawn ``(dx, dy)`` pair of an existing pattern, rescaled."""
    E = float(rules.for_side(max(cs.n_x, cs.n_y)).total_extent)
    usable = [pair for pair in library if len(pair[0]) == cs.n_x and len(pair[1]) == cs.n_y]
    if usable:
        dx, dy = usable[int(rng.integers(len(usable)))]
        dx = np.asarray(dx, dtype=np.float64)
        dy = np.asarray(dy, dtype=np.float64)
        if dx.min() > 0 and dy.min() > 0:
            return GeometrySolution(_rescale(dx, E), _rescale(dy, E))
    log.warning("no usable library vectors for a %dx%d topology; using random init", cs.n_y, cs.n_x)
    return init_random(cs, rules, rng)


def init_divide(
    topology,
    rules: DesignRules,
    B: int = 4,
    budget: Budget | None = None,
    executor=None,
) -> GeometrySolution:
    """Solving-D: solve the ``B`` diagonal blocks independently and concatenate.

    Each block keeps only the constraints visible inside it and gets
    ``1 / B`` of the extent.  A failed block falls back to uniform intervals.
    ``executor`` (anything with ``map``) lets the blocks run concurrently.
    """
    topo = np.asarray(topology, dtype=np.uint8)
    side = topo.shape[0]
    if topo.shape[0] != topo.shape[1]:
        raise ValueError("divide initialization needs a square topology")
    if B < 2 or side % B:
        raise ValueError(f"side {side} is not divisible into {B} blocks")
    rules = rules.for_side(side)
    sub_E = rules.total_extent / B
    size = side // B
    sub_rules = DesignRules(
        rules.space_min, rules.width_min, rules.area_min, rules.area_max,
        rules.extent_nm, sub_E,
    )
    budget = budget or Budget()

    def block(b):
        sl = slice(b * size, (b + 1) * size)
        sub_cs = extract_constraints(topo[sl, sl])
        try:
            return solve(sub_cs, sub_rules, _uniform(sub_cs, sub_E), budget)
        except SolveFailure:
            return _uniform(sub_cs, sub_E)

    results = list((executor.map if executor is not None else map)(block, range(B)))
    dx = np.concatenate([r.dx for r in results])
    dy = np.concatenate([r.dy for r in results])
    return GeometrySolution(_rescale(dx, rules.total_extent), _rescale(dy, rules.total_extent))


# -- end to end ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Legalized:
    layout: Layout
    pattern: SquishPattern  # integer-nm intervals, unit_scale 1
    solution: GeometrySolution
    attempts: int


def quantize(v: np.ndarray, scale: float, total_nm: int) -> np.ndarray:
    """Integer-nm intervals whose scan-line positions are the rounded exact positions.

    Rounding cumulative positions preserves the total and moves every partial
    sum by less than 1 nm.
    """
    pos = np.rint(np.concatenate([[0.0], np.cumsum(v)]) * scale)
    pos[0] = 0
    pos[-1] = total_nm
    return np.diff(pos)


def legalize_pattern(
    topology,
    rules: DesignRules,
    strategy: str = "R",
    rng=None,
    *,
    library: Sequence[tuple] = (),
    budget: Budget | None = None,
    attempts: int = 3,
    B: int = 4,
) -> Legalized | None:
    """Legalize ``topology`` into a DRC-clean integer-nm layout, or ``None`` to discard it.

    The solution is solved with a 1 nm safety margin per attempt on spaces and
    widths, rounded to integer nm, decoded, and re-checked by the DRC; area
    shortfalls found after rounding widen the area margin for the next attempt.
    """
    topo = np.asarray(topology, dtype=np.uint8)
    side = max(topo.shape)
    rules = rules.for_side(side)
    scale = rules.unit_scale
    budget = budget or Budget()
    try:
        cs = extract_constraints(topo)
    except PrefilterError:
        return None
    if rng is None:
        from .diffusion import make_rng

        rng = make_rng(0)
    nm = 1.0 / scale

    def first_init():
        if strategy == "R":
            return init_random(cs, rules, rng)
        if strategy == "E":
            return init_existing(library, cs, rules, rng)
        if strategy == "D":
            return init_divide(topo, rules, B, budget)
        raise ValueError(f"unknown strategy {strategy!r}")

    area_slack = 0.0
    init = None
    for attempt in range(1, attempts + 1):
        if init is None:
            init = first_init() if attempt == 1 else init_random(cs, rules, rng)
        try:
            sol = solve(cs, rules, init, budget, floor=1.5 * nm, slack=(attempt * nm, area_slack))
        except SolveFailure as exc:
            log.debug("attempt %d failed: %s", attempt, exc)
            init = None
            continue
        dx_nm = quantize(sol.dx, scale, rules.extent_nm)
        dy_nm = quantize(sol.dy, scale, rules.extent_nm)
        pattern = SquishPattern(topo, dx_nm, dy_nm, 1.0)
        layout = decode_squish(pattern)
        report = drc.check(layout, rules)
        if report.clean:
            return Legalized(layout, pattern, sol, attempt)
        deficit = max(
            (abs(v.measured - v.bound) for v in report.violations if v.rule == "area"), default=0.0
        )
        area_slack += 2.0 * deficit / (scale * scale) + nm * nm
        init = sol
    return None


def library_vectors(patterns: Sequence[SquishPattern], total_extent: float) -> list[tuple]:
    """Normalized ``(dx, dy)`` pairs of existing patterns, for :func:`init_existing`."""
    return [(_rescale(p.dx, total_extent), _rescale(p.dy, total_extent)) for p in patterns]
