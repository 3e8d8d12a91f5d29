"""Design-rule checking on decoded layouts and the topology pre-filter.

The checker measures real geometry in nanometres and shares no constraint
objects with the legalizer, so it can serve as an independent judge of
legalizer output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .geometry import Layout, encode_squish
from .rules import DesignRules

_REL_TOL = 1e-9


@dataclass(frozen=True)
class Violation:
    rule: str  # "space" | "width" | "area"
    location: str
    measured: float
    bound: float


@dataclass
class DrcReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(v)) + "\n" for v in self.violations)


def _runs(line: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of ones as inclusive (start, end) index pairs."""
    padded = np.concatenate([[0], line.astype(np.int8), [0]])
    d = np.diff(padded)
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0] - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _below(measured: float, bound: float) -> bool:
    return measured < bound - _REL_TOL * max(1.0, abs(bound))


def check(layout: Layout, rules: DesignRules) -> DrcReport:
    """Report every width, space and area violation of ``layout`` under ``rules``.

    Widths are per-axis extents of maximal runs in each scan-line band; spaces
    are gaps between runs of two different polygons in the same band.
    """
    scale = rules.unit_scale
    space_nm = rules.space_min * scale
    width_nm = rules.width_min * scale
    area_lo = rules.area_min * scale * scale
    area_hi = rules.area_max * scale * scale

    sq = encode_squish(layout)
    topo = sq.topology
    labels, npoly = ndimage.label(topo, structure=ndimage.generate_binary_structure(2, 1))
    xs = np.concatenate([[0.0], np.cumsum(sq.dx)])
    ys = np.concatenate([[0.0], np.cumsum(sq.dy)])
    report = DrcReport()

    def scan(lines, lab_lines, pos, other_pos, axis_name):
        for idx, (line, lab) in enumerate(zip(lines, lab_lines)):
            band = f"{other_pos[idx]:g}..{other_pos[idx + 1]:g}"
            runs = _runs(line)
            for a, b in runs:
                w = pos[b + 1] - pos[a]
                if _below(w, width_nm):
                    report.violations.append(
                        Violation("width", f"{axis_name} {pos[a]:g}..{pos[b + 1]:g} in band {band}", w, width_nm)
                    )
            for (a0, b0), (a1, b1) in zip(runs, runs[1:]):
                if lab[b0] == lab[a1]:
                    continue
                gap = pos[a1] - pos[b0 + 1]
                if _below(gap, space_nm):
                    report.violations.append(
                        Violation("space", f"{axis_name} {pos[b0 + 1]:g}..{pos[a1]:g} in band {band}", gap, space_nm)
                    )

    scan(topo, labels, xs, ys, "x")
    scan(topo.T, labels.T, ys, xs, "y")

    cell_area = np.outer(sq.dy, sq.dx)
    areas = ndimage.sum_labels(cell_area, labels, index=np.arange(1, npoly + 1)) if npoly else []
    for p, a in enumerate(np.atleast_1d(areas), start=1):
        a = float(a)
        if _below(a, area_lo) or _below(area_hi, a):
            bound = area_lo if a < area_lo else area_hi
            i, j = np.argwhere(labels == p)[0]
            report.violations.append(
                Violation("area", f"polygon at ({xs[j]:g}, {ys[i]:g})", a, bound)
            )
    return report


# -- topology pre-filter ------------------------------------------------------------


def has_bowtie(topology: np.ndarray) -> bool:
    t = np.asarray(topology).astype(bool)
    if t.shape[0] < 2 or t.shape[1] < 2:
        return False
    a, b = t[:-1, :-1], t[:-1, 1:]
    c, d = t[1:, :-1], t[1:, 1:]
    diag = a & d & ~b & ~c
    anti = b & c & ~a & ~d
    return bool(np.any(diag | anti))


# Predicates returning True for an invalid topology.
PREFILTER_RULES: list[Callable[[np.ndarray], bool]] = [has_bowtie]


def prefilter(topology: np.ndarray) -> bool:
    """True when the topology passes every registered rule."""
    return not any(rule(topology) for rule in PREFILTER_RULES)
