"""Layout data model and the squish-pattern codec.

A squish pattern stores a layout as a binary topology matrix plus the
interval vectors between adjacent scan lines.  Row ``i`` of the topology is
the horizontal band between ``ys[i]`` and ``ys[i + 1]`` (row 0 at y = 0),
column ``j`` the vertical band between ``xs[j]`` and ``xs[j + 1]``.

Coverage follows the even-odd rule over all rings of a layout.  Layouts
produced by :func:`decode_squish` only contain simple, interior-disjoint
rings, so for them the even-odd and union interpretations coincide.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

Point = tuple[int, int]
Ring = tuple[Point, ...]

_FOUR = ndimage.generate_binary_structure(2, 1)


class LayoutError(ValueError):
    """Raised for malformed layouts and squish patterns."""


@dataclass(frozen=True)
class Layout:
    extent_w: int
    extent_h: int
    polygons: tuple[Ring, ...] = ()

    def __post_init__(self):
        rings = tuple(_normalize_ring(r) for r in self.polygons)
        object.__setattr__(self, "polygons", rings)
        validate_layout(self)

    @property
    def extent(self) -> tuple[int, int]:
        return (self.extent_w, self.extent_h)


@dataclass(frozen=True, eq=False)
class SquishPattern:
    topology: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    unit_scale: float = 1.0

    def __post_init__(self):
        topo = np.array(self.topology, dtype=np.uint8, copy=True)
        dx = np.array(self.dx, dtype=np.float64, copy=True).reshape(-1)
        dy = np.array(self.dy, dtype=np.float64, copy=True).reshape(-1)
        if topo.ndim != 2:
            raise LayoutError("topology must be a 2-D matrix")
        if np.any(topo > 1):
            raise LayoutError("topology entries must be 0 or 1")
        rows, cols = topo.shape
        if len(dx) != cols or len(dy) != rows:
            raise LayoutError(
                f"interval vectors {len(dx)}x{len(dy)} do not match topology {rows}x{cols}"
            )
        if np.any(dx <= 0) or np.any(dy <= 0):
            raise LayoutError("interval vectors must be strictly positive")
        if not self.unit_scale > 0:
            raise LayoutError("unit_scale must be positive")
        for a in (topo, dx, dy):
            a.setflags(write=False)
        object.__setattr__(self, "topology", topo)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def shape(self) -> tuple[int, int]:
        return self.topology.shape

    def __eq__(self, other):
        if not isinstance(other, SquishPattern):
            return NotImplemented
        return (
            self.unit_scale == other.unit_scale
            and np.array_equal(self.topology, other.topology)
            and np.array_equal(self.dx, other.dx)
            and np.array_equal(self.dy, other.dy)
        )


@dataclass(frozen=True)
class Complexity:
    cx: int
    cy: int


# -- validation ---------------------------------------------------------------


def _normalize_ring(ring: Iterable[Sequence[int]]) -> Ring:
    pts = []
    for p in ring:
        if len(p) != 2:
            raise LayoutError(f"vertex {len(pts)} is not an (x, y) pair")
        x, y = p
        if int(x) != x or int(y) != y:
            raise LayoutError(f"vertex {len(pts)} has non-integer coordinates")
        pts.append((int(x), int(y)))
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    return tuple(pts)


def validate_layout(layout: Layout) -> None:
    if layout.extent_w <= 0 or layout.extent_h <= 0:
        raise LayoutError("extent must be positive")
    for pi, ring in enumerate(layout.polygons):
        n = len(ring)
        if n < 4 or n % 2:
            raise LayoutError(f"polygon {pi}: a rectilinear ring needs an even count >= 4 vertices")
        prev_horizontal = None
        for vi in range(n):
            x0, y0 = ring[vi]
            x1, y1 = ring[(vi + 1) % n]
            if not (0 <= x0 <= layout.extent_w and 0 <= y0 <= layout.extent_h):
                raise LayoutError(f"polygon {pi}: vertex {vi} lies outside the extent")
            if (x0 == x1) == (y0 == y1):
                raise LayoutError(f"polygon {pi}: edge at vertex {vi} is not axis-aligned")
            horizontal = y0 == y1
            if horizontal == prev_horizontal:
                raise LayoutError(f"polygon {pi}: edges at vertex {vi} do not alternate")
            prev_horizontal = horizontal
        if (ring[0][1] == ring[1][1]) == (ring[-1][1] == ring[0][1]):
            raise LayoutError(f"polygon {pi}: edges at vertex 0 do not alternate")


# -- encoding -----------------------------------------------------------------


def extract_scanlines(layout: Layout) -> tuple[list[int], list[int]]:
    xs = {0, layout.extent_w}
    ys = {0, layout.extent_h}
    for ring in layout.polygons:
        for x, y in ring:
            xs.add(x)
            ys.add(y)
    return sorted(xs), sorted(ys)


def coverage(layout: Layout, xs: Sequence[int], ys: Sequence[int]) -> np.ndarray:
    """Cell-center point-in-polygon over an arbitrary grid refining the layout's scan lines.

    Every vertical edge toggles the cells whose center lies left of it within
    the edge's y-span, which is ray casting done for all cells at once.
    """
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    cov = np.zeros((len(ys) - 1, len(xs) - 1), dtype=np.uint8)
    for ring in layout.polygons:
        n = len(ring)
        for vi in range(n):
            (x0, y0), (x1, y1) = ring[vi], ring[(vi + 1) % n]
            if x0 != x1:
                continue
            lo, hi = (y0, y1) if y0 < y1 else (y1, y0)
            r0 = int(np.searchsorted(ys, lo))
            r1 = int(np.searchsorted(ys, hi))
            c = int(np.searchsorted(xs, x0))
            if ys[r0] != lo or ys[r1] != hi or xs[c] != x0:
                raise LayoutError("grid does not contain the layout's scan lines")
            cov[r0:r1, :c] ^= 1
    return cov


def encode_squish(layout: Layout) -> SquishPattern:
    xs, ys = extract_scanlines(layout)
    topo = coverage(layout, xs, ys)
    return SquishPattern(topo, np.diff(xs), np.diff(ys), 1.0)


# -- decoding -----------------------------------------------------------------

# directed unit steps, counter-clockwise order
_E, _N, _W, _S = (1, 0), (0, 1), (-1, 0), (0, -1)


def _left(d):
    return (-d[1], d[0])


def _right(d):
    return (d[1], -d[0])


def _trace_rings(cells: np.ndarray) -> list[list[tuple[int, int]]]:
    """Boundary rings (lattice coordinates, interior on the left) of a cell mask.

    At a vertex with several outgoing edges the leftmost turn is taken, which
    keeps every ring free of repeated vertices.
    """
    rows, cols = cells.shape
    padded = np.zeros((rows + 2, cols + 2), dtype=bool)
    padded[1:-1, 1:-1] = cells
    out: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i, j in zip(*np.nonzero(cells)):
        pi, pj = i + 1, j + 1
        if not padded[pi - 1, pj]:
            out.setdefault((j, i), []).append(_E)
        if not padded[pi, pj + 1]:
            out.setdefault((j + 1, i), []).append(_N)
        if not padded[pi + 1, pj]:
            out.setdefault((j + 1, i + 1), []).append(_W)
        if not padded[pi, pj - 1]:
            out.setdefault((j, i + 1), []).append(_S)
    rings = []
    for start in sorted(out):
        while out[start]:
            d = out[start].pop(0)
            path = [start]
            p = (start[0] + d[0], start[1] + d[1])
            while p != start:
                choices = out[p]
                for nd in (_left(d), d, _right(d)):
                    if nd in choices:
                        choices.remove(nd)
                        break
                else:
                    raise AssertionError("open boundary while tracing")
                path.append(p)
                d = nd
                p = (p[0] + d[0], p[1] + d[1])
            rings.append(_corners(path))
    return rings


def _corners(path):
    n = len(path)
    keep = []
    for k in range(n):
        a, b, c = path[k - 1], path[k], path[(k + 1) % n]
        if not (a[0] == b[0] == c[0] or a[1] == b[1] == c[1]):
            keep.append(b)
    return keep


def _split_holes(mask: np.ndarray) -> list[np.ndarray]:
    """Cut a 4-connected cell mask into hole-free 4-connected pieces."""
    lab, n = ndimage.label(mask, structure=_FOUR)
    pieces = []
    for c in range(1, n + 1):
        part = lab == c
        comp_lab, ncomp = ndimage.label(~np.pad(part, 1), structure=_FOUR)
        if ncomp <= 1:
            pieces.append(part)
            continue
        outside = comp_lab[0, 0]
        hole_ids = [h for h in range(1, ncomp + 1) if h != outside]
        hole_cols = np.nonzero(comp_lab == hole_ids[0])[1] - 1
        cut = int(hole_cols.min())
        left = part.copy()
        left[:, cut:] = False
        right = part.copy()
        right[:, :cut] = False
        pieces.extend(_split_holes(left))
        pieces.extend(_split_holes(right))
    return pieces


def decode_squish(sq: SquishPattern) -> Layout:
    xs = np.concatenate([[0.0], np.cumsum(sq.dx)]) * sq.unit_scale
    ys = np.concatenate([[0.0], np.cumsum(sq.dy)]) * sq.unit_scale
    xi = np.rint(xs).astype(np.int64)
    yi = np.rint(ys).astype(np.int64)
    if np.any(np.diff(xi) <= 0) or np.any(np.diff(yi) <= 0):
        raise LayoutError("intervals collapse after rounding to integer nm")
    mask = sq.topology.astype(bool)
    pieces = _split_holes(mask) if mask.any() else []
    polygons = []
    for piece in pieces:
        (ring,) = _trace_rings(piece)
        polygons.append(tuple((int(xi[a]), int(yi[b])) for a, b in ring))
    return Layout(int(xi[-1]), int(yi[-1]), tuple(polygons))


# -- padding and canonical form -------------------------------------------------


def pad_to_square(sq: SquishPattern, n: int) -> SquishPattern:
    """Pad to ``n x n`` by halving the widest interval and duplicating its column/row.

    Ties go to the lowest index.  Decoded geometry is unchanged.
    """
    rows, cols = sq.shape
    if rows > n or cols > n:
        raise LayoutError(f"pattern {rows}x{cols} does not fit in {n}x{n}")
    topo = sq.topology
    dx = list(sq.dx)
    dy = list(sq.dy)
    while len(dx) < n:
        j = int(np.argmax(dx))
        half = dx[j] / 2
        dx[j : j + 1] = [half, half]
        topo = np.insert(topo, j, topo[:, j], axis=1)
    while len(dy) < n:
        i = int(np.argmax(dy))
        half = dy[i] / 2
        dy[i : i + 1] = [half, half]
        topo = np.insert(topo, i, topo[i, :], axis=0)
    return SquishPattern(topo, dx, dy, sq.unit_scale)


def canonicalize(sq: SquishPattern) -> SquishPattern:
    """Drop scan lines that separate identical columns (rows); their intervals merge."""
    topo = sq.topology
    keep_c = np.ones(topo.shape[1], dtype=bool)
    keep_c[1:] = np.any(topo[:, 1:] != topo[:, :-1], axis=0)
    keep_r = np.ones(topo.shape[0], dtype=bool)
    keep_r[1:] = np.any(topo[1:, :] != topo[:-1, :], axis=1)
    dx = np.add.reduceat(sq.dx, np.nonzero(keep_c)[0])
    dy = np.add.reduceat(sq.dy, np.nonzero(keep_r)[0])
    return SquishPattern(topo[keep_r][:, keep_c], dx, dy, sq.unit_scale)


def topology_complexity(topology: np.ndarray) -> Complexity:
    topo = np.asarray(topology)
    cx = 1 + int(np.count_nonzero(np.any(topo[:, 1:] != topo[:, :-1], axis=0)))
    cy = 1 + int(np.count_nonzero(np.any(topo[1:, :] != topo[:-1, :], axis=1)))
    return Complexity(cx, cy)


def complexity(sq: SquishPattern) -> Complexity:
    c = canonicalize(sq)
    return Complexity(c.shape[1], c.shape[0])


def same_coverage(a: Layout, b: Layout) -> bool:
    """Compare two layouts cell by cell on the union of their scan lines."""
    if a.extent != b.extent:
        return False
    ax, ay = extract_scanlines(a)
    bx, by = extract_scanlines(b)
    xs = sorted(set(ax) | set(bx))
    ys = sorted(set(ay) | set(by))
    return np.array_equal(coverage(a, xs, ys), coverage(b, xs, ys))


# -- rendering and file formats -------------------------------------------------


def render_svg(layout: Layout) -> str:
    w, h = layout.extent
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white" stroke="black"/>',
        # flip so that y grows upwards as in the layout coordinates
        f'<g transform="matrix(1 0 0 -1 0 {h})" fill="#3b6fb6" stroke="none">',
    ]
    for ring in layout.polygons:
        head, *rest = ring
        d = f"M {head[0]} {head[1]} " + " ".join(f"L {x} {y}" for x, y in rest) + " Z"
        lines.append(f'<path d="{d}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def layout_to_json(layout: Layout) -> str:
    doc = {
        "units": "nm",
        "extent": [layout.extent_w, layout.extent_h],
        "polygons": [[[x, y] for x, y in ring] for ring in layout.polygons],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def layout_from_json(text: str) -> Layout:
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise LayoutError("layout JSON must be an object")
    if doc.get("units", "nm") != "nm":
        raise LayoutError(f"unsupported units {doc.get('units')!r}")
    unknown = set(doc) - {"units", "extent", "polygons"}
    if unknown:
        raise LayoutError(f"unknown layout keys: {sorted(unknown)}")
    try:
        w, h = doc["extent"]
        polygons = doc.get("polygons", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise LayoutError(f"bad layout JSON: {exc}") from None
    return Layout(int(w), int(h), tuple(tuple(tuple(p) for p in ring) for ring in polygons))


def topology_to_text(topology: np.ndarray) -> str:
    topo = np.asarray(topology, dtype=np.uint8)
    rows, cols = topo.shape
    body = "\n".join("".join("1" if v else "0" for v in row) for row in topo)
    return f"P-TOPO {rows} {cols}\n{body}\n"


def topology_from_text(text: str) -> np.ndarray:
    lines = text.splitlines()
    if not lines:
        raise LayoutError("empty topology file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "P-TOPO":
        raise LayoutError("line 1: expected header 'P-TOPO rows cols'")
    try:
        rows, cols = int(head[1]), int(head[2])
    except ValueError:
        raise LayoutError("line 1: rows/cols must be integers") from None
    body = lines[1 : 1 + rows]
    if len(body) != rows:
        raise LayoutError(f"expected {rows} topology rows, found {len(body)}")
    out = np.zeros((rows, cols), dtype=np.uint8)
    for i, line in enumerate(body):
        if len(line) != cols or set(line) - {"0", "1"}:
            raise LayoutError(f"line {i + 2}: expected {cols} characters of 0/1")
        out[i] = [c == "1" for c in line]
    return out
