"""Bundled toy library: small deterministic layout sets for tests, demos and benchmarks."""

from __future__ import annotations

import numpy as np

from . import drc
from .diffusion import make_rng
from .geometry import Layout, SquishPattern, encode_squish, pad_to_square
from .rules import TOY_RULES, DesignRules

EXTENT = 2048
SIDE = 16

# Four distinct 4x4 topologies (row 0 at the bottom), all bow-tie free.
TOY_TOPOLOGIES_4X4 = [
    np.array([[0, 0, 0, 0], [0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 0]], dtype=np.uint8),
    np.array([[1, 0, 1, 0], [1, 0, 1, 0], [1, 0, 1, 0], [1, 0, 1, 0]], dtype=np.uint8),
    np.array([[1, 1, 1, 1], [0, 0, 0, 0], [1, 1, 1, 1], [0, 0, 0, 0]], dtype=np.uint8),
    np.array([[1, 1, 1, 1], [1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]], dtype=np.uint8),
]


def _rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def _ell(x0, y0, x1, y1, cx, cy, corner):
    """Bounding box minus the notch ``corner`` (0..3 counter-clockwise from bottom-left)."""
    if corner == 0:
        return ((cx, y0), (x1, y0), (x1, y1), (x0, y1), (x0, cy), (cx, cy))
    if corner == 1:
        return ((x0, y0), (cx, y0), (cx, cy), (x1, cy), (x1, y1), (x0, y1))
    if corner == 2:
        return ((x0, y0), (x1, y0), (x1, cy), (cx, cy), (cx, y1), (x0, y1))
    return ((x0, y0), (x1, y0), (x1, y1), (cx, y1), (cx, cy), (x0, cy))


def random_layout(rng, extent: int = EXTENT, max_polygons: int = 4, min_feature: int = 96,
                  min_space: int = 96, max_size: int = 640) -> Layout:
    """Non-overlapping rectangles and L-shapes separated by at least ``min_space`` nm."""
    grid = 16  # coordinates on a 16 nm grid keep the numbers readable
    boxes: list[tuple[int, int, int, int]] = []
    polygons = []
    want = int(rng.integers(1, max_polygons + 1))
    tries = 0
    while len(polygons) < want and tries < 200:
        tries += 1
        w = int(rng.integers(min_feature // grid, max_size // grid + 1)) * grid
        h = int(rng.integers(min_feature // grid, max_size // grid + 1)) * grid
        x0 = int(rng.integers(0, (extent - w) // grid + 1)) * grid
        y0 = int(rng.integers(0, (extent - h) // grid + 1)) * grid
        box = (x0, y0, x0 + w, y0 + h)
        if any(
            box[0] < b[2] + min_space and b[0] < box[2] + min_space
            and box[1] < b[3] + min_space and b[1] < box[3] + min_space
            for b in boxes
        ):
            continue
        if rng.random() < 0.5 and w >= 2 * min_feature + grid and h >= 2 * min_feature + grid:
            cx = int(rng.integers((x0 + min_feature) // grid, (x0 + w - min_feature) // grid + 1)) * grid
            cy = int(rng.integers((y0 + min_feature) // grid, (y0 + h - min_feature) // grid + 1)) * grid
            poly = _ell(*box, cx, cy, int(rng.integers(0, 4)))
        else:
            poly = _rect(*box)
        boxes.append(box)
        polygons.append(poly)
    return Layout(extent, extent, tuple(polygons))


def toy_layouts(count: int, seed: int = 2024, rules: DesignRules = TOY_RULES) -> list[Layout]:
    """``count`` layouts that fit a ``SIDE x SIDE`` squish pattern and are clean under ``rules``."""
    rng = make_rng(seed)
    rules = rules.for_side(SIDE)
    out = []
    while len(out) < count:
        lay = random_layout(rng)
        sq = encode_squish(lay)
        if max(sq.shape) > SIDE or not drc.check(lay, rules).clean:
            continue
        if not drc.prefilter(sq.topology):
            continue
        out.append(lay)
    return out


def toy_library(count: int = 64, seed: int = 2024) -> list[SquishPattern]:
    """Toy layouts as ``SIDE x SIDE`` squish patterns (nm intervals)."""
    return [pad_to_square(encode_squish(l), SIDE) for l in toy_layouts(count, seed)]
