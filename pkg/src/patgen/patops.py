"""Topology augmentation gated by legality, and library diversity statistics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import drc, legalize
from .geometry import Complexity, SquishPattern, complexity, topology_complexity
from .rules import DesignRules


@dataclass(frozen=True)
class AugmentConfig:
    """Probability of proposing each candidate kind for one source topology."""

    p_flip: float = 0.5
    p_rotate: float = 1.0
    p_mirror: float = 0.5
    p_concat: float = 0.5

    def __post_init__(self):
        for name in ("p_flip", "p_rotate", "p_mirror", "p_concat"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @classmethod
    def from_dict(cls, doc: dict) -> "AugmentConfig":
        unknown = set(doc) - {"p_flip", "p_rotate", "p_mirror", "p_concat"}
        if unknown:
            raise ValueError(f"unknown augment keys: {sorted(unknown)}")
        return cls(**doc)


def flip(t: np.ndarray, axis: int) -> np.ndarray:
    return np.flip(t, axis=axis).copy()


def rotate(t: np.ndarray, quarter_turns: int) -> np.ndarray:
    if t.shape[0] != t.shape[1]:
        raise ValueError("rotation needs a square topology")
    return np.rot90(t, quarter_turns).copy()


def mirror(t: np.ndarray, axis: int) -> np.ndarray:
    """Concatenate ``t`` with its mirror image along ``axis``, then take the centred window of the original size.

    The window straddles the seam, so the result is symmetric about its centre line.
    """
    both = np.concatenate([t, np.flip(t, axis=axis)], axis=axis)
    n = t.shape[axis]
    start = n // 2
    idx = [slice(None), slice(None)]
    idx[axis] = slice(start, start + n)
    return both[tuple(idx)].copy()


def concat_crop(tiles: Sequence[np.ndarray], r: int, c: int) -> np.ndarray:
    """Tile four equally sized topologies 2x2 (row-major, row 0 at the bottom) and crop at ``(r, c)``."""
    a, b, cc, d = tiles
    big = np.block([[a, b], [cc, d]])
    n, m = a.shape
    if not (0 <= r <= n and 0 <= c <= m):
        raise ValueError("crop offset outside the tiled matrix")
    return big[r : r + n, c : c + m].copy()


def _gate(t: np.ndarray, rules: DesignRules, rng) -> bool:
    """Pre-filter plus a successful solve from a random start."""
    if not drc.prefilter(t):
        return False
    cs = legalize.extract_constraints(t)
    try:
        legalize.solve(cs, rules, legalize.init_random(cs, rules.for_side(max(t.shape)), rng))
    except legalize.SolveFailure:
        return False
    return True


def augment(t, cfg: AugmentConfig, rules: DesignRules, rng, library: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Candidates derived from ``t`` that pass the pre-filter and the legality gate.

    Each kind is proposed independently with its probability: a horizontal or
    vertical flip, a rotation by 90/180/270 degrees, a symmetric mirror, and a
    concatenate-and-crop with three partners drawn uniformly from ``library``
    (``t`` itself when no library is given).
    """
    t = np.asarray(t, dtype=np.uint8)
    candidates = []
    if rng.random() < cfg.p_flip:
        candidates.append(flip(t, int(rng.integers(2))))
    if rng.random() < cfg.p_rotate:
        candidates.append(rotate(t, int(rng.integers(1, 4))))
    if rng.random() < cfg.p_mirror:
        candidates.append(mirror(t, int(rng.integers(2))))
    if rng.random() < cfg.p_concat:
        pool = list(library) if library else [t]
        partners = [np.asarray(pool[int(rng.integers(len(pool)))], dtype=np.uint8) for _ in range(3)]
        if all(p.shape == t.shape for p in partners):
            r = int(rng.integers(0, t.shape[0] + 1))
            c = int(rng.integers(0, t.shape[1] + 1))
            candidates.append(concat_crop([t] + partners, r, c))
    return [cand for cand in candidates if _gate(cand, rules, rng)]


# -- diversity -----------------------------------------------------------------------


def _complexities(library) -> list[Complexity]:
    out = []
    for item in library:
        if isinstance(item, SquishPattern):
            out.append(complexity(item))
        elif isinstance(item, Complexity):
            out.append(item)
        else:
            out.append(topology_complexity(item))
    return out


def _entropy(counts) -> float:
    counts = np.asarray(list(counts), dtype=np.float64)
    p = counts / counts.sum()
    return float(max(0.0, -np.sum(p * np.log2(p))))


def diversity(library) -> float:
    """Shannon entropy (bits) of the complexity distribution of ``library``.

    Items may be squish patterns, bare topology matrices or complexities.
    """
    comps = _complexities(library)
    if not comps:
        raise ValueError("diversity of an empty library is undefined")
    return _entropy(Counter(comps).values())


@dataclass(frozen=True)
class LibraryStats:
    histogram: dict[Complexity, int]

    @property
    def size(self) -> int:
        return sum(self.histogram.values())

    @property
    def diversity(self) -> float:
        return _entropy(self.histogram.values())

    def merge(self, other: "LibraryStats") -> "LibraryStats":
        merged = Counter(self.histogram)
        merged.update(other.histogram)
        return LibraryStats(dict(merged))

    def to_csv(self) -> str:
        rows = ["cx,cy,count"]
        for c in sorted(self.histogram, key=lambda c: (c.cx, c.cy)):
            rows.append(f"{c.cx},{c.cy},{self.histogram[c]}")
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        return json.dumps({"size": self.size, "diversity_bits": self.diversity}) + "\n"


def complexity_histogram(library) -> LibraryStats:
    comps = _complexities(library)
    if not comps:
        raise ValueError("empty library")
    return LibraryStats(dict(Counter(comps)))


def max_diversity(library) -> float:
    """Upper bound ``log2`` of the number of occupied complexity bins."""
    return math.log2(len(set(_complexities(library))))
