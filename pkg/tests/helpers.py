"""Shared generators and oracles for the test suite."""

import numpy as np

from patgen.geometry import Layout


def random_layout(rng, extent=2048, n_polygons=None, grid=8):
    """Rectangles, L-shapes and framed rectangles (outer ring plus hole ring) on a coarse grid.

    Shapes never overlap but may touch along edges or at corners, which
    exercises merging and corner cases of the codec.
    """
    n = int(rng.integers(1, 9)) if n_polygons is None else n_polygons
    boxes, rings = [], []
    tries = 0
    while len(boxes) < n and tries < 500:
        tries += 1
        w = int(rng.integers(2, 64)) * grid
        h = int(rng.integers(2, 64)) * grid
        x0 = int(rng.integers(0, (extent - w) // grid + 1)) * grid
        y0 = int(rng.integers(0, (extent - h) // grid + 1)) * grid
        x1, y1 = x0 + w, y0 + h
        if any(x0 < b[2] and b[0] < x1 and y0 < b[3] and b[1] < y1 for b in boxes):
            continue
        boxes.append((x0, y0, x1, y1))
        kind = rng.integers(3) if w >= 4 * grid and h >= 4 * grid else 0
        if kind == 0:
            rings.append(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))
        elif kind == 1:
            cx = x0 + int(rng.integers(1, w // grid)) * grid
            cy = y0 + int(rng.integers(1, h // grid)) * grid
            rings.append(((x0, y0), (x1, y0), (x1, cy), (cx, cy), (cx, y1), (x0, y1)))
        else:
            rings.append(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))
            ix0, iy0 = x0 + grid, y0 + grid
            ix1, iy1 = x1 - grid, y1 - grid
            rings.append(((ix0, iy0), (ix0, iy1), (ix1, iy1), (ix1, iy0)))
    return Layout(extent, extent, tuple(rings))


def brute_posterior(xk, x0, k, m, betas):
    """``q(x_{k-m} = s | x_k, x_0)`` for s in (0, 1) by explicit 2x2 matrix products."""

    def Q(b):
        return np.array([[1 - b, b], [b, 1 - b]])

    prev = np.eye(2)
    for i in range(1, k - m + 1):
        prev = prev @ Q(betas[i - 1])
    step = np.eye(2)
    for i in range(k - m + 1, k + 1):
        step = step @ Q(betas[i - 1])
    full = prev @ step
    joint = np.array([prev[x0, s] * step[s, xk] for s in (0, 1)])
    return joint / full[x0, xk]


def tv_to_uniform(samples, patterns):
    """Total variation between the empirical distribution of ``samples`` and uniform over ``patterns``."""
    keys = [np.asarray(s, dtype=np.uint8).tobytes() for s in samples]
    counts = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    n = len(keys)
    target = {np.asarray(p, dtype=np.uint8).tobytes(): 1.0 / len(patterns) for p in patterns}
    support = set(counts) | set(target)
    return 0.5 * sum(abs(counts.get(s, 0) / n - target.get(s, 0.0)) for s in support)


# criterion number -> (passed, one-line detail); filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(number, title, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = (passed, line)
    print(line)
    return passed
