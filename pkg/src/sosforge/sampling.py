"""Deterministic low-discrepancy sample schedules shared by every check."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc


def halton(dim: int, count: int, offset: int = 0) -> np.ndarray:
    """First ``count`` unscrambled Halton points in [0,1)^dim, skipping the origin.

    The schedule is a fixed prefix-stable sequence, so doubling ``count``
    only appends points.  Base 2 is left out: its points sit exactly on the
    faces of dyadic cubes.
    """
    if count <= 0:
        return np.zeros((0, dim))
    engine = qmc.Halton(d=dim + 1, scramble=False)
    engine.fast_forward(1 + offset)
    return engine.random(count)[:, 1:]


def box_points(box: np.ndarray, count: int, offset: int = 0) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    u = halton(box.shape[0], count, offset)
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def ball_points(center, radius: float, count: int) -> np.ndarray:
    """Prefix-stable points in the closed ball, the centre first."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.shape[0]
    pts = [center[None, :]]
    have = 1
    offset = 0
    while have < count:
        batch = 2 * (count - have) + 16
        u = 2.0 * halton(n, batch, offset) - 1.0
        offset += batch
        u = u[np.sum(u * u, axis=1) <= 1.0]
        pts.append(center + radius * u)
        have += len(u)
    return np.concatenate(pts)[:count]


def grid_points(box: np.ndarray, per_axis: int) -> np.ndarray:
    """Tensor grid of cell midpoints, ``per_axis`` per coordinate."""
    box = np.asarray(box, dtype=float)
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def local_pairs(box: np.ndarray, count: int, radii_fn, offset: int = 0):
    """Pairs (x, y) with x from the box schedule and |x - y| <= radii_fn(x).

    Both endpoints are kept inside the box; pairs leaving it are discarded.
    """
    box = np.asarray(box, dtype=float)
    n = box.shape[0]
    u = halton(2 * n + 1, count, offset)
    x = box[:, 0] + u[:, :n] * (box[:, 1] - box[:, 0])
    direction = 2.0 * u[:, n:2 * n] - 1.0
    norms = np.linalg.norm(direction, axis=1)
    norms[norms == 0] = 1.0
    direction /= norms[:, None]
    radii = np.asarray(radii_fn(x), dtype=float)
    y = x + (u[:, 2 * n] * radii)[:, None] * direction
    inside = np.all((y >= box[:, 0]) & (y <= box[:, 1]), axis=1)
    return x[inside], y[inside], int(np.count_nonzero(~inside))
