"""Dyadic cube families sized by the control function, and their smooth partition of unity.

Cubes live on a lattice anchored at the lower corner of the working box with
``scale`` equal to its longest side, so a cube is identified by integers
(level, index) and all adjacency questions are answered exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

from .jet import Jet

MAX_LEVEL = 20
DELTA_CUT_FACTOR = 1e-6


# bump profile


# Below this argument exp(-1/u) and all its low-order derivatives underflow to zero;
# treating it as exactly zero avoids 0 * inf in the jet arithmetic.
GLUE_FLOOR = 2e-3


def _glue(u: np.ndarray) -> np.ndarray:
    pos = u > GLUE_FLOOR
    return np.where(pos, np.exp(-1.0 / np.where(pos, u, 1.0)), 0.0)


def smooth_step(u: np.ndarray) -> np.ndarray:
    """0 for u <= 0, 1 for u >= 1, smooth in between."""
    a = _glue(u)
    b = _glue(1.0 - u)
    return a / (a + b)


def _glue_jet(u: Jet) -> Jet:
    pos = u.value > GLUE_FLOOR
    safe = Jet(u.space, np.where(pos[None, :], u.c, 1.0 + 0.0 * u.c))
    safe.c[0] = np.where(pos, u.value, 1.0)
    out = (-1.0 * safe.reciprocal()).exp()
    return Jet.where(pos, out, Jet.constant(u.space, np.zeros(u.npoints)))


def smooth_step_jet(u: Jet) -> Jet:
    a = _glue_jet(u)
    b = _glue_jet(1.0 - u)
    return a / (a + b)


@dataclass(frozen=True)
class BumpSpec:
    """phi = 1 on |t| <= plateau, 0 beyond support, smooth glue in between."""

    support: float
    plateau: float = 0.5

    @classmethod
    def for_dilation(cls, lam: float) -> "BumpSpec":
        return cls(support=lam / 2.0, plateau=0.5)

    def phi(self, t) -> np.ndarray:
        t = np.abs(np.asarray(t, dtype=float))
        return smooth_step((self.support - t) / (self.support - self.plateau))

    def phi_jet(self, t: Jet) -> Jet:
        sign = np.where(t.value < 0, -1.0, 1.0)
        a = t * sign
        return smooth_step_jet((self.support - a) * (1.0 / (self.support - self.plateau)))

    def product(self, pts, center, side) -> np.ndarray:
        t = (np.atleast_2d(pts) - center) / side
        return np.prod(self.phi(t), axis=-1)

    def product_jet(self, inputs: list[Jet], center: np.ndarray, side) -> Jet:
        out = None
        for i, inp in enumerate(inputs):
            factor = self.phi_jet((inp - center[..., i]) * (1.0 / side))
            out = factor if out is None else out * factor
        return out


# cubes


@dataclass(frozen=True)
class DyadicCube:
    level: int
    index: tuple[int, ...]
    scale: float

    @property
    def side(self) -> float:
        return self.scale * 2.0**-self.level

    def corner(self, origin=None) -> np.ndarray:
        base = np.zeros(len(self.index)) if origin is None else np.asarray(origin, dtype=float)
        return base + self.side * np.asarray(self.index, dtype=float)

    def center(self, origin=None) -> np.ndarray:
        return self.corner(origin) + 0.5 * self.side

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(i // 2 for i in self.index), self.scale)

    def children(self) -> list["DyadicCube"]:
        return [
            DyadicCube(self.level + 1, tuple(2 * i + o for i, o in zip(self.index, offs)), self.scale)
            for offs in product((0, 1), repeat=len(self.index))
        ]

    def contains_cube(self, other: "DyadicCube") -> bool:
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return all((j >> shift) == i for i, j in zip(self.index, other.index))


def closures_intersect(a: DyadicCube, b: DyadicCube) -> bool:
    """Exact test on integer lattice bounds brought to a common level."""
    top = max(a.level, b.level)
    sa, sb = 1 << (top - a.level), 1 << (top - b.level)
    for ia, ib in zip(a.index, b.index):
        lo_a, hi_a = ia * sa, (ia + 1) * sa
        lo_b, hi_b = ib * sb, (ib + 1) * sb
        if lo_a > hi_b or lo_b > hi_a:
            return False
    return True


def _unit_samples(n: int) -> np.ndarray:
    """Relative sample positions: the {0,1/2,1} lattice (corners, centre, faces) plus an interior 3^n grid."""
    outer = np.array(list(product((0.0, 0.5, 1.0), repeat=n)))
    inner = np.array(list(product((1 / 6, 0.5, 5 / 6), repeat=n)))
    pts = np.concatenate([outer, inner])
    return np.unique(pts, axis=0)


@dataclass
class UncoveredReport:
    uncovered_volume: float = 0.0
    dropped_volume: float = 0.0
    uncovered_cubes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "uncovered_volume": self.uncovered_volume,
            "dropped_volume": self.dropped_volume,
            "uncovered_cubes": [{"level": c.level, "index": list(c.index)} for c in self.uncovered_cubes],
        }


class Partition:
    def __init__(self, box, origin, scale, cubes, r_q, lam, nu, report, max_level, delta_cut):
        self.box = np.asarray(box, dtype=float)
        self.origin = np.asarray(origin, dtype=float)
        self.scale = float(scale)
        self.cubes: list[DyadicCube] = list(cubes)
        self.r_q = np.asarray(r_q, dtype=float)
        self.lam = float(lam)
        self.nu = float(nu)
        self.bump = BumpSpec.for_dilation(self.lam)
        self.report = report
        self.max_level = max_level
        self.delta_cut = delta_cut
        n = self.box.shape[0]
        self.n = n
        self.levels = np.array([c.level for c in self.cubes], dtype=int)
        self.indices = np.array([c.index for c in self.cubes], dtype=np.int64).reshape(len(self.cubes), n)
        self.sides = self.scale * 2.0 ** (-self.levels.astype(float))
        self.centers = self.origin + (self.indices + 0.5) * self.sides[:, None]
        self._build_lookup()

    def __len__(self):
        return len(self.cubes)

    # lookup

    def _key(self, idx: np.ndarray, level: int) -> np.ndarray:
        width = np.int64(1) << np.int64(level)
        key = np.zeros(idx.shape[0], dtype=np.int64)
        for a in range(self.n - 1, -1, -1):
            key = key * width + idx[:, a]
        return key

    def _build_lookup(self):
        self._levels = {}
        for level in np.unique(self.levels):
            ids = np.nonzero(self.levels == level)[0]
            keys = self._key(self.indices[ids], int(level))
            order = np.argsort(keys)
            self._levels[int(level)] = (keys[order], ids[order])

    def _find(self, idx: np.ndarray, level: int) -> np.ndarray:
        """Cube ids for lattice indices at a level, -1 where absent."""
        keys_sorted, ids_sorted = self._levels[level]
        width = 1 << level
        valid = np.all((idx >= 0) & (idx < width), axis=1)
        out = np.full(idx.shape[0], -1, dtype=np.int64)
        if not valid.any():
            return out
        keys = self._key(idx[valid], level)
        pos = np.searchsorted(keys_sorted, keys)
        pos = np.minimum(pos, len(keys_sorted) - 1)
        hit = keys_sorted[pos] == keys
        found = np.where(hit, ids_sorted[pos], -1)
        out[valid] = found
        return out

    def locate(self, pts: np.ndarray, dilation: float | None = None):
        """Pairs (point index, cube id) with the point in the closed dilated cube."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lam = self.lam if dilation is None else dilation
        pi_all, ci_all = [], []
        if not self.cubes:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        for level in self._levels:
            side = self.scale * 2.0**-level
            base = np.floor((pts - self.origin) / side).astype(np.int64)
            reach = int(math.ceil((lam - 1.0) / 2.0))
            for offs in product(range(-reach, reach + 1), repeat=self.n):
                cand = base + np.array(offs, dtype=np.int64)
                ids = self._find(cand, level)
                ok = ids >= 0
                if not ok.any():
                    continue
                pidx = np.nonzero(ok)[0]
                cid = ids[ok]
                inside = np.all(np.abs(pts[pidx] - self.centers[cid]) <= 0.5 * lam * self.sides[cid, None], axis=1)
                pi_all.append(pidx[inside])
                ci_all.append(cid[inside])
        if not pi_all:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        pi = np.concatenate(pi_all)
        ci = np.concatenate(ci_all)
        order = np.lexsort((ci, pi))
        return pi[order], ci[order]

    def covered(self, pts) -> np.ndarray:
        """Whether each point lies in some undilated cube."""
        pts = np.atleast_2d(pts)
        pi, _ = self.locate(pts, dilation=1.0)
        mask = np.zeros(pts.shape[0], dtype=bool)
        mask[pi] = True
        return mask

    # adjacency

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        """For each cube, ids of other cubes whose closures meet it."""
        edges = set()
        levels = sorted(self._levels)
        for level in levels:
            mine = np.nonzero(self.levels == level)[0]
            idx = self.indices[mine]
            for other in levels:
                if other > level:
                    break
                d = level - other
                lo = -((-idx) >> d) - 1 if d else idx - 1  # ceil(i / 2^d) - 1
                hi = (idx + 1) >> d
                span = int((hi - lo).max()) + 1
                for offs in product(range(span), repeat=self.n):
                    cand = lo + np.array(offs, dtype=np.int64)
                    inrange = np.all(cand <= hi, axis=1)
                    ids = self._find(np.where(inrange[:, None], cand, -1), other)
                    ok = (ids >= 0) & inrange & (ids != mine)
                    for a, b in zip(mine[ok], ids[ok]):
                        if a != b:
                            edges.add((min(a, b), max(a, b)))
        adj = [[] for _ in self.cubes]
        for a, b in sorted(edges):
            adj[a].append(b)
            adj[b].append(a)
        return [np.array(sorted(x), dtype=int) for x in adj]

    @cached_property
    def boundary(self) -> np.ndarray:
        """Cubes touching the boundary of the working box."""
        lo = self.centers - 0.5 * self.sides[:, None]
        hi = self.centers + 0.5 * self.sides[:, None]
        tol = 1e-12 * self.scale
        return np.any((lo <= self.box[:, 0] + tol) | (hi >= self.box[:, 1] - tol), axis=1)

    # bumps

    def raw_bumps(self, pts, pairs=None):
        pts = np.atleast_2d(pts)
        pi, ci = self.locate(pts) if pairs is None else pairs
        vals = np.prod(self.bump.phi((pts[pi] - self.centers[ci]) / self.sides[ci, None]), axis=1)
        return pi, ci, vals

    def normalized_bumps(self, pts, pairs=None):
        """(point idx, cube id, psi_j value) for every active pair."""
        pts = np.atleast_2d(pts)
        pi, ci, vals = self.raw_bumps(pts, pairs)
        total = np.zeros(pts.shape[0])
        np.add.at(total, pi, vals**2)
        denom = np.sqrt(total[pi])
        with np.errstate(invalid="ignore", divide="ignore"):
            psi = np.where(denom > 0, vals / np.where(denom > 0, denom, 1.0), 0.0)
        return pi, ci, psi

    def normalized_bump_jets(self, inputs: list[Jet], pairs=None):
        """Jets of psi_j at every active (point, cube) pair."""
        pts = np.stack([j.value for j in inputs], axis=1)
        pi, ci = self.locate(pts) if pairs is None else pairs
        local = [j.take(pi) for j in inputs]
        raw = self.bump.product_jet(local, self.centers[ci], self.sides[ci])
        sq = raw * raw
        total = np.zeros((sq.c.shape[0], pts.shape[0]))
        np.add.at(total.T, pi, sq.c.T)
        denom = Jet(raw.space, total[:, pi])
        positive = denom.value > 0
        safe = Jet(raw.space, np.where(positive[None, :], denom.c, 1.0))
        psi = raw * safe.power(-0.5)
        psi = Jet.where(positive, psi, Jet.constant(raw.space, np.zeros(len(pi))))
        return pi, ci, psi

    def to_json(self) -> dict:
        return {
            "scale": self.scale,
            "origin": self.origin.tolist(),
            "lambda": self.lam,
            "nu": self.nu,
            "cubes": [
                {"level": c.level, "index": list(c.index), "rQ": float(r)} for c, r in zip(self.cubes, self.r_q)
            ],
            "uncovered_volume": self.report.uncovered_volume,
            "dropped_volume": self.report.dropped_volume,
        }


def _check_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or box.shape[0] < 1:
        raise ValueError("box must be a list of (lo, hi) pairs")
    if np.any(~(box[:, 1] > box[:, 0])):
        raise ValueError("box is empty or degenerate")
    return box


EVAL_CHUNK = 65536


def build_partition(
    r,
    box,
    nu: float | None = None,
    lam: float = 1.25,
    max_level: int = MAX_LEVEL,
    delta_cut: float | None = None,
) -> Partition:
    """Top-down dyadic refinement keeping cubes with side <= nu/(2 sqrt n) * inf_Q r."""
    box = _check_box(box)
    if not (1.0 < lam < 1.5):
        raise ValueError(f"dilation lambda must lie in (1, 3/2), got {lam}")
    if max_level < 0:
        raise ValueError("max_level must be non-negative")
    nu = getattr(r, "nu", 0.05) if nu is None else nu
    n = box.shape[0]
    origin = box[:, 0].copy()
    scale = float(np.max(box[:, 1] - box[:, 0]))
    if delta_cut is None:
        delta_cut = DELTA_CUT_FACTOR * scale
    if delta_cut < 0:
        raise ValueError("delta_cut must be non-negative")
    factor = nu / (2.0 * math.sqrt(n)) * (1.0 - nu / 4.0)
    rel = _unit_samples(n)
    report = UncoveredReport()
    kept, kept_r = [], []
    frontier = np.zeros((1, n), dtype=np.int64)
    level = 0
    while len(frontier):
        side = scale * 2.0**-level
        corners = origin + frontier * side
        # Discard cubes lying entirely outside the box (non-square boxes).
        inside = np.all(corners < box[:, 1], axis=1)
        frontier, corners = frontier[inside], corners[inside]
        if not len(frontier):
            break
        pts = (corners[:, None, :] + rel[None, :, :] * side).reshape(-1, n)
        vals = np.concatenate([np.asarray(r.eval(pts[a:a + EVAL_CHUNK])) for a in range(0, len(pts), EVAL_CHUNK)])
        vals = vals.reshape(len(frontier), len(rel))
        r_min = vals.min(axis=1)
        r_q = r_min * (1.0 - nu / 4.0)
        passed = side <= factor * r_min
        for idx, rq in zip(frontier[passed], r_q[passed]):
            kept.append(DyadicCube(level, tuple(int(i) for i in idx), scale))
            kept_r.append(rq)
        failing = frontier[~passed]
        # Cubes where r stays below the cut are dropped instead of refined further.
        negligible = vals[~passed].max(axis=1) <= delta_cut
        if negligible.any() and level < max_level:
            report.dropped_volume += side**n * int(np.count_nonzero(negligible))
            failing = failing[~negligible]
        if level >= max_level:
            big = vals[~passed].max(axis=1) > delta_cut if len(failing) else np.zeros(0, dtype=bool)
            volume = side**n
            for idx, is_big in zip(failing, big):
                if is_big:
                    report.uncovered_volume += volume
                    report.uncovered_cubes.append(DyadicCube(level, tuple(int(i) for i in idx), scale))
                else:
                    report.dropped_volume += volume
            break
        if not len(failing):
            break
        offs = np.array(list(product((0, 1), repeat=n)), dtype=np.int64)
        frontier = (2 * failing[:, None, :] + offs[None, :, :]).reshape(-1, n)
        level += 1
    # Spatial order (lexicographic lower corner) so that ties in degree are broken along the box.
    order = sorted(range(len(kept)), key=lambda i: (tuple(x * 2.0**-kept[i].level for x in kept[i].index), kept[i].level))
    cubes = [kept[i] for i in order]
    r_q = [kept_r[i] for i in order]
    return Partition(box, origin, scale, cubes, r_q, lam, nu, report, max_level, delta_cut)


def psi(partition: Partition, j: int, x):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    pi, ci, vals = partition.normalized_bumps(pts)
    out = np.zeros(pts.shape[0])
    sel = ci == j
    out[pi[sel]] = vals[sel]
    return float(out[0]) if np.ndim(x) == 1 else out


def psi_derivative(partition: Partition, j: int, beta, x):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    beta = tuple(int(b) for b in beta)
    inputs = Jet.variables(pts, sum(beta))
    pi, ci, jets = partition.normalized_bump_jets(inputs)
    out = np.zeros(pts.shape[0])
    sel = ci == j
    out[pi[sel]] = jets.derivative(beta)[sel]
    return float(out[0]) if np.ndim(x) == 1 else out


def overlap_count(partition: Partition, x):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    pi, _ = partition.locate(pts)
    counts = np.bincount(pi, minlength=pts.shape[0])
    return int(counts[0]) if np.ndim(x) == 1 else counts


def partition_svg(partition: Partition, colors=None, size: int = 640) -> str:
    """Cube outlines of a planar partition, filled by colour class."""
    if partition.n != 2:
        raise ValueError("SVG output is only available for planar partitions")
    palette = [
        "#e6194b", "#3cb44b", "#ffe119", "#4363d8", "#f58231",
        "#911eb4", "#46f0f0", "#f032e6", "#bcf60c", "#fabebe",
        "#008080", "#e6beff", "#9a6324",
    ]
    box = partition.box
    span = float(np.max(box[:, 1] - box[:, 0]))
    k = size / span

    def tx(x):
        return (x - box[0, 0]) * k

    def ty(y):
        return size - (y - box[1, 0]) * k

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">']
    for j in range(len(partition)):
        lo = partition.centers[j] - 0.5 * partition.sides[j]
        w = partition.sides[j] * k
        fill = "none" if colors is None else palette[int(colors[j]) % len(palette)]
        parts.append(
            f'<rect x="{tx(lo[0]):.3f}" y="{ty(lo[1]) - w:.3f}" width="{w:.3f}" height="{w:.3f}" '
            f'fill="{fill}" fill-opacity="0.6" stroke="black" stroke-width="0.3"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
