"""Local square-root construction over a cube partition, recursion in dimension, and recombination.

Every kept cube contributes either ``psi_j * sqrt(f)`` (root branch) or, in a
rotated frame where the last axis carries the largest curvature,

    psi_j * (z_n - X(z')) * sqrt(H)   and   psi_j * g'(z')  for each square g' of F,

where ``X`` minimises f along the last axis, ``F(z') = f(z', X(z'))`` and
``H`` is the averaged second derivative along the fiber, so that
``f - F = (z_n - X)^2 H``.  In one dimension ``F`` is a constant.  Pieces whose
supports cannot overlap share a final square.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .bounds import colors_needed, upper_count
from .control import DEFAULT_LAMBDA, DEFAULT_NU, TINY, ControlFunction, check_needed_condition, fit_omega
from .field import EVALUATION_TREE, AffineField, Field, PolynomialField, SmoothnessClass
from .graph import CubeGraph, adjacency_graph, welsh_powell_color
from .jet import Jet, jet_space, stack_points
from .sampling import box_points, grid_points
from .whitney import DELTA_CUT_FACTOR, MAX_LEVEL, BumpSpec, DyadicCube, Partition, _unit_samples, build_partition


# Relative size of rounding noise in remainders; parts of a remainder below it are dropped.
REMAINDER_NOISE = 1e-13
CURVATURE_FRACTION = 0.0625


class DecompositionError(RuntimeError):
    pass


class GateFailure(DecompositionError):
    pass


class NegativityError(DecompositionError):
    pass


class MinimizerFailure(DecompositionError):
    """The fiber minimum could not be bracketed; a smaller nu usually cures it."""

    def __init__(self, message: str, cube: int | None = None, depth: int = 0):
        super().__init__(message)
        self.cube = cube
        self.depth = depth


class BranchError(MinimizerFailure):
    pass


@dataclass(frozen=True)
class DecomposeConfig:
    nu: float = DEFAULT_NU
    lam: float = DEFAULT_LAMBDA
    omega: float | None = None
    max_level: int = MAX_LEVEL
    delta_cut: float | None = None
    omega_samples: int = 2000
    sub_omega_samples: int = 400
    quadrature_nodes: int = 12
    packing: bool = True
    auto_adapt: bool = True
    max_adapt: int = 4
    gate_samples: int = 2000
    nonneg_samples: int = 4000

    def __post_init__(self):
        if not (1.0 < self.lam < 1.5):
            raise ValueError(f"lambda must lie in (1, 3/2), got {self.lam}")
        if not self.nu > 0:
            raise ValueError("nu must be positive")


# small jet helpers


def sqrt_jet(j: Jet) -> Jet:
    """Square root with negative rounding noise clamped to zero; derivatives are zeroed where the value is 0."""
    positive = j.value > 0
    safe = Jet(j.space, np.where(positive[None, :], j.c, 1.0))
    out = safe.sqrt()
    return Jet.where(positive, out, Jet.constant(j.space, np.zeros(j.npoints)))


def _zeros(space, m: int) -> Jet:
    return Jet.constant(space, np.zeros(m))


def _frame_inputs(inputs: list[Jet], center: np.ndarray, rotation: np.ndarray) -> list[Jet]:
    """z = R^T (x - center) on jets."""
    n = len(inputs)
    shifted = [inp - center[m] for m, inp in enumerate(inputs)]
    out = []
    for i in range(n):
        acc = None
        for m in range(n):
            w = rotation[m, i]
            if w == 0.0:
                continue
            term = shifted[m] * w
            acc = term if acc is None else acc + term
        out.append(acc if acc is not None else shifted[0] * 0.0)
    return out


# branch classification and frames


def cube_r_value(r, cube: DyadicCube, origin, nu: float) -> float:
    """Sampled infimum of r over the cube, with the slow-variation safety factor."""
    n = len(cube.index)
    pts = cube.corner(origin) + _unit_samples(n) * cube.side
    return float(np.min(r.eval(pts))) * (1.0 - nu / 4.0)


def classify_cube(f: Field, r, cube: DyadicCube, origin=None, r_q: float | None = None) -> str:
    """'root' when f(center) >= omega nu r_Q^(k+alpha), otherwise 'min'."""
    if r_q is None:
        r_q = cube_r_value(r, cube, origin, r.nu)
    threshold = r.omega * r.nu * r_q ** float(f.smoothness.total)
    return "root" if float(f.eval(cube.center(origin))) >= threshold else "min"


def _complete_rotation(xi: np.ndarray) -> np.ndarray:
    n = len(xi)
    if n == 1:
        return np.array([[1.0]])
    if n == 2:
        return np.array([[xi[1], xi[0]], [-xi[0], xi[1]]])
    basis = np.column_stack([xi, np.eye(n)])
    q, _ = np.linalg.qr(basis)
    rest = q[:, 1:n]
    rot = np.column_stack([rest, xi])
    if np.linalg.det(rot) < 0:
        rot[:, 0] = -rot[:, 0]
    return rot


def principal_direction(f: Field, x) -> np.ndarray:
    """Orthogonal matrix whose last column is the unit direction of largest second derivative at x."""
    x = np.asarray(x, dtype=float)
    n = f.n
    hess = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            beta = tuple((a == i) + (b == i) for i in range(n))
            hess[a, b] = hess[b, a] = float(f.deriv(beta, x))
    vals, vecs = np.linalg.eigh(hess)
    if vals[-1] <= 0:
        raise BranchError(f"no positive curvature at {x.tolist()} (top Hessian eigenvalue {vals[-1]:.3e})")
    xi = vecs[:, -1].copy()
    tiny = 1e-14
    if xi[-1] < -tiny:
        xi = -xi
    elif abs(xi[-1]) <= tiny:
        xi[-1] = 0.0
        lead = next(v for v in xi if abs(v) > tiny)
        if lead < 0:
            xi = -xi
    return _complete_rotation(xi / np.linalg.norm(xi))


# fiber minimiser


class FiberMinimizer:
    """t -> frame(z', t) is minimised on [-half_width, half_width] for each z'.

    Results are memoised per z' on a grid of spacing ``cell / 256`` and reused as
    Newton starting points; every query is still solved to tolerance.
    """

    MAX_STEPS = 200

    def __init__(self, frame: Field, half_width: float, cell: float, r_q: float, cube: int | None = None, depth: int = 0):
        n = frame.n
        self.frame = frame
        if isinstance(frame, PolynomialField):
            self.slope = frame.partial(n - 1)
            self.curvature = self.slope.partial(n - 1)
        else:
            axis = np.zeros(n)
            axis[-1] = 1.0
            self.slope = frame.directional(axis)
            self.curvature = self.slope.directional(axis)
        self.half_width = float(half_width)
        self.quantum = float(cell) / 256.0
        s = frame.smoothness
        self.tol = 1e-12 * max(r_q, TINY) ** (float(s.total) - 1.0)
        # Fiber curvature the window argument relies on: a fixed fraction of r_Q^(k-2+alpha).
        self.min_curvature = CURVATURE_FRACTION * max(r_q, TINY) ** (float(s.total) - 2.0)
        self.cube = cube
        self.depth = depth
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.max_residual = 0.0

    @property
    def fiber_dim(self) -> int:
        return self.frame.n - 1

    def _stack(self, yp, t):
        return np.column_stack([yp, t])

    def _keys(self, yp):
        return list(map(tuple, np.round(yp / self.quantum).astype(np.int64).tolist()))

    def solve(self, y_prime) -> np.ndarray:
        yp = np.asarray(y_prime, dtype=float)
        if self.fiber_dim == 0:
            yp = yp.reshape(yp.shape[0] if yp.ndim == 2 else 1, 0)
        else:
            yp = yp.reshape(-1, self.fiber_dim)
        keys = self._keys(yp)
        with self._lock:
            guesses = np.array([self._cache.get(key, 0.0) for key in keys], dtype=float)
        out = self._bracketed_newton(yp, guesses)
        with self._lock:
            self._cache.update(zip(keys, out.tolist()))
        return out

    def window(self, yp) -> tuple[np.ndarray, np.ndarray]:
        m = yp.shape[0]
        lo = np.full(m, -self.half_width)
        hi = np.full(m, self.half_width)
        return lo, hi

    def _fail(self, what: str, yp, i: int, lo=None, hi=None):
        where = "" if lo is None else f" on [{lo[i]:.4g}, {hi[i]:.4g}]"
        raise MinimizerFailure(
            f"{what}{where} at z'={yp[i].tolist()} (cube {self.cube}, depth {self.depth}); decrease nu",
            cube=self.cube,
            depth=self.depth,
        )

    def _bracket(self, yp, lo, hi):
        """Walk downhill from the window point nearest 0 in doubling steps until the slope changes sign.

        The first sign change met this way encloses the local minimum closest to the cube centre.
        """
        w = self.half_width
        m = yp.shape[0]
        t0 = np.clip(np.zeros(m), lo, hi)
        g0 = np.asarray(self.slope.eval(self._stack(yp, t0)))
        direction = np.where(g0 > 0, -1.0, 1.0)
        left, right = lo.copy(), hi.copy()
        exact = np.abs(g0) <= self.tol
        left[exact] = right[exact] = t0[exact]
        prev = t0.copy()
        todo = np.nonzero(~exact)[0]
        for level in range(BRACKET_STEPS, -1, -1):
            if not len(todo):
                break
            cand = np.clip(t0[todo] + direction[todo] * w * 2.0**-level, lo[todo], hi[todo])
            g = np.asarray(self.slope.eval(self._stack(yp[todo], cand)))
            found = direction[todo] * g >= 0
            idx = todo[found]
            left[idx] = np.minimum(prev[idx], cand[found])
            right[idx] = np.maximum(prev[idx], cand[found])
            prev[todo] = cand
            todo = todo[~found]
        if len(todo):
            self._fail("no sign change of the fiber slope", yp, int(todo[0]), lo, hi)
        return left, right, exact

    def _bracketed_newton(self, yp, start) -> np.ndarray:
        """Newton steps kept inside a shrinking sign-change bracket; bisection whenever Newton leaves it."""
        w = self.half_width
        m = yp.shape[0]
        lo, hi = self.window(yp)
        if np.any(hi <= lo):
            self._fail("empty fiber window", yp, int(np.argmax(hi <= lo)))
        if m and np.all((start > lo) & (start < hi)):
            pts = self._stack(yp, start)
            g = np.asarray(self.slope.eval(pts))
            if np.all(np.abs(g) <= self.tol) and np.all(np.asarray(self.curvature.eval(pts)) > 0):
                self.max_residual = max(self.max_residual, float(np.max(np.abs(g))))
                return start.copy()
        lo, hi, exact = self._bracket(yp, lo, hi)
        inside = (start > lo) & (start < hi)
        t = np.where(inside, start, 0.5 * (lo + hi))
        residual = np.zeros(m)
        active = np.nonzero(~exact)[0]
        floor = 4e-16 * max(w, 1.0)
        for _ in range(self.MAX_STEPS):
            if not len(active):
                break
            pts = self._stack(yp[active], t[active])
            g = np.asarray(self.slope.eval(pts))
            d = np.asarray(self.curvature.eval(pts))
            residual[active] = np.abs(g)
            up = g > 0
            hi[active] = np.where(up, t[active], hi[active])
            lo[active] = np.where(up, lo[active], t[active])
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = t[active] - g / d
            ok = (d > 0) & (newton > lo[active]) & (newton < hi[active])
            proposal = np.where(ok, newton, 0.5 * (lo[active] + hi[active]))
            converged = np.abs(g) <= self.tol
            proposal = np.where(converged, t[active], proposal)
            step = np.abs(proposal - t[active])
            t[active] = proposal
            done = converged | (step <= floor) | (hi[active] - lo[active] <= floor)
            active = active[~done]
        self.max_residual = max(self.max_residual, float(residual.max()) if m else 0.0)
        return t

    def check_curvature(self, y_prime) -> None:
        """Raise unless the fiber curvature at each minimiser is at least ``min_curvature``."""
        yp = np.asarray(y_prime, dtype=float)
        yp = yp.reshape(len(yp), self.fiber_dim) if yp.ndim == 2 else yp.reshape(-1, self.fiber_dim)
        t = self.solve(yp)
        d = np.asarray(self.curvature.eval(self._stack(yp, t))).reshape(-1)
        weak = d < self.min_curvature
        if weak.any():
            i = int(np.argmax(weak))
            self._fail(f"fiber curvature {d[i]:.3e} below {self.min_curvature:.3e} at the minimum", yp, i)

    def jet(self, inputs: list[Jet], space=None, count: int | None = None) -> Jet:
        """Jet of the minimiser through Newton iteration on jets."""
        if inputs:
            space, count = inputs[0].space, inputs[0].npoints
            yp = stack_points(inputs)
        else:
            yp = np.zeros((count, 0))
        values = self.solve(yp)
        t = Jet.constant(space, values)
        steps = max(space.order, 1).bit_length() + 1
        for _ in range(steps if space.order else 0):
            args = list(inputs) + [t]
            g = self.slope.jet(args)
            d = self.curvature.jet(args)
            t = t - g / d
        return t


class RemainderField(Field):
    """F(z') = frame(z', X(z')) with X the fiber minimiser."""

    backend = EVALUATION_TREE

    def __init__(self, minimizer: FiberMinimizer):
        s = minimizer.frame.smoothness
        super().__init__(SmoothnessClass(s.n - 1, s.k, s.alpha))
        self.minimizer = minimizer

    def _eval(self, pts):
        x = self.minimizer.solve(pts)
        return np.maximum(np.asarray(self.minimizer.frame.eval(np.column_stack([pts, x]))), 0.0)

    def jet(self, inputs):
        t = self.minimizer.jet(inputs)
        return self.minimizer.frame.jet(list(inputs) + [t])


# Doubling steps used to bracket the nearest fiber minimum, starting from half_width / 2**BRACKET_STEPS.
BRACKET_STEPS = 8

# Remainders are trusted on the plateau box enlarged by this factor, the support of their cutoff extension.
EXTENSION = 4.0 / 3.0


class ExtendedRemainder(Field):
    """Remainder multiplied by a plateau cutoff: equal to F on the plateau box, zero outside 4/3 of it."""

    backend = EVALUATION_TREE

    def __init__(self, remainder: RemainderField, plateau: np.ndarray):
        super().__init__(remainder.smoothness)
        self.remainder = remainder
        self.plateau = np.asarray(plateau, dtype=float)
        self.bump = BumpSpec(support=EXTENSION, plateau=1.0)

    def jet(self, inputs):
        space, m = inputs[0].space, inputs[0].npoints
        cut = None
        for i, inp in enumerate(inputs):
            factor = self.bump.phi_jet(inp * (1.0 / self.plateau[i]))
            cut = factor if cut is None else cut * factor
        active = np.nonzero(cut.value > 0)[0]
        out = _zeros(space, m)
        if len(active):
            local = [inp.take(active) for inp in inputs]
            out.c[:, active] = (cut.take(active) * self.remainder.jet(local)).c
        return out

    def _eval(self, pts):
        return self.jet(Jet.variables(pts, 0)).value


@dataclass
class MinBranchData:
    center: np.ndarray
    rotation: np.ndarray
    half_width: float
    minimizer: FiberMinimizer
    plateau: np.ndarray
    remainder: RemainderField | None = None
    constant: float | None = None
    argmin: float | None = None

    @classmethod
    def build(cls, f: Field, center, side: float, r_q: float, omega: float, nu: float, lam: float = DEFAULT_LAMBDA,
              rotation=None, cube: int | None = None, depth: int = 0) -> "MinBranchData":
        center = np.asarray(center, dtype=float)
        rot = principal_direction(f, center) if rotation is None else np.asarray(rotation, dtype=float)
        half_width = math.sqrt(6.0 * omega * nu) * r_q
        frame = f.compose_affine(center, rot) if isinstance(f, PolynomialField) else AffineField(f, center, rot)
        minimizer = FiberMinimizer(frame, half_width, side, r_q, cube=cube, depth=depth)
        n = f.n
        plateau = 0.5 * lam * side * np.abs(rot).sum(axis=0)[: n - 1]
        data = cls(center, rot, half_width, minimizer, plateau)
        probes = _unit_samples(n - 1) * 2.0 - 1.0 if n > 1 else np.zeros((1, 0))
        minimizer.check_curvature(probes * plateau)
        if n == 1:
            x = float(minimizer.solve(np.zeros((1, 0)))[0])
            data.argmin = x
            data.constant = max(float(frame.eval(np.array([x]))), 0.0)
        else:
            data.remainder = RemainderField(minimizer)
        return data

    def signed_factor(self, frame_inputs: list[Jet], nodes: int = 12) -> Jet:
        """(z_n - X) * sqrt(H) with H the (1-t)-weighted mean of the fiber curvature between X and z_n."""
        space, m = frame_inputs[0].space, frame_inputs[0].npoints
        base = frame_inputs[:-1]
        if base:
            t = self.minimizer.jet(base)
        else:
            t = Jet.constant(space, np.full(m, self.argmin))
        gap = frame_inputs[-1] - t
        curvature = self.minimizer.curvature
        if isinstance(curvature, PolynomialField):
            # (1 - t) times a degree-d polynomial is integrated exactly by ceil((d + 2) / 2) nodes.
            nodes = max(1, (curvature.degree + 3) // 2)
        ts, ws = _unit_gauss(nodes)
        h = _zeros(space, m)
        for node, weight in zip(ts, ws):
            h = h + curvature.jet(base + [t + gap * node]) * (weight * (1.0 - node))
        return gap * sqrt_jet(h)


@lru_cache(maxsize=None)
def _unit_gauss(nodes: int):
    ts, ws = leggauss(nodes)
    return 0.5 * (ts + 1.0), 0.5 * ws


def implicit_minimizer(data: MinBranchData, y_prime) -> np.ndarray | float:
    """Fiber minimiser X(y') in the cube frame."""
    yp = np.asarray(y_prime, dtype=float)
    out = data.minimizer.solve(yp)
    return float(out[0]) if yp.ndim <= 1 and out.size == 1 else out


def remainder_field(data: MinBranchData) -> Field:
    if data.remainder is None:
        raise ValueError("one-dimensional cubes have a constant remainder")
    return ExtendedRemainder(data.remainder, data.plateau)


# the local decomposition tree


@dataclass
class CubeRecord:
    index: int
    branch: str
    r_q: float
    color: int
    slots: list
    data: MinBranchData | None = None
    sub: "LocalDecomposition | None" = None


def _clip_polygon(poly: np.ndarray, axis: int, bound: float, keep_below: bool) -> np.ndarray:
    out = []
    count = len(poly)
    for i in range(count):
        a, b = poly[i], poly[(i + 1) % count]
        ina = a[axis] <= bound if keep_below else a[axis] >= bound
        inb = b[axis] <= bound if keep_below else b[axis] >= bound
        if ina:
            out.append(a)
        if ina != inb:
            t = (bound - a[axis]) / (b[axis] - a[axis])
            out.append(a + t * (b - a))
    return np.array(out).reshape(-1, poly.shape[1])


class LocalDecomposition:
    """Squares of one field on one box; recursion lives in the min-branch cubes."""

    def __init__(self, field: Field, box, depth: int, control: ControlFunction, partition: Partition,
                 graph: CubeGraph, coloring, cubes: list[CubeRecord], config: DecomposeConfig):
        self.field = field
        self.box = np.asarray(box, dtype=float)
        self.depth = depth
        self.control = control
        self.partition = partition
        self.graph = graph
        self.coloring = coloring
        self.cubes = cubes
        self.config = config
        self.items = [(rec.index, s) for rec in cubes for s in range(len(rec.slots))]
        self.item_boxes = {item: self._item_boxes(*item) for item in self.items}
        self.class_of = self._assign_classes()
        self.n_classes = 1 + max(self.class_of.values(), default=-1)

    # supports

    def _dilate_box(self, j: int) -> np.ndarray:
        p = self.partition
        half = 0.5 * p.lam * p.sides[j]
        return np.column_stack([p.centers[j] - half, p.centers[j] + half])

    def _item_boxes(self, j: int, slot: int) -> list[np.ndarray]:
        rec = self.cubes[j]
        kind = rec.slots[slot]
        whole = self._dilate_box(j)
        if kind[0] != "recursive" or self.field.n != 2:
            return [whole]
        data = rec.data
        p = self.partition
        half = 0.5 * p.lam * p.sides[j]
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float) * half
        poly = corners @ data.rotation  # frame coordinates, rows z = R^T x
        out = []
        for lo_hi in rec.sub.class_boxes(kind[1]):
            a, b = lo_hi[0]
            piece = _clip_polygon(_clip_polygon(poly, 0, a, False), 0, b, True)
            if len(piece) < 3:
                continue
            xs = data.center + piece @ data.rotation.T
            box = np.column_stack([xs.min(axis=0), xs.max(axis=0)])
            box[:, 0] = np.maximum(box[:, 0], whole[:, 0])
            box[:, 1] = np.minimum(box[:, 1], whole[:, 1])
            out.append(box)
        return out

    def class_boxes(self, c: int) -> list[np.ndarray]:
        return [b for item, cls in self.class_of.items() if cls == c for b in self.item_boxes[item]]

    def _overlap(self, first, second) -> bool:
        tol = 1e-12 * self.partition.scale
        for a in first:
            for b in second:
                if np.all(a[:, 0] < b[:, 1] - tol) and np.all(b[:, 0] < a[:, 1] - tol):
                    return True
        return False

    # classes

    def _assign_classes(self) -> dict:
        by_slot = {}
        keys = sorted({(self.cubes[j].color, s) for j, s in self.items})
        dense = {key: i for i, key in enumerate(keys)}
        for j, s in self.items:
            by_slot[(j, s)] = dense[(self.cubes[j].color, s)]
        if not self.config.packing or not self.items:
            return by_slot
        position = {item: i for i, item in enumerate(self.items)}
        edges = []
        for j, rec in enumerate(self.cubes):
            mine = [(j, s) for s in range(len(rec.slots))]
            for a in range(len(mine)):
                for b in range(a + 1, len(mine)):
                    edges.append((position[mine[a]], position[mine[b]]))
            for other in self.partition.neighbors[j]:
                if other <= j:
                    continue
                for s in range(len(rec.slots)):
                    for t in range(len(self.cubes[other].slots)):
                        if self._overlap(self.item_boxes[(j, s)], self.item_boxes[(other, t)]):
                            edges.append((position[(j, s)], position[(other, t)]))
        packed = welsh_powell_color(CubeGraph.from_edges(len(self.items), edges))
        if packed.class_count < len(keys):
            return {item: packed.colors[position[item]] for item in self.items}
        return by_slot

    def class_members(self) -> list[list[tuple[int, tuple]]]:
        out = [[] for _ in range(self.n_classes)]
        for (j, s), c in self.class_of.items():
            out[c].append((j, self.cubes[j].slots[s]))
        return out

    # evaluation

    def evaluate(self, inputs: list[Jet], only=None) -> list[Jet]:
        space, m = inputs[0].space, inputs[0].npoints
        out = [_zeros(space, m) for _ in range(self.n_classes)]
        if not self.cubes or m == 0:
            return out
        pts = stack_points(inputs)
        pairs = self.partition.locate(pts)
        if not len(pairs[0]):
            return out
        pi, ci, psi = self.partition.normalized_bump_jets(inputs, pairs)
        order = np.argsort(ci, kind="stable")
        cs = ci[order]
        starts = np.flatnonzero(np.r_[True, cs[1:] != cs[:-1]])
        ends = np.r_[starts[1:], len(cs)]
        for a, b in zip(starts, ends):
            sel = order[a:b]
            j = int(cs[a])
            rec = self.cubes[j]
            wanted = [s for s in range(len(rec.slots)) if only is None or self.class_of[(j, s)] in only]
            if not wanted:
                continue
            where = pi[sel]
            local = [inp.take(where) for inp in inputs]
            weight = psi.take(sel)
            for s, inner in self._inner(rec, local, wanted).items():
                out[self.class_of[(j, s)]].c[:, where] += (weight * inner).c
        return out

    def piece_jets(self, inputs: list[Jet], j: int) -> dict:
        """slot -> jet of psi_j times that slot's local square root; zero away from the dilated cube."""
        space, m = inputs[0].space, inputs[0].npoints
        rec = self.cubes[j]
        out = {s: _zeros(space, m) for s in range(len(rec.slots))}
        pi, ci = self.partition.locate(stack_points(inputs))
        if not len(pi):
            return out
        pi, ci, psi = self.partition.normalized_bump_jets(inputs, (pi, ci))
        sel = np.nonzero(ci == j)[0]
        if not len(sel):
            return out
        where = pi[sel]
        local = [inp.take(where) for inp in inputs]
        weight = psi.take(sel)
        for s, inner in self._inner(rec, local, list(out)).items():
            out[s].c[:, where] = (weight * inner).c
        return out

    def _inner(self, rec: CubeRecord, local: list[Jet], wanted: list[int]) -> dict:
        out = {}
        kinds = {s: rec.slots[s] for s in wanted}
        if rec.branch == "root":
            out[wanted[0]] = sqrt_jet(self.field.jet(local))
            return out
        data = rec.data
        frame = _frame_inputs(local, data.center, data.rotation)
        subs = [s for s, kind in kinds.items() if kind[0] == "recursive"]
        sub_values = None
        if subs:
            classes = {rec.slots[s][1] for s in subs}
            sub_values = rec.sub.evaluate(frame[:-1], only=classes)
        for s, kind in kinds.items():
            if kind[0] == "min":
                out[s] = data.signed_factor(frame, self.config.quadrature_nodes)
            elif kind[0] == "const":
                out[s] = Jet.constant(local[0].space, np.full(local[0].npoints, math.sqrt(data.constant)))
            else:
                out[s] = sub_values[kind[1]]
        return out

    # bookkeeping

    def branch_counts(self) -> dict:
        counts = {"root": 0, "min": 0}
        for rec in self.cubes:
            counts[rec.branch] += 1
        sub = [rec.sub.branch_counts() for rec in self.cubes if rec.sub is not None]
        counts["recursive_root"] = sum(c["root"] + c.get("recursive_root", 0) for c in sub)
        counts["recursive_min"] = sum(c["min"] + c.get("recursive_min", 0) for c in sub)
        return counts

    def uncovered_volume(self) -> float:
        return self.partition.report.uncovered_volume

    def max_minimizer_residual(self) -> float:
        best = 0.0
        for rec in self.cubes:
            if rec.data is not None:
                best = max(best, rec.data.minimizer.max_residual)
            if rec.sub is not None:
                best = max(best, rec.sub.max_minimizer_residual())
        return best


def _noise_cut(f_scale: float, total: float) -> float:
    """Control level below which a remainder is indistinguishable from rounding noise of the top field."""
    return (REMAINDER_NOISE * f_scale) ** (1.0 / total)


def _build(field: Field, box, cfg: DecomposeConfig, depth: int, f_scale: float = 1.0) -> LocalDecomposition:
    s = field.smoothness
    n = s.n
    nu = cfg.nu
    total = float(s.total)
    box = np.asarray(box, dtype=float)
    if depth == 0:
        cut = cfg.delta_cut
    else:
        cut = max(DELTA_CUT_FACTOR * float(np.max(box[:, 1] - box[:, 0])), _noise_cut(f_scale, total))
    base = ControlFunction(field, nu, 1.0)
    if depth == 0 and cfg.omega is not None:
        omega = cfg.omega
    else:
        samples = cfg.omega_samples if depth == 0 else cfg.sub_omega_samples
        omega = fit_omega(field, nu, box, samples, base, floor=cut or 0.0)
    control = base.with_omega(omega)
    partition = build_partition(control, box, nu, cfg.lam, cfg.max_level, cut)
    graph = adjacency_graph(partition)
    coloring = welsh_powell_color(graph)
    total = float(s.total)
    records = []
    centers_value = np.asarray(field.eval(partition.centers)) if len(partition) else np.zeros(0)
    for j in range(len(partition)):
        r_q = float(partition.r_q[j])
        threshold = omega * nu * r_q**total
        color = coloring.colors[j]
        if centers_value[j] >= threshold:
            records.append(CubeRecord(j, "root", r_q, color, [("root",)]))
            continue
        data = MinBranchData.build(field, partition.centers[j], float(partition.sides[j]), r_q, omega, nu, cfg.lam,
                                   cube=j, depth=depth)
        if n == 1:
            slots = [("min",)] + ([("const",)] if data.constant > 0 else [])
            records.append(CubeRecord(j, "min", r_q, color, slots, data))
            continue
        sub_box = np.column_stack([-data.plateau, data.plateau])
        sub = _build(data.remainder, sub_box, cfg, depth + 1, f_scale)
        slots = [("min",)] + [("recursive", c) for c in range(sub.n_classes)]
        records.append(CubeRecord(j, "min", r_q, color, slots, data, sub))
    return LocalDecomposition(field, box, depth, control, partition, graph, coloring, records, cfg)


# public result types


class SquareTerm(Field):
    """One final square root g_c, evaluated lazily through its decomposition."""

    backend = EVALUATION_TREE

    def __init__(self, decomposition: "Decomposition", index: int, provenance: tuple, color: int | None):
        super().__init__(decomposition.field.smoothness)
        self.decomposition = decomposition
        self.index = index
        self.provenance = provenance
        self.color = color

    def jet(self, inputs):
        return self.decomposition.evaluate_jets(inputs, only={self.index})[self.index]

    def _eval(self, pts):
        return self.jet(Jet.variables(pts, 0)).value

    def pieces(self) -> list[dict]:
        return [dict(p) for p in self.provenance]


def _members_provenance(local: LocalDecomposition, members, depth: int) -> tuple:
    out = []
    for j, kind in members:
        tag = "recursive" if kind[0] == "recursive" else kind[0]
        entry = {"cube": int(j), "branch": tag, "depth": depth}
        if kind[0] == "recursive":
            entry["subclass"] = int(kind[1])
        out.append(entry)
    return tuple(out)


@dataclass
class Decomposition:
    field: Field
    box: np.ndarray
    config: DecomposeConfig
    local: LocalDecomposition | None
    diagnostics: dict = field(default_factory=dict)
    root_term: Field | None = None
    terms: list = field(default_factory=list)

    def __post_init__(self):
        if self.root_term is not None:
            self.terms = [self.root_term]
        elif self.local is not None:
            members = self.local.class_members()
            self.terms = []
            for c, group in enumerate(members):
                colors = {self.local.cubes[j].color for j, _ in group}
                color = colors.pop() if len(colors) == 1 else None
                self.terms.append(SquareTerm(self, c, _members_provenance(self.local, group, 0), color))

    @property
    def class_count(self) -> int:
        return len(self.terms)

    @property
    def smoothness(self) -> SmoothnessClass:
        return self.field.smoothness

    def evaluate_jets(self, inputs: list[Jet], only=None) -> list[Jet]:
        if self.root_term is not None:
            return [self.root_term.jet(inputs)]
        if self.local is None:
            return []
        return self.local.evaluate(inputs, only)

    def evaluate(self, points, only=None) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        jets = self.evaluate_jets(Jet.variables(pts, 0), only)
        if not jets:
            return np.zeros((0, pts.shape[0]))
        return np.stack([j.value for j in jets])

    def sum_of_squares(self, points) -> np.ndarray:
        vals = self.evaluate(points)
        return np.sum(vals**2, axis=0)

    def certified(self, points) -> np.ndarray:
        """Points where the construction claims exactness: covered by a kept cube with r above the cut."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.root_term is not None:
            return np.ones(pts.shape[0], dtype=bool)
        if self.local is None:
            return np.zeros(pts.shape[0], dtype=bool)
        p = self.local.partition
        r = np.asarray(self.local.control.eval(pts))
        return p.covered(pts) & (r > p.delta_cut)

    def manifest(self) -> dict:
        s = self.smoothness
        classes = []
        for term in self.terms:
            entry = {"index": term.index, "terms": list(term.pieces())} if isinstance(term, SquareTerm) else {
                "index": 0, "terms": [{"cube": None, "branch": "sqrt", "depth": 0}]}
            entry["color"] = getattr(term, "color", None)
            classes.append(entry)
        return {
            "n": s.n,
            "k": s.k,
            "alpha": str(s.alpha),
            "box": self.box.tolist(),
            "classes": classes,
            "diagnostics": self.diagnostics,
        }

    def to_csv(self, points) -> str:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = self.evaluate(pts)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(pts.shape[1])] + [f"g{c}" for c in range(len(vals))])
        for i in range(pts.shape[0]):
            writer.writerow([repr(float(v)) for v in pts[i]] + [repr(float(v)) for v in vals[:, i]])
        return buf.getvalue()


class SqrtTerm(Field):
    """sqrt(f), the single square for once-differentiable f."""

    backend = EVALUATION_TREE

    def __init__(self, f: Field):
        super().__init__(f.smoothness)
        self.source = f
        self.index = 0
        self.color = 0
        self.provenance = ({"cube": None, "branch": "sqrt", "depth": 0},)

    def jet(self, inputs):
        return sqrt_jet(self.source.jet(inputs))

    def _eval(self, pts):
        return np.sqrt(np.maximum(np.asarray(self.source.eval(pts)), 0.0))

    def pieces(self):
        return [dict(p) for p in self.provenance]


def _check_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(~(box[:, 1] > box[:, 0])):
        raise ValueError("box must be a non-degenerate list of (lo, hi) pairs")
    return box


def check_nonnegative(f: Field, box, samples: int = 4000) -> float:
    """Smallest sampled value; raises when clearly negative."""
    box = _check_box(box)
    pts = np.concatenate([box_points(box, samples), grid_points(box, max(2, int(round(samples ** (1.0 / box.shape[0])))))])
    vals = np.asarray(f.eval(pts))
    low = float(vals.min())
    if low < -1e-12 * (1.0 + float(np.abs(vals).max())):
        i = int(np.argmin(vals))
        raise NegativityError(f"f is negative ({low:.3e}) at {pts[i].tolist()}")
    return low


def sqrt_field(f: Field, box=None, samples: int = 4000) -> SqrtTerm:
    if f.smoothness.k != 1:
        raise ValueError("the direct square root is the k = 1 construction")
    if box is not None:
        check_nonnegative(f, box, samples)
    return SqrtTerm(f)


def class_bound(n: int) -> int:
    """Classes the recombination may use: chi * (1 + classes one dimension down), with 4 constructive classes in 1D."""
    if n == 1:
        return 2 * 2
    return colors_needed(n) * (class_bound(n - 1) + 1)


def decompose(f: Field, box, config: DecomposeConfig | None = None) -> Decomposition:
    cfg = config or DecomposeConfig()
    box = _check_box(box)
    s = f.smoothness
    if box.shape[0] != s.n:
        raise ValueError("box dimension does not match the field")
    if s.n not in (1, 2, 3):
        raise ValueError("dimensions 1 to 3 are supported")
    low = check_nonnegative(f, box, cfg.nonneg_samples)
    diagnostics = {"min_sampled_f": low}
    if s.k == 1:
        diagnostics.update({"path": "sqrt", "class_count": 1})
        return Decomposition(f, box, cfg, None, diagnostics, root_term=SqrtTerm(f))
    if s.k >= 4:
        if s.n != 2:
            raise GateFailure("k >= 4 is supported in two dimensions only")
        if not check_needed_condition(f, box, cfg.gate_samples):
            raise GateFailure("the k >= 4 growth condition fails on this box")
        diagnostics["gate"] = "passed"
    attempts = []
    current = cfg
    while True:
        try:
            local = _build(f, box, current, 0, 1.0 + max(low, float(np.max(f.eval(box_points(box, cfg.nonneg_samples))))))
            break
        except MinimizerFailure as exc:
            attempts.append({"nu": current.nu, "cube": exc.cube, "depth": exc.depth, "message": str(exc)})
            if not cfg.auto_adapt or len(attempts) > cfg.max_adapt:
                raise
            current = replace(current, nu=current.nu / 2.0)
    diagnostics.update(
        {
            "path": "pipeline",
            "nu": current.nu,
            "omega": local.control.omega,
            "lambda": current.lam,
            "cubes": len(local.partition),
            "colors": local.coloring.class_count,
            "class_count": local.n_classes,
            "class_bound_recombination": class_bound(s.n),
            "class_bound_counting": upper_count(s.n),
            "branches": local.branch_counts(),
            "uncovered_volume": local.uncovered_volume(),
            "dropped_volume": local.partition.report.dropped_volume,
            "max_minimizer_residual": local.max_minimizer_residual(),
            "packing": current.packing,
            "adaptations": attempts,
        }
    )
    return Decomposition(f, box, current, local, diagnostics)
