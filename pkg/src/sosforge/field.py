"""Function representations with derivative oracles.

Three backends share one interface:

* ``polynomial-exact``: sparse rational polynomials, differentiated symbolically.
* ``closure-with-finite-difference``: an arbitrary callable with iterated
  second-order central differences.
* ``evaluation-tree``: expressions over :class:`~sosforge.jet.Jet` values,
  differentiated through the product and chain rules.

Points are passed either as a single vector of shape (n,) or as an array of
shape (m, n); results follow the same convention (float or (m,) array).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import comb, factorial

import numpy as np

from .jet import Jet, jet_space, multi_factorial, multi_indices, stack_points
from .sampling import ball_points

POLYNOMIAL = "polynomial-exact"
FINITE_DIFFERENCE = "closure-with-finite-difference"
EVALUATION_TREE = "evaluation-tree"


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value).strip())


@dataclass(frozen=True)
class SmoothnessClass:
    n: int
    k: int
    alpha: Fraction

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_fraction(self.alpha))
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.n}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"derivative order must be an integer >= 1, got {self.k}")
        if not (0 < self.alpha <= 1):
            raise ValueError(f"Hoelder exponent must lie in (0, 1], got {self.alpha}")

    @property
    def total(self) -> Fraction:
        """The regularity index k + alpha."""
        return self.k + self.alpha

    @property
    def half_order(self) -> tuple[int, Fraction]:
        """Integer part and Hoelder exponent of the half-regular space C^{(k+alpha)/2}."""
        whole = self.k // 2
        return whole, self.total / 2 - whole

    def lowered(self) -> "SmoothnessClass":
        return SmoothnessClass(self.n - 1, self.k, self.alpha)


def _points(x, n: int):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != n:
            raise ValueError(f"expected a point of length {n}, got shape {arr.shape}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != n:
        raise ValueError(f"expected points of shape (m, {n}), got {arr.shape}")
    return arr, False


def _check_beta(beta, n: int) -> tuple[int, ...]:
    beta = tuple(int(b) for b in beta)
    if len(beta) != n or any(b < 0 for b in beta):
        raise ValueError(f"invalid multi-index {beta} for dimension {n}")
    return beta


def _finish(values: np.ndarray, scalar: bool):
    return float(values[0]) if scalar else values


def taylor_compose(derivs: dict, inputs: list[Jet]) -> Jet:
    """Jet of g(inputs) from the derivatives of g at the input values."""
    space = inputs[0].space
    powers = []
    for inp in inputs:
        d = inp.copy()
        d.c[0] = 0.0
        row = [Jet.constant(space, np.ones(inp.npoints)), d]
        for _ in range(2, space.order + 1):
            row.append(row[-1] * d)
        powers.append(row)
    out = Jet.constant(space, np.zeros(inputs[0].npoints))
    for beta, values in derivs.items():
        if sum(beta) > space.order:
            continue
        term = Jet.constant(space, np.asarray(values, dtype=float) / multi_factorial(beta))
        for i, b in enumerate(beta):
            if b:
                term = term * powers[i][b]
        out = out + term
    return out


class Field:
    """Base class: a real function on R^n with smoothness metadata."""

    backend = ""

    def __init__(self, smoothness: SmoothnessClass):
        self.smoothness = smoothness

    @property
    def n(self) -> int:
        return self.smoothness.n

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        pts, scalar = _points(x, self.n)
        return _finish(self._eval(pts), scalar)

    def deriv(self, beta, x):
        beta = _check_beta(beta, self.n)
        pts, scalar = _points(x, self.n)
        if sum(beta) == 0:
            return _finish(self._eval(pts), scalar)
        return _finish(self._deriv(beta, pts), scalar)

    def _eval(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _deriv(self, beta, pts: np.ndarray) -> np.ndarray:
        order = sum(beta)
        return self.jet(Jet.variables(pts, order)).derivative(beta)

    def jet(self, inputs: list[Jet]) -> Jet:
        """Compose this field with input jets via its Taylor expansion."""
        x0 = stack_points(inputs)
        order = inputs[0].space.order
        derivs = {beta: self.deriv(beta, x0) for d in range(order + 1) for beta in multi_indices(self.n, d)}
        return taylor_compose(derivs, inputs)

    def partial(self, i: int) -> "Field":
        return PartialField(self, i)

    def derivative_table(self, pts, order: int) -> dict:
        """All derivatives of total order <= ``order`` at points of shape (m, n)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.backend == FINITE_DIFFERENCE:
            return {b: np.asarray(self.deriv(b, pts)) for d in range(order + 1) for b in multi_indices(self.n, d)}
        jet = self.jet(Jet.variables(pts, order))
        return {b: jet.derivative(b) for b in jet.space.indices}


class PartialField(Field):
    """First partial derivative of another field along one coordinate."""

    def __init__(self, base: Field, axis: int):
        s = base.smoothness
        super().__init__(SmoothnessClass(s.n, max(s.k - 1, 1), s.alpha))
        self.base = base
        self.axis = axis
        self.backend = base.backend

    def _shift(self, beta):
        b = list(beta)
        b[self.axis] += 1
        return tuple(b)

    def _eval(self, pts):
        return np.asarray(self.base.deriv(self._shift((0,) * self.n), pts))

    def _deriv(self, beta, pts):
        return np.asarray(self.base.deriv(self._shift(beta), pts))

    def jet(self, inputs):
        order = inputs[0].space.order
        x0 = stack_points(inputs)
        if self.base.backend == FINITE_DIFFERENCE:
            return Field.jet(self, inputs)
        base = self.base.jet(Jet.variables(x0, order + 1))
        derivs = {beta: base.derivative(self._shift(beta)) for beta in jet_space(self.n, order).indices}
        return taylor_compose(derivs, inputs)


class PolynomialField(Field):
    backend = POLYNOMIAL

    def __init__(self, coefficients: dict, smoothness: SmoothnessClass):
        super().__init__(smoothness)
        terms = {}
        for exps, coef in coefficients.items():
            exps = _check_beta(exps, smoothness.n)
            value = coef if isinstance(coef, float) else as_fraction(coef)
            if value != 0:
                terms[exps] = terms.get(exps, 0) + value
        self.terms = {e: c for e, c in terms.items() if c != 0}
        self._lock = threading.Lock()
        self._derived: dict[tuple[int, ...], PolynomialField] = {}

    @cached_property
    def _arrays(self):
        if not self.terms:
            return np.zeros((0, self.n), dtype=int), np.zeros(0)
        exps = np.array(list(self.terms.keys()), dtype=int).reshape(len(self.terms), self.n)
        coefs = np.array([float(c) for c in self.terms.values()])
        return exps, coefs

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def _eval(self, pts):
        exps, coefs = self._arrays
        if len(coefs) == 0:
            return np.zeros(pts.shape[0])
        out = np.zeros(pts.shape[0])
        for e, c in zip(exps, coefs):
            term = np.full(pts.shape[0], c)
            for i, p in enumerate(e):
                if p:
                    term = term * pts[:, i] ** p
            out += term
        return out

    def derivative_polynomial(self, beta) -> "PolynomialField":
        beta = _check_beta(beta, self.n)
        with self._lock:
            cached = self._derived.get(beta)
        if cached is not None:
            return cached
        out = {}
        for exps, coef in self.terms.items():
            if any(e < b for e, b in zip(exps, beta)):
                continue
            scale = 1
            for e, b in zip(exps, beta):
                scale *= factorial(e) // factorial(e - b)
            new = tuple(e - b for e, b in zip(exps, beta))
            out[new] = out.get(new, 0) + coef * scale
        result = PolynomialField(out, self.smoothness)
        with self._lock:
            self._derived[beta] = result
        return result

    def _deriv(self, beta, pts):
        return self.derivative_polynomial(beta)._eval(pts)

    def partial(self, i: int) -> "PolynomialField":
        beta = tuple(1 if j == i else 0 for j in range(self.n))
        return self.derivative_polynomial(beta)

    def jet(self, inputs: list[Jet]) -> Jet:
        space = inputs[0].space
        m = inputs[0].npoints
        out = Jet.constant(space, np.zeros(m))
        if not self.terms:
            return out
        top = [max(e[i] for e in self.terms) for i in range(self.n)]
        powers = []
        for i, inp in enumerate(inputs):
            row = [Jet.constant(space, np.ones(m))]
            for _ in range(top[i]):
                row.append(row[-1] * inp)
            powers.append(row)
        for exps, coef in self.terms.items():
            term = None
            for i, p in enumerate(exps):
                if p:
                    term = powers[i][p] if term is None else term * powers[i][p]
            if term is None:
                out = out + float(coef)
            else:
                out = out + term * float(coef)
        return out

    def compose_affine(self, center, matrix) -> "PolynomialField":
        """The polynomial z -> self(center + matrix @ z), with floating-point coefficients."""
        center = np.asarray(center, dtype=float)
        matrix = np.asarray(matrix, dtype=float)
        n = self.n
        zero = (0,) * n
        linear = []
        for i in range(n):
            poly = {zero: float(center[i])}
            for j in range(n):
                if matrix[i, j] != 0.0:
                    e = tuple(1 if a == j else 0 for a in range(n))
                    poly[e] = poly.get(e, 0.0) + float(matrix[i, j])
            linear.append(poly)
        powers = [[{zero: 1.0}] for _ in range(n)]
        out: dict = {}
        for exps, coef in self.terms.items():
            term = {zero: float(coef)}
            for i, p in enumerate(exps):
                while len(powers[i]) <= p:
                    powers[i].append(_poly_mul(powers[i][-1], linear[i]))
                if p:
                    term = _poly_mul(term, powers[i][p])
            for e, c in term.items():
                out[e] = out.get(e, 0.0) + c
        return PolynomialField({e: c for e, c in out.items() if c != 0.0}, self.smoothness)

    def to_json(self) -> dict:
        def fmt(c):
            c = as_fraction(c)
            return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"

        return {
            "dim": self.n,
            "k": self.smoothness.k,
            "alpha": fmt(self.smoothness.alpha),
            "terms": [{"exps": list(e), "coef": fmt(c)} for e, c in sorted(self.terms.items(), reverse=True)],
        }

    @classmethod
    def from_json(cls, doc) -> "PolynomialField":
        if isinstance(doc, str):
            doc = json.loads(doc)
        smoothness = SmoothnessClass(int(doc["dim"]), int(doc["k"]), as_fraction(doc["alpha"]))
        coefs = {}
        for term in doc.get("terms", []):
            exps = tuple(int(e) for e in term["exps"])
            coefs[exps] = coefs.get(exps, 0) + as_fraction(term["coef"])
        return cls(coefs, smoothness)


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0.0) + ca * cb
    return out


def polynomial_field(coefficients: dict, smoothness: SmoothnessClass) -> PolynomialField:
    """Exact polynomial field from a sparse monomial -> rational map."""
    return PolynomialField(coefficients, smoothness)


class FiniteDifferenceField(Field):
    backend = FINITE_DIFFERENCE

    def __init__(self, fn, smoothness: SmoothnessClass, step: float = 1e-3):
        if not step > 0:
            raise ValueError(f"finite-difference step must be positive, got {step}")
        super().__init__(smoothness)
        self.fn = fn
        self.step = float(step)

    def _eval(self, pts):
        try:
            out = np.asarray(self.fn(pts), dtype=float)
            if out.shape == (pts.shape[0],):
                return out
        except Exception:
            pass
        return np.array([float(self.fn(p)) for p in pts])

    def _deriv(self, beta, pts):
        # Apply one-dimensional stencils axis by axis: second differences for
        # pairs of derivatives along an axis, a central first difference for
        # the odd remainder.
        stencil = [(np.zeros(self.n), 1.0)]
        h = self.step
        for axis, b in enumerate(beta):
            unit = np.zeros(self.n)
            unit[axis] = h
            for _ in range(b // 2):
                stencil = [(o + s * unit, w * c / h**2) for o, w in stencil for s, c in ((-1, 1.0), (0, -2.0), (1, 1.0))]
            if b % 2:
                stencil = [(o + s * unit, w * c / h) for o, w in stencil for s, c in ((-1, -0.5), (1, 0.5))]
        out = np.zeros(pts.shape[0])
        for offset, weight in stencil:
            out += weight * self._eval(pts + offset)
        return out


def finite_difference_field(fn, smoothness: SmoothnessClass, step: float = 1e-3) -> FiniteDifferenceField:
    return FiniteDifferenceField(fn, smoothness, step)


# evaluation trees


class Node:
    """Expression node evaluated on jets."""

    def jet(self, inputs: list[Jet]) -> Jet:
        raise NotImplementedError

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children()), default=0)

    def children(self):
        return ()

    def __add__(self, other):
        return Add(self, _node(other))

    def __radd__(self, other):
        return Add(_node(other), self)

    def __mul__(self, other):
        return Mul(self, _node(other))

    def __rmul__(self, other):
        return Mul(_node(other), self)

    def __sub__(self, other):
        return Add(self, Mul(Const(-1.0), _node(other)))

    def __truediv__(self, other):
        return Div(self, _node(other))


def _node(x) -> Node:
    return x if isinstance(x, Node) else Const(float(x))


class Var(Node):
    def __init__(self, i: int):
        self.i = i

    def jet(self, inputs):
        return inputs[self.i]


class Const(Node):
    def __init__(self, value: float):
        self.value = float(value)

    def jet(self, inputs):
        return Jet.constant(inputs[0].space, np.full(inputs[0].npoints, self.value))


class _Binary(Node):
    def __init__(self, a: Node, b: Node):
        self.a, self.b = a, b

    def children(self):
        return (self.a, self.b)


class Add(_Binary):
    def jet(self, inputs):
        return self.a.jet(inputs) + self.b.jet(inputs)


class Mul(_Binary):
    def jet(self, inputs):
        return self.a.jet(inputs) * self.b.jet(inputs)


class Div(_Binary):
    def jet(self, inputs):
        return self.a.jet(inputs) / self.b.jet(inputs)


class _Unary(Node):
    def __init__(self, a: Node):
        self.a = a

    def children(self):
        return (self.a,)


class Sqrt(_Unary):
    def jet(self, inputs):
        return self.a.jet(inputs).sqrt()


class Exp(_Unary):
    def jet(self, inputs):
        return self.a.jet(inputs).exp()


class Sin(_Unary):
    def jet(self, inputs):
        return self.a.jet(inputs).sin()


class Apply(Node):
    """A field evaluated at the outputs of child expressions."""

    def __init__(self, field: Field, args: list[Node]):
        self.field = field
        self.args = list(args)

    def children(self):
        return tuple(self.args)

    def jet(self, inputs):
        return self.field.jet([a.jet(inputs) for a in self.args])


class JetFunction(Node):
    """Adapter turning any ``inputs -> Jet`` callable into a node."""

    def __init__(self, fn):
        self.fn = fn

    def jet(self, inputs):
        return self.fn(inputs)


class TreeField(Field):
    """Evaluation-tree backend; derivatives through jet propagation.

    Scalar derivative queries are memoised per (order, point); the cache is
    guarded by a lock so one instance can be shared between threads.
    """

    backend = EVALUATION_TREE

    def __init__(self, root: Node, smoothness: SmoothnessClass, cache_size: int = 4096):
        super().__init__(smoothness)
        self.root = root
        self._cache: dict = {}
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def jet(self, inputs):
        return self.root.jet(inputs)

    def _eval(self, pts):
        return self.root.jet(Jet.variables(pts, 0)).value

    def _deriv(self, beta, pts):
        order = sum(beta)
        if pts.shape[0] != 1:
            return self.root.jet(Jet.variables(pts, order)).derivative(beta)
        key = (order, pts[0].tobytes())
        with self._lock:
            jet = self._cache.get(key)
        if jet is None:
            jet = self.root.jet(Jet.variables(pts, order))
            with self._lock:
                if len(self._cache) >= self._cache_size:
                    self._cache.clear()
                self._cache[key] = jet
        return jet.derivative(beta)


class AffineField(Field):
    """``x -> base(center + matrix @ x)``, used for per-cube rotated frames."""

    def __init__(self, base: Field, center, matrix):
        super().__init__(base.smoothness)
        self.base = base
        self.center = np.asarray(center, dtype=float)
        self.matrix = np.asarray(matrix, dtype=float)
        self.backend = base.backend

    def _map(self, pts):
        return self.center + pts @ self.matrix.T

    def _eval(self, pts):
        return np.asarray(self.base.eval(self._map(pts)))

    def jet(self, inputs):
        mapped = []
        for i in range(self.n):
            acc = self.center[i]
            for j, inp in enumerate(inputs):
                if self.matrix[i, j] != 0:
                    acc = inp * self.matrix[i, j] + acc
            if not isinstance(acc, Jet):
                acc = Jet.constant(inputs[0].space, np.full(inputs[0].npoints, acc))
            mapped.append(acc)
        return self.base.jet(mapped)

    def directional(self, direction) -> Field:
        """Derivative of the affine field along a unit vector of its own coordinates."""
        v = self.matrix @ np.asarray(direction, dtype=float)
        return AffineField(DirectionalField(self.base, v), self.center, self.matrix)


class DirectionalField(Field):
    """``sum_i v_i * d_i base``."""

    def __init__(self, base: Field, v):
        s = base.smoothness
        super().__init__(SmoothnessClass(s.n, max(s.k - 1, 1), s.alpha))
        self.base = base
        self.v = np.asarray(v, dtype=float)
        self.parts = [(float(c), base.partial(i)) for i, c in enumerate(self.v) if c != 0]
        self.backend = base.backend

    def _eval(self, pts):
        out = np.zeros(pts.shape[0])
        for c, p in self.parts:
            out += c * np.asarray(p.eval(pts))
        return out

    def partial(self, i: int) -> Field:
        return DirectionalField(self.base.partial(i), self.v)

    def jet(self, inputs):
        out = Jet.constant(inputs[0].space, np.zeros(inputs[0].npoints))
        for c, p in self.parts:
            out = out + p.jet(inputs) * c
        return out


# directional derivatives and seminorms


def directional_derivative(f: Field, x, xi, j: int, check_unit: bool = True):
    """``sum_{|beta|=j} (j!/beta!) xi^beta d^beta f(x)``."""
    xi = np.asarray(xi, dtype=float)
    if check_unit and abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if j > f.smoothness.k:
        raise ValueError(f"order {j} exceeds k = {f.smoothness.k}")
    if j == 0:
        return f.eval(x)
    total = 0.0
    for beta in multi_indices(f.n, j):
        weight = factorial(j) / multi_factorial(beta)
        mono = float(np.prod([xi[i] ** b for i, b in enumerate(beta)]))
        if mono != 0.0:
            total = total + weight * mono * np.asarray(f.deriv(beta, x))
    if np.ndim(total) == 0:
        return float(total)
    return total


def multinomial(beta) -> int:
    out, run = 1, 0
    for b in beta:
        run += b
        out *= comb(run, b)
    return out


def gradient_tensor_norm(f: Field, order: int, pts) -> np.ndarray:
    """Frobenius norm of the full order-th derivative tensor at each point."""
    pts = np.atleast_2d(pts)
    acc = np.zeros(pts.shape[0])
    for beta in multi_indices(f.n, order):
        acc += multinomial(beta) * np.asarray(f.deriv(beta, pts)) ** 2
    return np.sqrt(acc)


def pairwise_quotient_max(values: np.ndarray, pts: np.ndarray, lam: float, chunk: int = 1024) -> float:
    """max over i<j of |v_i - v_j| / |p_i - p_j|^lam, ignoring coincident or non-finite entries."""
    best = 0.0
    m = len(values)
    for start in range(0, m, chunk):
        a = slice(start, min(start + chunk, m))
        dv = np.abs(values[a, None] - values[None, :])
        dist = np.linalg.norm(pts[a, None, :] - pts[None, :, :], axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = dv / dist**lam
        q = q[(dist > 0) & np.isfinite(q)]
        if q.size:
            best = max(best, float(q.max()))
    return best


def pointwise_seminorm_estimate(f: Field, beta, lam, x, radius: float, samples: int) -> float:
    """Largest difference quotient of d^beta f over a fixed sample of the ball around x."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if samples < 2:
        raise ValueError("need at least two samples")
    lam = float(lam)
    if not (0 < lam <= 1):
        raise ValueError("exponent must lie in (0, 1]")
    pts = ball_points(x, radius, samples)
    values = np.asarray(f.deriv(beta, pts), dtype=float)
    return pairwise_quotient_max(values, pts, lam)
