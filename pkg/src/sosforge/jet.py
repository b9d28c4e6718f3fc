"""Truncated multivariate Taylor arithmetic, vectorised over evaluation points.

A :class:`Jet` holds the Taylor coefficients ``d^beta g(x) / beta!`` of some
function ``g`` for every multi-index ``|beta| <= order``, at ``m`` points at
once.  Products, quotients and univariate compositions follow the product and
chain rules exactly up to the truncation order, so derivatives of composite
expressions come out without any finite differencing.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np


def multi_indices(n: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices of length ``n`` with total degree ``order``, lexicographically descending."""
    if n == 0:
        return [()] if order == 0 else []
    out = []
    for first in range(order, -1, -1):
        for rest in multi_indices(n - 1, order - first):
            out.append((first,) + rest)
    return out


def multi_factorial(beta) -> int:
    out = 1
    for b in beta:
        out *= factorial(b)
    return out


class JetSpace:
    """Index bookkeeping shared by all jets of a given (dimension, order)."""

    def __init__(self, n: int, order: int):
        self.n = n
        self.order = order
        self.indices: list[tuple[int, ...]] = []
        for d in range(order + 1):
            self.indices.extend(multi_indices(n, d))
        self.position = {beta: i for i, beta in enumerate(self.indices)}
        self.degree = np.array([sum(b) for b in self.indices])
        self.factorials = np.array([multi_factorial(b) for b in self.indices], dtype=float)
        ia, ib, ic = [], [], []
        for a, alpha in enumerate(self.indices):
            for b, beta in enumerate(self.indices):
                gamma = tuple(x + y for x, y in zip(alpha, beta))
                if sum(gamma) <= order:
                    ia.append(a)
                    ib.append(b)
                    ic.append(self.position[gamma])
        order_c = np.argsort(np.array(ic, dtype=int), kind="stable")
        self._ia = np.array(ia, dtype=int)[order_c]
        self._ib = np.array(ib, dtype=int)[order_c]
        self._ic = np.array(ic, dtype=int)[order_c]
        self._starts = np.flatnonzero(np.r_[True, self._ic[1:] != self._ic[:-1]])
        self._targets = self._ic[self._starts]
        self.size = len(self.indices)

    def unit(self, i: int) -> tuple[int, ...]:
        return tuple(1 if j == i else 0 for j in range(self.n))

    def multiply(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.size == 1:
            return a * b
        products = a[self._ia] * b[self._ib]
        sums = np.add.reduceat(products, self._starts, axis=0)
        if len(self._targets) == self.size:
            return sums
        out = np.zeros((self.size,) + a.shape[1:], dtype=float)
        out[self._targets] = sums
        return out


@lru_cache(maxsize=None)
def jet_space(n: int, order: int) -> JetSpace:
    return JetSpace(n, order)


class Jet:
    __slots__ = ("space", "c")

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.c = coeffs

    # construction
    @classmethod
    def constant(cls, space: JetSpace, values) -> "Jet":
        values = np.asarray(values, dtype=float)
        if values.ndim == 0:
            values = values.reshape(1)
        c = np.zeros((space.size,) + values.shape)
        c[0] = values
        return cls(space, c)

    @classmethod
    def variable(cls, space: JetSpace, i: int, values) -> "Jet":
        jet = cls.constant(space, values)
        if space.order >= 1:
            jet.c[space.position[space.unit(i)]] = 1.0
        return jet

    @classmethod
    def variables(cls, points: np.ndarray, order: int) -> list["Jet"]:
        """Independent-variable jets seeded at ``points`` of shape (m, n)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        space = jet_space(points.shape[1], order)
        return [cls.variable(space, i, points[:, i]) for i in range(points.shape[1])]

    # accessors
    @property
    def value(self) -> np.ndarray:
        return self.c[0]

    @property
    def npoints(self) -> int:
        return self.c.shape[1]

    def derivative(self, beta) -> np.ndarray:
        beta = tuple(beta)
        return self.c[self.space.position[beta]] * multi_factorial(beta)

    def copy(self) -> "Jet":
        return Jet(self.space, self.c.copy())

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(self.space, np.broadcast_to(np.asarray(other, dtype=float), self.c.shape[1:]))

    # arithmetic
    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.c + other.c)
        c = self.c.copy()
        c[0] = c[0] + other
        return Jet(self.space, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.c - other.c)
        c = self.c.copy()
        c[0] = c[0] - other
        return Jet(self.space, c)

    def __rsub__(self, other):
        c = -self.c
        c[0] = c[0] + other
        return Jet(self.space, c)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.space, self.c * np.asarray(other, dtype=float))
        return Jet(self.space, self.space.multiply(self.c, other.c))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.space, self.c / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            out = Jet.constant(self.space, np.ones(self.npoints))
            base = self
            while p:
                if p & 1:
                    out = out * base
                p >>= 1
                if p:
                    base = base * base
            return out
        return self.power(float(p))

    # univariate compositions
    def compose(self, derivs: list[np.ndarray]) -> "Jet":
        """Return ``g(self)`` given ``derivs[i] = g^{(i)}(self.value)`` for i up to the order."""
        space = self.space
        delta = self.c.copy()
        delta[0] = 0.0
        out = np.zeros_like(self.c)
        out[0] = derivs[0]
        power = delta
        fact = 1.0
        for i in range(1, space.order + 1):
            fact *= i
            out = out + power * (derivs[i] / fact)
            if i < space.order:
                power = space.multiply(power, delta)
        return Jet(space, out)

    def power(self, p: float) -> "Jet":
        x0 = self.value
        derivs = []
        coef = np.ones_like(x0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for i in range(self.space.order + 1):
                derivs.append(coef * np.power(x0, p - i))
                coef = coef * (p - i)
        return self.compose(derivs)

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def reciprocal(self) -> "Jet":
        return self.power(-1.0)

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self.compose([e] * (self.space.order + 1))

    def sin(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cycle = [s, c, -s, -c]
        return self.compose([cycle[i % 4] for i in range(self.space.order + 1)])

    def cos(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cycle = [c, -s, -c, s]
        return self.compose([cycle[i % 4] for i in range(self.space.order + 1)])

    @staticmethod
    def where(mask, a: "Jet", b: "Jet") -> "Jet":
        return Jet(a.space, np.where(mask[None, :], a.c, b.c))

    def take(self, idx) -> "Jet":
        return Jet(self.space, self.c[:, idx])


def stack_points(jets: list[Jet]) -> np.ndarray:
    """Values of a list of scalar jets as an (m, len) point array."""
    return np.stack([j.value for j in jets], axis=1)
