"""Exact non-negative weights that isolate the top odd moment.

For odd ``ell`` with ``s = (ell+1)/2`` we want nodes eta_1..eta_s and weights
q_i >= 0 with ``sum_i q_i eta_i^j = 0`` for odd j < ell and ``= 1`` for j = ell.
The alternating nodes eta_k = (-1)^(s+k) k admit a closed form for q; this
module builds it in rational arithmetic and re-checks it independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class RationalWeights:
    ell: int
    etas: tuple[Fraction, ...]
    qs: tuple[Fraction, ...]

    @property
    def s(self) -> int:
        return (self.ell + 1) // 2

    def as_strings(self) -> dict:
        def fmt(q):
            return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"

        return {"ell": self.ell, "eta": [fmt(e) for e in self.etas], "q": [fmt(q) for q in self.qs]}


def _check_ell(ell: int) -> int:
    if int(ell) != ell or ell < 1 or ell % 2 == 0:
        raise ValueError(f"ell must be a positive odd integer, got {ell}")
    if ell > 99:
        raise ValueError("ell is limited to 99")
    return int(ell)


def odd_moment_weights(ell: int) -> RationalWeights:
    ell = _check_ell(ell)
    s = (ell + 1) // 2
    etas = [Fraction((-1) ** (s + k) * k) for k in range(1, s + 1)]
    qs = []
    for k, eta in enumerate(etas):
        denom = eta
        for i, other in enumerate(etas):
            if i != k:
                denom *= eta * eta - other * other
        qs.append(1 / denom)
    return RationalWeights(ell, tuple(etas), tuple(qs))


def moment_matrix(etas) -> list[list[Fraction]]:
    """Rows are odd powers 1, 3, ..., 2s-1 of the nodes."""
    s = len(etas)
    return [[Fraction(e) ** (2 * i + 1) for e in etas] for i in range(s)]


def verify_odd_moments(weights: RationalWeights) -> bool:
    """Evaluate every constraint directly; no use of the closed form."""
    etas, qs = weights.etas, weights.qs
    if len(etas) != weights.s or len(qs) != weights.s:
        return False
    if any(q < 0 for q in qs):
        return False
    if determinant_product([Fraction(e) for e in etas]) == 0:
        return False
    for j in range(1, weights.ell + 1, 2):
        total = sum((q * Fraction(e) ** j for q, e in zip(qs, etas)), Fraction(0))
        target = 1 if j == weights.ell else 0
        if total != target:
            return False
    return True


def solve_exact(matrix, rhs) -> list[Fraction] | None:
    """Gauss-Jordan elimination over the rationals; None when singular."""
    size = len(matrix)
    rows = [[Fraction(v) for v in row] + [Fraction(b)] for row, b in zip(matrix, rhs)]
    for col in range(size):
        pivot = next((r for r in range(col, size) if rows[r][col] != 0), None)
        if pivot is None:
            return None
        rows[col], rows[pivot] = rows[pivot], rows[col]
        lead = rows[col][col]
        rows[col] = [v / lead for v in rows[col]]
        for r in range(size):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    return [row[-1] for row in rows]


def linear_solve_weights(etas) -> list[Fraction] | None:
    s = len(etas)
    rhs = [Fraction(0)] * (s - 1) + [Fraction(1)]
    return solve_exact(moment_matrix(etas), rhs)


def determinant(matrix) -> Fraction:
    size = len(matrix)
    rows = [[Fraction(v) for v in row] for row in matrix]
    det = Fraction(1)
    for col in range(size):
        pivot = next((r for r in range(col, size) if rows[r][col] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != col:
            rows[col], rows[pivot] = rows[pivot], rows[col]
            det = -det
        lead = rows[col][col]
        det *= lead
        for r in range(col + 1, size):
            factor = rows[r][col] / lead
            if factor:
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[col])]
    return det


def determinant_product(etas) -> Fraction:
    """prod_i eta_i * prod_{i>j} (eta_i^2 - eta_j^2)."""
    out = Fraction(1)
    for e in etas:
        out *= e
    for i in range(len(etas)):
        for j in range(i):
            out *= etas[i] ** 2 - etas[j] ** 2
    return out
