"""Counting recursion for the number of squares and the matching lower bound."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import prod

import mpmath

# Exponent offset of the refined closed-form bound, as a decimal string so the
# comparison below stays exact.
REFINED_OFFSET = "1.3844"
CONSTRUCTIVE_BASE = 4
OPTIMAL_BASE = 2


def degree_cap(n: int) -> int:
    """Largest possible number of neighbours of a cube in an n-dimensional partition."""
    return 4**n - 2**n


def colors_needed(n: int) -> int:
    """Colour classes used by the partition in dimension n (nine in the plane)."""
    if n == 2:
        return 9
    return degree_cap(n)


def upper_count(n: int, base: int = OPTIMAL_BASE) -> int:
    """Squares needed in dimension n; ``base`` is the one-dimensional count."""
    if int(n) != n or n <= 0:
        raise ValueError(f"n must be a positive integer, got {n}")
    if n > 12:
        raise ValueError("n is limited to 12")
    s = base
    for dim in range(2, n + 1):
        s = colors_needed(dim) * (s + 1)
    return s


def iterated_count(n: int) -> int:
    """The unrolled form of the recursion, valid for n >= 2."""
    if n < 2:
        raise ValueError("the unrolled form starts at n = 2")
    block = [degree_cap(ell) for ell in range(3, n + 1)]
    head = upper_count(2) * prod(block)
    tail = sum(prod(degree_cap(ell) for ell in range(n - j, n + 1)) for j in range(0, n - 2))
    return head + tail


def _power_of_two(exponent: mpmath.mpf) -> mpmath.mpf:
    return mpmath.power(2, exponent)


def upper_bound_check(n: int, precision_bits: int = 256) -> bool:
    """Check count(n) < 2^(n^2+n-1.3844) < 2^(n^2+n-1)."""
    if not 3 <= n <= 12:
        raise ValueError("the closed-form bound is stated for 3 <= n <= 12")
    s = upper_count(n)
    weak = 2 ** (n * n + n - 1)
    with mpmath.workprec(precision_bits):
        refined = _power_of_two(mpmath.mpf(n * n + n) - mpmath.mpf(REFINED_OFFSET))
        lower_ok = mpmath.mpf(s) < refined
    # 2^(a - 1.3844) < 2^(a - 1) holds because 1.3844 > 1; kept explicit.
    middle_ok = Fraction(REFINED_OFFSET) > 1
    return bool(lower_ok and middle_ok and s < weak)


def effective_k(k: int) -> int:
    return k if k % 2 == 0 else k - 1


def lower_bound(n: int, k: int) -> Fraction:
    """Exact product 2^(n-1) prod_{j<n} (j+k')/(2j+k'), with k' the even part of k."""
    if n < 1 or k < 2:
        raise ValueError("need n >= 1 and k >= 2")
    kk = effective_k(k)
    out = Fraction(2 ** (n - 1))
    for j in range(1, n):
        out *= Fraction(j + kk, 2 * j + kk)
    return out


def lower_bound_display(n: int, k: int) -> float:
    """The weaker closed form 2^(n-1) (k'/(k'+n))^(n/2)."""
    kk = effective_k(k)
    return 2.0 ** (n - 1) * (kk / (kk + n)) ** (n / 2)


@dataclass(frozen=True)
class BoundsRow:
    n: int
    k: int
    s_n: int
    upper_closed: int
    refined_exponent: str
    lower: Fraction
    lower_display: float
    k_substituted: bool

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "s_n": self.s_n,
            "upper_closed_form": self.upper_closed,
            "refined_bound": f"2^({self.refined_exponent})",
            "lower": _fmt(self.lower),
            "lower_closed_form": round(self.lower_display, 6),
            "k_even_part_used": self.k_substituted,
        }


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def bounds_row(n: int, k: int) -> BoundsRow:
    return BoundsRow(
        n=n,
        k=k,
        s_n=upper_count(n),
        upper_closed=2 ** (n * n + n - 1),
        refined_exponent=f"{n * n + n}-{REFINED_OFFSET}",
        lower=lower_bound(n, k),
        lower_display=lower_bound_display(n, k),
        k_substituted=(k % 2 == 1),
    )


def bounds_table(n_values, k_values, fmt: str = "markdown") -> str:
    rows = [bounds_row(n, k) for n in n_values for k in k_values]
    header = ["n", "k", "lower", "lower (closed form)", "upper s_n", "2^(n^2+n-1)"]
    lines = []
    body = [
        [
            str(r.n),
            f"{r.k}" + (" (k-1 used)" if r.k_substituted else ""),
            _fmt(r.lower),
            f"{r.lower_display:.6g}",
            str(r.s_n),
            str(r.upper_closed),
        ]
        for r in rows
    ]
    if fmt == "csv":
        lines.append(",".join(header))
        lines.extend(",".join(b) for b in body)
    else:
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        lines.extend("| " + " | ".join(b) + " |" for b in body)
    return "\n".join(lines)
