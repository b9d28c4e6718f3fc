from fractions import Fraction

import numpy as np
import pytest

from sosforge.field import SmoothnessClass, polynomial_field

# name -> (coefficients, n, k, box)
CORPUS = {
    "x2": ({(2,): 1}, 1, 2, [[-10.0, 10.0]]),
    "x4": ({(4,): 1}, 1, 3, [[-1.5, 1.5]]),
    "sum_sq": ({(2, 0): 1, (0, 2): 1}, 2, 2, [[-1.0, 1.0], [-1.0, 1.0]]),
    "hyperbola": ({(2, 2): 1, (1, 1): -2, (0, 0): 1}, 2, 2, [[0.5, 1.5], [0.5, 1.5]]),
    "x2y2_plus_1": ({(2, 2): 1, (0, 0): 1}, 2, 2, [[-1.0, 1.0], [-1.0, 1.0]]),
    "motzkin_shift": ({(4, 2): 1, (2, 4): 1, (2, 2): -3, (0, 0): Fraction(11, 10)}, 2, 3, [[0.5, 1.5], [0.5, 1.5]]),
}


def poly(coefs, n, k, alpha=1):
    return polynomial_field(coefs, SmoothnessClass(n, k, Fraction(alpha)))


def corpus_field(name):
    coefs, n, k, box = CORPUS[name]
    return poly(coefs, n, k), np.array(box)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def square_plugin(pts):
    return np.asarray(pts)[:, 0] ** 2


_CRITERIA: list[str] = []


@pytest.fixture
def record_criterion():
    """Record a PASS/FAIL line for the terminal summary, then fail the test if needed."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        _CRITERIA.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
