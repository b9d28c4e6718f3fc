from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sosforge.oddvand import (
    RationalWeights,
    determinant,
    determinant_product,
    linear_solve_weights,
    moment_matrix,
    odd_moment_weights,
    solve_exact,
    verify_odd_moments,
)


def test_ell_five_closed_form():
    w = odd_moment_weights(5)
    assert w.etas == (1, -2, 3)
    assert w.qs == (Fraction(1, 24), Fraction(1, 30), Fraction(1, 120))
    assert w.as_strings() == {"ell": 5, "eta": ["1", "-2", "3"], "q": ["1/24", "1/30", "1/120"]}


def test_ell_one():
    w = odd_moment_weights(1)
    assert w.etas == (1,) and w.qs == (1,)


@pytest.mark.parametrize("ell", [0, 2, -1, 101])
def test_bad_ell(ell):
    with pytest.raises(ValueError):
        odd_moment_weights(ell)


def test_verifier_rejects_perturbed_weights():
    w = odd_moment_weights(7)
    bad = RationalWeights(7, w.etas, (w.qs[0] + Fraction(1, 10**9),) + w.qs[1:])
    assert not verify_odd_moments(bad)
    neg = RationalWeights(1, (Fraction(-1),), (Fraction(-1),))
    assert not verify_odd_moments(neg)


def test_solver_and_determinant():
    m = [[2, 1], [1, 3]]
    assert solve_exact(m, [3, 4]) == [1, 1]
    assert solve_exact([[1, 2], [2, 4]], [1, 1]) is None
    assert determinant(m) == 5


@given(st.lists(st.integers(-9, 9).filter(bool), min_size=1, max_size=5, unique_by=abs))
def test_determinant_closed_form(nodes):
    etas = [Fraction(e) for e in nodes]
    assert determinant(moment_matrix(etas)) == determinant_product(etas)


@given(st.integers(0, 10))
def test_weights_match_independent_solve(i):
    w = odd_moment_weights(2 * i + 1)
    assert verify_odd_moments(w)
    assert linear_solve_weights(w.etas) == list(w.qs)
    assert all(q > 0 for q in w.qs)
