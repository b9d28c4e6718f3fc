from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sosforge.field import (
    Exp,
    Mul,
    SmoothnessClass,
    Sqrt,
    TreeField,
    Var,
    directional_derivative,
    finite_difference_field,
    pointwise_seminorm_estimate,
)
from conftest import poly


def test_half_order_parity():
    assert SmoothnessClass(2, 2, 1).half_order == (1, Fraction(1, 2))
    assert SmoothnessClass(2, 3, 1).half_order == (1, Fraction(1))
    assert SmoothnessClass(1, 1, Fraction(1, 2)).half_order == (0, Fraction(3, 4))
    assert SmoothnessClass(1, 4, Fraction(1, 3)).half_order == (2, Fraction(1, 6))


@pytest.mark.parametrize("n,k,alpha", [(0, 2, 1), (1, 0, 1), (1, 2, 0), (1, 2, Fraction(3, 2))])
def test_smoothness_rejects_invalid(n, k, alpha):
    with pytest.raises(ValueError):
        SmoothnessClass(n, k, alpha)


def test_polynomial_derivatives():
    f = poly({(3, 1): 2, (0, 2): -1}, 2, 3)
    x = np.array([0.7, -1.2])
    assert f.eval(x) == pytest.approx(2 * 0.7**3 * -1.2 - 1.44)
    assert f.deriv((2, 1), x) == pytest.approx(12 * 0.7)
    assert f.deriv((0, 2), x) == pytest.approx(-2.0)


def test_finite_difference_backend_agrees():
    smooth = SmoothnessClass(2, 2, 1)
    exact = poly({(2, 1): 1, (0, 3): 1}, 2, 2)
    approx = finite_difference_field(lambda p: p[:, 0] ** 2 * p[:, 1] + p[:, 1] ** 3, smooth)
    pts = np.array([[0.3, 0.4], [-1.0, 0.5]])
    for beta in [(1, 0), (0, 1), (1, 1), (0, 2)]:
        assert np.allclose(approx.deriv(beta, pts), exact.deriv(beta, pts), atol=1e-5)


def test_tree_backend_matches_closed_form():
    f = TreeField(Exp(Mul(Var(0), Var(1))), SmoothnessClass(2, 2, 1))
    x = np.array([0.4, -0.3])
    e = np.exp(-0.12)
    assert f.deriv((1, 1), x) == pytest.approx(e * (1 + 0.4 * -0.3))


def test_directional_derivative_of_quadratic():
    f = poly({(2, 0): 1, (0, 2): 3}, 2, 2)
    xi = np.array([0.6, 0.8])
    assert directional_derivative(f, np.zeros(2), xi, 2) == pytest.approx(2 * 0.36 + 6 * 0.64)
    with pytest.raises(ValueError):
        directional_derivative(f, np.zeros(2), np.array([1.0, 1.0]), 2)


def test_pointwise_seminorm_of_abs():
    absx = TreeField(Sqrt(Mul(Var(0), Var(0))), SmoothnessClass(1, 1, 1))
    est = pointwise_seminorm_estimate(absx, (0,), 1.0, np.array([0.0]), 0.5, 200)
    assert est == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=4, max_size=4), st.floats(-3, 3), st.floats(-3, 3))
def test_polynomial_eval_matches_numpy(c, a, b):
    coefs = {(2, 0): c[0], (1, 1): c[1], (0, 3): c[2], (0, 0): c[3]}
    f = poly(coefs, 2, 3)
    expect = c[0] * a * a + c[1] * a * b + c[2] * b**3 + c[3]
    assert f.eval(np.array([a, b])) == pytest.approx(expect, abs=1e-9)
