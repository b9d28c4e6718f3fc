import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sosforge.control import (
    ControlFunction,
    check_derivative_control,
    check_needed_condition,
    fit_omega,
    needed_condition_report,
    sphere_sup_positive_part,
    validate_slow_variation,
)
from conftest import poly


def test_control_of_quadratic():
    f = poly({(2, 0): 1, (0, 2): 1}, 2, 2)
    r = ControlFunction(f)
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    # max(f^(1/3), largest Hessian eigenvalue)
    assert np.allclose(r.eval(pts), [2.0, 25.0 ** (1 / 3)])


def test_sphere_sup_rejects_odd_order():
    f = poly({(2,): 1}, 1, 2)
    with pytest.raises(ValueError):
        sphere_sup_positive_part(f, np.array([0.0]), 1)


def test_sphere_sup_quartic_form():
    # d^4 along (c, s) of x^4 + y^4 is 24 (c^4 + s^4), largest on the axes.
    f = poly({(4, 0): 1, (0, 4): 1}, 2, 4)
    assert sphere_sup_positive_part(f, np.array([0.3, 0.2]), 4) == pytest.approx(24.0)


def test_slow_variation():
    box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    f = poly({(2, 2): 1, (0, 0): 1}, 2, 2)
    # This field needs the smaller nu that decompose adapts to.
    assert not validate_slow_variation(ControlFunction(f, 0.05), box, 2000).passed
    report = validate_slow_variation(ControlFunction(f, 0.025), box, 2000)
    assert report.passed and report.worst < 0.25
    assert validate_slow_variation(ControlFunction(poly({(2, 0): 1, (0, 2): 1}, 2, 2), 0.05), box, 2000).passed


def test_derivative_control_stable():
    f = poly({(4, 2): 1, (2, 4): 1, (2, 2): -3, (0, 0): 1.1}, 2, 3)
    r = ControlFunction(f)
    box = np.array([[0.5, 1.5], [0.5, 1.5]])
    for ell in (1, 2, 3):
        assert check_derivative_control(f, r, box, ell, 1000).passed


def test_fit_omega_positive_and_scale_free():
    f = poly({(2,): 1}, 1, 2)
    box = np.array([[-1.0, 1.0]])
    a = fit_omega(f, 0.05, box)
    g = poly({(2,): 4}, 1, 2)
    b = fit_omega(g, 0.05, box)
    assert a > 0 and b > 0 and np.isfinite(a)


def test_needed_condition_gate():
    box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    assert check_needed_condition(poly({(2, 0): 1}, 2, 3), box, 200)
    ok = poly({(4, 0): 0.001, (0, 4): 0.001, (2, 0): 1, (0, 2): 1, (0, 0): 1}, 2, 4)
    assert needed_condition_report(ok, box, 400).passed
    # Pure quartic: the order-4 branch dominates at the origin.
    assert not check_needed_condition(poly({(4, 0): 1, (0, 4): 1}, 2, 4), box, 400)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(-3, 3))
def test_control_scales_with_coefficient(c, x):
    # For c x^2 (k = 2) the Hessian branch gives r >= 2c, the value branch (c x^2)^(1/3).
    r = ControlFunction(poly({(2,): c}, 1, 2))
    assert r.eval(np.array([x])) == pytest.approx(max(2 * c, (c * x * x) ** (1 / 3)), rel=1e-12)
