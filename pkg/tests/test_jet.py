import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from sosforge.field import taylor_compose
from sosforge.jet import Jet, jet_space, multi_factorial, multi_indices


def test_multi_indices_counts():
    assert len(multi_indices(2, 3)) == 4
    assert len(multi_indices(3, 2)) == 6
    assert multi_factorial((2, 3)) == 12


def test_product_rule_on_polynomials():
    pts = np.array([[0.3, -0.7], [1.1, 0.4]])
    x, y = Jet.variables(pts, 3)
    j = (x * x) * (y * x) + y * 2.0
    a, b = pts[:, 0], pts[:, 1]
    assert np.allclose(j.value, a**3 * b + 2 * b)
    assert np.allclose(j.derivative((2, 1)), 6 * a)
    assert np.allclose(j.derivative((0, 1)), a**3 + 2)
    assert np.allclose(j.derivative((3, 0)), 6 * b)


def test_composition_matches_closed_form():
    pts = np.array([[0.2, 0.5], [-0.4, 1.0]])
    x, y = Jet.variables(pts, 2)
    inner = x * x + y
    u = inner.value
    out = taylor_compose({(0,): np.sin(u), (1,): np.cos(u), (2,): -np.sin(u)}, [inner])
    a = pts[:, 0]
    assert np.allclose(out.value, np.sin(u))
    assert np.allclose(out.derivative((1, 0)), 2 * a * np.cos(u))
    assert np.allclose(out.derivative((1, 1)), -2 * a * np.sin(u))
    assert np.allclose(out.derivative((2, 0)), 2 * np.cos(u) - 4 * a * a * np.sin(u))


def test_sqrt_and_reciprocal():
    pts = np.array([[0.5], [2.0]])
    (x,) = Jet.variables(pts, 3)
    s = (x * x + 1.0).sqrt()
    t = pts[:, 0]
    assert np.allclose(s.derivative((1,)), t / np.sqrt(t * t + 1))
    r = (x + 1.0).reciprocal()
    assert np.allclose(r.derivative((3,)), -6 / (t + 1) ** 4)


def test_space_sizes():
    assert len(jet_space(2, 3).indices) == 10
    assert len(jet_space(0, 4).indices) == 1


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_exp_jet_against_exact(a, b, c):
    pts = np.array([[a, b]])
    x, y = Jet.variables(pts, 3)
    e = (x * c + y).exp()
    base = np.exp(c * a + b)
    assert np.allclose(e.derivative((2, 1)), c * c * base, rtol=1e-10, atol=1e-12)
