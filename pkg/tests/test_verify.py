import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sosforge.decompose import decompose, sqrt_field
from sosforge.field import SmoothnessClass
from sosforge.report import CheckReport, stable
from sosforge.verify import (
    check_disjoint_supports,
    check_gradient_bound,
    check_half_regularity,
    check_power_difference,
    check_reconstruction,
    check_taylor_gap,
    gradient_bound_factor,
    power_difference_constant,
    sample_pairs,
    verdict,
)
from conftest import poly

LINE = np.array([[-2.0, 2.0]])


def absx(p):
    return np.abs(np.asarray(p)[:, 0])


@pytest.fixture(scope="module")
def x2_decomposition():
    f = poly({(2,): 1}, 1, 2)
    return f, decompose(f, [[-10, 10]])


def test_sample_pairs_split():
    x, y = sample_pairs(LINE, 1000)
    assert x.shape == y.shape == (1000, 1)
    near = np.abs(x[500:] - y[500:])
    assert near.max() <= 0.02 * 4 + 1e-12


def test_power_difference_abs():
    pairs = sample_pairs(LINE, 4000)
    for s in (1.5, 2.0, 3.0):
        report = check_power_difference(absx, 1, s, 0.1, pairs)
        assert report.passed
        assert report.fitted_C == pytest.approx(1.0)


def test_power_difference_detects_wrong_seminorm():
    pairs = sample_pairs(LINE, 2000)
    assert not check_power_difference(absx, 1, 2.0, 0.01, pairs, seminorm=0.1).passed


def test_power_difference_constant_grows_as_epsilon_shrinks():
    assert power_difference_constant(1.0, 2.0, 0.01) > power_difference_constant(1.0, 2.0, 0.5)


def test_taylor_gap_quartic():
    f = poly({(4,): 1}, 1, 3)
    report = check_taylor_gap(f, (0,), sample_pairs(LINE, 4000), LINE)
    assert report.passed
    assert report.fitted_C == pytest.approx(24 / 6, rel=1e-6)


def test_taylor_gap_rejects_top_order():
    with pytest.raises(ValueError):
        check_taylor_gap(poly({(2,): 1}, 1, 2), (2,), sample_pairs(LINE, 10))


def test_gradient_bound_factor_at_one():
    assert gradient_bound_factor(1.0) == 2.0


def test_gradient_bound_quadratic():
    report = check_gradient_bound(poly({(2,): 1}, 1, 1), 1, 3000, LINE)
    assert report.passed and report.fitted_C == pytest.approx(2.0)


def test_gradient_bound_needs_nonnegative():
    with pytest.raises(ValueError):
        check_gradient_bound(poly({(1,): 1}, 1, 1), 1, 100, LINE)


def test_half_regularity_of_abs():
    term = sqrt_field(poly({(2,): 1}, 1, 1), LINE)
    report = check_half_regularity(term, SmoothnessClass(1, 1, 1), LINE, 400)
    assert report.passed and report.worst == pytest.approx(1.0, rel=1e-9)


def test_reconstruction_and_omission(x2_decomposition):
    f, dec = x2_decomposition
    assert check_reconstruction(dec, f, 2000).passed
    assert not check_reconstruction(dec, f, 2000, omit=(0,)).passed
    assert check_disjoint_supports(dec).passed


def test_verdict_aggregates():
    good = CheckReport("a", True, 0.0, 1.0, 1)
    bad = CheckReport("b", False, 2.0, 1.0, 1)
    assert verdict([good])["pass"] and not verdict([good, bad])["pass"]
    assert CheckReport("c", True, float("inf"), 1.0, 1).to_json()["worst_ratio"] == "inf"


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(0.05, 0.3))
def test_stable_relative(a, rel):
    b = a * (1 + rel)
    assert stable(a, a)
    if a != 0:
        assert not stable(a, b, tolerance=rel / 2)
