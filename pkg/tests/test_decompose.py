import numpy as np
import pytest

from sosforge.control import ControlFunction
from sosforge.decompose import (
    DecomposeConfig,
    ExtendedRemainder,
    GateFailure,
    MinBranchData,
    MinimizerFailure,
    NegativityError,
    class_bound,
    classify_cube,
    decompose,
    principal_direction,
    sqrt_field,
)
from sosforge.jet import Jet
from sosforge.sampling import box_points
from sosforge.whitney import DyadicCube
from conftest import corpus_field, poly

HYPERBOLA = {(2, 2): 1, (1, 1): -2, (0, 0): 1}


@pytest.fixture(scope="module")
def hyperbola_branch():
    f = poly(HYPERBOLA, 2, 2)
    return f, MinBranchData.build(f, np.array([1.0, 1.0]), 1 / 64, 1.5, 1.4, 0.05)


@pytest.fixture(scope="module")
def hyperbola_decomposition():
    f, box = corpus_field("hyperbola")
    return f, decompose(f, box)


def test_principal_direction_of_hyperbola():
    rot = principal_direction(poly(HYPERBOLA, 2, 2), np.array([1.0, 1.0]))
    assert np.allclose(rot[:, -1], [2**-0.5, 2**-0.5])
    assert np.allclose(rot.T @ rot, np.eye(2))


def test_classify_root_and_min():
    f = poly(HYPERBOLA, 2, 2)
    r = ControlFunction(f, 0.05, 1.4)
    origin = np.array([0.5, 0.5])
    # A cube on the zero set and a cube at the corner (0.5, 0.5), where f = 0.5625.
    on_curve = DyadicCube(7, (64, 64), 1.0)
    corner = DyadicCube(7, (0, 0), 1.0)
    assert classify_cube(f, r, on_curve, origin) == "min"
    assert classify_cube(f, r, corner, origin) == "root"


def test_fiber_minimum_in_window(hyperbola_branch):
    _, data = hyperbola_branch
    yp = np.linspace(-0.01, 0.01, 9)[:, None]
    t = data.minimizer.solve(yp)
    assert np.all(np.abs(t) < data.half_width)
    # The minimiser along each fibre lies on xy = 1.
    pts = data.center + np.column_stack([yp, t]) @ data.rotation.T
    assert np.allclose(pts[:, 0] * pts[:, 1], 1.0, atol=1e-9)


def test_minimizer_jet_matches_finite_differences(hyperbola_branch):
    _, data = hyperbola_branch
    y = np.array([[0.003]])
    jet = data.minimizer.jet(Jet.variables(y, 2))
    h = 1e-4
    vals = data.minimizer.solve(np.array([[0.003 - h], [0.003], [0.003 + h]]))
    assert jet.derivative((1,))[0] == pytest.approx((vals[2] - vals[0]) / (2 * h), rel=1e-6)
    assert jet.derivative((2,))[0] == pytest.approx((vals[2] - 2 * vals[1] + vals[0]) / h**2, rel=1e-4)


def test_signed_factor_square(hyperbola_branch):
    _, data = hyperbola_branch
    z = box_points(np.array([[-0.01, 0.01], [-0.01, 0.01]]), 50)
    inputs = Jet.variables(z, 0)
    factor = data.signed_factor(inputs).value
    frame = data.minimizer.frame
    remainder = data.remainder.eval(z[:, :1])
    assert np.allclose(factor**2 + remainder, frame.eval(z), atol=1e-12)


def test_extended_remainder_agrees_inside(hyperbola_branch):
    _, data = hyperbola_branch
    ext = ExtendedRemainder(data.remainder, data.plateau)
    inside = np.linspace(-1, 1, 7)[:, None] * data.plateau
    assert np.allclose(ext.eval(inside), data.remainder.eval(inside), atol=1e-15)
    outside = np.array([[1.4], [-1.5]]) * data.plateau
    assert np.all(ext.eval(outside) == 0.0)


def test_degenerate_fiber_rejected():
    # Along y the minimum of x^2 + y^4 has zero curvature.
    f = poly({(2, 0): 1, (0, 4): 1}, 2, 3)
    with pytest.raises(MinimizerFailure):
        MinBranchData.build(f, np.array([0.0, 0.0]), 0.01, 1.0, 1.0, 0.05, rotation=np.eye(2))


def test_recombination_matches_pieces(hyperbola_decomposition):
    f, dec = hyperbola_decomposition
    pts = box_points(dec.box, 400)
    pts = pts[dec.certified(pts)]
    inputs = Jet.variables(pts, 0)
    total = np.zeros(len(pts))
    for j in range(len(dec.local.cubes)):
        for jet in dec.local.piece_jets(inputs, j).values():
            total += jet.value**2
    assert np.allclose(total, dec.sum_of_squares(pts), atol=1e-12)
    assert np.allclose(total, f.eval(pts), atol=1e-9)


def test_manifest_and_csv_deterministic(hyperbola_decomposition):
    f, dec = hyperbola_decomposition
    again = decompose(f, dec.box)
    assert again.manifest() == dec.manifest()
    pts = box_points(dec.box, 5)
    assert again.to_csv(pts) == dec.to_csv(pts)
    assert dec.class_count <= 27


def test_zero_field_gives_empty_decomposition():
    dec = decompose(poly({}, 2, 2), [[-1, 1], [-1, 1]])
    assert dec.class_count == 0 and dec.manifest()["classes"] == []


def test_negative_field_rejected():
    with pytest.raises(NegativityError):
        decompose(poly({(2,): 1, (0,): -0.1}, 1, 2), [[-1, 1]])


def test_high_order_gate():
    with pytest.raises(GateFailure):
        decompose(poly({(4, 0): 1, (0, 4): 1}, 2, 4), [[-1, 1], [-1, 1]])


def test_config_validation():
    with pytest.raises(ValueError):
        DecomposeConfig(lam=1.6)
    with pytest.raises(ValueError):
        decompose(poly({(2,): 1}, 1, 2), [[1, 1]])


def test_sqrt_field_paths():
    f = poly({(2,): 1}, 1, 1)
    term = sqrt_field(f, [[-2, 2]])
    assert term.eval(np.array([-1.5])) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        sqrt_field(poly({(2,): 1}, 1, 2))


def test_class_bounds():
    assert class_bound(1) == 4
    assert class_bound(2) == 45
