import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from sosforge.sampling import ball_points, box_points, grid_points, halton, local_pairs


def test_halton_prefix_stable():
    a = halton(2, 50)
    b = halton(2, 100)
    assert np.array_equal(a, b[:50])


def test_halton_avoids_dyadic_faces():
    u = halton(2, 4096)
    scaled = u * 64
    assert not np.any(np.isclose(scaled, np.round(scaled), atol=0, rtol=0) & (u > 0))


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 3), st.integers(2, 200))
def test_ball_points_inside(c, r, m):
    pts = ball_points([c, -c], r, m)
    assert pts.shape == (m, 2)
    assert np.all(np.linalg.norm(pts - [c, -c], axis=1) <= r * (1 + 1e-12))


def test_box_and_grid():
    box = np.array([[-1.0, 1.0], [2.0, 3.0]])
    pts = box_points(box, 300)
    assert np.all((pts >= box[:, 0]) & (pts <= box[:, 1]))
    g = grid_points(box, 4)
    assert g.shape == (16, 2) and np.isclose(g[:, 0].min(), -0.75)


def test_local_pairs_radius():
    box = np.array([[0.0, 1.0]])
    x, y, out = local_pairs(box, 500, lambda p: np.full(len(p), 0.1))
    assert len(x) + out == 500
    assert np.all(np.abs(x - y) <= 0.1 + 1e-12)
