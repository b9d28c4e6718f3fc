import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sosforge.control import ConstantControl, ControlFunction
from sosforge.graph import (
    CubeGraph,
    adjacency_graph,
    alpha_s_structure_present,
    chromatic_number,
    degree_certificate,
    degree_order,
    random_graph,
    welsh_powell_bound,
    welsh_powell_color,
)
from sosforge.whitney import build_partition
from conftest import poly


def cycle(m):
    return CubeGraph.from_edges(m, [(i, (i + 1) % m) for i in range(m)])


def complete(m):
    return CubeGraph.from_edges(m, [(i, j) for i in range(m) for j in range(i + 1, m)])


def test_exact_chromatic_small():
    assert chromatic_number(cycle(5)) == 3
    assert chromatic_number(cycle(6)) == 2
    assert chromatic_number(complete(4)) == 4
    assert chromatic_number(CubeGraph.from_edges(3, [])) == 1


def test_self_loop_rejected():
    with pytest.raises(ValueError):
        CubeGraph.from_edges(2, [(1, 1)])


def test_degree_order_ties_by_id():
    g = CubeGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert degree_order(g) == [1, 2, 0, 3]


def test_degree_bound_colouring(rng):
    for _ in range(100):
        g = random_graph(rng, int(rng.integers(1, 20)), float(rng.random()))
        col = welsh_powell_color(g)
        assert col.is_proper(g)
        assert col.class_count <= g.max_degree + 1


def test_welsh_powell_bound_holds(rng):
    for _ in range(100):
        g = random_graph(rng, int(rng.integers(1, 20)), float(rng.random()))
        assert welsh_powell_color(g).class_count <= welsh_powell_bound(g)


def test_structure_found_in_complete_graph():
    # K_{s+1}: every vertex sees s neighbours of equal degree, all mutually adjacent.
    assert alpha_s_structure_present(complete(4), 3) is not None
    assert alpha_s_structure_present(complete(3), 3) is None


def test_structure_witness_is_valid():
    g = cycle(5)
    w = alpha_s_structure_present(g, 2)
    assert w is not None
    deg = g.degrees
    assert all(g.adjacent(w.v, x) and deg[x] >= deg[w.v] for x in w.ws)
    for (i, j), z in w.zs.items():
        assert g.adjacent(w.ws[j], z) and not g.adjacent(w.ws[i], z)


@pytest.mark.parametrize("nu", [0.05, 0.2])
def test_planar_partitions_use_few_classes(nu):
    boxes = [np.array([[-3.0, 3.0], [-3.0, 3.0]]), np.array([[0.5, 1.5], [0.5, 1.5]])]
    fields = [poly({(2, 0): 1, (0, 2): 1}, 2, 2), poly({(2, 2): 1, (1, 1): -2, (0, 0): 1}, 2, 2)]
    for f, box in zip(fields, boxes):
        part = build_partition(ControlFunction(f, nu), box, nu)
        g = adjacency_graph(part)
        col = welsh_powell_color(g)
        assert col.is_proper(g) and col.class_count <= 9
        assert degree_certificate(g, 2)


def test_uniform_grid_needs_four():
    g = adjacency_graph(build_partition(ConstantControl(1.0, 2), np.array([[0.0, 1.0], [0.0, 1.0]]), 0.2))
    assert welsh_powell_color(g).class_count == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)), max_size=40))
def test_greedy_proper_and_bounded_by_exact(m, pairs):
    edges = {(min(a, b), max(a, b)) for a, b in pairs if a != b and a < m and b < m}
    g = CubeGraph.from_edges(m, edges)
    col = welsh_powell_color(g)
    assert col.is_proper(g)
    assert chromatic_number(g) <= col.class_count
