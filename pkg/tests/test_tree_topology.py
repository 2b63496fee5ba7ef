from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treepam.tree_topology import (
    InstanceTooLarge,
    RegularTreeSpec,
    ball_size,
    build_depth_line,
    build_truncated_tree,
    build_unit_graph,
    dumps_graph,
    loads_graph,
    read_graph,
    sphere_size,
    write_graph,
)

small_specs = st.tuples(st.integers(2, 5), st.integers(0, 5))
unit_specs = st.tuples(st.integers(2, 5), st.integers(2, 5))


def bfs_ball(d, R):
    """Independent construction by explicit breadth-first growth."""
    depth = [0]
    frontier = [0]
    for r in range(1, R + 1):
        new = []
        for v in frontier:
            for _ in range(d + 1 if r == 1 else d):
                depth.append(r)
                new.append(len(depth) - 1)
        frontier = new
    return np.array(depth)


@pytest.mark.parametrize("d,R,n,boundary", [(2, 0, 1, 1), (2, 2, 10, 6), (3, 1, 5, 4)])
def test_ball_examples(d, R, n, boundary):
    tree = build_truncated_tree(RegularTreeSpec(d, R))
    assert tree.n_vertices == n
    assert len(tree.shell(R)) == boundary


def test_radius_zero_exit_degree():
    tree = build_truncated_tree(RegularTreeSpec(2, 0))
    assert tree.exit_degree.tolist() == [3]


@given(small_specs)
def test_ball_counts_match_closed_form(spec):
    d, R = spec
    tree = build_truncated_tree(RegularTreeSpec(d, R))
    expected = 1 if R == 0 else 1 + (d + 1) * (d**R - 1) // (d - 1)
    assert tree.n_vertices == expected == ball_size(d, R)
    counts = np.bincount(tree.depth, minlength=R + 1)
    assert counts.tolist() == [sphere_size(d, r) for r in range(R + 1)]
    assert counts.tolist() == np.bincount(bfs_ball(d, R)).tolist()


@given(small_specs)
def test_every_vertex_has_full_degree(spec):
    d, R = spec
    tree = build_truncated_tree(RegularTreeSpec(d, R))
    deg = np.asarray(tree.adjacency.sum(axis=1)).ravel() + tree.exit_degree
    assert np.all(deg == d + 1)


@given(small_specs)
def test_breadth_first_order(spec):
    tree = build_truncated_tree(RegularTreeSpec(*spec))
    assert np.all(np.diff(tree.depth) >= 0)
    assert np.all(tree.parent[1:] < np.arange(1, tree.n_vertices))
    assert np.all(tree.depth[1:] == tree.depth[tree.parent[1:]] + 1)


@given(small_specs)
def test_neighbour_slots_agree_with_adjacency(spec):
    tree = build_truncated_tree(RegularTreeSpec(*spec))
    slots = tree.neighbour_slots
    assert np.all((slots < 0).sum(axis=1) == tree.exit_degree)
    adj = tree.adjacency.tolil()
    for v in range(min(tree.n_vertices, 50)):
        assert sorted(s for s in slots[v] if s >= 0) == sorted(adj.rows[v])


@pytest.mark.parametrize("d,R", [(1, 2), (2, -1), (2.5, 1)])
def test_invalid_spec(d, R):
    with pytest.raises(ValueError):
        RegularTreeSpec(d, R)


def test_vertex_cap():
    with pytest.raises(InstanceTooLarge):
        build_truncated_tree(RegularTreeSpec(4, 8), vertex_cap=1000)


@pytest.mark.parametrize("d,R,core,leaves,tadpoles", [(2, 3, 7, 4, 3), (2, 2, 3, 2, 1), (4, 2, 5, 4, 3)])
def test_unit_examples(d, R, core, leaves, tadpoles):
    unit = build_unit_graph(RegularTreeSpec(d, R))
    assert unit.n_core == core
    assert len(unit.leaves) == leaves
    assert len(unit.tadpoles) == tadpoles
    assert unit.star == unit.leaves[-1]


def test_unit_rejects_small_radius():
    with pytest.raises(ValueError):
        build_unit_graph(RegularTreeSpec(2, 1))


@given(unit_specs)
def test_unit_counts(spec):
    d, R = spec
    unit = build_unit_graph(RegularTreeSpec(d, R))
    assert unit.n_core == (d**R - 1) // (d - 1)
    assert len(unit.leaves) == d ** (R - 1)
    assert len(unit.tadpoles) == len(unit.leaves) - 1
    assert unit.star not in unit.tadpole_of
    assert unit.boundary_mask.sum() == 1 + len(unit.leaves)
    assert len(unit.extended_edges) == len(unit.tree_edges) + len(unit.tadpoles)


@given(unit_specs)
@settings(max_examples=20)
def test_unit_kernel_rows(spec):
    d, R = spec
    unit = build_unit_graph(RegularTreeSpec(d, R))
    K = unit.kernel.toarray()
    assert np.allclose(K.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(K >= 0)
    for leaf, tad in unit.tadpole_of.items():
        assert K[leaf, tad] == pytest.approx(d / (d + 1))
        assert K[tad, leaf] == 1.0
    star = unit.star
    if R > 2:
        assert K[0, star] == pytest.approx(1 / (d + 1))
        assert K[star, 0] == pytest.approx(d / (d + 1))
    # an internal core vertex moves uniformly over its d + 1 edges
    if R > 2:
        v = 1
        assert np.allclose(K[v][K[v] > 0], 1 / (d + 1))


def test_unit_kernel_star_child_of_top():
    # for R = 2 the star is also a child of the top vertex; both masses add up
    unit = build_unit_graph(RegularTreeSpec(2, 2))
    K = unit.kernel.toarray()
    assert K[0, unit.star] == pytest.approx(2 / 3)
    assert K[0, 1] == pytest.approx(1 / 3)
    assert K[unit.star, 0] == 1.0


def test_depth_line_small():
    K = build_depth_line(2, 1).exact_kernel()
    assert K[0][0] == Fraction(2, 3) and K[0][1] == Fraction(1, 3)
    assert K[1][0] == Fraction(2, 3) and K[1][2] == Fraction(1, 3)
    assert K[2][1] == 1


def test_depth_line_d4():
    K = build_depth_line(4, 2).exact_kernel()
    assert K[1][2] == Fraction(1, 5)
    assert K[1][0] == Fraction(4, 5)


@given(st.integers(2, 6), st.integers(1, 8))
def test_depth_line_stochastic(d, R):
    K = build_depth_line(d, R).exact_kernel()
    assert all(sum(row) == 1 for row in K)
    assert all(x >= 0 for row in K for x in row)


@given(small_specs)
@settings(max_examples=20)
def test_serialisation_round_trip_ball(spec):
    tree = build_truncated_tree(RegularTreeSpec(*spec))
    back = loads_graph(dumps_graph(tree))
    assert np.array_equal(back.parent, tree.parent)
    assert np.array_equal(back.exit_degree, tree.exit_degree)


def test_serialisation_round_trip_unit(tmp_path):
    unit = build_unit_graph(RegularTreeSpec(3, 3))
    path = tmp_path / "unit.txt"
    write_graph(unit, path)
    back = read_graph(path)
    assert back.star == unit.star
    assert np.array_equal(back.parent, unit.parent)


def test_serialisation_format_lines():
    text = dumps_graph(build_truncated_tree(RegularTreeSpec(2, 1)))
    lines = text.splitlines()
    assert lines[0].startswith("# kind=ball")
    assert lines[1] == "0 0 -1 1,2,3 0"
    assert lines[2] == "1 1 0 - 2"


def test_serialisation_rejects_corruption():
    text = dumps_graph(build_truncated_tree(RegularTreeSpec(2, 1))).replace("1 1 0 - 2", "1 1 0 - 1")
    with pytest.raises(ValueError):
        loads_graph(text)
