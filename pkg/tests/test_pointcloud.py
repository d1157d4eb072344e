import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from intrkpm.pointcloud import (CoverageWarning, NodeSet, Rectangle, SpatialIndex, UNIT_SQUARE,
                                assign_supports, compute_nodal_spacing, covering_nodes,
                                generate_jittered_grid, make_nodes)


def brute_cover(nodes, x):
    d = np.linalg.norm(nodes.coords - np.asarray(x), axis=1)
    return [int(i) for i in np.nonzero(d < nodes.a)[0]]


def test_zero_jitter_is_tensor_grid():
    nodes = generate_jittered_grid(3, 3, UNIT_SQUARE, 0.0, seed=9)
    expect = np.array(list(itertools.product([0, 0.5, 1], repeat=2)))[:, ::-1]
    assert len(nodes) == 9
    np.testing.assert_array_equal(nodes.coords, expect)


@pytest.mark.parametrize("seed", [0, 1, 17])
def test_jitter_bounded_by_half_spacing(seed):
    nodes = generate_jittered_grid(11, 6, Rectangle(0, 2, 0, 1), 0.5, seed)
    ref = generate_jittered_grid(11, 6, Rectangle(0, 2, 0, 1), 0.0, seed)
    dev = np.abs(nodes.coords - ref.coords)
    assert np.all(dev[:, 0] <= 0.5 * 0.2) and np.all(dev[:, 1] <= 0.5 * 0.2)
    assert dev.max() > 0.0


def test_jitter_deterministic():
    a = generate_jittered_grid(7, 7, UNIT_SQUARE, 0.5, 3)
    b = generate_jittered_grid(7, 7, UNIT_SQUARE, 0.5, 3)
    assert a.coords.tobytes() == b.coords.tobytes()
    c = generate_jittered_grid(7, 7, UNIT_SQUARE, 0.5, 4)
    assert not np.array_equal(a.coords, c.coords)


@pytest.mark.parametrize("eps", [-0.1, 1.5])
def test_rejects_bad_epsilon(eps):
    with pytest.raises(ValueError):
        generate_jittered_grid(3, 3, UNIT_SQUARE, eps)


def test_rejects_degenerate_input():
    with pytest.raises(ValueError):
        generate_jittered_grid(1, 3)
    with pytest.raises(ValueError):
        Rectangle(0, 0, 0, 1)


def test_interior_spacing_uniform_grid():
    nodes = generate_jittered_grid(5, 5, UNIT_SQUARE, 0.0)
    h = compute_nodal_spacing(nodes, 4)
    assert h[12] == pytest.approx(0.25, abs=1e-15)


def test_corner_spacing_matches_brute_force():
    nodes = generate_jittered_grid(3, 3, UNIT_SQUARE, 0.0)
    d = np.sort(np.linalg.norm(nodes.coords - nodes.coords[0], axis=1))[1:]
    assert d[3] == pytest.approx(1.0, abs=1e-15)   # frozen oracle value
    assert compute_nodal_spacing(nodes, 4)[0] == pytest.approx(1.0, abs=1e-15)


def test_single_neighbor_spacing():
    nodes = NodeSet(np.array([[0.0, 0.0], [0.3, 0.4]]))
    np.testing.assert_allclose(compute_nodal_spacing(nodes, 1), [0.5, 0.5])


def test_spacing_needs_enough_nodes():
    with pytest.raises(ValueError):
        compute_nodal_spacing(NodeSet(np.zeros((3, 2)) + np.arange(3)[:, None]), 4)


@given(st.integers(0, 10_000))
def test_spacing_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    nodes = NodeSet(rng.random((30, 2)))
    perm = rng.permutation(30)
    h = compute_nodal_spacing(nodes, 4)
    hp = compute_nodal_spacing(NodeSet(nodes.coords[perm]), 4)
    np.testing.assert_array_equal(h[perm], hp)


def test_support_factor_from_order():
    assert make_nodes(5, 5, UNIT_SQUARE, 1).c_a == 2.0
    assert make_nodes(5, 5, UNIT_SQUARE, 2).c_a == 3.0


def test_support_scaling_is_linear():
    nodes = make_nodes(6, 6, UNIT_SQUARE, 1, 0.5, seed=1)
    twice = assign_supports(nodes, 2 * nodes.c_a)
    np.testing.assert_array_equal(twice.a, 2 * nodes.a)


def test_coverage_on_uniform_grid():
    nodes = make_nodes(5, 5, UNIT_SQUARE, 1, 0.0)
    idx = SpatialIndex.build(nodes)
    for x in nodes.coords:
        assert len(covering_nodes(idx, nodes, x)) >= 3


def test_coverage_warning_for_tiny_supports():
    nodes = make_nodes(5, 5, UNIT_SQUARE, 1, 0.0)
    with pytest.warns(CoverageWarning):
        assign_supports(nodes, 0.6, order=1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assign_supports(nodes, 2.0, order=1)


def test_far_point_has_no_cover():
    nodes = make_nodes(5, 5, UNIT_SQUARE, 1, 0.5)
    assert covering_nodes(SpatialIndex.build(nodes), nodes, (10.0, 10.0)) == []


def test_node_covers_itself():
    nodes = make_nodes(5, 5, UNIT_SQUARE, 1, 0.5)
    idx = SpatialIndex.build(nodes)
    assert 12 in covering_nodes(idx, nodes, nodes.coords[12])


@pytest.mark.parametrize("seed", range(5))
def test_cover_equals_linear_scan(seed):
    nodes = make_nodes(10, 10, UNIT_SQUARE, 2, 0.5, seed=seed)
    idx = SpatialIndex.build(nodes)
    probes = np.random.default_rng(seed).uniform(-0.1, 1.1, (100, 2))
    for x in probes:
        assert covering_nodes(idx, nodes, x) == brute_cover(nodes, x)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_cover_property(x, y):
    nodes = make_nodes(8, 8, UNIT_SQUARE, 1, 0.5, seed=2)
    assert covering_nodes(SpatialIndex.build(nodes), nodes, (x, y)) == brute_cover(nodes, (x, y))


def test_each_node_in_one_bin():
    nodes = make_nodes(9, 9, UNIT_SQUARE, 2, 0.5)
    idx = SpatialIndex.build(nodes)
    assert sorted(idx.order.tolist()) == list(range(len(nodes)))
    assert idx.bin_size >= nodes.a.max()


def test_save_load_roundtrip(tmp_path):
    nodes = make_nodes(4, 4, UNIT_SQUARE, 2, 0.5, seed=8)
    path = tmp_path / "nodes.txt"
    nodes.save(path)
    back = NodeSet.load(path)
    np.testing.assert_array_equal(back.coords, nodes.coords)
    np.testing.assert_array_equal(back.a, nodes.a)
    assert back.c_a == nodes.c_a and back.seed == nodes.seed
    assert path.read_text().startswith("#")
