import numpy as np
import pytest
from hypothesis import given, strategies as st

from intrkpm.manufactured import PLATE_DOMAIN
from intrkpm.mesh import (Circle, Mesh, VerticalLine, build_levelset_mesh, build_midground_space,
                          build_uniform_quad_mesh, tensor_quad_mesh)
from intrkpm.pointcloud import UNIT_SQUARE
from intrkpm.quadrature import quadrature
from intrkpm.space import LagrangeSpace, eval_space


def interface_vertices(mesh):
    ca, ea = mesh.interface[0], mesh.interface[1]
    return mesh.vertices[mesh.edge_vertices(ca, ea)].reshape(-1, 2)


@pytest.mark.parametrize("k, cont, cells, dofs", [(1, "CG", 4, 9), (2, "CG", 4, 25),
                                                  (1, "DG", 4, 16), (3, "CG", 4, 49)])
def test_uniform_counts(k, cont, cells, dofs):
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.5, k, cont)
    assert mesh.n_cells == cells and space.n_dofs == dofs


def test_uniform_mesh_tags_cover_boundary():
    mesh, _ = build_uniform_quad_mesh(UNIT_SQUARE, 0.25, 1)
    total = sum(mesh.facet_length(*mesh.boundary[t]).sum() for t in mesh.boundary)
    assert total == pytest.approx(4.0, abs=1e-14)
    assert all(len(mesh.boundary[t][0]) == 4 for t in ("left", "right", "bottom", "top"))


def test_vertical_line_split_is_exact():
    mesh = build_levelset_mesh(UNIT_SQUARE, 3, 3, VerticalLine(0.5), 0)
    v = interface_vertices(mesh)
    assert len(v) > 0 and np.abs(v[:, 0] - 0.5).max() <= 1e-12
    cen = mesh.centroids()
    assert np.all((cen[:, 0] < 0.5) == (mesh.material == 0))


def test_circle_interface_vertices_on_circle():
    mesh = build_levelset_mesh(PLATE_DOMAIN, 8, 8, Circle((0.0, 0.0), 1.0), 0)
    v = interface_vertices(mesh)
    assert np.abs(np.hypot(v[:, 0], v[:, 1]) - 1.0).max() <= 1e-10


@pytest.mark.parametrize("levels", [0, 1, 2])
def test_levelset_area_and_materials(levels):
    mesh = build_levelset_mesh(PLATE_DOMAIN, 8, 8, Circle((0.0, 0.0), 1.0 + 1e-12), levels)
    areas = mesh.cell_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(25.0, rel=1e-13)
    inside = areas[mesh.material == 0].sum()
    assert inside == pytest.approx(np.pi / 4, abs=0.06 / 4**levels)   # chord deficit, O(h^2)
    ca, _, cb, _ = mesh.interface
    assert np.all(mesh.material[ca] != mesh.material[cb])


def test_refinement_leaves_uncut_cells_alone():
    phi = Circle((0.0, 0.0), 1.0 + 1e-12)
    coarse = build_levelset_mesh(PLATE_DOMAIN, 8, 8, phi, 0)
    fine = build_levelset_mesh(PLATE_DOMAIN, 8, 8, phi, 2)
    cut = np.unique(coarse.parent[coarse.n_quads:])
    for p in range(64):
        a = coarse.vertices[coarse.quads[coarse.parent[:coarse.n_quads] == p]]
        b = fine.vertices[fine.quads[fine.parent[:fine.n_quads] == p]]
        if p in cut:
            counts = np.count_nonzero(fine.parent == p)
            assert counts >= 16
        else:
            assert a.tobytes() == b.tobytes()


def test_refined_mesh_has_hanging_edges():
    mesh = build_levelset_mesh(PLATE_DOMAIN, 8, 8, Circle((0.0, 0.0), 1.0 + 1e-12), 2)
    assert len(mesh.hanging) > 0
    for (cc, ce), pieces in mesh.hanging:
        coarse_len = mesh.facet_length([cc], [ce])[0]
        fine_len = sum(mesh.facet_length([c], [e])[0] for c, e in pieces)
        assert fine_len == pytest.approx(coarse_len, rel=1e-12)


def test_midground_identity_cover_without_interface():
    mesh = build_levelset_mesh(UNIT_SQUARE, 4, 4, Circle((9.0, 9.0), 1.0), 0)
    mid = build_midground_space(mesh, 1)
    assert mid.mesh.n_cells == 16
    np.testing.assert_array_equal(np.sort(mid.fg_to_mid), np.arange(16))
    assert mid.space.n_dofs == 4 * 16


def test_midground_cover_partitions_area():
    mesh = build_levelset_mesh(PLATE_DOMAIN, 8, 8, Circle((0.0, 0.0), 1.0 + 1e-12), 2)
    mid = build_midground_space(mesh, 2)
    fg = np.bincount(mid.fg_to_mid, weights=mesh.cell_areas())
    np.testing.assert_allclose(fg, mid.mesh.cell_areas(), rtol=1e-12)
    assert mid.space.n_dofs == 9 * mid.mesh.n_cells


def distorted_quad(k):
    verts = np.array([[0.0, 0.0], [1.1, 0.1], [1.3, 0.9], [-0.1, 1.2]])
    mesh = Mesh(verts, np.array([[0, 1, 2, 3]]), np.zeros((0, 3), dtype=np.int64),
                np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64))
    return LagrangeSpace(mesh, k)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_kronecker_at_own_nodes(k):
    _, space = build_uniform_quad_mesh(UNIT_SQUARE, 1.0, k)
    ref = space.ref("quad").nodes
    for i, xi in enumerate(ref):
        N, _, _ = eval_space(space, 0, xi)
        np.testing.assert_allclose(N, np.eye(len(ref))[i], atol=1e-13)


@given(st.floats(-1, 1), st.floats(-1, 1), st.sampled_from([1, 2, 3]))
def test_basis_partition_of_unity(x, y, k):
    N, dN, d2N = eval_space(distorted_quad(k), 0, (x, y))
    assert abs(N.sum() - 1) < 1e-12
    assert np.abs(dN.sum(axis=0)).max() < 1e-10


@pytest.mark.parametrize("k", [1, 2, 3])
def test_derivatives_on_distorted_quad(k):
    space = distorted_quad(k)
    rng = np.random.default_rng(k)
    for ref in rng.uniform(-0.8, 0.8, (5, 2)):
        tab = space.tabulate("quad", [0], ref[None], order=2)
        x = tab.x[0, 0]
        e = 1e-6
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = e
            xp, xm = space.locate([0, 0], np.array([x + step, x - step]))
            Np = space.tabulate("quad", [0], xp[None], order=1)
            Nm = space.tabulate("quad", [0], xm[None], order=1)
            fd = (Np.N - Nm.N)[0, 0] / (2 * e)
            an = tab.d1[0, 0, :, axis]
            assert np.abs(fd - an).max() <= 1e-6 * np.abs(an).max()
            fd2 = (Np.d1 - Nm.d1)[0, 0, :, axis] / (2 * e)
            an2 = tab.d2[0, 0, :, 0 if axis == 0 else 2]
            assert np.abs(fd2 - an2).max() <= 1e-5 * max(np.abs(an2).max(), 1.0)


def test_quadrature_rules():
    q = quadrature("quad", 3)
    assert len(q) == 4 and q.weights.sum() == pytest.approx(4.0, abs=1e-14)
    t = quadrature("tri", 2)
    assert len(t) == 3 and t.weights.sum() == pytest.approx(0.5, abs=1e-15)
    q4 = quadrature("quad", 4)
    val = np.sum(q4.weights * q4.points[:, 0] ** 2 * q4.points[:, 1] ** 2)
    assert val == pytest.approx(4 / 9, abs=1e-14)


@given(st.integers(0, 6), st.integers(0, 6))
def test_triangle_rule_exactness(a, b):
    if a + b > 8:
        return
    from math import factorial
    t = quadrature("tri", a + b)
    exact = factorial(a) * factorial(b) / factorial(a + b + 2)
    got = np.sum(t.weights * t.points[:, 0] ** a * t.points[:, 1] ** b)
    assert got == pytest.approx(exact, rel=1e-12, abs=1e-15)


def test_cg_shares_dofs_dg_does_not():
    mesh = tensor_quad_mesh(np.linspace(0, 1, 3), np.linspace(0, 1, 3))
    cg, dg = LagrangeSpace(mesh, 2, "CG"), LagrangeSpace(mesh, 2, "DG")
    assert cg.n_dofs == 25 and dg.n_dofs == 36
    with pytest.raises(ValueError):
        LagrangeSpace(mesh, 0)


def test_mesh_export_format(tmp_path):
    mesh = build_levelset_mesh(UNIT_SQUARE, 2, 2, VerticalLine(0.3), 0)
    path = tmp_path / "m.txt"
    mesh.save(path, {"u": (mesh.vertices, mesh.vertices[:, 0])})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    nv = int(lines[1].split()[1])
    assert nv == len(mesh.vertices)
    head = lines[2 + nv].split()
    assert head == ["cells", str(mesh.n_cells)]
    body = lines[3 + nv: 3 + nv + mesh.n_cells]
    assert {b.split()[0] for b in body} <= {"quad", "tri"}
    facets = lines[3 + nv + mesh.n_cells]
    assert facets.startswith("facets")
    assert any(line.endswith("interface") for line in lines)
    assert lines[-nv - 1] == f"values u {nv} 1"
