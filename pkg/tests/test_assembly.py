import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from intrkpm.assembly import (AssembledSystem, BiharmonicForm, EigenstrainForm, ElasticityForm,
                              HeatForm, PoissonForm, UnknownTag, assemble_foreground,
                              block_operator, reduce_system)
from intrkpm.classic import assemble_classic
from intrkpm.extraction import DimensionMismatch, compute_extraction
from intrkpm.manufactured import (INCLUSION_LAME, PLATE_DOMAIN, PLATE_LAME, THREE_MATERIAL_BREAKS,
                                  THREE_MATERIAL_KAPPA, inclusion_c1, inclusion_data,
                                  three_material_data, three_material_material)
from intrkpm.mesh import SIDES, Circle, build_levelset_mesh, build_uniform_quad_mesh
from intrkpm.pointcloud import UNIT_SQUARE, make_nodes
from intrkpm.properties import direct_poisson_matrix
from intrkpm.rkpm import RKPMBasis
from intrkpm.solve import push_forward, solve
from intrkpm.space import LagrangeSpace


def zero(x, mat=None):
    return 0.0 * x[..., 0]


def rel_asym(K):
    K = sp.csr_matrix(K)
    return abs(K - K.T).max() / abs(K).max()


@pytest.fixture(scope="module")
def small():
    nodes = make_nodes(5, 5, UNIT_SQUARE, 1, 0.5, seed=2)
    basis = RKPMBasis(nodes, 1)
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.1, 1)
    return nodes, basis, mesh, space, compute_extraction(basis, space)


def test_homogeneous_poisson_has_zero_load_and_spd_stiffness(small):
    nodes, basis, mesh, space, M = small
    red = reduce_system(assemble_foreground(PoissonForm(zero, zero, nodes.avg_spacing),
                                            mesh, space), M)
    assert np.abs(red.F).max() == 0.0
    lam = np.linalg.eigvalsh(red.K.toarray())
    assert lam[0] > 0


def test_q1_stiffness_matches_hand_element_matrix():
    mesh, _ = build_uniform_quad_mesh(UNIT_SQUARE, 0.5, 1)
    mesh = dataclasses.replace(mesh, boundary={})
    space = LagrangeSpace(mesh, 1)
    K = assemble_foreground(PoissonForm(zero, zero, 0.5, dirichlet=()), mesh, space).K.toarray()
    # bilinear element on a square: 2/3 self, -1/6 edge neighbour, -1/3 diagonal
    X = space.dof_coords
    ref = np.zeros_like(K)
    for cx in (0.0, 0.5):
        for cy in (0.0, 0.5):
            inside = np.where((X[:, 0] >= cx - 1e-12) & (X[:, 0] <= cx + 0.5 + 1e-12)
                              & (X[:, 1] >= cy - 1e-12) & (X[:, 1] <= cy + 0.5 + 1e-12))[0]
            assert len(inside) == 4
            for i in inside:
                for j in inside:
                    same = np.isclose(X[i], X[j])
                    ref[i, j] += {2: 2 / 3, 1: -1 / 6, 0: -1 / 3}[int(same.sum())]
    np.testing.assert_allclose(K, ref, atol=1e-13)


def test_reduction_equals_pointwise_expansion(small):
    nodes, basis, mesh, space, M = small
    form = PoissonForm(zero, zero, nodes.avg_spacing)
    red = reduce_system(assemble_foreground(form, mesh, space), M).K.toarray()
    Kd = direct_poisson_matrix(basis, M, space, form)
    assert np.abs(red - Kd).max() / np.abs(Kd).max() < 1e-11


def test_reduce_with_identity_is_a_no_op(small):
    nodes, _, mesh, space, _ = small
    fg = assemble_foreground(PoissonForm(lambda x: 1 + x[..., 0], zero, nodes.avg_spacing),
                             mesh, space)
    red = reduce_system(fg, sp.identity(space.n_dofs, format="csr"))
    assert abs(red.K - fg.K).max() == 0.0
    np.testing.assert_array_equal(red.F, fg.F)
    assert red.descriptor == "background"


def test_reduce_rejects_wrong_width(small):
    _, _, mesh, space, _ = small
    fg = assemble_foreground(PoissonForm(zero, zero, 0.1), mesh, space)
    with pytest.raises(DimensionMismatch):
        reduce_system(fg, sp.identity(space.n_dofs + 1, format="csr"))


def test_untreated_boundary_tag_is_rejected():
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.5, 1)
    with pytest.raises(UnknownTag):
        assemble_foreground(PoissonForm(zero, zero, 0.5, dirichlet=("left",)), mesh, space)


def test_block_operator_is_block_diagonal():
    A = sp.random(3, 5, density=0.5, random_state=1, format="csr")
    B = block_operator(A, 2).toarray()
    assert B.shape == (6, 10)
    np.testing.assert_array_equal(B[:3, :5], A.toarray())
    np.testing.assert_array_equal(B[3:, 5:], A.toarray())
    assert not B[:3, 5:].any() and not B[3:, :5].any()


def test_space_must_belong_to_mesh(small):
    _, _, mesh, _, _ = small
    _, other = build_uniform_quad_mesh(UNIT_SQUARE, 0.1, 1)
    with pytest.raises(ValueError):
        assemble_foreground(PoissonForm(zero, zero, 0.1), mesh, other)


@given(st.floats(0.5, 40.0))
def test_poisson_symmetric_for_any_penalty(c_pen):
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.25, 2)
    K = assemble_foreground(PoissonForm(zero, zero, 0.25, c_pen), mesh, space).K
    assert rel_asym(K) < 1e-12


@pytest.mark.parametrize("k", [1, 2])
def test_elastic_rigid_modes_are_null(k):
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.25, k)
    K = assemble_foreground(ElasticityForm((2.0,), (1.0,), 0.25, free_tags=SIDES), mesh, space).K
    X = space.dof_coords
    one, nil = np.ones(len(X)), np.zeros(len(X))
    for d in (np.r_[one, nil], np.r_[nil, one], np.r_[-X[:, 1], X[:, 0]]):
        assert np.abs(K @ d).max() < 1e-12 * abs(K).max()


def test_biharmonic_symmetric():
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.25, 2)
    g = lambda x, mat=None: 0.0 * x
    K = assemble_foreground(BiharmonicForm(zero, zero, g, 0.25), mesh, space).K
    assert rel_asym(K) < 1e-12


def test_heat_and_eigenstrain_symmetric():
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.1, 1, "DG", x_breaks=THREE_MATERIAL_BREAKS,
                                          material_fn=three_material_material)
    data = three_material_data()
    K = assemble_foreground(HeatForm(THREE_MATERIAL_KAPPA, data.exact.source, data.exact.value, 0.1),
                            mesh, space).K
    assert rel_asym(K) < 1e-12
    lvl = build_levelset_mesh(PLATE_DOMAIN, 5, 5, Circle((0.0, 0.0), 1.0 + 1e-12), 0)
    vs = LagrangeSpace(lvl, 1, "DG")
    form = EigenstrainForm(INCLUSION_LAME["lam"], INCLUSION_LAME["mu"], 1.0,
                           u_bar=inclusion_data().exact.value, dirichlet_tags=("right", "top"),
                           symmetry_tags=("left", "bottom"), eps0=(INCLUSION_LAME["eps0"], 0.0))
    assert rel_asym(assemble_foreground(form, lvl, vs).K) < 1e-12


def test_classic_free_constant_is_null():
    nodes = make_nodes(6, 6, UNIT_SQUARE, 1, 0.5, seed=1)
    basis = RKPMBasis(nodes, 1)
    sysc = assemble_classic(PoissonForm(zero, zero, 0.2, dirichlet=()), basis, UNIT_SQUARE)
    assert np.abs(sysc.K @ np.ones(len(nodes))).max() < 1e-10 * abs(sysc.K).max()
    assert rel_asym(sysc.K) < 1e-12


@pytest.mark.parametrize("n,k", [(1, 1), (2, 2)])
def test_poisson_patch(n, k):
    nodes = make_nodes(6, 6, UNIT_SQUARE, n, 0.5, seed=4)
    basis = RKPMBasis(nodes, n)
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.2, k)
    M = compute_extraction(basis, space)

    def lin(x, mat=None):
        return 1.0 + 2.0 * x[..., 0] - 0.5 * x[..., 1]

    d = solve(reduce_system(assemble_foreground(PoissonForm(zero, lin, nodes.avg_spacing),
                                                mesh, space), M))
    u = push_forward(d, M, 1, space).u_fg
    assert np.abs(u - lin(space.dof_coords)).max() < 1e-8


# ------------------------------------------------------- manufactured data
def test_three_material_solution_value():
    ex = three_material_data().exact
    assert ex.value(np.array([0.5, 0.5])) == pytest.approx(1.0, abs=1e-14)


def test_three_material_flux_continuous_across_breaks():
    ex = three_material_data().exact
    y = np.linspace(0.05, 0.95, 7)
    for xb, (ma, mb) in zip(THREE_MATERIAL_BREAKS, ((0, 1), (1, 2))):
        pts = np.stack([np.full_like(y, xb), y], -1)
        k = np.asarray(THREE_MATERIAL_KAPPA)
        qa = k[ma] * ex.grad(pts, np.full(len(y), ma))[:, 0]
        qb = k[mb] * ex.grad(pts, np.full(len(y), mb))[:, 0]
        np.testing.assert_allclose(qa, qb, atol=1e-12)
        np.testing.assert_allclose(ex.value(pts, np.full(len(y), ma)),
                                   ex.value(pts, np.full(len(y), mb)), atol=1e-12)


def test_inclusion_constant_and_continuity():
    lam1, lam2 = INCLUSION_LAME["lam"]
    mu1, mu2 = INCLUSION_LAME["mu"]
    e0 = INCLUSION_LAME["eps0"]
    C1 = inclusion_c1()
    # radial traction balance at r = R: inside 2(lam1+mu1)(C1 - e0), outside -2 mu2 C1
    assert 2 * (lam1 + mu1) * (C1 - e0) == pytest.approx(-2 * mu2 * C1, rel=1e-13)
    assert C1 == pytest.approx(0.0724052718287, rel=1e-11)
    ex = inclusion_data().exact
    th = np.linspace(0.1, 1.4, 5)
    pts = np.stack([np.cos(th), np.sin(th)], -1)
    np.testing.assert_allclose(ex.value(pts, np.zeros(5, int)), ex.value(pts, np.ones(5, int)),
                               atol=1e-14)
    assert lam2 > lam1


def test_plate_lame_constants():
    assert PLATE_LAME == {"lam": 65.9, "mu": 151.0}


def test_assembled_system_reports_size():
    s = AssembledSystem(sp.identity(4, format="csr"), np.zeros(4))
    assert s.n_dofs == 4 and s.n_components == 1
