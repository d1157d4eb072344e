import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from intrkpm.assembly import AssembledSystem
from intrkpm.manufactured import ScalarExact, THREE_MATERIAL_BREAKS, three_material_material
from intrkpm.mesh import build_uniform_quad_mesh
from intrkpm.pointcloud import UNIT_SQUARE
from intrkpm.solve import (DegenerateFit, IndefiniteMatrix, error_norms, fit_rates,
                           interface_jump, solve, solve_min_norm)


def poly_exact(c):
    """u = c0 + c1 x + c2 y + c3 x y, reproduced exactly by Q1."""
    return ScalarExact(
        value=lambda x, mat=None: c[0] + c[1] * x[..., 0] + c[2] * x[..., 1] + c[3] * x[..., 0] * x[..., 1],
        grad=lambda x, mat=None: np.stack([c[1] + c[3] * x[..., 1], c[2] + c[3] * x[..., 0]], -1),
        hess=lambda x, mat=None: np.stack([0 * x[..., 0], c[3] + 0 * x[..., 0], 0 * x[..., 0]], -1),
        source=lambda x, mat=None: 0 * x[..., 0],
    )


SQUARE_X = ScalarExact(
    value=lambda x, mat=None: x[..., 0] ** 2,
    grad=lambda x, mat=None: np.stack([2 * x[..., 0], 0 * x[..., 0]], -1),
    hess=lambda x, mat=None: np.stack([2 + 0 * x[..., 0], 0 * x[..., 0], 0 * x[..., 0]], -1),
    source=lambda x, mat=None: -2 + 0 * x[..., 0],
)


@pytest.fixture(scope="module")
def q1():
    return build_uniform_quad_mesh(UNIT_SQUARE, 0.125, 1)[1]


def test_identity():
    b = np.arange(1.0, 6.0)
    np.testing.assert_allclose(solve((sp.identity(5, format="csr"), b)), b, rtol=0, atol=1e-15)


def test_spd_matches_dense():
    rng = np.random.Generator(np.random.PCG64(5))
    A = rng.standard_normal((3, 3))
    A = A @ A.T + 3 * np.eye(3)
    b = rng.standard_normal(3)
    np.testing.assert_allclose(solve(AssembledSystem(sp.csr_matrix(A), b)),
                               np.linalg.solve(A, b), atol=1e-12)


def test_zero_load_gives_zero():
    assert not solve((sp.identity(4, format="csr") * 3.0, np.zeros(4))).any()


def test_empty_rows_are_pinned():
    K = sp.diags([2.0, 0.0, 4.0]).tocsr()
    np.testing.assert_allclose(solve((K, np.array([2.0, 0.0, 8.0]))), [1.0, 0.0, 2.0])


def test_load_on_empty_row_raises():
    K = sp.diags([2.0, 0.0, 4.0]).tocsr()
    with pytest.raises(IndefiniteMatrix):
        solve((K, np.array([2.0, 1.0, 8.0])))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        solve((sp.identity(3, format="csr"), np.ones(4)))


def test_cg_path_agrees_with_direct():
    n = 60
    K = sp.diags([-np.ones(n - 1), 2.5 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()
    b = np.linspace(0, 1, n)
    np.testing.assert_allclose(solve((K, b), direct_limit=0), solve((K, b)), atol=1e-10)


def test_min_norm_on_singular_system():
    # Laplacian of a path graph: constants span the kernel
    n = 8
    K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tolil()
    K[0, 0] = K[n - 1, n - 1] = 1.0
    K = K.tocsr()
    b = np.zeros(n)
    b[0], b[-1] = 1.0, -1.0
    d = solve_min_norm((K, b))
    assert np.abs(K @ d - b).max() < 1e-10
    # the Jacobi-scaled solution is orthogonal to the scaled kernel direction
    dsc = np.sqrt(K.diagonal())
    assert abs(np.dot(dsc * d, dsc)) < 1e-10


@given(c=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_polynomial_solution_has_zero_error(c, q1):
    ex = poly_exact(c)
    e = error_norms(ex.value(q1.dof_coords), ex, q1, order=2)
    assert e["L2"] <= 1e-9 and e["H1"] <= 1e-9 and e["H2"] <= 1e-9


def test_unit_field_against_zero_solution(q1):
    zero = poly_exact([0, 0, 0, 0])
    e = error_norms(np.ones(q1.n_dofs), zero, q1)
    assert e["L2"] == pytest.approx(1.0, abs=1e-12)
    assert e["H1"] == pytest.approx(0.0, abs=1e-12)
    assert np.isnan(e["H2"])


def test_norms_against_closed_form(q1):
    # u_h = x interpolated exactly, u = x^2: |x - x^2|^2 integrates to 1/30, |1 - 2x|^2 to 1/3
    e = error_norms(q1.dof_coords[:, 0], SQUARE_X, q1, order=2)
    assert e["L2"] == pytest.approx(np.sqrt(1 / 30), abs=1e-12)
    assert e["H1"] == pytest.approx(np.sqrt(1 / 3), abs=1e-12)
    assert e["H2"] == pytest.approx(2.0, abs=1e-12)


@given(st.floats(-50, 50), st.floats(0.1, 5))
def test_norms_are_homogeneous(s, a):
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.25, 1)
    zero = poly_exact([0, 0, 0, 0])
    u = np.sin(3 * space.dof_coords[:, 0]) * a
    e1 = error_norms(u, zero, space)
    e2 = error_norms(s * u, zero, space)
    assert e2["L2"] == pytest.approx(abs(s) * e1["L2"], rel=1e-10, abs=1e-14)
    assert e2["H1"] == pytest.approx(abs(s) * e1["H1"], rel=1e-10, abs=1e-14)


def test_fit_rates_examples():
    h = np.array([0.5, 0.25, 0.125, 0.0625])
    slope, last = fit_rates(h, 3 * h**2)
    assert slope == pytest.approx(2.0, abs=1e-12) and last == pytest.approx(2.0, abs=1e-12)
    e = np.array([1.0, 0.25, 0.0625, 0.03125])
    slope, last = fit_rates(h, e)
    assert last == pytest.approx(1.0, abs=1e-12)
    assert slope == pytest.approx(1.7, abs=1e-12)


@given(st.floats(0.5, 4), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_fit_rates_scale_invariant(p, ce, ch):
    h = np.array([1.0, 0.5, 0.25, 0.125])
    s1, l1 = fit_rates(h, h**p)
    s2, l2 = fit_rates(ch * h, ce * h**p)
    assert s1 == pytest.approx(p, abs=1e-9) and s2 == pytest.approx(p, abs=1e-9)
    assert l2 == pytest.approx(l1, abs=1e-9)


@pytest.mark.parametrize("h,e", [([1, 0.5], [1, 0.25]),
                                 ([1, 0.5, 0.25], [1, 0, 0.1]),
                                 ([1, 0.5, 0.25], [1, np.nan, 0.1]),
                                 ([1, 0.5, 0.25], [1, 0.5])])
def test_degenerate_fits_raise(h, e):
    with pytest.raises(DegenerateFit):
        fit_rates(h, e)


def test_interface_jump_zero_for_continuous_and_measures_steps():
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.1, 1, "DG", x_breaks=THREE_MATERIAL_BREAKS,
                                          material_fn=three_material_material)
    X = space.dof_coords
    assert interface_jump(1 + X[:, 1] ** 2, space) < 1e-13
    # per-material constants 0, 1, 3: jumps 1 and 2 on unit-length lines
    u = np.zeros(space.n_dofs)
    for c in range(mesh.n_cells):
        u[space.cell_dofs(c)] = (0.0, 1.0, 3.0)[mesh.material[c]]
    assert interface_jump(u, space) == pytest.approx(np.sqrt(5.0), rel=1e-12)


def test_interface_jump_without_interface(q1):
    assert interface_jump(np.ones(q1.n_dofs), q1) == 0.0
