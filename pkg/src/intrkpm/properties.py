"""Invariant suites runnable from the command line.

Every check returns a :class:`Check` with the measured quantity, its bound and
the verdict. All randomness is seeded, so reports are reproducible.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import (ElasticityForm, PoissonForm, assemble_foreground, reduce_system)
from .extraction import compute_double_extraction, compute_extraction
from .manufactured import PLATE_DOMAIN
from .mesh import Circle, build_levelset_mesh, build_midground_space, build_uniform_quad_mesh
from .pointcloud import UNIT_SQUARE, Rectangle, make_nodes
from .quadrature import quadrature
from .rkpm import RKPMBasis, monomial_exponents
from .solve import fit_rates, push_forward, solve
from .space import LagrangeSpace

SUITES = ("basis", "extraction", "assembly", "solve")


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.suite}.{self.name} value={self.value:.3e} tol={self.tol:.1e}"


def _interior_probes(rng, count, domain=UNIT_SQUARE, margin=0.05):
    lo = np.array([domain.xmin + margin, domain.ymin + margin])
    hi = np.array([domain.xmax - margin, domain.ymax - margin])
    return lo + (hi - lo) * rng.random((count, 2))


# ----------------------------------------------------------------------- basis
def basis_checks() -> list[Check]:
    rng = np.random.Generator(np.random.PCG64(7))
    out = []
    for n in (1, 2):
        nodes = make_nodes(10, 10, UNIT_SQUARE, n, 0.5, seed=3)
        basis = RKPMBasis(nodes, n)
        probes = _interior_probes(rng, 200)
        batch = basis.evaluate(probes, order=2)
        pu = np.abs(np.asarray(batch.matrix("value").sum(axis=1)).ravel() - 1.0).max()
        out.append(Check("basis", f"partition_of_unity_n{n}", pu, 1e-11))
        rep = basis.reproduce_check(probes)
        h = nodes.avg_spacing
        val = max(rep[e]["value"] for e in monomial_exponents(n))
        grad = max(max(rep[e]["grad_x"], rep[e]["grad_y"]) for e in monomial_exponents(n))
        out.append(Check("basis", f"reproduction_values_n{n}", val, 1e-9))
        out.append(Check("basis", f"reproduction_gradients_n{n}", grad * h, 1e-7))
        # analytic derivatives against central differences
        eps = 1e-6 * h
        sub = probes[:20]
        b0 = basis.evaluate(sub, order=2)
        errs = []
        for axis, (wg, wh) in enumerate((("x", ("xx", "xy")), ("y", ("xy", "yy")))):
            shift = np.zeros(2)
            shift[axis] = eps
            bp = basis.evaluate(sub + shift, order=1)
            bm = basis.evaluate(sub - shift, order=1)
            fd = (bp.matrix("value") - bm.matrix("value")) / (2 * eps)
            errs.append(abs(fd - b0.matrix(wg)).max() / abs(b0.matrix(wg)).max())
            for comp, name in zip(("x", "y"), wh):
                fd2 = (bp.matrix(comp) - bm.matrix(comp)) / (2 * eps)
                errs.append(abs(fd2 - b0.matrix(name)).max() / abs(b0.matrix(name)).max())
        out.append(Check("basis", f"derivatives_vs_fd_n{n}", max(errs), 1e-5))
        # locality: no nonzero value at or beyond the support radius
        mat = batch.matrix("value").tocoo()
        dist = np.linalg.norm(probes[mat.row] - nodes.coords[mat.col], axis=1)
        out.append(Check("basis", f"locality_n{n}",
                         float(np.any(dist >= nodes.a[mat.col])), 0.0))
    return out


# ------------------------------------------------------------------ extraction
def hanging_edge_jump(M, space: LagrangeSpace, d: np.ndarray, samples: int = 10) -> float:
    """Max jump of the field ``M^T d`` across hanging edges, sampled on each fine piece."""
    mesh = space.mesh
    u = M.matrix.T @ d if hasattr(M, "matrix") else M.T @ d
    t = (np.arange(samples) + 0.5) / samples
    worst = 0.0
    for (cc, ce), pieces in mesh.hanging:
        for fc, fe in pieces:
            a, b = mesh.vertices[mesh.edge_vertices([fc], [fe])[0]]
            pts = a + t[:, None] * (b - a)
            vals = []
            for cell in (cc, fc):
                tab = space.evaluate_at(np.full(samples, cell), pts, order=0)
                vals.append(np.einsum("pqa,pa->p", tab.N, u[tab.dofs]))
            worst = max(worst, float(np.abs(vals[0] - vals[1]).max()))
    return worst


def extraction_checks() -> list[Check]:
    rng = np.random.Generator(np.random.PCG64(11))
    out = []
    for n, k in ((1, 1), (2, 2), (1, 2)):
        nodes = make_nodes(9, 9, UNIT_SQUARE, n, 0.5, seed=5)
        basis = RKPMBasis(nodes, n)
        _, space = build_uniform_quad_mesh(UNIT_SQUARE, 1 / 8, k)
        M = compute_extraction(basis, space)
        out.append(Check("extraction", f"column_sums_n{n}_k{k}",
                         float(np.abs(M.column_sums() - 1).max()), 1e-11))
        # reproduction transfer for monomials of degree <= min(k, n)
        cells = rng.integers(0, space.mesh.n_cells, 100)
        ref = rng.uniform(-1, 1, (100, 2))
        tab = space.tabulate("quad", cells, ref[:, None, :], order=0)
        err = 0.0
        for a, b in monomial_exponents(min(n, k)):
            u = M.push(nodes.coords[:, 0] ** a * nodes.coords[:, 1] ** b)
            vals = np.einsum("cqa,ca->cq", tab.N, u[tab.dofs])[:, 0]
            x = tab.x[:, 0]
            err = max(err, float(np.abs(vals - x[:, 0] ** a * x[:, 1] ** b).max()))
        out.append(Check("extraction", f"reproduction_transfer_n{n}_k{k}", err, 1e-9))
    # double interpolation removes hanging-edge jumps
    nodes = make_nodes(9, 9, PLATE_DOMAIN, 1, 0.5, seed=1)
    basis = RKPMBasis(nodes, 1)
    mesh = build_levelset_mesh(PLATE_DOMAIN, 8, 8, Circle((0.0, 0.0), 1.0 + 1e-12), 2)
    space = LagrangeSpace(mesh, 1, "CG")
    mid = build_midground_space(mesh, 1)
    dbl = compute_double_extraction(basis, mid, space)
    d = rng.standard_normal(len(nodes))
    scale = float(np.abs(dbl.M.push(d)).max())
    out.append(Check("extraction", "double_interp_hanging_jump",
                     hanging_edge_jump(dbl.M, space, d) / scale, 1e-10))
    out.append(Check("extraction", "double_interp_column_sums",
                     float(np.abs(dbl.M.column_sums() - 1).max()), 1e-10))
    single = compute_extraction(basis, space)
    # reference only: single interpolation is discontinuous there
    out.append(Check("extraction", "single_interp_hanging_jump_is_nonzero",
                     float(hanging_edge_jump(single, space, d) / scale < 1e-6), 0.0))
    return out


# -------------------------------------------------------------------- assembly
def direct_poisson_matrix(basis: RKPMBasis, M, space: LagrangeSpace, form: PoissonForm):
    """a(Psi_hat_I, Psi_hat_J) by pointwise expansion Psi_hat_I = sum_j Psi_I(x_j) N_j.

    Uses single-point basis evaluations and per-cell loops, independent of the
    batched assembly and the sparse triple product.
    """
    nI = len(basis.nodes)
    coeff = np.zeros((nI, space.n_dofs))
    for j, xj in enumerate(space.dof_coords):
        ev = basis.shape_functions(xj)
        coeff[ev.ids, j] = ev.values
    K = np.zeros((nI, nI))
    rule = quadrature("quad", 2 * space.k + 2)
    mesh = space.mesh
    for c in range(mesh.n_cells):
        tab = space.tabulate("quad", np.array([c]), rule.points, order=1,
                             ref_weights=rule.weights)
        G = np.einsum("Ia,qad->Iqd", coeff[:, tab.dofs[0]], tab.d1[0])
        K += np.einsum("q,Iqd,Jqd->IJ", tab.w[0], G, G)
    pen = form.c_pen / form.h
    line = quadrature("line", 2 * space.k + 2)
    for tag in form.dirichlet:
        cells, edges = mesh.boundary[tag]
        for c, e in zip(cells, edges):
            tb = space.tabulate_facets(np.array([c]), np.array([e]), line.points, 1,
                                       t_weights=line.weights)
            V = coeff[:, tb.dofs[0]] @ tb.N[0].T
            dn = coeff[:, tb.dofs[0]] @ np.einsum("qad,d->aq", tb.d1[0], tb.normal[0])
            w = tb.w[0]
            K += -(V * w) @ dn.T - (dn * w) @ V.T + pen * (V * w) @ V.T
    return K


def assembly_checks() -> list[Check]:
    out = []
    nodes = make_nodes(5, 5, UNIT_SQUARE, 1, 0.5, seed=2)
    basis = RKPMBasis(nodes, 1)
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.1, 1)
    form = PoissonForm(lambda x: 0 * x[..., 0], lambda x: 0 * x[..., 0], nodes.avg_spacing)
    M = compute_extraction(basis, space)
    red = reduce_system(assemble_foreground(form, mesh, space), M)
    Kd = direct_poisson_matrix(basis, M, space, form)
    out.append(Check("assembly", "reduction_vs_direct_quadrature",
                     float(np.abs(red.K.toarray() - Kd).max() / np.abs(Kd).max()), 1e-11))
    K = red.K
    out.append(Check("assembly", "reduced_symmetry_poisson",
                     float(abs(K - K.T).max() / abs(K).max()), 1e-10))
    # a 4x4 background with the default penalty gives a positive definite K
    nodes4 = make_nodes(4, 4, UNIT_SQUARE, 1, 0.5, seed=2)
    basis4 = RKPMBasis(nodes4, 1)
    mesh4, space4 = build_uniform_quad_mesh(UNIT_SQUARE, 1 / 6, 1)
    f4 = PoissonForm(lambda x: 0 * x[..., 0], lambda x: 0 * x[..., 0], nodes4.avg_spacing)
    K4 = reduce_system(assemble_foreground(f4, mesh4, space4),
                       compute_extraction(basis4, space4)).K.toarray()
    lam = np.linalg.eigvalsh(0.5 * (K4 + K4.T))
    out.append(Check("assembly", "positive_definite_4x4", float(-lam[0] / lam[-1]), 0.0))
    # patch tests: linear fields reproduced exactly (n = k = 1 and n = k = 2)
    for n, k in ((1, 1), (2, 2)):
        nodes = make_nodes(6, 6, UNIT_SQUARE, n, 0.5, seed=4)
        basis = RKPMBasis(nodes, n)
        mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.2, k)
        M = compute_extraction(basis, space)

        def lin(x):
            return 1.0 + 2.0 * x[..., 0] - 0.5 * x[..., 1]

        pf = PoissonForm(lambda x: 0 * x[..., 0], lin, nodes.avg_spacing)
        d = solve(reduce_system(assemble_foreground(pf, mesh, space), M))
        u = push_forward(d, M, 1, space).u_fg
        out.append(Check("assembly", f"poisson_patch_n{n}_k{k}",
                         float(np.abs(u - lin(space.dof_coords)).max()), 1e-8))
    # elasticity patch: affine displacement, traction from its constant stress
    nodes = make_nodes(6, 6, UNIT_SQUARE, 1, 0.5, seed=4)
    basis = RKPMBasis(nodes, 1)
    mesh, space = build_uniform_quad_mesh(UNIT_SQUARE, 0.2, 1)
    M = compute_extraction(basis, space)
    lam, mu = 2.0, 1.0
    G = np.array([[0.01, 0.02], [-0.005, 0.03]])
    eps = 0.5 * (G + G.T)
    sig = 2 * mu * eps + lam * np.trace(eps) * np.eye(2)

    def u_ex(x, mat=None):
        return np.einsum("ij,...j->...i", G, x) + np.array([0.1, -0.2])

    def trac(x, nrm, mat=None):
        return np.einsum("ij,...j->...i", sig, nrm)

    ef = ElasticityForm((lam,), (mu,), nodes.avg_spacing, 10.0, traction=trac,
                        traction_tags=("right", "top"), u_bar=u_ex,
                        dirichlet_tags=("left", "bottom"))
    sys_fg = assemble_foreground(ef, mesh, space)
    Kf = sys_fg.K
    out.append(Check("assembly", "elasticity_symmetry",
                     float(abs(Kf - Kf.T).max() / abs(Kf).max()), 1e-10))
    d = solve(reduce_system(sys_fg, M))
    u = push_forward(d, M, 2, space).u_fg.reshape(2, -1).T
    out.append(Check("assembly", "elasticity_patch_n1_k1",
                     float(np.abs(u - u_ex(space.dof_coords)).max()), 1e-8))
    return out


# ----------------------------------------------------------------------- solve
def solve_checks() -> list[Check]:
    from .studies import StudyConfig, run_study

    out = []
    rng = np.random.Generator(np.random.PCG64(13))
    b = rng.standard_normal(5)
    out.append(Check("solve", "identity_system",
                     float(np.abs(solve((np.eye(5), b)) - b).max()), 1e-14))
    A = rng.standard_normal((3, 3))
    A = A @ A.T + 3 * np.eye(3)
    b = rng.standard_normal(3)
    out.append(Check("solve", "spd_3x3_vs_dense",
                     float(np.abs(solve((A, b)) - np.linalg.solve(A, b)).max()), 1e-12))
    h = np.array([1.0, 0.5, 0.25])
    out.append(Check("solve", "rate_fit_exact_quadratic",
                     abs(fit_rates(h, h**2)[0] - 2.0), 1e-12))
    out.append(Check("solve", "rate_fit_scale_invariant",
                     abs(fit_rates(h, 7.0 * h**3)[0] - fit_rates(h, h**3)[0]), 1e-12))
    texts = []
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "run.csv"
        for _ in range(2):
            run_study(StudyConfig(study="poisson", n=1, levels=3, epsilon=0.5, seed=0,
                                  out=str(path)))
            texts.append(path.read_bytes())
    out.append(Check("solve", "csv_deterministic", float(texts[0] != texts[1]), 0.0))
    return out


def run_properties(suite: str) -> list[Check]:
    runners = {"basis": basis_checks, "extraction": extraction_checks,
               "assembly": assembly_checks, "solve": solve_checks}
    if suite == "all":
        return [c for s in SUITES for c in runners[s]()]
    if suite not in runners:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or all")
    return runners[suite]()


__all__ = ["Check", "SUITES", "run_properties", "hanging_edge_jump", "direct_poisson_matrix",
           "Rectangle"]
