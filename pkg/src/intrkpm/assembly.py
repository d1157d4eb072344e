"""Foreground assembly of the shipped weak forms and reduction by extraction.

All boundary and interface conditions use symmetric Nitsche terms. Vector
problems number dofs component-major: ``[u_x dofs, u_y dofs]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .extraction import DimensionMismatch, ExtractionOperator
from .mesh import Mesh
from .quadrature import line_rule, quadrature
from .space import LagrangeSpace, Tab

CHUNK = 2048


class UnknownTag(KeyError):
    pass


class MaterialMissing(KeyError):
    pass


# ---------------------------------------------------------------------- forms
@dataclass
class PoissonForm:
    f: Callable
    g: Callable
    h: float
    c_pen: float = 10.0
    dirichlet: tuple = ("left", "right", "bottom", "top")
    kind: str = field(default="poisson", init=False)


@dataclass
class BiharmonicForm:
    f: Callable
    g: Callable
    grad_g: Callable            # boundary slope data enters as grad_g . n
    h: float
    alpha: float = 10.0
    beta: float = 10.0
    dirichlet: tuple = ("left", "right", "bottom", "top")
    kind: str = field(default="biharmonic", init=False)


@dataclass
class HeatForm:
    kappa: tuple                # per material
    f: Callable
    g: Callable                 # g(x, material)
    h: float
    beta_d: float = 10.0
    gamma: float | None = None  # interface penalty; default beta_d * max kappa / h
    weights: tuple = (0.5, 0.5)
    dirichlet: tuple = ("left", "right", "bottom", "top")
    kind: str = field(default="multimaterial_heat", init=False)


@dataclass
class ElasticityForm:
    lam: tuple                  # per material
    mu: tuple
    h: float
    beta: float = 10.0
    traction: Callable | None = None      # t(x, n, material) -> (..., 2)
    traction_tags: tuple = ()
    symmetry_tags: tuple = ()
    u_bar: Callable | None = None         # u_bar(x, material) -> (..., 2)
    dirichlet_tags: tuple = ()
    free_tags: tuple = ()                 # traction-free, no terms
    eps0: tuple = ()                      # isotropic eigenstrain per material
    kind: str = field(default="elasticity", init=False)


@dataclass
class EigenstrainForm(ElasticityForm):
    kind: str = field(default="eigenstrain_elasticity", init=False)


@dataclass(eq=False)
class AssembledSystem:
    K: sp.csr_matrix
    F: np.ndarray
    n_components: int = 1
    descriptor: str = "foreground"

    @property
    def n_dofs(self) -> int:
        return self.K.shape[0]


# ---------------------------------------------------------------- accumulator
class _Accum:
    def __init__(self, n):
        self.n = n
        self.rows, self.cols, self.vals = [], [], []
        self.F = np.zeros(n)

    def add_matrix(self, dofs, Ke):
        L = dofs.shape[1]
        self.rows.append(np.repeat(dofs, L, axis=1).ravel())
        self.cols.append(np.tile(dofs, (1, L)).ravel())
        self.vals.append(Ke.reshape(len(dofs), -1).ravel())

    def add_vector(self, dofs, Fe):
        np.add.at(self.F, dofs.ravel(), Fe.ravel())

    def finish(self, n_components, descriptor="foreground") -> AssembledSystem:
        if self.rows:
            r = np.concatenate(self.rows)
            c = np.concatenate(self.cols)
            v = np.concatenate(self.vals)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        K = sp.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsr()
        K.sum_duplicates()
        return AssembledSystem(K, self.F, n_components, descriptor)


def cell_batches(space: LagrangeSpace, degree: int, order: int, chunk: int = CHUNK):
    """Yield physical tabulations over all cells with quadrature weights folded into ``w``."""
    for kind in space.kinds():
        rule = quadrature(kind, degree)
        n = len(space.cell_dof_table[kind])
        for s in range(0, n, chunk):
            idx = np.arange(s, min(n, s + chunk))
            yield space.tabulate(kind, idx, rule.points, order, ref_weights=rule.weights)


def facet_batches(space: LagrangeSpace, cells, edges, degree: int, order: int,
                  chunk: int = CHUNK):
    rule = line_rule(degree)
    for s in range(0, len(cells), chunk):
        sl = slice(s, s + chunk)
        yield space.tabulate_facets(cells[sl], edges[sl], rule.points, order,
                                    t_weights=rule.weights)


def interface_batches(space: LagrangeSpace, iface, degree: int, order: int, chunk: int = CHUNK):
    """Aligned tabulations of both sides of interface facets (normal from side A)."""
    rule = line_rule(degree)
    ca, ea, cb, eb = iface
    for s in range(0, len(ca), chunk):
        sl = slice(s, s + chunk)
        A = space.tabulate_facets(ca[sl], ea[sl], rule.points, order, t_weights=rule.weights)
        B = space.tabulate_facets(cb[sl], eb[sl], rule.points, order,
                                  reverse=np.ones(len(cb[sl]), bool), t_weights=rule.weights)
        yield A, B


def _tagged(mesh: Mesh, tags):
    cells, edges = [], []
    for t in tags:
        if t in mesh.boundary:
            cells.append(mesh.boundary[t][0])
            edges.append(mesh.boundary[t][1])
    if not cells:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(cells), np.concatenate(edges)


def _check_tags(mesh: Mesh, handled):
    missing = sorted(set(mesh.boundary) - set(handled))
    if missing:
        raise UnknownTag(f"boundary facets tagged {missing} have no condition in this form")


def _per_material(mesh: Mesh, table, name):
    table = np.atleast_1d(np.asarray(table, dtype=float))
    if mesh.material.max() >= len(table):
        raise MaterialMissing(f"{name} has no entry for material {int(mesh.material.max())}")
    return table


def _degree(space):
    return 2 * space.k + 2


# --------------------------------------------------------------------- scalar
def _assemble_poisson(form: PoissonForm, mesh: Mesh, space: LagrangeSpace) -> AssembledSystem:
    _check_tags(mesh, form.dirichlet)
    acc = _Accum(space.n_dofs)
    deg = _degree(space)
    for tb in cell_batches(space, deg, 1):
        Ke = np.einsum("cq,cqad,cqbd->cab", tb.w, tb.d1, tb.d1)
        Fe = np.einsum("cq,cq,cqa->ca", tb.w, form.f(tb.x), tb.N)
        acc.add_matrix(tb.dofs, Ke)
        acc.add_vector(tb.dofs, Fe)
    cells, edges = _tagged(mesh, form.dirichlet)
    pen = form.c_pen / form.h
    for tb in facet_batches(space, cells, edges, deg, 1):
        dn = np.einsum("cqad,cd->cqa", tb.d1, tb.normal)
        g = form.g(tb.x)
        Ke = (-np.einsum("cq,cqa,cqb->cab", tb.w, tb.N, dn)
              - np.einsum("cq,cqa,cqb->cab", tb.w, dn, tb.N)
              + pen * np.einsum("cq,cqa,cqb->cab", tb.w, tb.N, tb.N))
        Fe = np.einsum("cq,cq,cqa->ca", tb.w, g, pen * tb.N - dn)
        acc.add_matrix(tb.dofs, Ke)
        acc.add_vector(tb.dofs, Fe)
    return acc.finish(1)


def _assemble_biharmonic(form: BiharmonicForm, mesh: Mesh, space: LagrangeSpace) -> AssembledSystem:
    _check_tags(mesh, form.dirichlet)
    acc = _Accum(space.n_dofs)
    deg = _degree(space)
    for tb in cell_batches(space, deg, 2):
        lap = tb.d2[..., 0] + tb.d2[..., 2]
        Ke = np.einsum("cq,cqa,cqb->cab", tb.w, lap, lap)
        Fe = np.einsum("cq,cq,cqa->ca", tb.w, form.f(tb.x), tb.N)
        acc.add_matrix(tb.dofs, Ke)
        acc.add_vector(tb.dofs, Fe)
    cells, edges = _tagged(mesh, form.dirichlet)
    a3 = form.alpha / form.h**3
    b1 = form.beta / form.h
    for tb in facet_batches(space, cells, edges, deg, 3):
        n = tb.normal
        dn = np.einsum("cqad,cd->cqa", tb.d1, n)
        lap = tb.d2[..., 0] + tb.d2[..., 2]
        glap = np.stack([tb.d3[..., 0] + tb.d3[..., 2], tb.d3[..., 1] + tb.d3[..., 3]], -1)
        gn = np.einsum("cqad,cd->cqa", glap, n)
        g = form.g(tb.x)
        gnb = np.einsum("cqd,cd->cq", form.grad_g(tb.x), n)
        W = tb.w

        def outer(p, q):
            return np.einsum("cq,cqa,cqb->cab", W, p, q)

        Ke = (outer(tb.N, gn) + outer(gn, tb.N) - outer(dn, lap) - outer(lap, dn)
              + a3 * outer(tb.N, tb.N) + b1 * outer(dn, dn))
        Fe = (np.einsum("cq,cq,cqa->ca", W, g, gn + a3 * tb.N)
              + np.einsum("cq,cq,cqa->ca", W, gnb, b1 * dn - lap))
        acc.add_matrix(tb.dofs, Ke)
        acc.add_vector(tb.dofs, Fe)
    return acc.finish(1)


def _assemble_heat(form: HeatForm, mesh: Mesh, space: LagrangeSpace) -> AssembledSystem:
    _check_tags(mesh, form.dirichlet)
    kap = _per_material(mesh, form.kappa, "kappa")
    acc = _Accum(space.n_dofs)
    deg = _degree(space)
    for tb in cell_batches(space, deg, 1):
        mat = mesh.material[tb.cells]
        k = kap[mat]
        Ke = np.einsum("c,cq,cqad,cqbd->cab", k, tb.w, tb.d1, tb.d1)
        Fe = np.einsum("cq,cq,cqa->ca", tb.w, form.f(tb.x, mat[:, None]), tb.N)
        acc.add_matrix(tb.dofs, Ke)
        acc.add_vector(tb.dofs, Fe)
    cells, edges = _tagged(mesh, form.dirichlet)
    for tb in facet_batches(space, cells, edges, deg, 1):
        mat = mesh.material[tb.cells]
        k = kap[mat][:, None]
        pen = form.beta_d * k / form.h
        dn = k[..., None] * np.einsum("cqad,cd->cqa", tb.d1, tb.normal)
        g = form.g(tb.x, mat[:, None])
        Ke = (-np.einsum("cq,cqa,cqb->cab", tb.w, tb.N, dn)
              - np.einsum("cq,cqa,cqb->cab", tb.w, dn, tb.N)
              + np.einsum("cq,cq,cqa,cqb->cab", tb.w, pen, tb.N, tb.N))
        Fe = np.einsum("cq,cq,cqa->ca", tb.w, g, pen[..., None] * tb.N - dn)
        acc.add_matrix(tb.dofs, Ke)
        acc.add_vector(tb.dofs, Fe)
    if len(mesh.interface):
        wa, wb = form.weights
        for A, B in interface_batches(space, mesh.interface, deg, 1):
            ka = kap[mesh.material[A.cells]]
            kb = kap[mesh.material[B.cells]]
            gamma = (form.gamma if form.gamma is not None
                     else form.beta_d * np.maximum(ka, kb) / form.h)
            gamma = np.broadcast_to(gamma, ka.shape)
            n = A.normal
            jump = np.concatenate([A.N, -B.N], axis=-1)
            avg = np.concatenate([wa * ka[:, None, None] * np.einsum("cqad,cd->cqa", A.d1, n),
                                  wb * kb[:, None, None] * np.einsum("cqad,cd->cqa", B.d1, n)],
                                 axis=-1)
            Ke = (-np.einsum("cq,cqa,cqb->cab", A.w, jump, avg)
                  - np.einsum("cq,cqa,cqb->cab", A.w, avg, jump)
                  + np.einsum("c,cq,cqa,cqb->cab", gamma, A.w, jump, jump))
            acc.add_matrix(np.concatenate([A.dofs, B.dofs], axis=1), Ke)
    return acc.finish(1)


# -------------------------------------------------------------------- vector
def _elastic_D(lam, mu):
    D = np.zeros(lam.shape + (3, 3))
    D[..., 0, 0] = D[..., 1, 1] = lam + 2 * mu
    D[..., 0, 1] = D[..., 1, 0] = lam
    D[..., 2, 2] = mu
    return D


def _B(tb: Tab):
    """Voigt strain operator (n, nq, 3, 2L) for component-major local dofs."""
    dx, dy = tb.d1[..., 0], tb.d1[..., 1]
    z = np.zeros_like(dx)
    return np.stack([np.concatenate([dx, z], -1),
                     np.concatenate([z, dy], -1),
                     np.concatenate([dy, dx], -1)], axis=-2)


def _Nvec(tb: Tab):
    z = np.zeros_like(tb.N)
    return np.stack([np.concatenate([tb.N, z], -1), np.concatenate([z, tb.N], -1)], axis=-2)


def _Tn(n):
    """(n, 2, 3): traction from Voigt stress, sigma . n."""
    z = np.zeros(len(n))
    return np.stack([np.stack([n[:, 0], z, n[:, 1]], -1),
                     np.stack([z, n[:, 1], n[:, 0]], -1)], axis=-2)


def _vdofs(tb: Tab, nu):
    return np.concatenate([tb.dofs, tb.dofs + nu], axis=1)


def _assemble_elasticity(form: ElasticityForm, mesh: Mesh, space: LagrangeSpace) -> AssembledSystem:
    _check_tags(mesh, tuple(form.traction_tags) + tuple(form.symmetry_tags)
                + tuple(form.dirichlet_tags) + tuple(form.free_tags))
    lam = _per_material(mesh, form.lam, "lambda")
    mu = _per_material(mesh, form.mu, "mu")
    eps0 = np.zeros(len(lam))
    if len(form.eps0):
        eps0[: len(form.eps0)] = form.eps0
    s0 = 2.0 * (lam + mu) * eps0                     # isotropic eigenstress per material
    nu = space.n_dofs
    acc = _Accum(2 * nu)
    deg = _degree(space)
    for tb in cell_batches(space, deg, 1):
        mat = mesh.material[tb.cells]
        B = _B(tb)
        D = _elastic_D(lam[mat], mu[mat])
        Ke = np.einsum("cq,cqia,cij,cqjb->cab", tb.w, B, D, B)
        Fe = np.einsum("cq,c,cqia,i->ca", tb.w, s0[mat], B, np.array([1.0, 1.0, 0.0]))
        acc.add_matrix(_vdofs(tb, nu), Ke)
        acc.add_vector(_vdofs(tb, nu), Fe)

    def stress_traction(tb, mat):
        return np.einsum("cki,cij,cqjb->cqkb", _Tn(tb.normal), _elastic_D(lam[mat], mu[mat]), _B(tb))

    cells, edges = _tagged(mesh, form.traction_tags)
    for tb in facet_batches(space, cells, edges, deg, 1):
        mat = mesh.material[tb.cells]
        nrm = np.broadcast_to(tb.normal[:, None, :], tb.x.shape)
        t = form.traction(tb.x, nrm, mat[:, None])
        Fe = np.einsum("cq,cqka,cqk->ca", tb.w, _Nvec(tb), t)
        acc.add_vector(_vdofs(tb, nu), Fe)

    cells, edges = _tagged(mesh, form.symmetry_tags)
    for tb in facet_batches(space, cells, edges, deg, 1):
        mat = mesh.material[tb.cells]
        un = np.einsum("cqka,ck->cqa", _Nvec(tb), tb.normal)
        snn = np.einsum("cqka,ck->cqa", stress_traction(tb, mat), tb.normal)
        pen = (form.beta * mu[mat] / form.h)
        Ke = (-np.einsum("cq,cqa,cqb->cab", tb.w, un, snn)
              - np.einsum("cq,cqa,cqb->cab", tb.w, snn, un)
              + np.einsum("c,cq,cqa,cqb->cab", pen, tb.w, un, un))
        Fe = -np.einsum("c,cq,cqa->ca", s0[mat], tb.w, un)
        acc.add_matrix(_vdofs(tb, nu), Ke)
        acc.add_vector(_vdofs(tb, nu), Fe)

    cells, edges = _tagged(mesh, form.dirichlet_tags)
    pen_d = form.beta * np.max(2 * mu + lam) / form.h
    for tb in facet_batches(space, cells, edges, deg, 1):
        mat = mesh.material[tb.cells]
        Nv = _Nvec(tb)
        sn = stress_traction(tb, mat)
        ub = form.u_bar(tb.x, mat[:, None])
        Ke = (-np.einsum("cq,cqka,cqkb->cab", tb.w, Nv, sn)
              - np.einsum("cq,cqka,cqkb->cab", tb.w, sn, Nv)
              + pen_d * np.einsum("cq,cqka,cqkb->cab", tb.w, Nv, Nv))
        Fe = (np.einsum("cq,cqka,cqk->ca", tb.w, pen_d * Nv - sn, ub)
              - np.einsum("c,cq,cqka,ck->ca", s0[mat], tb.w, Nv, tb.normal))
        acc.add_matrix(_vdofs(tb, nu), Ke)
        acc.add_vector(_vdofs(tb, nu), Fe)

    if len(mesh.interface):
        for A, Bt in interface_batches(space, mesh.interface, deg, 1):
            ma = mesh.material[A.cells]
            mb = mesh.material[Bt.cells]
            jump = np.concatenate([_Nvec(A), -_Nvec(Bt)], axis=-1)
            n = A.normal
            Tn = _Tn(n)
            avg = 0.5 * np.concatenate([
                np.einsum("cki,cij,cqjb->cqkb", Tn, _elastic_D(lam[ma], mu[ma]), _B(A)),
                np.einsum("cki,cij,cqjb->cqkb", Tn, _elastic_D(lam[mb], mu[mb]), _B(Bt))], axis=-1)
            Ke = (-np.einsum("cq,cqka,cqkb->cab", A.w, jump, avg)
                  - np.einsum("cq,cqka,cqkb->cab", A.w, avg, jump)
                  + pen_d * np.einsum("cq,cqka,cqkb->cab", A.w, jump, jump))
            s_avg = 0.5 * (s0[ma] + s0[mb])
            Fe = -np.einsum("c,cq,cqka,ck->ca", s_avg, A.w, jump, n)
            dofs = np.concatenate([A.dofs, A.dofs + nu, Bt.dofs, Bt.dofs + nu], axis=1)
            # local order of jump/avg is [A_x, A_y, B_x, B_y]
            acc.add_matrix(dofs, Ke)
            acc.add_vector(dofs, Fe)
    return acc.finish(2)


def assemble_foreground(form, mesh: Mesh, space: LagrangeSpace) -> AssembledSystem:
    if space.mesh is not mesh:
        raise ValueError("space was built on a different mesh")
    kind = getattr(form, "kind", None)
    if kind == "poisson":
        return _assemble_poisson(form, mesh, space)
    if kind == "biharmonic":
        return _assemble_biharmonic(form, mesh, space)
    if kind == "multimaterial_heat":
        return _assemble_heat(form, mesh, space)
    if kind in ("elasticity", "eigenstrain_elasticity"):
        return _assemble_elasticity(form, mesh, space)
    raise ValueError(f"unknown form kind {kind!r}")


def block_operator(M: ExtractionOperator | sp.spmatrix, n_components: int) -> sp.csr_matrix:
    mat = M.matrix if isinstance(M, ExtractionOperator) else M
    if n_components == 1:
        return sp.csr_matrix(mat)
    return sp.block_diag([mat] * n_components, format="csr")


def reduce_system(system: AssembledSystem, M: ExtractionOperator | sp.spmatrix) -> AssembledSystem:
    """K_hat = M K M^T, F_hat = M F (per component for vector problems)."""
    Mb = block_operator(M, system.n_components)
    if Mb.shape[1] != system.K.shape[0]:
        raise DimensionMismatch(f"operator has {Mb.shape[1]} columns, system has "
                                f"{system.K.shape[0]} dofs")
    K = (Mb @ system.K @ Mb.T).tocsr()
    return AssembledSystem(K, Mb @ system.F, system.n_components, "background")
