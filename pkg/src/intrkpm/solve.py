"""Linear solves, foreground error norms and convergence-rate fits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .assembly import AssembledSystem, cell_batches, interface_batches
from .mesh import Mesh
from .manufactured import ScalarExact, VectorExact
from .space import LagrangeSpace

DIRECT_LIMIT = 200_000


class NotConverged(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class IndefiniteMatrix(ArithmeticError):
    pass


class DegenerateFit(ValueError):
    pass


def _active(K):
    """Rows with a non-negligible diagonal. Background functions that never reach
    the foreground (nodes deep inside a hole) or only graze it give empty or
    numerically null rows; they are pinned to 0."""
    d = np.abs(K.diagonal())
    return d > 1e-300 if d.size == 0 else d > 1e-14 * d.max()


def solve(system: AssembledSystem | tuple, tol: float = 1e-12, direct_limit: int = DIRECT_LIMIT):
    """Solve K d = F to relative residual ``tol``.

    Direct sparse LU (SuperLU) of the Jacobi-scaled matrix with iterative
    refinement up to ``direct_limit`` unknowns; Jacobi-preconditioned CG
    otherwise, or briefly from the direct iterate if that misses ``tol``.
    """
    K, F = (system.K, system.F) if isinstance(system, AssembledSystem) else system
    K = sp.csr_matrix(K)
    F = np.asarray(F, dtype=float)
    if K.shape[0] != K.shape[1] or K.shape[0] != len(F):
        raise ValueError("system dimensions disagree")
    n = len(F)
    d = np.zeros(n)
    fnorm = np.linalg.norm(F)
    if fnorm == 0.0:
        return d
    act = _active(K)
    Ka = K[act][:, act].tocsc()
    Fa = F[act]
    empty = K.diagonal() == 0.0
    if np.linalg.norm(F[empty]) > tol * fnorm:
        raise IndefiniteMatrix("load on rows with an empty stiffness row")

    def resid(x):
        return np.linalg.norm(Ka @ x - Fa) / fnorm

    # symmetric Jacobi scaling: nodes barely reaching the foreground give tiny diagonals
    dsc = 1.0 / np.sqrt(np.abs(Ka.diagonal()))
    x = None
    if Ka.shape[0] <= direct_limit:
        try:
            Ks = (sp.diags(dsc) @ Ka @ sp.diags(dsc)).tocsc()
            lu = spla.splu(Ks, permc_spec="COLAMD")
            x = dsc * lu.solve(dsc * Fa)
            best = resid(x)
            for _ in range(3):
                if best <= tol or not np.isfinite(best):
                    break
                cand = x + dsc * lu.solve(dsc * (Fa - Ka @ x))
                rc = resid(cand)
                if not rc < best:
                    break
                x, best = cand, rc
        except RuntimeError:
            x = None
    if x is None or not np.all(np.isfinite(x)) or resid(x) > tol:
        diag = Ka.diagonal()
        if np.any(diag <= 0):
            raise IndefiniteMatrix("non-positive diagonal; no CG fallback possible")
        P = spla.LinearOperator(Ka.shape, matvec=lambda v: v / diag)
        x0 = x if x is not None and np.all(np.isfinite(x)) else None
        maxiter = 20 * Ka.shape[0] if x0 is None else min(2000, 20 * Ka.shape[0])
        xc, _ = spla.cg(Ka, Fa, x0=x0, rtol=tol * fnorm / max(np.linalg.norm(Fa), 1e-300),
                        atol=0.0, maxiter=maxiter, M=P)
        if x0 is not None and not resid(xc) < resid(x0):
            xc = x0
        if resid(xc) > tol:
            raise NotConverged(f"relative residual {resid(xc):.3e} > {tol:.1e}", resid(xc))
        x = xc
    d[act] = x
    return d


def solve_min_norm(system: AssembledSystem | tuple, rcond: float = 1e-10,
                   dense_limit: int = 8000):
    """Minimum-norm least-squares solution, for systems singular by construction.

    Works on the Jacobi-scaled active block like :func:`solve`; dense LAPACK
    (``gelsy``, singular values below ``rcond`` times the largest dropped) up
    to ``dense_limit`` unknowns, LSQR beyond.
    """
    K, F = (system.K, system.F) if isinstance(system, AssembledSystem) else system
    K = sp.csr_matrix(K)
    F = np.asarray(F, dtype=float)
    d = np.zeros(len(F))
    act = _active(K)
    Ka = K[act][:, act]
    dsc = 1.0 / np.sqrt(np.abs(Ka.diagonal()))
    Ks = sp.diags(dsc) @ Ka @ sp.diags(dsc)
    if Ks.shape[0] <= dense_limit:
        y = sla.lstsq(Ks.toarray(), dsc * F[act], cond=rcond, lapack_driver="gelsy")[0]
    else:
        y = spla.lsqr(Ks, dsc * F[act], atol=1e-14, btol=1e-14, iter_lim=20 * Ks.shape[0])[0]
    d[act] = dsc * y
    return d


@dataclass(eq=False)
class SolutionField:
    d: np.ndarray               # background coefficients
    u_fg: np.ndarray            # foreground coefficients, component-major
    space: LagrangeSpace
    n_components: int = 1


def push_forward(d, M, n_components: int = 1, space: LagrangeSpace | None = None) -> SolutionField:
    from .assembly import block_operator

    Mb = block_operator(M, n_components)
    return SolutionField(d, Mb.T @ d, space, n_components)


def _field(tb, u, dofs_offset=0):
    c = u[tb.dofs + dofs_offset]
    val = np.einsum("cqa,ca->cq", tb.N, c)
    grad = np.einsum("cqad,ca->cqd", tb.d1, c) if tb.d1 is not None else None
    hess = np.einsum("cqad,ca->cqd", tb.d2, c) if tb.d2 is not None else None
    return val, grad, hess


def error_norms(u_fg, exact: ScalarExact, space: LagrangeSpace, order: int = 1,
                degree: int | None = None) -> dict:
    """L2, H1-seminorm and (order 2) H2-seminorm of u_h - u_exact.

    Exact fields are evaluated on the material branch of each cell.
    """
    deg = degree if degree is not None else 2 * space.k + 4
    acc = {"L2": 0.0, "H1": 0.0, "H2": 0.0}
    mesh = space.mesh
    for tb in cell_batches(space, deg, order):
        mat = mesh.material[tb.cells][:, None]
        val, grad, hess = _field(tb, u_fg)
        acc["L2"] += float(np.sum(tb.w * (val - exact.value(tb.x, mat)) ** 2))
        if order >= 1:
            acc["H1"] += float(np.sum(tb.w[..., None] * (grad - exact.grad(tb.x, mat)) ** 2))
        if order >= 2:
            e = hess - exact.hess(tb.x, mat)
            acc["H2"] += float(np.sum(tb.w * (e[..., 0] ** 2 + 2 * e[..., 1] ** 2 + e[..., 2] ** 2)))
    out = {k: np.sqrt(v) for k, v in acc.items()}
    if order < 2:
        out["H2"] = np.nan
    if order < 1:
        out["H1"] = np.nan
    return out


def elastic_error_norms(u_fg, exact: VectorExact, space: LagrangeSpace, lam, mu, eps0=(),
                        degree: int | None = None) -> dict:
    """Displacement L2, gradient H1-seminorm and stress norm of the error."""
    deg = degree if degree is not None else 2 * space.k + 4
    lam = np.atleast_1d(np.asarray(lam, float))
    mu = np.atleast_1d(np.asarray(mu, float))
    e0 = np.zeros(len(lam))
    e0[: len(eps0)] = eps0
    nu = space.n_dofs
    acc = {"L2": 0.0, "H1": 0.0, "energy": 0.0}
    for tb in cell_batches(space, deg, 1):
        mat = space.mesh.material[tb.cells]
        vx, gx, _ = _field(tb, u_fg)
        vy, gy, _ = _field(tb, u_fg, nu)
        val = np.stack([vx, vy], -1)
        grad = np.stack([gx, gy], -2)
        ex_val = exact.value(tb.x, mat[:, None])
        ex_grad = exact.grad(tb.x, mat[:, None])
        acc["L2"] += float(np.sum(tb.w[..., None] * (val - ex_val) ** 2))
        acc["H1"] += float(np.sum(tb.w[..., None, None] * (grad - ex_grad) ** 2))
        eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        tr = eps[..., 0, 0] + eps[..., 1, 1]
        l, m = lam[mat][:, None], mu[mat][:, None]
        s0 = 2.0 * (l + m) * e0[mat][:, None]
        sig = 2 * m[..., None, None] * eps + (l * tr - s0)[..., None, None] * np.eye(2)
        acc["energy"] += float(np.sum(tb.w[..., None, None] * (sig - exact.stress(tb.x, mat[:, None])) ** 2))
    return {k: np.sqrt(v) for k, v in acc.items()}


def has_interface(mesh: Mesh) -> bool:
    return len(mesh.interface) == 4 and len(mesh.interface[0]) > 0


def interface_jump(u_fg, space: LagrangeSpace, n_components: int = 1,
                   degree: int | None = None) -> float:
    """L2 norm over material interfaces of the jump of u_h between the two sides."""
    mesh = space.mesh
    if not has_interface(mesh):
        return 0.0
    deg = degree if degree is not None else 2 * space.k + 2
    nu = space.n_dofs
    acc = 0.0
    for A, B in interface_batches(space, mesh.interface, deg, 0):
        for c in range(n_components):
            va, _, _ = _field(A, u_fg, c * nu)
            vb, _, _ = _field(B, u_fg, c * nu)
            acc += float(np.sum(A.w * (va - vb) ** 2))
    return float(np.sqrt(acc))


def fit_rates(h, errors) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(h), and the last-interval slope."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(h) < 3 or len(h) != len(e):
        raise DegenerateFit("need at least three (h, error) pairs")
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise DegenerateFit("errors must be positive and finite")
    x, y = np.log(h), np.log(e)
    slope = np.polyfit(x, y, 1)[0]
    last = (y[-1] - y[-2]) / (x[-1] - x[-2])
    return float(slope), float(last)
