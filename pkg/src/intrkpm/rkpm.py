"""Reproducing kernel shape functions with first and second derivatives.

Shape functions are ``Psi_I(x) = Phi(x - x_I) * H(0)^T M(x)^{-1} H(x - x_I)``
with a cubic B-spline kernel on circular supports. Evaluation is batched:
points are processed in chunks, the covering pairs of each chunk are found
through the bin index, moment matrices are accumulated with segment sums and
factored with Cholesky.

Internally the monomials are taken in the scaled offset ``(x - x_I) / s`` with
``s`` the mean support radius. This is a diagonal change of basis that leaves
``Psi_I`` unchanged (``H(0) = e_0`` either way) and keeps the moment matrices
well conditioned on fine node sets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .pointcloud import NodeSet, SpatialIndex, covering_pairs, required_coverage

HESS_PAIRS = ((0, 0), (0, 1), (1, 1))   # xx, xy, yy


class SingularMoment(ArithmeticError):
    """Moment matrix not positive definite or too ill conditioned at some points."""

    def __init__(self, msg, points=None):
        super().__init__(msg)
        self.points = points


class NotCovered(ValueError):
    """Evaluation points outside every support."""

    def __init__(self, msg, points=None):
        super().__init__(msg)
        self.points = points


def kernel_eval(z):
    """Cubic B-spline of the normalized radius ``z``: value, d/dz, d2/dz2."""
    z = np.asarray(z, dtype=float)
    w = np.zeros_like(z)
    dw = np.zeros_like(z)
    ddw = np.zeros_like(z)
    inner = z <= 0.5
    outer = (z > 0.5) & (z < 1.0)
    zi = z[inner]
    w[inner] = 2.0 / 3.0 - 4.0 * zi**2 + 4.0 * zi**3
    dw[inner] = -8.0 * zi + 12.0 * zi**2
    ddw[inner] = -8.0 + 24.0 * zi
    zo = z[outer]
    w[outer] = 4.0 / 3.0 - 4.0 * zo + 4.0 * zo**2 - 4.0 / 3.0 * zo**3
    dw[outer] = -4.0 + 8.0 * zo - 4.0 * zo**2
    ddw[outer] = 8.0 - 8.0 * zo
    return w, dw, ddw


def _kernel_over_z(z):
    """``Phi'(z) / z``, finite at the origin."""
    g = np.zeros_like(z)
    inner = z <= 0.5
    outer = (z > 0.5) & (z < 1.0)
    g[inner] = -8.0 + 12.0 * z[inner]
    zo = z[outer]
    g[outer] = (-4.0 + 8.0 * zo - 4.0 * zo**2) / zo
    return g


def monomial_exponents(n: int) -> list[tuple[int, int]]:
    return [(d - j, j) for d in range(n + 1) for j in range(d + 1)]


def basis_vector(xi, n: int, order: int = 0):
    """Monomials ``[1, x, y, x^2, xy, y^2, ...]`` at rows of ``xi``.

    Returns ``H`` of shape (m, n_p) and, when requested, ``dH`` (m, 2, n_p) and
    ``ddH`` (m, 3, n_p) with second derivatives ordered xx, xy, yy.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    exps = monomial_exponents(n)
    x, y = xi[:, 0], xi[:, 1]

    def mono(a, b):
        if a < 0 or b < 0:
            return np.zeros_like(x)
        return x**a * y**b

    H = np.stack([mono(a, b) for a, b in exps], axis=-1)
    out = [H]
    if order >= 1:
        dH = np.stack([
            np.stack([a * mono(a - 1, b) for a, b in exps], axis=-1),
            np.stack([b * mono(a, b - 1) for a, b in exps], axis=-1),
        ], axis=1)
        out.append(dH)
    if order >= 2:
        ddH = np.stack([
            np.stack([a * (a - 1) * mono(a - 2, b) for a, b in exps], axis=-1),
            np.stack([a * b * mono(a - 1, b - 1) for a, b in exps], axis=-1),
            np.stack([b * (b - 1) * mono(a, b - 2) for a, b in exps], axis=-1),
        ], axis=1)
        out.append(ddH)
    return out[0] if order == 0 else tuple(out)


def _chol_solve(L, b):
    """Solve ``L L^T x = b`` for a stack of small factors; ``b`` is (m, k[, r])."""
    k = L.shape[-1]
    y = np.empty_like(b)
    for i in range(k):
        acc = b[:, i].copy()
        for j in range(i):
            acc -= _bcast(L[:, i, j], acc) * y[:, j]
        y[:, i] = acc / _bcast(L[:, i, i], acc)
    x = np.empty_like(b)
    for i in reversed(range(k)):
        acc = y[:, i].copy()
        for j in range(i + 1, k):
            acc -= _bcast(L[:, j, i], acc) * x[:, j]
        x[:, i] = acc / _bcast(L[:, i, i], acc)
    return x


def _bcast(v, like):
    return v.reshape(v.shape + (1,) * (like.ndim - 1))


@dataclass
class ShapeEval:
    """Shape functions of the covering nodes at a single point."""

    x: np.ndarray
    ids: np.ndarray
    values: np.ndarray
    grads: np.ndarray | None
    hessians: np.ndarray | None
    cond: float


@dataclass
class ShapeBatch:
    """Shape functions at many points in compressed-row layout.

    ``ids[indptr[p]:indptr[p+1]]`` are the covering nodes of point ``p``;
    ``grads`` is (nnz, 2) and ``hess`` is (nnz, 3) ordered xx, xy, yy.
    """

    indptr: np.ndarray
    ids: np.ndarray
    values: np.ndarray
    grads: np.ndarray | None
    hess: np.ndarray | None
    cond: np.ndarray
    n_nodes: int

    @property
    def n_points(self) -> int:
        return len(self.indptr) - 1

    def matrix(self, what: str = "value") -> sp.csr_matrix:
        """Sparse (points x nodes) matrix of values or one derivative component.

        ``what`` is one of ``value``, ``x``, ``y``, ``xx``, ``xy``, ``yy``.
        """
        data = {
            "value": lambda: self.values,
            "x": lambda: self.grads[:, 0],
            "y": lambda: self.grads[:, 1],
            "xx": lambda: self.hess[:, 0],
            "xy": lambda: self.hess[:, 1],
            "yy": lambda: self.hess[:, 2],
        }[what]()
        return sp.csr_matrix((data, self.ids, self.indptr),
                             shape=(self.n_points, self.n_nodes))


class RKPMBasis:
    """RKPM basis of reproducing order ``n`` on a node set with assigned supports."""

    def __init__(self, nodes: NodeSet, n: int = 1, cond_cap: float = 1e12,
                 chunk_pairs: int = 60_000):
        if n not in (1, 2):
            raise ValueError("reproducing order must be 1 or 2")
        if nodes.a is None:
            raise ValueError("node supports are not assigned")
        if np.any(nodes.a <= 0):
            raise ValueError("support radii must be positive")
        self.nodes = nodes
        self.n = n
        self.d = 2
        self.n_p = required_coverage(n)
        self.cond_cap = cond_cap
        self.chunk_pairs = chunk_pairs
        self.scale = float(np.mean(nodes.a))
        self.index = SpatialIndex.build(nodes)
        self.kernel_factor = 1.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    # ------------------------------------------------------------------ kernel
    def _kernel(self, d, a, order):
        """Kernel value and Cartesian derivatives for offsets ``d`` = x - x_I."""
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        z = r / a
        w, dw, ddw = kernel_eval(z)
        f = self.kernel_factor
        out = [f * w]
        if order >= 1:
            g = _kernel_over_z(z) / a**2
            out.append(f * g[:, None] * d)
        if order >= 2:
            rad = (ddw / a**2 - g)
            safe = r > 1e-12 * a
            inv_r2 = np.zeros_like(r)
            inv_r2[safe] = 1.0 / r[safe] ** 2
            coef = rad * inv_r2
            hess = np.empty((len(d), 3))
            hess[:, 0] = g + coef * d[:, 0] ** 2
            hess[:, 1] = coef * d[:, 0] * d[:, 1]
            hess[:, 2] = g + coef * d[:, 1] ** 2
            out.append(f * hess)
        return out

    # ----------------------------------------------------------- moment matrix
    def _moment_parts(self, d, a, order, scale):
        kern = self._kernel(d, a, order)
        mono = basis_vector(d / scale, self.n, order)
        if order == 0:
            mono = (mono,)
        H = mono[0]
        phi = kern[0]
        parts = {"H": H, "phi": phi}
        parts["M"] = phi[:, None, None] * (H[:, :, None] * H[:, None, :])
        if order >= 1:
            dH = mono[1] / scale
            dphi = kern[1]
            parts["dH"], parts["dphi"] = dH, dphi
            HH = H[:, :, None] * H[:, None, :]
            dM = np.empty((len(d), 2) + HH.shape[1:])
            for k in range(2):
                sym = dH[:, k, :, None] * H[:, None, :]
                dM[:, k] = dphi[:, k, None, None] * HH + phi[:, None, None] * (sym + sym.transpose(0, 2, 1))
            parts["dM"] = dM
        if order >= 2:
            ddH = mono[2] / scale**2
            ddphi = kern[2]
            parts["ddH"], parts["ddphi"] = ddH, ddphi
            ddM = np.empty((len(d), 3) + HH.shape[1:])
            for c, (k, l) in enumerate(HESS_PAIRS):
                symk = dH[:, k, :, None] * H[:, None, :]
                syml = dH[:, l, :, None] * H[:, None, :]
                cross = dH[:, k, :, None] * dH[:, l, None, :]
                curv = ddH[:, c, :, None] * H[:, None, :]
                ddM[:, c] = (ddphi[:, c, None, None] * HH
                             + dphi[:, k, None, None] * (syml + syml.transpose(0, 2, 1))
                             + dphi[:, l, None, None] * (symk + symk.transpose(0, 2, 1))
                             + phi[:, None, None] * (curv + curv.transpose(0, 2, 1)
                                                     + cross + cross.transpose(0, 2, 1)))
            parts["ddM"] = ddM
        return parts

    def moment_matrix(self, x, order: int = 0, scale: float = 1.0):
        """``M(x)`` and its derivatives, in the plain monomials ``H(x - x_I)``.

        Returns ``(M, dM, ddM)``; ``dM`` is (2, n_p, n_p), ``ddM`` (3, n_p, n_p)
        ordered xx, xy, yy. Derivatives are ``None`` beyond ``order``.
        """
        x = np.asarray(x, dtype=float).reshape(1, 2)
        _, ids = covering_pairs(self.index, self.nodes, x)
        if len(ids) < self.n_p:
            raise SingularMoment(f"only {len(ids)} supports cover {x[0]}, need {self.n_p}", x)
        d = x - self.nodes.coords[ids]
        parts = self._moment_parts(d, self.nodes.a[ids], order, scale)
        M = parts["M"].sum(axis=0)
        dM = parts["dM"].sum(axis=0) if order >= 1 else None
        ddM = parts["ddM"].sum(axis=0) if order >= 2 else None
        return M, dM, ddM

    # ---------------------------------------------------------- shape functions
    def evaluate(self, points, order: int = 0) -> ShapeBatch:
        """Shape functions (and derivatives up to ``order``) at many points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        npts = len(points)
        p_all, q_all = covering_pairs(self.index, self.nodes, points)
        counts = np.bincount(p_all, minlength=npts)
        if np.any(counts == 0):
            bad = points[counts == 0]
            raise NotCovered(f"{len(bad)} points lie outside every support, e.g. {bad[0]}", bad)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        nnz = len(q_all)
        values = np.empty(nnz)
        grads = np.empty((nnz, 2)) if order >= 1 else None
        hess = np.empty((nnz, 3)) if order >= 2 else None
        cond = np.empty(npts)
        # chunk boundaries on whole points
        per = max(1, int(self.chunk_pairs / max(1.0, nnz / npts)))
        for p0 in range(0, npts, per):
            p1 = min(npts, p0 + per)
            s0, s1 = indptr[p0], indptr[p1]
            sl = slice(s0, s1)
            res = self._evaluate_chunk(points, p_all[sl], q_all[sl],
                                       indptr[p0:p1 + 1] - s0, order)
            values[sl] = res[0]
            if order >= 1:
                grads[sl] = res[1]
            if order >= 2:
                hess[sl] = res[2]
            cond[p0:p1] = res[-1]
        return ShapeBatch(indptr, q_all, values, grads, hess, cond, self.n_nodes)

    def _evaluate_chunk(self, points, p, q, seg, order):
        d = points[p] - self.nodes.coords[q]
        kern = self._kernel(d, self.nodes.a[q], order)
        mono = basis_vector(d / self.scale, self.n, order)
        if order == 0:
            mono = (mono,)
        H, phi = mono[0], kern[0]
        starts = seg[:-1]
        M = np.add.reduceat(phi[:, None, None] * H[:, :, None] * H[:, None, :], starts, axis=0)
        lam = np.linalg.eigvalsh(M)
        lo, hi = lam[:, 0], lam[:, -1]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(lo > 0, hi / lo, np.inf)
        bad = ~(cond <= self.cond_cap)
        if np.any(bad):
            pts = points[np.unique(p)][bad]
            raise SingularMoment(
                f"moment matrix singular or ill conditioned at {len(pts)} points, e.g. {pts[0]}", pts)
        L = np.linalg.cholesky(M)
        e0 = np.zeros((len(M), self.n_p))
        e0[:, 0] = 1.0
        b = _chol_solve(L, e0)
        pid = np.repeat(np.arange(len(starts)), np.diff(seg))
        bp = b[pid]
        Hb = np.einsum("ij,ij->i", H, bp)
        out = [phi * Hb]
        if order >= 1:
            dH = mono[1] / self.scale
            dphi = kern[1]

            def dM_apply(k, v):
                """(dM/dx_k) v, summed over the covering nodes of each point."""
                vp = v[pid]
                Hv = np.einsum("ij,ij->i", H, vp)
                dHv = np.einsum("ij,ij->i", dH[:, k], vp)
                pair = (dphi[:, k] * Hv)[:, None] * H + phi[:, None] * (Hv[:, None] * dH[:, k]
                                                                      + dHv[:, None] * H)
                return np.add.reduceat(pair, starts, axis=0)

            db = np.stack([-_chol_solve(L, dM_apply(k, b)) for k in range(2)], axis=1)
            dbp = db[pid]
            dHb = np.einsum("ikj,ij->ik", dH, bp)          # (nnz, 2)
            Hdb = np.einsum("ij,ikj->ik", H, dbp)          # (nnz, 2)
            out.append(dphi * Hb[:, None] + phi[:, None] * (dHb + Hdb))
        if order >= 2:
            ddH = mono[2] / self.scale**2
            ddphi = kern[2]
            ddb = np.empty((len(M), 3, self.n_p))
            for c, (k, l) in enumerate(HESS_PAIRS):
                ddHb = np.einsum("ij,ij->i", ddH[:, c], bp)
                pair = (ddphi[:, c] * Hb)[:, None] * H
                pair += dphi[:, k, None] * (Hb[:, None] * dH[:, l] + dHb[:, l, None] * H)
                pair += dphi[:, l, None] * (Hb[:, None] * dH[:, k] + dHb[:, k, None] * H)
                pair += phi[:, None] * (ddHb[:, None] * H + Hb[:, None] * ddH[:, c]
                                        + dHb[:, k, None] * dH[:, l] + dHb[:, l, None] * dH[:, k])
                rhs = (np.add.reduceat(pair, starts, axis=0)
                       + dM_apply(k, db[:, l]) + dM_apply(l, db[:, k]))
                ddb[:, c] = -_chol_solve(L, rhs)
            ddbp = ddb[pid]
            hess = np.empty((len(p), 3))
            for c, (k, l) in enumerate(HESS_PAIRS):
                dHk_db_l = np.einsum("ij,ij->i", dH[:, k], dbp[:, l])
                dHl_db_k = np.einsum("ij,ij->i", dH[:, l], dbp[:, k])
                hess[:, c] = (ddphi[:, c] * Hb
                              + dphi[:, k] * (dHb[:, l] + Hdb[:, l])
                              + dphi[:, l] * (dHb[:, k] + Hdb[:, k])
                              + phi * (np.einsum("ij,ij->i", ddH[:, c], bp)
                                       + dHk_db_l + dHl_db_k
                                       + np.einsum("ij,ij->i", H, ddbp[:, c])))
            out.append(hess)
        out.append(cond)
        return out

    def shape_functions(self, x, order: int = 0) -> ShapeEval:
        """Shape functions of the nodes covering the single point ``x``."""
        x = np.asarray(x, dtype=float).reshape(1, 2)
        batch = self.evaluate(x, order)
        return ShapeEval(x[0], batch.ids, batch.values, batch.grads, batch.hess,
                         float(batch.cond[0]))

    def reproduce_check(self, probes) -> dict[tuple[int, int], dict[str, float]]:
        """Max reproduction residual of each monomial up to order ``n``.

        Keys are exponent pairs ``(i, j)`` of ``x^i y^j``; values hold the
        residuals of the function values and of the two gradient components.
        Monomials of degree ``n + 1`` are included for reference.
        """
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        batch = self.evaluate(probes, order=1)
        V, Dx, Dy = batch.matrix("value"), batch.matrix("x"), batch.matrix("y")
        xI = self.nodes.coords
        report = {}
        for a, b in monomial_exponents(self.n + 1):
            f_nodes = xI[:, 0] ** a * xI[:, 1] ** b
            f = probes[:, 0] ** a * probes[:, 1] ** b
            fx = a * probes[:, 0] ** max(a - 1, 0) * probes[:, 1] ** b if a else 0.0 * f
            fy = b * probes[:, 0] ** a * probes[:, 1] ** max(b - 1, 0) if b else 0.0 * f
            report[(a, b)] = {
                "value": float(np.max(np.abs(V @ f_nodes - f))),
                "grad_x": float(np.max(np.abs(Dx @ f_nodes - fx))),
                "grad_y": float(np.max(np.abs(Dy @ f_nodes - fy))),
            }
        return report
