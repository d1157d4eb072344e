"""Classic RKPM baseline: shape functions evaluated directly at Gauss points of a
uniform background cell grid. Only rectangular domains are supported.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledSystem, HeatForm, PoissonForm
from .extraction import EnrichmentMap
from .mesh import grid_breaks
from .pointcloud import NodeSet, Rectangle
from .rkpm import RKPMBasis

SIDE_NORMALS = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "bottom": (0.0, -1.0), "top": (0.0, 1.0)}


def gauss_grid(domain: Rectangle, h: float, ngauss: int, breaks=()):
    """Tensor Gauss points and weights on a cell grid of size ~h (conforming to x-breaks)."""
    xs = grid_breaks(domain.xmin, domain.xmax, h, breaks)
    ys = grid_breaks(domain.ymin, domain.ymax, h)
    g, w = np.polynomial.legendre.leggauss(ngauss)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w

    def axis(br):
        lo, hi = br[:-1, None], br[1:, None]
        return (lo + (hi - lo) * g).ravel(), ((hi - lo) * w).ravel()

    px, wx = axis(xs)
    py, wy = axis(ys)
    X, Y = np.meshgrid(px, py)
    W = np.outer(wy, wx)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel(), xs, ys


def side_points(domain: Rectangle, side: str, xs, ys, ngauss: int):
    g, w = np.polynomial.legendre.leggauss(ngauss)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    br = ys if side in ("left", "right") else xs
    lo, hi = br[:-1, None], br[1:, None]
    t = (lo + (hi - lo) * g).ravel()
    wt = ((hi - lo) * w).ravel()
    fixed = {"left": domain.xmin, "right": domain.xmax,
             "bottom": domain.ymin, "top": domain.ymax}[side]
    if side in ("left", "right"):
        pts = np.column_stack([np.full_like(t, fixed), t])
    else:
        pts = np.column_stack([t, np.full_like(t, fixed)])
    return pts, wt


def strip_enrichment(nodes: NodeSet, breaks, n_materials: int | None = None) -> EnrichmentMap:
    """Exact enrichment for vertical material interfaces at ``breaks``.

    Material ``m`` occupies the strip between consecutive breaks; node I touches
    every strip its support interval (x_I - a_I, x_I + a_I) meets.
    """
    edges = np.concatenate([[-np.inf], np.sort(breaks), [np.inf]])
    L = len(edges) - 1 if n_materials is None else n_materials
    x, a = nodes.coords[:, 0], nodes.a
    touch = (x[:, None] - a[:, None] < edges[None, 1:]) & (x[:, None] + a[:, None] > edges[None, :-1])
    node_materials = [np.nonzero(r)[0] for r in touch]
    rows = np.array([(i, m) for i, ms in enumerate(node_materials) for m in ms], dtype=np.int64)
    row_of = -np.ones((len(nodes), L), dtype=np.int64)
    row_of[rows[:, 0], rows[:, 1]] = np.arange(len(rows))
    return EnrichmentMap(L, node_materials, rows, row_of)


def _gated(mat: sp.csr_matrix, point_material, enr: EnrichmentMap | None):
    if enr is None:
        return mat
    coo = mat.tocoo()
    r = enr.row_of[coo.col, point_material[coo.row]]
    keep = r >= 0
    return sp.csr_matrix((coo.data[keep], (coo.row[keep], r[keep])),
                         shape=(mat.shape[0], enr.n_rows))


def _shape_mats(basis, pts, mats, enr):
    B = basis.evaluate(pts, order=1)
    return [_gated(B.matrix(w), mats, enr) for w in ("value", "x", "y")]


def assemble_classic(form, basis: RKPMBasis, domain: Rectangle, ngauss: int | None = None,
                     cell_h: float | None = None, breaks=(), material_fn=None,
                     enrichment: EnrichmentMap | None = None) -> AssembledSystem:
    """Background-sized system by direct Gauss quadrature of the RKPM basis.

    ``ngauss`` defaults to 6 points per direction for n = 1 and 8 for n = 2;
    the cell grid size defaults to the average nodal spacing.
    """
    if form.kind not in ("poisson", "multimaterial_heat"):
        raise ValueError("classic assembly supports poisson and multimaterial_heat only")
    ng = ngauss or (6 if basis.n == 1 else 8)
    h = cell_h or basis.nodes.avg_spacing
    heat = form.kind == "multimaterial_heat"
    kap = np.atleast_1d(np.asarray(form.kappa if heat else 1.0, dtype=float))

    def material(x):
        return np.zeros(len(x), dtype=np.int64) if material_fn is None else material_fn(x)

    pts, w, xs, ys = gauss_grid(domain, h, ng, breaks)
    m = material(pts)
    N, Bx, By = _shape_mats(basis, pts, m, enrichment)
    kw = sp.diags(w * kap[m])
    K = Bx.T @ kw @ Bx + By.T @ kw @ By
    f = form.f(pts, m) if heat else form.f(pts)
    F = N.T @ (w * f)

    pen0 = form.beta_d if heat else form.c_pen
    for side in form.dirichlet:
        bp, bw = side_points(domain, side, xs, ys, ng)
        # nudge inside so the material rule picks the cell's side at corners/breaks
        bm = material(bp + 1e-12 * (np.array([domain.xmax + domain.xmin, domain.ymax + domain.ymin]) / 2 - bp))
        Nb, Bxb, Byb = _shape_mats(basis, bp, bm, enrichment)
        n = SIDE_NORMALS[side]
        k = kap[bm]
        dn = sp.diags(k) @ (n[0] * Bxb + n[1] * Byb)
        W = sp.diags(bw)
        pen = sp.diags(bw * pen0 * k / form.h)
        K = K - Nb.T @ W @ dn - dn.T @ W @ Nb + Nb.T @ pen @ Nb
        g = form.g(bp, bm) if heat else form.g(bp)
        F = F - dn.T @ (bw * g) + Nb.T @ (pen @ g)

    if heat and enrichment is not None:
        wa, wb = form.weights
        for xb in sorted(breaks):
            bp, bw = side_points(Rectangle(xb, domain.xmax, domain.ymin, domain.ymax),
                                 "left", xs, ys, ng)
            ma = material(bp - np.array([1e-9, 0.0]))
            mb = material(bp + np.array([1e-9, 0.0]))
            NA, BxA, _ = _shape_mats(basis, bp, ma, enrichment)
            NB, BxB, _ = _shape_mats(basis, bp, mb, enrichment)
            J = NA - NB
            Q = sp.diags(wa * kap[ma]) @ BxA + sp.diags(wb * kap[mb]) @ BxB
            gamma = form.gamma if form.gamma is not None else form.beta_d * np.maximum(kap[ma], kap[mb]) / form.h
            W = sp.diags(bw)
            K = K - J.T @ W @ Q - Q.T @ W @ J + J.T @ sp.diags(bw * gamma) @ J
    return AssembledSystem(sp.csr_matrix(K), np.asarray(F).ravel(), 1, "background")


def classic_errors(basis: RKPMBasis, d, exact, domain: Rectangle, ngauss: int | None = None,
                   cell_h: float | None = None, breaks=(), material_fn=None,
                   enrichment: EnrichmentMap | None = None) -> dict:
    """L2 and H1-seminorm errors of sum_I Psi_I d_I on a Gauss grid."""
    ng = (ngauss or (6 if basis.n == 1 else 8))
    h = cell_h or basis.nodes.avg_spacing
    pts, w, _, _ = gauss_grid(domain, h, ng, breaks)
    m = np.zeros(len(pts), dtype=np.int64) if material_fn is None else material_fn(pts)
    N, Bx, By = _shape_mats(basis, pts, m, enrichment)
    u, ux, uy = N @ d, Bx @ d, By @ d
    e0 = u - exact.value(pts, m)
    g = exact.grad(pts, m)
    return {"L2": float(np.sqrt(np.sum(w * e0**2))),
            "H1": float(np.sqrt(np.sum(w * ((ux - g[:, 0]) ** 2 + (uy - g[:, 1]) ** 2)))),
            "H2": np.nan}
