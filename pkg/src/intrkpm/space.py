"""Lagrange function spaces on foreground meshes and their physical tabulation.

Quads use the bilinear map from [-1, 1]^2, triangles the affine map from the
unit triangle. Physical second derivatives carry the full chain rule of the
bilinear map; third derivatives are available on affine cells only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lagrange import DERIV_INDEX, REF_VERTICES, ref_element
from .mesh import Mesh, merge_points

KINDS = ("quad", "tri")


class SingularJacobian(ArithmeticError):
    pass


def geometry_basis(kind: str, pts: np.ndarray):
    """Vertex shape functions of the geometry map: G (nq, nv), dG (nq, nv, 2), d2G (nq, nv, 3)."""
    pts = np.atleast_2d(pts)
    xi, eta = pts[:, 0], pts[:, 1]
    if kind == "quad":
        sv = REF_VERTICES["quad"]
        a, b = sv[:, 0], sv[:, 1]
        fx = 1.0 + np.outer(xi, a)
        fy = 1.0 + np.outer(eta, b)
        G = 0.25 * fx * fy
        dG = np.stack([0.25 * a * fy, 0.25 * fx * b], axis=-1)
        d2G = np.zeros((len(pts), 4, 3))
        d2G[:, :, 1] = 0.25 * a * b
        return G, dG, d2G
    G = np.column_stack([1.0 - xi - eta, xi, eta])
    dG = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(pts), 3, 2)).copy()
    return G, dG, np.zeros((len(pts), 3, 3))


def _full2(c):
    """(..., 3) symmetric components -> (..., 2, 2)."""
    return np.stack([np.stack([c[..., 0], c[..., 1]], -1),
                     np.stack([c[..., 1], c[..., 2]], -1)], -2)


def _full3(c):
    """(..., 4) components xxx, xxy, xyy, yyy -> (..., 2, 2, 2)."""
    idx = np.array([[[0, 1], [1, 2]], [[1, 2], [2, 3]]])
    return c[..., idx]


def _pack2(t):
    return np.stack([t[..., 0, 0], t[..., 0, 1], t[..., 1, 1]], -1)


def _pack3(t):
    return np.stack([t[..., 0, 0, 0], t[..., 0, 0, 1], t[..., 0, 1, 1], t[..., 1, 1, 1]], -1)


@dataclass(eq=False)
class Tab:
    """Physical tabulation of basis functions on a batch of cells or facets.

    Shapes: x (n, nq, 2), w (n, nq), N (n, nq, L), d1 (n, nq, L, 2),
    d2 (n, nq, L, 3), d3 (n, nq, L, 4), dofs (n, L), cells (n,).
    Facet tabulations may pad L with zero functions on dof 0.
    """

    x: np.ndarray
    w: np.ndarray
    N: np.ndarray
    dofs: np.ndarray
    cells: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    d3: np.ndarray | None = None
    normal: np.ndarray | None = None     # facets only, (n, 2)
    length: np.ndarray | None = None     # facets only, (n,)


class LagrangeSpace:
    """Q_k / P_k Lagrange space with CG (shared by coordinate) or DG numbering."""

    def __init__(self, mesh: Mesh, k: int, continuity: str = "CG"):
        if k < 1:
            raise ValueError("Lagrange order must be >= 1")
        if continuity not in ("CG", "DG"):
            raise ValueError("continuity must be 'CG' or 'DG'")
        self.mesh = mesh
        self.k = k
        self.continuity = continuity
        coords, local = [], {}
        offset = 0
        for kind in KINDS:
            conn = mesh.kind_connectivity(kind)
            if len(conn) == 0:
                continue
            ref = ref_element(kind, k)
            G, _, _ = geometry_basis(kind, ref.nodes)
            x = np.einsum("qa,cad->cqd", G, mesh.vertices[conn])
            coords.append(x.reshape(-1, 2))
            n = conn.shape[0] * ref.n_local
            local[kind] = np.arange(offset, offset + n).reshape(conn.shape[0], ref.n_local)
            offset += n
        allx = np.vstack(coords) if coords else np.zeros((0, 2))
        if continuity == "CG" and len(allx):
            size = np.sqrt(np.min(np.abs(mesh.cell_areas())))
            self.dof_coords, inv = merge_points(allx, 1e-9 * size / k)
        else:
            self.dof_coords, inv = allx, np.arange(len(allx))
        self.cell_dof_table = {kind: inv[ids] for kind, ids in local.items()}

    @property
    def n_dofs(self) -> int:
        return len(self.dof_coords)

    def ref(self, kind):
        return ref_element(kind, self.k)

    def kinds(self):
        return [kind for kind in KINDS if kind in self.cell_dof_table]

    def cell_dofs(self, cell: int) -> np.ndarray:
        kind = self.mesh.kind(cell)
        loc = cell if kind == "quad" else cell - self.mesh.n_quads
        return self.cell_dof_table[kind][loc]

    def tabulate(self, kind: str, local_cells, ref_pts, order: int = 1,
                 ref_weights=None) -> Tab:
        """Tabulate on cells ``local_cells`` (indices within ``kind``).

        ``ref_pts`` is either (nq, 2), shared by all cells, or (nc, nq, 2).
        """
        local_cells = np.asarray(local_cells, dtype=np.int64)
        ref_pts = np.asarray(ref_pts, dtype=float)
        nc = len(local_cells)
        if ref_pts.ndim == 2:
            nq = len(ref_pts)
            flat = ref_pts
        else:
            nq = ref_pts.shape[1]
            flat = ref_pts.reshape(-1, 2)

        def per_cell(a):
            if ref_pts.ndim == 2:
                return np.broadcast_to(a, (nc,) + a.shape)
            return a.reshape((nc, nq) + a.shape[1:])

        conn = self.mesh.kind_connectivity(kind)[local_cells]
        verts = self.mesh.vertices[conn]
        G, dG, d2G = (per_cell(a) for a in geometry_basis(kind, flat))
        x = np.einsum("cqa,cad->cqd", G, verts)
        J = np.einsum("cqaj,cai->cqij", dG, verts)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0.0):
            bad = local_cells[np.any(det <= 0.0, axis=1)]
            raise SingularJacobian(f"non-positive Jacobian on {kind} cells {bad[:5].tolist()}")
        Ginv = np.empty_like(J)
        Ginv[..., 0, 0] = J[..., 1, 1] / det
        Ginv[..., 1, 1] = J[..., 0, 0] / det
        Ginv[..., 0, 1] = -J[..., 0, 1] / det
        Ginv[..., 1, 0] = -J[..., 1, 0] / det
        R = [per_cell(a) for a in self.ref(kind).tabulate(flat, order)]
        w = det * (ref_weights if ref_weights is not None else 1.0)
        start = 0 if kind == "quad" else self.mesh.n_quads
        tab = Tab(x, w, R[0], self.cell_dof_table[kind][local_cells], start + local_cells)
        if order >= 1:
            tab.d1 = np.einsum("cqlj,cqji->cqli", R[1], Ginv)
        if order >= 2:
            d2 = np.einsum("cqia,cqlij,cqjb->cqlab", Ginv, _full2(R[2]), Ginv)
            X = np.einsum("cqam,cak->cqkm", d2G, verts)          # (nc, nq, 2, 3)
            if np.any(X):
                C = np.einsum("cqia,cqkij,cqjb->cqkab", Ginv, _full2(X), Ginv)
                d2 = d2 - np.einsum("cqlk,cqkab->cqlab", tab.d1, C)
            tab.d2 = _pack2(d2)
        if order >= 3:
            X = np.einsum("cqam,cak->cqkm", d2G, verts)
            scale = np.abs(verts).max() + 1.0
            if np.abs(X).max(initial=0.0) > 1e-12 * scale:
                raise NotImplementedError("third derivatives need affine cells")
            d3 = np.einsum("cqia,cqjb,cqkd,cqlijk->cqlabd", Ginv, Ginv, Ginv, _full3(R[3]))
            tab.d3 = _pack3(d3)
        return tab

    def tabulate_facets(self, cells, edges, t, order: int = 1, reverse=None,
                        t_weights=None) -> Tab:
        """Tabulate on local edges at line parameters ``t`` in [0, 1].

        ``reverse`` flags facets whose parameter runs backwards (the second
        side of an interior facet). Results are padded to a common local
        size and returned in input order; ``w`` holds ``t_weights`` scaled by
        the edge length.
        """
        cells = np.asarray(cells, dtype=np.int64)
        edges = np.asarray(edges, dtype=np.int64)
        t = np.asarray(t, dtype=float)
        nf, nq = len(cells), len(t)
        rev = np.zeros(nf, bool) if reverse is None else np.asarray(reverse, bool)
        L = max(self.ref(kind).n_local for kind in self.kinds())
        x = np.zeros((nf, nq, 2))
        N = np.zeros((nf, nq, L))
        dofs = np.zeros((nf, L), dtype=np.int64)
        d1 = np.zeros((nf, nq, L, 2)) if order >= 1 else None
        d2 = np.zeros((nf, nq, L, 3)) if order >= 2 else None
        d3 = np.zeros((nf, nq, L, len(DERIV_INDEX[3]))) if order >= 3 else None
        isq = cells < self.mesh.n_quads
        for kind, mask in (("quad", isq), ("tri", ~isq)):
            for e in np.unique(edges[mask]):
                for r in (False, True):
                    sel = np.nonzero(mask & (edges == e) & (rev == r))[0]
                    if len(sel) == 0:
                        continue
                    ref = self.ref(kind)
                    pts = ref.edge_points(e, 1.0 - t if r else t)
                    loc = cells[sel] - (0 if kind == "quad" else self.mesh.n_quads)
                    tb = self.tabulate(kind, loc, pts, order)
                    nl = ref.n_local
                    x[sel] = tb.x
                    N[sel, :, :nl] = tb.N
                    dofs[sel, :nl] = tb.dofs
                    if order >= 1:
                        d1[sel, :, :nl] = tb.d1
                    if order >= 2:
                        d2[sel, :, :nl] = tb.d2
                    if order >= 3:
                        d3[sel, :, :nl] = tb.d3
        ev = self.mesh.edge_vertices(cells, edges)
        tvec = self.mesh.vertices[ev[:, 1]] - self.mesh.vertices[ev[:, 0]]
        length = np.linalg.norm(tvec, axis=1)
        normal = np.column_stack([tvec[:, 1], -tvec[:, 0]]) / length[:, None]
        tw = np.ones(nq) if t_weights is None else np.asarray(t_weights)
        return Tab(x, length[:, None] * tw[None, :], N, dofs, cells, d1, d2, d3, normal, length)

    def locate(self, cells, points, tol: float = 1e-12, maxit: int = 30) -> np.ndarray:
        """Reference coordinates of physical ``points`` in ``cells`` (Newton on the map)."""
        cells = np.asarray(cells, dtype=np.int64)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros_like(points)
        isq = cells < self.mesh.n_quads
        for kind, mask in (("quad", isq), ("tri", ~isq)):
            if not mask.any():
                continue
            conn = self.mesh.kind_connectivity(kind)
            loc = cells[mask] - (0 if kind == "quad" else self.mesh.n_quads)
            verts = self.mesh.vertices[conn[loc]]
            p = points[mask]
            xi = np.zeros_like(p) if kind == "quad" else np.full_like(p, 1.0 / 3.0)
            for _ in range(maxit):
                G, dG, _ = geometry_basis(kind, xi)
                r = np.einsum("ca,cad->cd", G, verts) - p
                J = np.einsum("caj,cai->cij", dG, verts)
                step = np.linalg.solve(J, r[..., None])[..., 0]
                xi = xi - step
                if np.abs(step).max() < tol:
                    break
            out[mask] = xi
        return out

    def evaluate_at(self, cells, points, order: int = 1) -> Tab:
        """Tabulate each point in its own cell; nq = 1 and L is padded."""
        cells = np.asarray(cells, dtype=np.int64)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ref = self.locate(cells, points)
        L = max(self.ref(kind).n_local for kind in self.kinds())
        n = len(cells)
        out = Tab(np.zeros((n, 1, 2)), np.ones((n, 1)), np.zeros((n, 1, L)),
                  np.zeros((n, L), dtype=np.int64), cells,
                  np.zeros((n, 1, L, 2)) if order >= 1 else None,
                  np.zeros((n, 1, L, 3)) if order >= 2 else None)
        isq = cells < self.mesh.n_quads
        for kind, mask in (("quad", isq), ("tri", ~isq)):
            sel = np.nonzero(mask)[0]
            if len(sel) == 0:
                continue
            loc = cells[sel] - (0 if kind == "quad" else self.mesh.n_quads)
            tb = self.tabulate(kind, loc, ref[sel][:, None, :], order)
            nl = tb.N.shape[-1]
            out.x[sel] = tb.x
            out.N[sel, :, :nl] = tb.N
            out.dofs[sel, :nl] = tb.dofs
            if order >= 1:
                out.d1[sel, :, :nl] = tb.d1
            if order >= 2:
                out.d2[sel, :, :nl] = tb.d2
        return out


def eval_space(space: LagrangeSpace, cell: int, ref_point):
    """Physical values, gradients and second derivatives of the cell's local basis."""
    kind = space.mesh.kind(cell)
    loc = cell if kind == "quad" else cell - space.mesh.n_quads
    tb = space.tabulate(kind, [loc], np.atleast_2d(ref_point), order=2)
    return tb.N[0, 0], tb.d1[0, 0], tb.d2[0, 0]
