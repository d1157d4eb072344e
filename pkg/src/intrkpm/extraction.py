"""Extraction operators from RKPM coefficients to Lagrange foreground coefficients.

Row ``I`` of an operator holds the background function ``Psi_I`` sampled at
the dof coordinates of a Lagrange space, so ``u_fg = M.T @ d``. Enriched
operators have one row per (node, material) pair; the foreground space must
then be DG so every column belongs to exactly one cell, and hence one material.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import Mesh, Midground
from .rkpm import RKPMBasis
from .space import LagrangeSpace

DROP_TOL = 1e-14


class DimensionMismatch(ValueError):
    pass


@dataclass(eq=False)
class ExtractionOperator:
    """Sparse (rows x nu) operator; ``rows[r] = (node, material)`` (-1 if unenriched)."""

    matrix: sp.csc_matrix
    rows: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def push(self, d: np.ndarray) -> np.ndarray:
        """Foreground coefficients ``M^T d``."""
        return self.matrix.T @ d

    def save(self, path: str | Path) -> None:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        data = np.column_stack([coo.row[order], coo.col[order], coo.data[order]])
        np.savetxt(path, data, fmt=["%d", "%d", "%.17g"],
                   header=f"{self.shape[0]} {self.shape[1]}", comments="")


@dataclass(eq=False)
class DoubleExtraction:
    M1: ExtractionOperator      # background -> midground
    M2: sp.csr_matrix           # midground -> foreground
    M: ExtractionOperator       # composite


@dataclass(eq=False)
class EnrichmentMap:
    n_materials: int
    node_materials: list        # sorted material list per node
    rows: np.ndarray            # (n_rows, 2): (node, material)
    row_of: np.ndarray          # (NP, L) row id or -1
    mid_materials: np.ndarray | None = None   # (n_mid_cells, L) bool, psi_mg

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def enriched_nodes(self) -> np.ndarray:
        return np.array([i for i, m in enumerate(self.node_materials) if len(m) > 1], dtype=int)


def _clean(m) -> sp.csc_matrix:
    m = sp.csc_matrix(m)
    m.data[np.abs(m.data) < DROP_TOL] = 0.0
    m.eliminate_zeros()
    m.sort_indices()
    return m


def compute_extraction(basis: RKPMBasis, space: LagrangeSpace) -> ExtractionOperator:
    batch = basis.evaluate(space.dof_coords, order=0)
    M = _clean(batch.matrix("value").T)
    return ExtractionOperator(M, np.column_stack([np.arange(M.shape[0]), -np.ones(M.shape[0], int)]))


def _dof_owner(space: LagrangeSpace) -> np.ndarray:
    """First cell (in cell order) holding each dof."""
    cells, dofs = [], []
    for kind in space.kinds():
        tbl = space.cell_dof_table[kind]
        start = 0 if kind == "quad" else space.mesh.n_quads
        cells.append(np.repeat(start + np.arange(len(tbl)), tbl.shape[1]))
        dofs.append(tbl.ravel())
    cells = np.concatenate(cells)
    dofs = np.concatenate(dofs)
    _, first = np.unique(dofs, return_index=True)
    return cells[first]


def midground_interpolation(mid: Midground, fg: LagrangeSpace) -> sp.csr_matrix:
    """M2: midground basis at foreground dof coordinates (mu x nu)."""
    owner = _dof_owner(fg)
    mcell = mid.fg_to_mid[owner]
    tab = mid.space.evaluate_at(mcell, fg.dof_coords, order=0)
    L = mid.space.ref("quad").n_local
    vals = tab.N[:, 0, :L]
    cols = np.repeat(np.arange(fg.n_dofs), L)
    M2 = sp.csr_matrix((vals.ravel(), (tab.dofs[:, :L].ravel(), cols)),
                       shape=(mid.space.n_dofs, fg.n_dofs))
    return _clean(M2).tocsr()


def compute_double_extraction(basis: RKPMBasis, mid: Midground,
                              fg: LagrangeSpace) -> DoubleExtraction:
    M1 = compute_extraction(basis, mid.space)
    M2 = midground_interpolation(mid, fg)
    M = _clean(M1.matrix @ M2)
    return DoubleExtraction(M1, M2, ExtractionOperator(M, M1.rows.copy()))


# ------------------------------------------------------------------ enrichment
def _cell_polygons(mesh: Mesh) -> np.ndarray:
    """(n_cells, 4, 2) vertex arrays; triangles repeat their last vertex."""
    polys = np.zeros((mesh.n_cells, 4, 2))
    polys[: mesh.n_quads] = mesh.vertices[mesh.quads]
    if mesh.n_tris:
        t = mesh.vertices[mesh.tris]
        polys[mesh.n_quads:, :3] = t
        polys[mesh.n_quads:, 3] = t[:, 2]
    return polys


def disk_cell_pairs(mesh: Mesh, centers: np.ndarray, radii: np.ndarray):
    """(disk, cell) pairs whose open disk overlaps the (convex, ccw) cell."""
    polys = _cell_polygons(mesh)
    cent = polys.mean(axis=1)
    crad = np.linalg.norm(polys - cent[:, None, :], axis=2).max(axis=1)
    tree = cKDTree(cent)
    lists = tree.query_ball_point(centers, radii + crad.max() * (1 + 1e-12))
    di = np.repeat(np.arange(len(centers)), [len(li) for li in lists])
    ci = np.concatenate([np.asarray(li, dtype=np.int64) for li in lists]) if len(di) else \
        np.zeros(0, dtype=np.int64)
    p = centers[di]
    P = polys[ci]
    Q = np.roll(P, -1, axis=1)
    e = Q - P
    r = p[:, None, :] - P
    cross = e[..., 0] * r[..., 1] - e[..., 1] * r[..., 0]
    inside = np.all(cross >= 0.0, axis=1)
    ee = np.einsum("nkd,nkd->nk", e, e)
    t = np.clip(np.einsum("nkd,nkd->nk", r, e) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
    closest = P + t[..., None] * e
    dist = np.linalg.norm(p[:, None, :] - closest, axis=2).min(axis=1)
    hit = inside | (dist < radii[di])
    return di[hit], ci[hit]


def build_enrichment(mesh: Mesh, basis: RKPMBasis, mid: Midground | None = None) -> EnrichmentMap:
    """Materials touched by each node's support disk.

    Without a midground the disk is tested against foreground cells; with one
    it is tested against midground cells, each carrying every material of the
    foreground cells it covers.
    """
    L = int(mesh.material.max()) + 1
    nodes = basis.nodes
    mid_mats = None
    if mid is None:
        di, ci = disk_cell_pairs(mesh, nodes.coords, nodes.a)
        touch = np.zeros((len(nodes), L), dtype=bool)
        touch[di, mesh.material[ci]] = True
    else:
        mid_mats = np.zeros((mid.mesh.n_cells, L), dtype=bool)
        mid_mats[mid.fg_to_mid, mesh.material] = True
        di, ci = disk_cell_pairs(mid.mesh, nodes.coords, nodes.a)
        touch = np.zeros((len(nodes), L), dtype=bool)
        np.logical_or.at(touch, di, mid_mats[ci])
    node_materials = [np.nonzero(row)[0] for row in touch]
    rows = np.array([(i, m) for i, ms in enumerate(node_materials) for m in ms], dtype=np.int64)
    row_of = -np.ones((len(nodes), L), dtype=np.int64)
    row_of[rows[:, 0], rows[:, 1]] = np.arange(len(rows))
    return EnrichmentMap(L, node_materials, rows, row_of, mid_mats)


def _gate_rows(M: sp.spmatrix, enr: EnrichmentMap, col_material: np.ndarray):
    """Split rows of M by the material of each column."""
    coo = M.tocoo()
    m = col_material[coo.col]
    r = enr.row_of[coo.row, m]
    keep = r >= 0
    return sp.csc_matrix((coo.data[keep], (r[keep], coo.col[keep])),
                         shape=(enr.n_rows, M.shape[1]))


def compute_enriched_extraction(basis: RKPMBasis, space: LagrangeSpace, enr: EnrichmentMap,
                                mid: Midground | None = None) -> ExtractionOperator:
    """Rows (I, m): Psi_I gated by the foreground material of each column.

    With a midground, midground dofs are enriched per material of their cell,
    background rows are gated by the midground indicator and the second
    interpolation by the foreground material.
    """
    if space.continuity != "DG":
        raise ValueError("enriched extraction needs a DG foreground space")
    owner = _dof_owner(space)
    col_mat = space.mesh.material[owner]
    if mid is None:
        base = compute_extraction(basis, space).matrix
        return ExtractionOperator(_clean(_gate_rows(base, enr, col_mat)), enr.rows.copy())
    # enriched midground dofs (j, m) for m in psi_mg(cell of j)
    mowner = _dof_owner(mid.space)
    mats = enr.mid_materials[mowner]                       # (mu, L)
    mj, mm = np.nonzero(mats)
    mid_row = -np.ones(mats.shape, dtype=np.int64)
    mid_row[mj, mm] = np.arange(len(mj))
    M1 = compute_extraction(basis, mid.space).matrix.tocoo()
    # background row (I, m) -> enriched midground column (j, m)
    rr, cc, vv = [], [], []
    for m in range(enr.n_materials):
        r = enr.row_of[M1.row, m]
        c = mid_row[M1.col, m]
        ok = (r >= 0) & (c >= 0)
        rr.append(r[ok])
        cc.append(c[ok])
        vv.append(M1.data[ok])
    M1e = sp.csr_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
                        shape=(enr.n_rows, len(mj)))
    M2 = midground_interpolation(mid, space).tocoo()
    c2 = mid_row[M2.row, col_mat[M2.col]]
    ok = c2 >= 0
    M2e = sp.csr_matrix((M2.data[ok], (c2[ok], M2.col[ok])), shape=(len(mj), space.n_dofs))
    return ExtractionOperator(_clean(M1e @ M2e), enr.rows.copy())
