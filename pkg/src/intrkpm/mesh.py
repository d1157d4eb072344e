"""Foreground meshes: structured quads, level-set fitted meshes with quadtree
refinement and hanging nodes, and midground (base grid) meshes.

Cells are numbered quads first, then triangles. Both are stored counter-
clockwise. Boundary facets are ``(cell, local_edge)`` pairs grouped by tag;
outer sides of the bounding rectangle are tagged ``left``, ``right``,
``bottom``, ``top`` and boundaries left behind by :meth:`Mesh.restrict` are
tagged ``hole``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .lagrange import REF_EDGES
from .pointcloud import Rectangle

SIDES = ("left", "right", "bottom", "top")


class MeshFailure(RuntimeError):
    pass


class CoverMismatch(RuntimeError):
    pass


# ----------------------------------------------------------------- level sets
class LevelSet:
    """Signed function, negative inside and positive outside."""

    def __call__(self, x):
        raise NotImplementedError

    def cuts_box(self, xmin, xmax, ymin, ymax) -> bool:
        c = np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])
        v = self(c)
        return bool(v.min() < 0.0 < v.max())

    def edge_root(self, p0, p1) -> float:
        """Parameter ``t`` of the zero on the segment p0-p1 (signs differ at the ends)."""
        f0 = float(self(np.asarray(p0)[None])[0])
        lo, hi = 0.0, 1.0
        while hi - lo > 1e-12:
            mid = 0.5 * (lo + hi)
            fm = float(self(((1 - mid) * np.asarray(p0) + mid * np.asarray(p1))[None])[0])
            if (fm < 0.0) == (f0 < 0.0):
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Circle(LevelSet):
    center: tuple[float, float]
    radius: float

    def __call__(self, x):
        x = np.atleast_2d(x)
        return np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1]) - self.radius

    def cuts_box(self, xmin, xmax, ymin, ymax) -> bool:
        cx, cy = self.center
        nx = min(max(cx, xmin), xmax)
        ny = min(max(cy, ymin), ymax)
        near = np.hypot(nx - cx, ny - cy)
        far = max(np.hypot(px - cx, py - cy) for px in (xmin, xmax) for py in (ymin, ymax))
        return near < self.radius < far

    def edge_root(self, p0, p1) -> float:
        p0 = np.asarray(p0, float)
        d = np.asarray(p1, float) - p0
        f = p0 - np.asarray(self.center)
        a = d @ d
        b = 2.0 * (f @ d)
        c = f @ f - self.radius**2
        disc = np.sqrt(max(b * b - 4 * a * c, 0.0))
        roots = [(-b - disc) / (2 * a), (-b + disc) / (2 * a)]
        inside = [t for t in roots if -1e-14 <= t <= 1 + 1e-14]
        return float(min(max(inside[0], 0.0), 1.0))


@dataclass(frozen=True)
class VerticalLine(LevelSet):
    """The plane ``x = c``; negative for ``x < c``."""

    c: float

    def __call__(self, x):
        return np.atleast_2d(x)[:, 0] - self.c

    def cuts_box(self, xmin, xmax, ymin, ymax) -> bool:
        return xmin < self.c < xmax

    def edge_root(self, p0, p1) -> float:
        return float((self.c - p0[0]) / (p1[0] - p0[0]))


# ----------------------------------------------------------------------- mesh
@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray
    quads: np.ndarray
    tris: np.ndarray
    material: np.ndarray
    parent: np.ndarray
    boundary: dict = field(default_factory=dict)      # tag -> (cells, local edges)
    interface: tuple = ()                             # (cell_a, edge_a, cell_b, edge_b)
    hanging: list = field(default_factory=list)       # [(coarse (cell, edge), [(cell, edge), ...])]
    base: "BaseGrid | None" = None

    @property
    def n_quads(self) -> int:
        return len(self.quads)

    @property
    def n_tris(self) -> int:
        return len(self.tris)

    @property
    def n_cells(self) -> int:
        return self.n_quads + self.n_tris

    def kind(self, cell: int) -> str:
        return "quad" if cell < self.n_quads else "tri"

    def cell_vertex_ids(self, cell: int) -> np.ndarray:
        return self.quads[cell] if cell < self.n_quads else self.tris[cell - self.n_quads]

    def kind_cells(self, kind: str) -> np.ndarray:
        if kind == "quad":
            return np.arange(self.n_quads)
        return self.n_quads + np.arange(self.n_tris)

    def kind_connectivity(self, kind: str) -> np.ndarray:
        return self.quads if kind == "quad" else self.tris

    def cell_areas(self) -> np.ndarray:
        out = []
        for conn in (self.quads, self.tris):
            if len(conn) == 0:
                continue
            p = self.vertices[conn]
            x, y = p[..., 0], p[..., 1]
            out.append(0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1))
        return np.concatenate(out) if out else np.zeros(0)

    def centroids(self) -> np.ndarray:
        out = [self.vertices[conn].mean(axis=1) for conn in (self.quads, self.tris) if len(conn)]
        return np.concatenate(out) if out else np.zeros((0, 2))

    def edge_vertices(self, cells, edges) -> np.ndarray:
        """(n, 2) vertex ids of local edges."""
        cells = np.asarray(cells)
        edges = np.asarray(edges)
        out = np.empty((len(cells), 2), dtype=np.int64)
        isq = cells < self.n_quads
        for kind, mask in (("quad", isq), ("tri", ~isq)):
            if not mask.any():
                continue
            loc = REF_EDGES[kind]
            conn = self.quads[cells[mask]] if kind == "quad" else self.tris[cells[mask] - self.n_quads]
            pairs = np.array(loc)[edges[mask]]
            out[mask, 0] = conn[np.arange(len(conn)), pairs[:, 0]]
            out[mask, 1] = conn[np.arange(len(conn)), pairs[:, 1]]
        return out

    def facet_length(self, cells, edges) -> np.ndarray:
        ev = self.edge_vertices(cells, edges)
        return np.linalg.norm(self.vertices[ev[:, 1]] - self.vertices[ev[:, 0]], axis=1)

    def hanging_vertices(self) -> np.ndarray:
        flag = np.zeros(len(self.vertices), dtype=bool)
        for (cc, ce), fine in self.hanging:
            coarse = set(self.edge_vertices([cc], [ce])[0].tolist())
            for fc, fe in fine:
                for v in self.edge_vertices([fc], [fe])[0]:
                    if v not in coarse:
                        flag[v] = True
        return flag

    def restrict(self, keep_materials) -> "Mesh":
        """Sub-mesh of the cells whose material is in ``keep_materials``.

        Interfaces to dropped cells become ``hole`` boundary facets.
        """
        keep = np.isin(self.material, list(keep_materials))
        qkeep = keep[: self.n_quads]
        tkeep = keep[self.n_quads:]
        quads = self.quads[qkeep]
        tris = self.tris[tkeep]
        used = np.unique(np.concatenate([quads.ravel(), tris.ravel()]))
        remap = -np.ones(len(self.vertices), dtype=np.int64)
        remap[used] = np.arange(len(used))
        old_interface = _interface_keys(self)
        out = Mesh(self.vertices[used], remap[quads], remap[tris],
                   self.material[keep], self.parent[keep], base=self.base)
        _classify_facets(out, hole_keys={(remap[a], remap[b]) for a, b in old_interface
                                         if remap[a] >= 0 and remap[b] >= 0})
        return out

    def save(self, path: str | Path, values: dict | None = None) -> None:
        """Plain-text export; see the README for the block layout."""
        with open(path, "w") as fh:
            fh.write(f"# intrkpm mesh v1\nvertices {len(self.vertices)}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            fh.write(f"cells {self.n_cells}\n")
            for c in range(self.n_cells):
                ids = " ".join(str(v) for v in self.cell_vertex_ids(c))
                fh.write(f"{self.kind(c)} {ids} {int(self.material[c])}\n")
            facets = []
            for tag in sorted(self.boundary):
                cells, edges = self.boundary[tag]
                for a, b in self.edge_vertices(cells, edges):
                    facets.append(f"{a} {b} {tag}")
            if len(self.interface):
                ca, ea = self.interface[0], self.interface[1]
                for a, b in self.edge_vertices(ca, ea):
                    facets.append(f"{a} {b} interface")
            fh.write(f"facets {len(facets)}\n")
            fh.write("".join(f + "\n" for f in facets))
            for name, (coords, vals) in (values or {}).items():
                vals = np.atleast_2d(np.asarray(vals).T).T
                fh.write(f"values {name} {len(coords)} {vals.shape[1]}\n")
                for xy, v in zip(coords, vals):
                    fh.write(" ".join(f"{t:.17g}" for t in (*xy, *v)) + "\n")


@dataclass(frozen=True)
class BaseGrid:
    domain: Rectangle
    nx: int
    ny: int

    @property
    def hx(self):
        return self.domain.width / self.nx

    @property
    def hy(self):
        return self.domain.height / self.ny

    def cell_box(self, c):
        i, j = c % self.nx, c // self.nx
        x0 = self.domain.xmin + i * self.hx
        y0 = self.domain.ymin + j * self.hy
        return x0, x0 + self.hx, y0, y0 + self.hy


def merge_points(pts: np.ndarray, tol: float):
    """Merge points closer than ``tol``; returns (unique points, inverse map).

    Representatives are the lowest-index member of each cluster, in order of
    first appearance.
    """
    n = len(pts)
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, label = connected_components(g, directed=False)
    _, first = np.unique(label, return_index=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    inverse = rank[label]
    return pts[np.sort(first)], inverse


def _edge_table(mesh: Mesh):
    cells, edges, va, vb = [], [], [], []
    for kind, conn, offset in (("quad", mesh.quads, 0), ("tri", mesh.tris, mesh.n_quads)):
        for e, (i, j) in enumerate(REF_EDGES[kind]):
            if len(conn) == 0:
                continue
            cells.append(offset + np.arange(len(conn)))
            edges.append(np.full(len(conn), e))
            va.append(conn[:, i])
            vb.append(conn[:, j])
    cells = np.concatenate(cells)
    edges = np.concatenate(edges)
    va = np.concatenate(va)
    vb = np.concatenate(vb)
    return cells, edges, np.minimum(va, vb), np.maximum(va, vb)


def _interface_keys(mesh: Mesh) -> set:
    if not len(mesh.interface):
        return set()
    ev = mesh.edge_vertices(mesh.interface[0], mesh.interface[1])
    return {(min(a, b), max(a, b)) for a, b in ev}


def _classify_facets(mesh: Mesh, hole_keys=frozenset(), outer: Rectangle | None = None,
                     leftover: str | None = None):
    """Fill boundary, interface and hanging-edge tables from connectivity.

    With ``leftover`` every untagged single edge gets that tag instead of being
    matched as a hanging edge (meshes known to be conforming).
    """
    if outer is None:
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        outer = Rectangle(lo[0], hi[0], lo[1], hi[1])
    cells, edges, a, b = _edge_table(mesh)
    key = a * len(mesh.vertices) + b
    order = np.lexsort((cells, key))
    key_s = key[order]
    uniq, start, count = np.unique(key_s, return_index=True, return_counts=True)
    if np.any(count > 2):
        raise MeshFailure("edge shared by more than two cells")
    # interior pairs
    two = start[count == 2]
    ia, ib = order[two], order[two + 1]
    diff = mesh.material[cells[ia]] != mesh.material[cells[ib]]
    mesh.interface = (cells[ia[diff]], edges[ia[diff]], cells[ib[diff]], edges[ib[diff]])
    # single edges
    single = order[start[count == 1]]
    pa = mesh.vertices[a[single]]
    pb = mesh.vertices[b[single]]
    scale = max(outer.width, outer.height)
    tol = 1e-10 * scale
    boundary = {}
    tagged = np.zeros(len(single), dtype=bool)
    side_masks = {
        "left": (np.abs(pa[:, 0] - outer.xmin) < tol) & (np.abs(pb[:, 0] - outer.xmin) < tol),
        "right": (np.abs(pa[:, 0] - outer.xmax) < tol) & (np.abs(pb[:, 0] - outer.xmax) < tol),
        "bottom": (np.abs(pa[:, 1] - outer.ymin) < tol) & (np.abs(pb[:, 1] - outer.ymin) < tol),
        "top": (np.abs(pa[:, 1] - outer.ymax) < tol) & (np.abs(pb[:, 1] - outer.ymax) < tol),
    }
    for side in SIDES:
        m = side_masks[side] & ~tagged
        tagged |= m
        if m.any():
            boundary[side] = (cells[single[m]], edges[single[m]])
    if hole_keys:
        hk = np.array([(a_ * len(mesh.vertices) + b_) for a_, b_ in hole_keys])
        m = np.isin(key[single], hk) & ~tagged
        tagged |= m
        if m.any():
            boundary["hole"] = (cells[single[m]], edges[single[m]])
    if leftover is not None and not tagged.all():
        m = ~tagged
        boundary[leftover] = (cells[single[m]], edges[single[m]])
        tagged |= m
    mesh.boundary = boundary
    # remaining single edges come from hanging nodes: pair coarse with fine pieces
    rest = single[~tagged]
    mesh.hanging = _match_hanging(mesh, cells[rest], edges[rest], a[rest], b[rest])


def _match_hanging(mesh, cells, edges, a, b):
    if len(cells) == 0:
        return []
    pa, pb = mesh.vertices[a], mesh.vertices[b]
    length = np.linalg.norm(pb - pa, axis=1)
    mid = 0.5 * (pa + pb)
    covered = np.zeros(len(cells), dtype=bool)
    out = []
    for i in np.argsort(-length, kind="stable"):
        if covered[i]:
            continue
        d = pb[i] - pa[i]
        t = (mid - pa[i]) @ d / (d @ d)
        off = np.abs((mid[:, 0] - pa[i, 0]) * d[1] - (mid[:, 1] - pa[i, 1]) * d[0]) / length[i]
        inside = (t > 0) & (t < 1) & (off < 1e-9 * length[i]) & (length < length[i] * (1 - 1e-9))
        inside &= ~covered
        if not inside.any():
            raise MeshFailure(f"unmatched edge at {mid[i]} is neither boundary nor hanging")
        covered[i] = True
        covered |= inside
        pieces = np.nonzero(inside)[0]
        if abs(length[pieces].sum() - length[i]) > 1e-9 * length[i]:
            raise MeshFailure(f"hanging edge at {mid[i]} not tiled by its fine pieces")
        out.append(((int(cells[i]), int(edges[i])),
                    [(int(cells[j]), int(edges[j])) for j in pieces]))
    return out


# --------------------------------------------------------------- constructors
def tensor_quad_mesh(xs, ys, material_fn=None) -> Mesh:
    """Quad mesh on the tensor grid of break points ``xs`` x ``ys``."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v0 = j * (nx + 1) + i
    quads = np.column_stack([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1])
    cent = verts[quads].mean(axis=1)
    material = np.zeros(len(quads), dtype=np.int64) if material_fn is None else \
        np.asarray(material_fn(cent), dtype=np.int64)
    mesh = Mesh(verts, quads, np.zeros((0, 3), dtype=np.int64), material,
                np.arange(len(quads)))
    _classify_facets(mesh, outer=Rectangle(xs[0], xs[-1], ys[0], ys[-1]))
    return mesh


def grid_breaks(lo: float, hi: float, h: float, breaks=()) -> np.ndarray:
    """Break points from ``lo`` to ``hi`` with spacing close to ``h``, hitting ``breaks``."""
    if h <= 0:
        raise ValueError("element size must be positive")
    stops = [lo, *sorted(b for b in breaks if lo < b < hi), hi]
    pts = [np.array([lo])]
    for s0, s1 in zip(stops[:-1], stops[1:]):
        m = max(1, int(round((s1 - s0) / h)))
        pts.append(np.linspace(s0, s1, m + 1)[1:])
    return np.concatenate(pts)


def build_uniform_quad_mesh(domain: Rectangle, h_fg: float, k: int = 1,
                            continuity: str = "CG", x_breaks=(), material_fn=None):
    """Structured quad mesh of element size ~``h_fg`` and a Lagrange space on it."""
    from .space import LagrangeSpace

    if h_fg <= 0:
        raise ValueError("element size must be positive")
    if k < 1:
        raise ValueError("Lagrange order must be >= 1")
    mesh = tensor_quad_mesh(grid_breaks(domain.xmin, domain.xmax, h_fg, x_breaks),
                            grid_breaks(domain.ymin, domain.ymax, h_fg), material_fn)
    return mesh, LagrangeSpace(mesh, k, continuity)


def _split_square(corners, inside, phi, cell_area):
    """Split a square cell by the linear interface through its edge roots.

    Returns a list of (polygon vertices, inside flag).
    """
    polys = {True: [], False: []}
    for i in range(4):
        j = (i + 1) % 4
        polys[bool(inside[i])].append(corners[i])
        if inside[i] != inside[j]:
            p0, p1 = corners[i], corners[j]
            # canonical direction so shared edges give identical roots
            if tuple(p0) > tuple(p1):
                t = phi.edge_root(p1, p0)
                p = (1 - t) * p1 + t * p0
            else:
                t = phi.edge_root(p0, p1)
                p = (1 - t) * p0 + t * p1
            polys[bool(inside[i])].append(p)
            polys[bool(inside[j])].append(p)
    tol = 1e-10 * np.sqrt(cell_area)
    out = []
    for flag, pts in polys.items():
        clean = []
        for p in pts:
            if not clean or np.linalg.norm(p - clean[-1]) > tol:
                clean.append(p)
        if len(clean) > 1 and np.linalg.norm(clean[0] - clean[-1]) <= tol:
            clean.pop()
        if len(clean) >= 3:
            out.append((np.array(clean), flag))
    return out


def build_levelset_mesh(domain: Rectangle, nx: int, ny: int, phi: LevelSet,
                        refine_levels: int = 0) -> Mesh:
    """Base grid with cut cells refined ``refine_levels`` times and triangulated.

    Cut base cells are split into ``2**L x 2**L`` sub-squares; sub-squares
    whose corners straddle the interface are cut along the linear interface
    through their edge roots and each piece is fan-triangulated from its
    vertex centroid. Material 0 is inside (phi < 0), material 1 outside.
    """
    if refine_levels not in (0, 1, 2):
        raise ValueError("refine_levels must be 0, 1 or 2")
    base = BaseGrid(domain, nx, ny)
    hx, hy = base.hx, base.hy
    quad_pts, quad_mat, quad_par = [], [], []
    tri_pts, tri_mat, tri_par = [], [], []
    for c in range(nx * ny):
        x0, x1, y0, y1 = base.cell_box(c)
        if not phi.cuts_box(x0, x1, y0, y1):
            box = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
            quad_pts.append(box)
            quad_mat.append(0 if phi(box.mean(axis=0)[None])[0] < 0 else 1)
            quad_par.append(c)
            continue
        s = 2 ** refine_levels
        sx, sy = hx / s, hy / s
        for jj in range(s):
            for ii in range(s):
                a0, b0 = x0 + ii * sx, y0 + jj * sy
                a1 = x1 if ii == s - 1 else a0 + sx
                b1 = y1 if jj == s - 1 else b0 + sy
                box = np.array([[a0, b0], [a1, b0], [a1, b1], [a0, b1]])
                inside = phi(box) < 0.0
                if inside.all() or not inside.any():
                    quad_pts.append(box)
                    quad_mat.append(0 if phi(box.mean(axis=0)[None])[0] < 0 else 1)
                    quad_par.append(c)
                    continue
                area = sx * sy
                for poly, flag in _split_square(box, inside, phi, area):
                    cen = poly.mean(axis=0)
                    for k in range(len(poly)):
                        tri = np.array([cen, poly[k], poly[(k + 1) % len(poly)]])
                        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
                        if 0.5 * (e1[0] * e2[1] - e1[1] * e2[0]) < 1e-14 * area:
                            raise MeshFailure(f"degenerate triangle in cell {c} near {cen}")
                        tri_pts.append(tri)
                        tri_mat.append(0 if flag else 1)
                        tri_par.append(c)
    qp = np.array(quad_pts).reshape(-1, 2)
    tp = np.array(tri_pts).reshape(-1, 2) if tri_pts else np.zeros((0, 2))
    allp = np.vstack([qp, tp])
    verts, inv = merge_points(allp, 1e-10 * min(hx, hy) / 2 ** refine_levels)
    quads = inv[: len(qp)].reshape(-1, 4)
    tris = inv[len(qp):].reshape(-1, 3)
    mesh = Mesh(verts, quads, tris,
                np.array(quad_mat + tri_mat, dtype=np.int64),
                np.array(quad_par + tri_par, dtype=np.int64), base=base)
    _classify_facets(mesh, outer=domain)
    return mesh


def base_grid_mesh(base: BaseGrid) -> Mesh:
    xs = np.linspace(base.domain.xmin, base.domain.xmax, base.nx + 1)
    ys = np.linspace(base.domain.ymin, base.domain.ymax, base.ny + 1)
    mesh = tensor_quad_mesh(xs, ys)
    mesh.base = base
    return mesh


@dataclass(eq=False)
class Midground:
    """Midground mesh and DG space with its cover of the foreground mesh."""

    mesh: Mesh
    space: object
    fg_to_mid: np.ndarray          # foreground cell -> midground cell
    mid_cells: np.ndarray          # midground cell -> base cell id

    def cover(self, mid_cell: int) -> np.ndarray:
        return np.nonzero(self.fg_to_mid == mid_cell)[0]


def build_midground_space(fg_mesh: Mesh, k: int, check: bool = True) -> Midground:
    """DG space of order ``k`` on the base grid that ``fg_mesh`` was built from.

    Only base cells covered by at least one foreground cell are kept. With
    ``check`` the foreground areas inside every midground cell must add up to
    the midground cell area.
    """
    from .space import LagrangeSpace

    if fg_mesh.base is None:
        raise ValueError("foreground mesh carries no base grid")
    full = base_grid_mesh(fg_mesh.base)
    used = np.unique(fg_mesh.parent)
    remap = -np.ones(full.n_cells, dtype=np.int64)
    remap[used] = np.arange(len(used))
    quads_v = full.quads[used]
    vused = np.unique(quads_v)
    vmap = -np.ones(len(full.vertices), dtype=np.int64)
    vmap[vused] = np.arange(len(vused))
    mid = Mesh(full.vertices[vused], vmap[quads_v], np.zeros((0, 3), dtype=np.int64),
               np.zeros(len(used), dtype=np.int64), used, base=fg_mesh.base)
    _classify_facets(mid, outer=fg_mesh.base.domain)
    fg_to_mid = remap[fg_mesh.parent]
    if check:
        fg_area = np.bincount(fg_to_mid, weights=fg_mesh.cell_areas(), minlength=len(used))
        mid_area = mid.cell_areas()
        rel = np.abs(fg_area - mid_area) / mid_area
        if rel.max() > 1e-10:
            raise CoverMismatch(f"cover areas differ by {rel.max():.3g} (relative)")
    return Midground(mid, LagrangeSpace(mid, k, "DG"), fg_to_mid, used)


def restrict_midground(mid: Midground, fg_mesh: Mesh) -> Midground:
    """Midground re-indexed to the base cells still used by a restricted mesh."""
    from .space import LagrangeSpace

    used = np.unique(fg_mesh.parent)
    keep = np.isin(mid.mid_cells, used)
    quads_v = mid.mesh.quads[keep]
    vused = np.unique(quads_v)
    vmap = -np.ones(len(mid.mesh.vertices), dtype=np.int64)
    vmap[vused] = np.arange(len(vused))
    mesh = Mesh(mid.mesh.vertices[vused], vmap[quads_v], np.zeros((0, 3), dtype=np.int64),
                np.zeros(int(keep.sum()), dtype=np.int64), mid.mid_cells[keep], base=mid.mesh.base)
    # base cells lost entirely to a hole leave exposed edges
    _classify_facets(mesh, outer=mid.mesh.base.domain, leftover="hole")
    remap = -np.ones(mid.mid_cells.max() + 1, dtype=np.int64)
    remap[mid.mid_cells[keep]] = np.arange(int(keep.sum()))
    return Midground(mesh, LagrangeSpace(mesh, mid.space.k, "DG"), remap[fg_mesh.parent],
                     mid.mid_cells[keep])
