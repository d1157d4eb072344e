"""RKPM node sets: jittered grids, nodal spacing, support radii, covering queries.

Random perturbations use numpy's ``PCG64`` bit generator through
``numpy.random.Generator``; the stream for a given seed is stable across
platforms, so jittered grids are reproducible bit-for-bit.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from math import comb
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class CoverageWarning(UserWarning):
    """Some probe points are covered by fewer supports than the basis needs."""


@dataclass(frozen=True)
class Rectangle:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate domain {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin


UNIT_SQUARE = Rectangle(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Node coordinates with per-node spacing ``h`` and support radius ``a``."""

    coords: np.ndarray
    h: np.ndarray | None = None
    a: np.ndarray | None = None
    c_a: float | None = None
    avg_spacing: float | None = None
    seed: int | None = None

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must have shape (NP, 2)")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        for name in ("h", "a"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                if arr.shape != (len(coords),):
                    raise ValueError(f"{name} must have shape (NP,)")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    def with_spacing(self, h: np.ndarray) -> "NodeSet":
        avg = self.avg_spacing if self.avg_spacing is not None else float(np.mean(h))
        return replace(self, h=h, a=None, c_a=None, avg_spacing=avg)

    def save(self, path: str | Path) -> None:
        """Write one ``x y h a`` line per node after a ``#`` header."""
        if self.h is None or self.a is None:
            raise ValueError("node set needs h and a before export")
        header = (
            f"NP={len(self)} c_a={self.c_a!r} seed={self.seed!r} "
            f"avg_spacing={self.avg_spacing!r}"
        )
        data = np.column_stack([self.coords, self.h, self.a])
        np.savetxt(path, data, fmt="%.17g", header=header, comments="# ")

    @classmethod
    def load(cls, path: str | Path) -> "NodeSet":
        meta = {}
        with open(path) as fh:
            first = fh.readline().lstrip("#").split()
        for item in first:
            key, _, val = item.partition("=")
            meta[key] = None if val == "None" else val
        data = np.loadtxt(path, ndmin=2)
        c_a = float(meta["c_a"]) if meta.get("c_a") else None
        seed = int(meta["seed"]) if meta.get("seed") else None
        avg = float(meta["avg_spacing"]) if meta.get("avg_spacing") else None
        return cls(data[:, :2], h=data[:, 2], a=data[:, 3], c_a=c_a,
                   avg_spacing=avg, seed=seed)


def generate_jittered_grid(nx: int, ny: int, domain: Rectangle = UNIT_SQUARE,
                           epsilon: float = 0.5, seed: int = 0) -> NodeSet:
    """Uniform ``nx`` x ``ny`` grid with each coordinate moved by ``epsilon*h*eta``.

    ``eta`` is drawn uniformly from (-1, 1) per node and coordinate. Nodes are
    ordered x-fastest. Boundary nodes are perturbed like interior ones.
    """
    if nx < 2 or ny < 2:
        raise ValueError("need at least 2 nodes per direction")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    hx = domain.width / (nx - 1)
    hy = domain.height / (ny - 1)
    xs = domain.xmin + hx * np.arange(nx)
    ys = domain.ymin + hy * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])
    if epsilon > 0.0:
        rng = np.random.Generator(np.random.PCG64(seed))
        eta = rng.uniform(-1.0, 1.0, size=coords.shape)
        coords = coords + epsilon * np.array([hx, hy]) * eta
    return NodeSet(coords, avg_spacing=float(np.sqrt(hx * hy)), seed=seed)


def compute_nodal_spacing(nodes: NodeSet, neighbor_count: int = 4) -> np.ndarray:
    """Max distance from each node to its ``neighbor_count`` nearest other nodes."""
    npts = len(nodes)
    if npts <= neighbor_count:
        raise ValueError(f"need more than {neighbor_count} nodes, got {npts}")
    tree = cKDTree(nodes.coords)
    dist, _ = tree.query(nodes.coords, k=neighbor_count + 1)
    # column 0 is the node itself (distance 0); nodes never coincide
    return dist[:, neighbor_count].copy()


def required_coverage(order: int, dim: int = 2) -> int:
    return comb(order + dim, dim)


def assign_supports(nodes: NodeSet, c_a: float, order: int | None = None,
                    probes: np.ndarray | None = None) -> NodeSet:
    """Set ``a_I = c_a * h_I``.

    When ``order`` is given, probe points (default: a grid over the node
    bounding box) are checked for coverage by at least ``n_p`` supports and a
    :class:`CoverageWarning` is issued otherwise.
    """
    if nodes.h is None:
        raise ValueError("compute nodal spacing first")
    if c_a <= 0:
        raise ValueError("c_a must be positive")
    out = replace(nodes, a=c_a * np.asarray(nodes.h), c_a=float(c_a))
    if order is not None:
        if probes is None:
            lo = out.coords.min(axis=0)
            hi = out.coords.max(axis=0)
            g = np.linspace(0.0, 1.0, 21)
            px, py = np.meshgrid(lo[0] + g * (hi[0] - lo[0]), lo[1] + g * (hi[1] - lo[1]))
            probes = np.column_stack([px.ravel(), py.ravel()])
        counts = coverage_counts(out, probes)
        n_p = required_coverage(order)
        bad = np.count_nonzero(counts < n_p)
        if bad:
            warnings.warn(f"{bad} of {len(probes)} probe points covered by fewer "
                          f"than {n_p} supports", CoverageWarning, stacklevel=2)
    return out


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    """Uniform bin grid over the node bounding box; bin size >= max support radius."""

    origin: np.ndarray
    bin_size: float
    shape: tuple[int, int]
    order: np.ndarray          # node ids sorted by bin
    starts: np.ndarray         # CSR offsets into ``order`` per flat bin id
    node_bin: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, nodes: NodeSet) -> "SpatialIndex":
        if nodes.a is None:
            raise ValueError("supports must be assigned before indexing")
        lo = nodes.coords.min(axis=0)
        hi = nodes.coords.max(axis=0)
        size = float(nodes.a.max())
        shape = tuple(int(s) for s in np.floor((hi - lo) / size).astype(int) + 1)
        ij = np.floor((nodes.coords - lo) / size).astype(np.int64)
        ij = np.minimum(ij, np.array(shape) - 1)
        flat = ij[:, 1] * shape[0] + ij[:, 0]
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=shape[0] * shape[1])
        starts = np.concatenate([[0], np.cumsum(counts)])
        return cls(lo, size, shape, order, starts, flat)

    def candidate_pairs(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """All (point, node) pairs sharing a bin neighbourhood, grouped by point.

        A superset of the true covering pairs; pairs are sorted by point index
        and by node id within each point.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        nx, ny = self.shape
        ij = np.floor((points - self.origin) / self.bin_size).astype(np.int64)
        pt_list, node_list = [], []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                bi = ij[:, 0] + di
                bj = ij[:, 1] + dj
                ok = (bi >= 0) & (bi < nx) & (bj >= 0) & (bj < ny)
                pts = np.nonzero(ok)[0]
                flat = bj[ok] * nx + bi[ok]
                lo = self.starts[flat]
                cnt = self.starts[flat + 1] - lo
                rep_pts = np.repeat(pts, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                pt_list.append(rep_pts)
                node_list.append(self.order[np.repeat(lo, cnt) + offs])
        p = np.concatenate(pt_list)
        q = np.concatenate(node_list)
        key = np.lexsort((q, p))
        return p[key], q[key]


def covering_pairs(index: SpatialIndex, nodes: NodeSet, points: np.ndarray,
                   block: int = 20_000) -> tuple[np.ndarray, np.ndarray]:
    """Exact (point, node) pairs with ``||x - x_I|| < a_I``, sorted by point then node.

    Points are processed in blocks so the candidate superset stays small.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ps, qs = [], []
    for s in range(0, len(points), block):
        chunk = points[s:s + block]
        p, q = index.candidate_pairs(chunk)
        d = chunk[p] - nodes.coords[q]
        inside = np.einsum("ij,ij->i", d, d) < nodes.a[q] ** 2
        ps.append(p[inside] + s)
        qs.append(q[inside])
    if not ps:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(ps), np.concatenate(qs)


def covering_nodes(index: SpatialIndex, nodes: NodeSet, x) -> list[int]:
    """Sorted ids of nodes whose open support disk contains ``x``."""
    _, q = covering_pairs(index, nodes, np.asarray(x, dtype=float).reshape(1, 2))
    return q.tolist()


def coverage_counts(nodes: NodeSet, points: np.ndarray) -> np.ndarray:
    index = SpatialIndex.build(nodes)
    p, _ = covering_pairs(index, nodes, points)
    return np.bincount(p, minlength=len(np.atleast_2d(points)))


def make_nodes(nx: int, ny: int, domain: Rectangle, order: int, epsilon: float = 0.5,
               seed: int = 0, neighbor_count: int = 4) -> NodeSet:
    """Jittered grid with spacing and supports sized ``c_a = order + 1``."""
    nodes = generate_jittered_grid(nx, ny, domain, epsilon, seed)
    nodes = nodes.with_spacing(compute_nodal_spacing(nodes, neighbor_count))
    return assign_supports(nodes, order + 1.0)
