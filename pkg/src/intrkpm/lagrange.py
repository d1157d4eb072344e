"""Reference Lagrange elements: Q_k on [-1, 1]^2 and P_k on the unit triangle.

Basis functions are built from monomials through the inverse Vandermonde
matrix at equispaced nodes, so derivatives of any order come for free.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# derivative multi-indices by order; second and third derivatives are stored
# in these component orders
DERIV_INDEX = {
    0: [(0, 0)],
    1: [(1, 0), (0, 1)],
    2: [(2, 0), (1, 1), (0, 2)],
    3: [(3, 0), (2, 1), (1, 2), (0, 3)],
}

REF_VERTICES = {
    "quad": np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]),
    "tri": np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
}
REF_EDGES = {
    "quad": ((0, 1), (1, 2), (2, 3), (3, 0)),
    "tri": ((0, 1), (1, 2), (2, 0)),
}
REF_MEASURE = {"quad": 4.0, "tri": 0.5}


def _falling(a, m):
    out = 1
    for i in range(m):
        out *= a - i
    return out


class RefElement:
    def __init__(self, kind: str, k: int):
        if k < 1:
            raise ValueError("Lagrange order must be >= 1")
        self.kind = kind
        self.k = k
        if kind == "quad":
            t = np.linspace(-1.0, 1.0, k + 1)
            self.nodes = np.array([(t[i], t[j]) for j in range(k + 1) for i in range(k + 1)])
            self.exps = [(a, b) for b in range(k + 1) for a in range(k + 1)]
        elif kind == "tri":
            self.nodes = np.array([(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)])
            self.exps = [(a, b) for b in range(k + 1) for a in range(k + 1 - b)]
        else:
            raise ValueError(f"unknown cell kind {kind!r}")
        V = self._monomials(self.nodes, 0, 0)
        self.coeff = np.linalg.inv(V)       # N = mono @ coeff
        self.vertices = REF_VERTICES[kind]
        self.edges = REF_EDGES[kind]

    @property
    def n_local(self) -> int:
        return len(self.nodes)

    def _monomials(self, pts, dx, dy):
        x, y = pts[:, 0], pts[:, 1]
        cols = []
        for a, b in self.exps:
            if a < dx or b < dy:
                cols.append(np.zeros_like(x))
            else:
                cols.append(_falling(a, dx) * _falling(b, dy) * x ** (a - dx) * y ** (b - dy))
        return np.stack(cols, axis=-1)

    def tabulate(self, pts, order: int = 0) -> list[np.ndarray]:
        """Reference derivatives up to ``order``.

        Entry ``m`` of the result has shape (npts, nloc, len(DERIV_INDEX[m]))
        (entry 0 is (npts, nloc)).
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = [self._monomials(pts, 0, 0) @ self.coeff]
        for m in range(1, order + 1):
            out.append(np.stack([self._monomials(pts, dx, dy) @ self.coeff
                                 for dx, dy in DERIV_INDEX[m]], axis=-1))
        return out

    def edge_points(self, edge: int, t) -> np.ndarray:
        """Reference coordinates at parameters ``t`` in [0, 1] along a local edge."""
        i, j = self.edges[edge]
        t = np.asarray(t, dtype=float)[:, None]
        return (1.0 - t) * self.vertices[i] + t * self.vertices[j]


@lru_cache(maxsize=None)
def ref_element(kind: str, k: int) -> RefElement:
    return RefElement(kind, k)
