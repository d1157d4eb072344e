"""Quadrature rules on the reference quad [-1, 1]^2, triangle and unit interval."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 20


class Unsupported(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _check(degree):
    if degree < 0:
        raise ValueError("degree target must be non-negative")
    if degree > MAX_DEGREE:
        raise Unsupported(f"no rule shipped above degree {MAX_DEGREE}")


@lru_cache(maxsize=None)
def gauss_points(degree: int) -> int:
    return max(1, (degree + 2) // 2)


@lru_cache(maxsize=None)
def line_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre on [0, 1]."""
    _check(degree)
    q = gauss_points(degree)
    x, w = np.polynomial.legendre.leggauss(q)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * q - 1)


@lru_cache(maxsize=None)
def quad_rule(degree: int) -> QuadratureRule:
    """Tensor Gauss-Legendre on [-1, 1]^2, exact to ``degree`` per variable."""
    _check(degree)
    q = gauss_points(degree)
    x, w = np.polynomial.legendre.leggauss(q)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel(), 2 * q - 1)


def _sym_rule(orbits):
    pts, wts = [], []
    for weight, a in orbits:
        if a is None:
            pts.append((1 / 3, 1 / 3))
            wts.append(weight)
            continue
        b = 1.0 - 2.0 * a
        for p in ((a, a), (b, a), (a, b)):
            pts.append(p)
            wts.append(weight)
    return np.array(pts), 0.5 * np.array(wts)


# symmetric rules (Strang-Fix / Dunavant); weights relative to unit area
_TRI_SYMMETRIC = {
    1: [(1.0, None)],
    2: [(1 / 3, 1 / 6)],
    4: [(0.223381589678011, 0.445948490915965),
        (0.109951743655322, 0.091576213509771)],
    5: [(0.225, None),
        (0.132394152788506, 0.470142064105115),
        (0.125939180544827, 0.101286507323456)],
}


@lru_cache(maxsize=None)
def tri_rule(degree: int) -> QuadratureRule:
    """Rule on the triangle (0,0), (1,0), (0,1); weights sum to 1/2."""
    _check(degree)
    for deg in sorted(_TRI_SYMMETRIC):
        if deg >= max(degree, 1):
            pts, wts = _sym_rule(_TRI_SYMMETRIC[deg])
            return QuadratureRule(pts, wts, deg)
    # collapsed Gauss-Jacobi for higher degrees
    q = gauss_points(degree)
    xg, wg = roots_jacobi(q, 0.0, 0.0)
    xj, wj = roots_jacobi(q, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)            # collapsed direction, weight (1 - u)
    v = 0.5 * (xg + 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(0.25 * wj, 0.5 * wg)
    x = U
    y = (1.0 - U) * V
    return QuadratureRule(np.column_stack([x.ravel(), y.ravel()]), W.ravel(), 2 * q - 1)


def quadrature(kind: str, degree: int) -> QuadratureRule:
    """Smallest shipped rule on ``kind`` ('quad', 'tri' or 'line') exact to ``degree``."""
    if kind == "quad":
        return quad_rule(degree)
    if kind == "tri":
        return tri_rule(degree)
    if kind == "line":
        return line_rule(degree)
    raise ValueError(f"unknown cell kind {kind!r}")
