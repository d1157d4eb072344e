"""Exact solutions and data for the shipped studies.

Every field takes points of shape (..., 2) and, where it matters, the material
label of the cell the points belong to (scalar or broadcastable array).
Scalar solutions return value (...), gradient (..., 2), Hessian (..., 3)
ordered xx, xy, yy. Vector solutions return value (..., 2), gradient
(..., 2, 2) with ``g[..., i, j] = du_i/dx_j`` and stress (..., 2, 2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .pointcloud import Rectangle, UNIT_SQUARE

PLATE_DOMAIN = Rectangle(0.0, 5.0, 0.0, 5.0)


@dataclass(frozen=True)
class ScalarExact:
    value: Callable
    grad: Callable
    hess: Callable
    source: Callable
    third: Callable | None = None       # gradient of the Laplacian, (..., 2)


@dataclass(frozen=True)
class VectorExact:
    value: Callable
    grad: Callable
    stress: Callable


@dataclass(frozen=True)
class StudyData:
    name: str
    domain: Rectangle
    exact: object
    params: dict = field(default_factory=dict)


def _sinsin(ax, bx, ay, by, scale=1.0):
    """u = scale * sin(ax*x + bx) * sin(ay*y + by) with derivatives."""

    def parts(x):
        sx, cx = np.sin(ax * x[..., 0] + bx), np.cos(ax * x[..., 0] + bx)
        sy, cy = np.sin(ay * x[..., 1] + by), np.cos(ay * x[..., 1] + by)
        return sx, cx, sy, cy

    def value(x, mat=None):
        sx, _, sy, _ = parts(x)
        return scale * sx * sy

    def grad(x, mat=None):
        sx, cx, sy, cy = parts(x)
        return scale * np.stack([ax * cx * sy, ay * sx * cy], -1)

    def hess(x, mat=None):
        sx, cx, sy, cy = parts(x)
        return scale * np.stack([-ax * ax * sx * sy, ax * ay * cx * cy, -ay * ay * sx * sy], -1)

    def grad_lap(x, mat=None):
        sx, cx, sy, cy = parts(x)
        k2 = ax * ax + ay * ay
        return -k2 * scale * np.stack([ax * cx * sy, ay * sx * cy], -1)

    return value, grad, hess, grad_lap


def poisson_data() -> StudyData:
    """-lap u = f on the unit square with u = sin(0.1x + 0.1) sin(0.1y + 0.1)."""
    v, g, h, gl = _sinsin(0.1, 0.1, 0.1, 0.1)
    return StudyData("poisson", UNIT_SQUARE,
                     ScalarExact(v, g, h, lambda x, mat=None: 0.02 * v(x), gl))


def biharmonic_data() -> StudyData:
    """lap^2 u = f with u = sin(0.1y + 0.1) sin(0.1x + 0.2); f = 4 * 0.1**4 * u."""
    v, g, h, gl = _sinsin(0.1, 0.2, 0.1, 0.1)
    return StudyData("biharmonic", UNIT_SQUARE,
                     ScalarExact(v, g, h, lambda x, mat=None: 4e-4 * v(x), gl))


THREE_MATERIAL_KAPPA = (1.0, 0.5, 1.0)
THREE_MATERIAL_BREAKS = (0.2, 0.8)


def three_material_material(x) -> np.ndarray:
    """Label 0 for x <= 0.2, 1 for 0.2 < x <= 0.8, 2 beyond."""
    x = np.asarray(x)[..., 0]
    return np.where(x <= 0.2, 0, np.where(x <= 0.8, 1, 2))


def three_material_data() -> StudyData:
    """-div(kappa grad T) = f with T = sin(a(x - 0.2)) sin(a y) / kappa, a = 5 pi / 3.

    The source is f = 2 a^2 sin sin = (50 pi^2 / 9) sin sin in every material.
    """
    a = 5.0 * np.pi / 3.0
    v, g, h, _ = _sinsin(a, -0.2 * a, a, 0.0)
    kap = np.asarray(THREE_MATERIAL_KAPPA)

    def inv_k(x, mat):
        m = three_material_material(x) if mat is None else np.asarray(mat)
        return 1.0 / kap[m]

    exact = ScalarExact(
        value=lambda x, mat=None: inv_k(x, mat) * v(x),
        grad=lambda x, mat=None: inv_k(x, mat)[..., None] * g(x),
        hess=lambda x, mat=None: inv_k(x, mat)[..., None] * h(x),
        source=lambda x, mat=None: 2.0 * a * a * v(x),
    )
    return StudyData("three_material", UNIT_SQUARE, exact,
                     {"kappa": THREE_MATERIAL_KAPPA, "breaks": THREE_MATERIAL_BREAKS})


def _polar_field(ur, dur):
    """Radial displacement u = ur(r) e_r; gradient from ur and its derivative."""

    def value(x, mat=None):
        r = np.hypot(x[..., 0], x[..., 1])
        return (ur(r, mat) / r)[..., None] * x

    def grad(x, mat=None):
        r = np.hypot(x[..., 0], x[..., 1])
        e = x / r[..., None]
        a = ur(r, mat) / r
        b = dur(r, mat) - a
        return a[..., None, None] * np.eye(2) + b[..., None, None] * e[..., :, None] * e[..., None, :]

    return value, grad


def _hooke(grad, lam, mu, eps0=0.0):
    eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    s0 = 2.0 * (lam + mu) * eps0
    return 2.0 * mu[..., None, None] * eps + ((lam * tr) - s0)[..., None, None] * np.eye(2)


PLATE_LAME = {"lam": 65.9, "mu": 151.0}


def kirsch_data(sigma_inf: float = 1.0, R: float = 1.0,
                lam: float = PLATE_LAME["lam"], mu: float = PLATE_LAME["mu"]) -> StudyData:
    """Equal-biaxial far-field load on an infinite plate with a circular hole (plane strain).

    sigma_rr = s (1 - R^2/r^2), sigma_tt = s (1 + R^2/r^2);
    u_r = A r + B / r with A = s / (2 (lam + mu)), B = s R^2 / (2 mu).
    """
    A = sigma_inf / (2.0 * (lam + mu))
    B = sigma_inf * R * R / (2.0 * mu)
    value, grad = _polar_field(lambda r, m: A * r + B / r, lambda r, m: A - B / r**2)

    def stress(x, mat=None):
        g = grad(x)
        return _hooke(g, np.full(g.shape[:-2], lam), np.full(g.shape[:-2], mu))

    return StudyData("plate_hole", PLATE_DOMAIN, VectorExact(value, grad, stress),
                     {"lam": lam, "mu": mu, "R": R, "sigma_inf": sigma_inf})


INCLUSION_LAME = {"lam": (497.16, 656.79), "mu": (390.63, 338.35), "eps0": 0.1}


def inclusion_c1(lam1=INCLUSION_LAME["lam"][0], mu1=INCLUSION_LAME["mu"][0],
                 mu2=INCLUSION_LAME["mu"][1], eps0=INCLUSION_LAME["eps0"]) -> float:
    return (lam1 + mu1) * eps0 / (lam1 + mu1 + mu2)


def inclusion_data(R: float = 1.0) -> StudyData:
    """Uniform isotropic eigenstrain in a circular inclusion (material 0, r < R).

    u_r = C1 r inside and C1 R^2 / r outside.
    """
    lam = np.asarray(INCLUSION_LAME["lam"])
    mu = np.asarray(INCLUSION_LAME["mu"])
    eps0 = INCLUSION_LAME["eps0"]
    C1 = inclusion_c1()

    def which(r, mat):
        return (r < R) if mat is None else (np.asarray(mat) == 0)

    def ur(r, mat):
        return np.where(which(r, mat), C1 * r, C1 * R * R / r)

    def dur(r, mat):
        return np.where(which(r, mat), C1, -C1 * R * R / r**2)

    value, grad = _polar_field(ur, dur)

    def stress(x, mat=None):
        g = grad(x, mat)
        r = np.hypot(x[..., 0], x[..., 1])
        m = np.broadcast_to(np.where(which(r, mat), 0, 1), g.shape[:-2])
        e0 = np.where(m == 0, eps0, 0.0)
        return _hooke(g, lam[m], mu[m], e0)

    return StudyData("inclusion", PLATE_DOMAIN, VectorExact(value, grad, stress),
                     {"lam": tuple(lam), "mu": tuple(mu), "eps0": eps0, "R": R, "C1": C1})


def manufactured_data(study: str) -> StudyData:
    makers = {
        "poisson": poisson_data,
        "biharmonic": biharmonic_data,
        "three_material": three_material_data,
        "plate_hole": kirsch_data,
        "inclusion": inclusion_data,
    }
    if study not in makers:
        raise ValueError(f"unknown study {study!r}")
    return makers[study]()
