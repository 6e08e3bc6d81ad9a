"""Concrete backends: hyperbolic half-space H^3, the unit sphere S^2 and flat R^n.

Also hosts the vector fields of the two worked control problems, since their
formulas are tied to the coordinates of each backend.
"""

import math

import numpy as np

from . import _kernels
from .geometry import INFINITE_RADIUS, ChartDomainError, Manifold

_DELTA3 = np.eye(3)


class HyperbolicHalfSpace3(Manifold):
    """Upper half-space {x3 > 0} with metric delta_ij / x3^2 and its single identity chart."""

    name = "H3"
    dim = 3
    ambient_dim = 3
    charts = ("identity",)
    kernel_kind = _kernels.HALF_SPACE

    def contains(self, p, tol=0.0):
        return np.asarray(p, dtype=float)[..., 2] > 0.0

    def injectivity_bound(self, p):
        return INFINITE_RADIUS

    def metric(self, chart, xi):
        return _DELTA3 / xi[2] ** 2

    def christoffel(self, chart, xi, h=None):
        return h3_christoffel(xi)

    def contract_christoffel(self, chart, xi, a, b):
        b = np.asarray(b, dtype=float)
        inv = 1.0 / xi[2]
        out = -(a[2] * b + b[..., 2:3] * a) * inv
        out[..., 2] += (b @ a) * inv
        return out

    def inner(self, p, u, v):
        p = np.asarray(p, dtype=float)
        return np.sum(np.asarray(u) * np.asarray(v), axis=-1) / p[..., 2] ** 2


def h3_christoffel(x):
    """Gamma^k_ij = (1/x3)(-d_jk d_i3 - d_ki d_j3 + d_ij d_k3), indexed ``[..., k, i, j]``."""
    x = np.asarray(x, dtype=float)
    e3 = _DELTA3[2]
    table = (
        -np.einsum("jk,i->kij", _DELTA3, e3)
        - np.einsum("ki,j->kij", _DELTA3, e3)
        + np.einsum("ij,k->kij", _DELTA3, e3)
    )
    return table / x[..., 2, None, None, None]


class Sphere2(Manifold):
    """Unit sphere in R^3 with the two stereographic charts.

    Points and tangent vectors are kept in ambient coordinates; the charts carry
    the metric 4/(1+|xi|^2)^2 delta_ij and are only used inside geodesic
    computations. ``plus`` is used on the closed upper hemisphere and ``minus``
    below it; integrations stay in their chart until |x3| leaves the band 0.1.
    """

    name = "S2"
    dim = 2
    ambient_dim = 3
    charts = ("plus", "minus")
    kernel_kind = _kernels.STEREOGRAPHIC
    band = _kernels.SWITCH_BAND

    def contains(self, p, tol=1e-9):
        p = np.asarray(p, dtype=float)
        return np.abs(np.sum(p * p, axis=-1) - 1.0) <= tol

    def project(self, p):
        p = np.asarray(p, dtype=float)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def project_tangent(self, p, v):
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        return v - (v @ p)[..., None] * p

    def tangent_residual(self, p, v):
        return float(abs(np.dot(p, v)))

    def injectivity_bound(self, p):
        return math.pi

    def select_chart(self, p):
        return "plus" if p[2] >= 0.0 else "minus"

    def to_chart(self, chart, p):
        return s2_chart_forward(chart, p)

    def from_chart(self, chart, xi):
        return s2_chart_inverse(chart, xi)

    def chart_jacobian(self, chart, p):
        x1, x2, x3 = p
        sign = 1.0 if chart == "plus" else -1.0
        d = 1.0 + sign * x3
        return np.array([
            [1.0 / d, 0.0, -sign * x1 / d ** 2],
            [0.0, 1.0 / d, -sign * x2 / d ** 2],
        ])

    def inverse_jacobian(self, chart, xi):
        xi = np.asarray(xi, dtype=float)
        a = 1.0 + xi @ xi
        top = 2.0 * np.eye(2) / a - 4.0 * np.outer(xi, xi) / a ** 2
        sign = 1.0 if chart == "plus" else -1.0
        bottom = -sign * 4.0 * xi / a ** 2
        return np.vstack([top, bottom])

    def chart_contains(self, chart, xi):
        return bool(np.all(np.isfinite(xi)))

    def metric(self, chart, xi):
        a = 1.0 + xi[0] ** 2 + xi[1] ** 2
        return 4.0 / a ** 2 * np.eye(2)

    def christoffel(self, chart, xi, h=None):
        # conformal metric exp(2 phi) delta with d phi = -2 xi / a
        xi = np.asarray(xi, dtype=float)
        d = -2.0 * xi / (1.0 + xi @ xi)
        eye = np.eye(2)
        return (np.einsum("ik,j->kij", eye, d) + np.einsum("jk,i->kij", eye, d)
                - np.einsum("ij,k->kij", eye, d))

    def contract_christoffel(self, chart, xi, a, b):
        b = np.asarray(b, dtype=float)
        d = -2.0 * xi / (1.0 + xi @ xi)
        return (a * (b @ d)[..., None] + b * (a @ d)
                - (b @ a)[..., None] * d)

    def transition(self, chart, xi, vectors):
        r2 = float(xi @ xi)
        x3 = (1.0 - r2) / (1.0 + r2) if chart == "plus" else (r2 - 1.0) / (1.0 + r2)
        if (chart == "plus" and x3 >= -self.band) or (chart == "minus" and x3 <= self.band):
            return chart, xi, vectors
        dmap = (r2 * np.eye(2) - 2.0 * np.outer(xi, xi)) / r2 ** 2
        other = "minus" if chart == "plus" else "plus"
        return other, xi / r2, np.asarray(vectors) @ dmap.T

    def inner(self, p, u, v):
        return np.sum(np.asarray(u) * np.asarray(v), axis=-1)


def s2_chart_forward(pole_choice, x):
    """Stereographic coordinates of ``x``.

    ``plus`` divides by 1 + x3 (south pole excluded), ``minus`` by 1 - x3 (north
    pole excluded).
    """
    x = np.asarray(x, dtype=float)
    if pole_choice == "plus":
        d = 1.0 + x[..., 2]
    elif pole_choice == "minus":
        d = 1.0 - x[..., 2]
    else:
        raise ValueError(f"unknown chart {pole_choice!r}")
    if np.any(d <= 1e-12):
        raise ChartDomainError(f"point excluded from chart {pole_choice!r}")
    return x[..., :2] / d[..., None]


def s2_chart_inverse(pole_choice, xi):
    xi = np.asarray(xi, dtype=float)
    r2 = np.sum(xi * xi, axis=-1)
    a = 1.0 + r2
    if pole_choice == "plus":
        x3 = (1.0 - r2) / a
    elif pole_choice == "minus":
        x3 = (r2 - 1.0) / a
    else:
        raise ValueError(f"unknown chart {pole_choice!r}")
    return np.concatenate([2.0 * xi / a[..., None], x3[..., None]], axis=-1)


class EuclideanSpace(Manifold):
    name = "R^n"

    def __init__(self, n):
        if n < 1:
            raise ValueError("dimension must be positive")
        self.dim = n
        self.ambient_dim = n
        self.name = f"R^{n}"

    def contains(self, p, tol=0.0):
        return np.all(np.isfinite(p), axis=-1)

    def injectivity_bound(self, p):
        return INFINITE_RADIUS

    def metric(self, chart, xi):
        return np.eye(self.dim)

    def christoffel(self, chart, xi, h=None):
        return np.zeros((self.dim,) * 3)

    def contract_christoffel(self, chart, xi, a, b):
        return np.zeros_like(np.asarray(b, dtype=float))

    def inner(self, p, u, v):
        return np.sum(np.asarray(u) * np.asarray(v), axis=-1)


# ---------------------------------------------------------------------------
# vector fields of the worked examples


def h3_vector_fields(x):
    """f1 = (0, e^{-x1^2} x1 sin x3, x3) and f2 = (e^{-x2^2} x2 sin x3, 0, x3)."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    s = np.sin(x3)
    zero = np.zeros_like(x1)
    f1 = np.stack([zero, np.exp(-x1 ** 2) * x1 * s, x3], axis=-1)
    f2 = np.stack([np.exp(-x2 ** 2) * x2 * s, zero, x3], axis=-1)
    return f1, f2


def h3_field_norms(x):
    """Closed-form g-norms |f_i|_g = sqrt((e^{-2 x_i^2} x_i^2 sin^2 x3 + x3^2) / x3^2)."""
    x = np.asarray(x, dtype=float)
    x3 = x[..., 2]
    s2 = np.sin(x3) ** 2
    return tuple(
        np.sqrt((np.exp(-2 * x[..., i] ** 2) * x[..., i] ** 2 * s2 + x3 ** 2) / x3 ** 2)
        for i in (0, 1)
    )


def h3_covariant_derivative(x, which, h=1e-6):
    """Matrix A[i, j] = d_j f^i + Gamma^i_jk f^k of the field f_which at points ``x``."""
    x = np.asarray(x, dtype=float)
    field = lambda y: h3_vector_fields(y)[which - 1]
    jac = np.empty(x.shape[:-1] + (3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        jac[..., :, j] = (field(x + e) - field(x - e)) / (2 * h)
    gamma = h3_christoffel(x)
    return jac + np.einsum("...ijk,...k->...ij", gamma, field(x))


def h3_nabla_bound(x1_range=(-4.0, 4.0), x2_range=(-4.0, 4.0), x3_range=(0.2, 20.0),
                   resolution=25):
    """Largest operator norm of nabla f1, nabla f2 over a grid.

    With g conformal to the Euclidean metric the g-operator norm of a (1,1)
    tensor is the spectral norm of its coordinate matrix.
    """
    axes = [np.linspace(*r, resolution) for r in (x1_range, x2_range, x3_range)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return max(float(np.linalg.norm(h3_covariant_derivative(grid, k), ord=2, axis=(-2, -1)).max())
               for k in (1, 2))


def s2_vector_fields(x):
    """f1 = (x2, -x1, 0), f2 = (0, x3, -x2), f3 = (-x3, 0, x1)."""
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    zero = np.zeros_like(x1)
    return (np.stack([x2, -x1, zero], axis=-1),
            np.stack([zero, x3, -x2], axis=-1),
            np.stack([-x3, zero, x1], axis=-1))


def s2_chart_fields(xi):
    """Components of f1, f2, f3 in the ``plus`` stereographic chart."""
    xi = np.asarray(xi, dtype=float)
    a, b = xi[..., 0], xi[..., 1]
    return (np.stack([b, -a], axis=-1),
            np.stack([a * b, (1 - a ** 2 + b ** 2) / 2], axis=-1),
            np.stack([(-1 - a ** 2 + b ** 2) / 2, -a * b], axis=-1))


def s2_rotation_vector(u):
    """omega with sum_i u_i f_i(x) = omega x x."""
    u = np.asarray(u, dtype=float)
    return np.stack([-u[..., 1], -u[..., 2], -u[..., 0]], axis=-1)
