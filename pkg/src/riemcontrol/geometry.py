"""Manifold abstraction and chart-based geometric operations.

Points and tangent vectors are stored in an ambient representation (the chart
coordinates themselves for single-chart manifolds, R^3 for the embedded sphere).
Every geodesic computation is done in chart coordinates by integrating

    x'' + Gamma(x', x') = 0,        X' + Gamma(x', X) = 0

with a fixed-step classical RK4 scheme, switching charts on the way when the
manifold asks for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels

DEFAULT_STEP = 1e-3
INFINITE_RADIUS = 1e18
SHOOTING_STARTS = 8


class GeometryError(Exception):
    pass


class ContractError(GeometryError):
    """Arguments violate an operation's precondition (e.g. mismatched base points)."""


class ChartDomainError(GeometryError):
    pass


class IntegrationError(GeometryError):
    """A geodesic left every chart domain."""


class GeodesicSolveError(GeometryError):
    """Shooting for a geodesic boundary-value problem did not converge."""

    def __init__(self, message, residual=None, starts_tried=0):
        super().__init__(message)
        self.residual = residual
        self.starts_tried = starts_tried


class OutsideInjectivityError(GeodesicSolveError):
    pass


class DistanceUnavailableError(GeodesicSolveError):
    pass


class Manifold:
    """Base class for a Riemannian manifold given by charts and a metric table.

    Subclasses provide ``metric`` and ``contains`` at minimum; single-chart
    manifolds can keep the identity chart defaults. ``christoffel`` defaults to
    central differences of the metric, which is enough for user manifolds of
    modest dimension.

    The injectivity radius has no general procedure, so concrete manifolds must
    supply ``injectivity_bound`` (a lower bound is fine).
    """

    name = "manifold"
    dim: int = 0
    ambient_dim: int = 0
    charts: tuple = ("identity",)
    # selects a compiled integration kernel; None uses the numpy path
    kernel_kind: Optional[int] = None

    # -- membership and projections -------------------------------------------
    def contains(self, p, tol=0.0):
        raise NotImplementedError

    def project(self, p):
        return np.asarray(p, dtype=float)

    def project_tangent(self, p, v):
        return np.asarray(v, dtype=float)

    def tangent_residual(self, p, v):
        """How far ``v`` is from being tangent at ``p`` (0 for open subsets of R^n)."""
        return 0.0

    def injectivity_bound(self, p):
        raise NotImplementedError(
            f"{type(self).__name__} must supply a lower bound for the injectivity radius"
        )

    # -- charts ---------------------------------------------------------------
    def select_chart(self, p):
        return self.charts[0]

    def to_chart(self, chart, p):
        return np.asarray(p, dtype=float)

    def from_chart(self, chart, xi):
        return np.asarray(xi, dtype=float)

    def chart_jacobian(self, chart, p):
        """d(chart)/d(ambient) at ``p``, shape ``(dim, ambient_dim)``."""
        return np.eye(self.dim, self.ambient_dim)

    def inverse_jacobian(self, chart, xi):
        """d(ambient)/d(chart) at ``xi``, shape ``(ambient_dim, dim)``."""
        return np.eye(self.ambient_dim, self.dim)

    def chart_contains(self, chart, xi):
        return bool(self.contains(self.from_chart(chart, xi)))

    def transition(self, chart, xi, vectors):
        """Hook for changing chart mid-integration; ``vectors`` is ``(k, dim)``."""
        return chart, xi, vectors

    # -- metric and connection --------------------------------------------------
    def metric(self, chart, xi):
        raise NotImplementedError

    def christoffel(self, chart, xi, h=1e-5):
        """Table ``G[k, i, j]`` of the Levi-Civita connection in ``chart``."""
        xi = np.asarray(xi, dtype=float)
        n = self.dim
        dg = np.empty((n, n, n))  # dg[l, i, j] = d_l g_ij
        for l in range(n):
            e = np.zeros(n)
            e[l] = h
            dg[l] = (self.metric(chart, xi + e) - self.metric(chart, xi - e)) / (2 * h)
        ginv = np.linalg.inv(self.metric(chart, xi))
        # first kind: G_lij = (d_i g_lj + d_j g_li - d_l g_ij) / 2
        first = 0.5 * (np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg)
        return np.einsum("kl,lij->kij", ginv, first)

    def contract_christoffel(self, chart, xi, a, b):
        """``Gamma^k_ij a^i b^j``; ``b`` may carry leading batch axes."""
        table = self.christoffel(chart, xi)
        return np.einsum("kij,i,...j->...k", table, a, b)

    def inner(self, p, u, v):
        """Metric inner product of ambient tangent vectors at ``p``.

        ``u`` and ``v`` may carry leading batch axes.
        """
        chart = self.select_chart(p)
        jac = self.chart_jacobian(chart, p)
        g = self.metric(chart, self.to_chart(chart, p))
        cu = np.asarray(u, dtype=float) @ jac.T
        cv = np.asarray(v, dtype=float) @ jac.T
        return np.einsum("...i,ij,...j->...", cu, g, cv)

    def norm(self, p, v):
        return np.sqrt(np.maximum(self.inner(p, v, v), 0.0))

    # -- geodesic machinery (array level) -------------------------------------
    def exp(self, p, v, step=DEFAULT_STEP):
        return exp_array(self, p, v, step=step)

    def log(self, p, q, step=DEFAULT_STEP):
        return log_array(self, p, q, step=step)

    def dist(self, p, q, step=DEFAULT_STEP):
        return distance_array(self, p, q, step=step)

    def transport(self, p, q, v, step=DEFAULT_STEP):
        return transport_array(self, p, q, v, step=step)


# ---------------------------------------------------------------------------
# integration core


@dataclass
class _FlowResult:
    chart: object
    xi: np.ndarray
    w: np.ndarray
    vectors: np.ndarray
    path: np.ndarray
    path_charts: list
    h: float


def _chart_speed(manifold, chart, xi, w):
    g = manifold.metric(chart, xi)
    return math.sqrt(max(float(w @ g @ w), 0.0))


def _steps_for(manifold, chart, xi, w, t_end, step):
    length = _chart_speed(manifold, chart, xi, w) * abs(t_end)
    return max(1, int(math.ceil(length / step)))


def _flow(manifold, chart, xi, w, vectors=None, t_end=1.0, step=DEFAULT_STEP,
          nsteps=None, record=False):
    n = manifold.dim
    xi = np.asarray(xi, dtype=float)
    w = np.asarray(w, dtype=float)
    vectors = np.zeros((0, n)) if vectors is None else np.atleast_2d(np.asarray(vectors, float))
    m = vectors.shape[0]
    if nsteps is None:
        nsteps = _steps_for(manifold, chart, xi, w, t_end, step)
    h = t_end / nsteps
    y0 = np.concatenate([xi, w, vectors.ravel()])

    if manifold.kernel_kind is not None:
        code = manifold.charts.index(chart)
        status, code, y, path, codes = _kernels.flow(
            manifold.kernel_kind, code, y0, n, m, h, nsteps, record
        )
        if status != _kernels.OK:
            raise IntegrationError("geodesic left the chart domain")
        chart = manifold.charts[code]
        path_charts = [manifold.charts[c] for c in codes]
    else:
        chart, y, path, path_charts = _flow_numpy(manifold, chart, y0, n, m, h, nsteps, record)

    return _FlowResult(chart, y[:n], y[n:2 * n], y[2 * n:].reshape(m, n), path, path_charts, h)


def _flow_numpy(manifold, chart, y0, n, m, h, nsteps, record):
    def rhs(y):
        x, w = y[:n], y[n:2 * n]
        carried = np.vstack([w, y[2 * n:].reshape(m, n)])
        acc = manifold.contract_christoffel(chart, x, w, carried)
        return np.concatenate([w, -acc.ravel()])

    y = y0.copy()
    path = [y.copy()] if record else []
    path_charts = [chart] if record else []
    for _ in range(nsteps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not manifold.chart_contains(chart, y[:n]):
            raise IntegrationError("geodesic left the chart domain")
        blocks = y[n:].reshape(m + 1, n)
        chart, xi, blocks = manifold.transition(chart, y[:n], blocks)
        y = np.concatenate([xi, np.asarray(blocks).ravel()])
        if record:
            path.append(y.copy())
            path_charts.append(chart)
    path = np.array(path) if record else np.empty((0, y.size))
    return chart, y, path, path_charts


# ---------------------------------------------------------------------------
# exp / log / distance / transport on arrays


def exp_array(manifold, p, v, step=DEFAULT_STEP):
    p = np.asarray(p, dtype=float)
    chart = manifold.select_chart(p)
    xi = manifold.to_chart(chart, p)
    w = manifold.chart_jacobian(chart, p) @ np.asarray(v, dtype=float)
    res = _flow(manifold, chart, xi, w, step=step)
    return manifold.project(manifold.from_chart(res.chart, res.xi))


def _shooting_starts(manifold, chart, p, q, count):
    jac = manifold.chart_jacobian(chart, p)
    xi = manifold.to_chart(chart, p)
    chord = jac @ manifold.project_tangent(p, q - p)
    scale = float(np.linalg.norm(chord))
    if scale == 0.0:
        chord = np.zeros(manifold.dim)
        chord[0] = 1.0
    # the projected chord underestimates long geodesics on curved embeddings, so
    # also try its direction at multiples of the ambient chord length
    unit = chord / _chart_speed(manifold, chart, xi, chord)
    reach = float(np.linalg.norm(q - p))
    scale = float(np.linalg.norm(unit)) * reach
    starts = [chord] if np.linalg.norm(chord) > 0 else []
    starts += [unit * reach * s for s in (1.0, 1.35, 1.7)]
    # sideways perturbations of the chord direction
    basis = np.linalg.svd(chord.reshape(1, -1))[2][1:]
    for k in range(count):
        if len(starts) >= count:
            break
        if len(basis) == 0:
            starts.append(chord * (2.2 + 0.5 * k))
            continue
        sign = 1.0 if k % 2 == 0 else -1.0
        starts.append(chord + sign * 0.4 * scale * basis[(k // 2) % len(basis)])
    return starts[:count]


def _shoot(manifold, chart, xi, q, w, step, tol, max_iter, speed_cap):
    """Damped Gauss-Newton on ``w -> exp(w) - q``. Returns ``(w, residual)``."""

    def residual(w, nsteps):
        res = _flow(manifold, chart, xi, w, nsteps=nsteps)
        return manifold.from_chart(res.chart, res.xi) - q

    def steps(w):
        return _steps_for(manifold, chart, xi, w, 1.0, step)

    nsteps = steps(w)
    try:
        r = residual(w, nsteps)
    except IntegrationError:
        return w, math.inf
    nr = float(np.linalg.norm(r))
    n = manifold.dim
    for _ in range(max_iter):
        if nr <= tol:
            return w, nr
        eps = 1e-7 * max(1.0, float(np.linalg.norm(w)))
        jac = np.empty((r.size, n))
        try:
            for i in range(n):
                e = np.zeros(n)
                e[i] = eps
                jac[:, i] = (residual(w + e, nsteps) - r) / eps
        except IntegrationError:
            return w, nr
        delta = np.linalg.lstsq(jac, -r, rcond=None)[0]
        lam = 1.0
        improved = False
        while lam >= 1.0 / 64:
            trial = w + lam * delta
            if _chart_speed(manifold, chart, xi, trial) > speed_cap:
                lam *= 0.5
                continue
            trial_steps = steps(trial)
            try:
                rt = residual(trial, trial_steps)
            except IntegrationError:
                lam *= 0.5
                continue
            nrt = float(np.linalg.norm(rt))
            if nrt < nr:
                w, r, nr, nsteps = trial, rt, nrt, trial_steps
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    return w, nr


def _log_chart(manifold, p, q, step=DEFAULT_STEP, tol=1e-11, max_iter=30,
               starts=SHOOTING_STARTS):
    """Shooting solve for the minimizing geodesic from ``p`` to ``q``.

    Returns ``(chart, xi, w)`` with ``w`` the chart velocity at ``p``. Starts are
    tried in order and the first converged geodesic shorter than the injectivity
    bound at ``p`` is accepted.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    chart = manifold.select_chart(p)
    xi = manifold.to_chart(chart, p)
    if np.array_equal(p, q):
        return chart, xi, np.zeros(manifold.dim)
    bound = manifold.injectivity_bound(p)
    tol_abs = tol * max(1.0, float(np.linalg.norm(q)))
    guesses = _shooting_starts(manifold, chart, p, q, starts)
    guess_speed = max(_chart_speed(manifold, chart, xi, g) for g in guesses)
    speed_cap = min(4.0 * guess_speed + 1.0, 2.0 * bound if bound < INFINITE_RADIUS else math.inf)
    best = math.inf
    too_long = False
    for k, w0 in enumerate(guesses):
        w, nr = _shoot(manifold, chart, xi, q, w0, step, tol_abs, max_iter, speed_cap)
        best = min(best, nr)
        if nr <= tol_abs:
            if _chart_speed(manifold, chart, xi, w) < bound:
                return chart, xi, w
            too_long = True
    if too_long:
        raise OutsideInjectivityError(
            "only geodesics longer than the injectivity bound were found",
            residual=best, starts_tried=len(guesses))
    raise GeodesicSolveError(
        f"geodesic shooting did not converge (best residual {best:.3e})",
        residual=best, starts_tried=len(guesses))


def log_array(manifold, p, q, step=DEFAULT_STEP):
    chart, xi, w = _log_chart(manifold, p, q, step=step)
    v = manifold.inverse_jacobian(chart, xi) @ w
    return manifold.project_tangent(np.asarray(p, dtype=float), v)


def distance_array(manifold, p, q, step=DEFAULT_STEP):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.array_equal(p, q):
        return 0.0
    try:
        chart, xi, w = _log_chart(manifold, p, q, step=step)
    except GeodesicSolveError as exc:
        raise DistanceUnavailableError(
            f"distance unavailable: {exc}", residual=exc.residual,
            starts_tried=exc.starts_tried) from exc
    return _chart_speed(manifold, chart, xi, w)


def transport_array(manifold, p, q, v, step=DEFAULT_STEP):
    """Parallel translation of ``v`` (one vector or a stack) from ``p`` to ``q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    vectors = np.atleast_2d(v)
    chart, xi, w = _log_chart(manifold, p, q, step=step)
    if _chart_speed(manifold, chart, xi, w) >= manifold.injectivity_bound(q):
        raise OutsideInjectivityError("target lies beyond the injectivity bound")
    if not w.any():
        out = vectors.copy()
    else:
        cv = vectors @ manifold.chart_jacobian(chart, p).T
        res = _flow(manifold, chart, xi, w, cv, step=step)
        out = res.vectors @ manifold.inverse_jacobian(res.chart, res.xi).T
        out = manifold.project_tangent(q, out)
    return out[0] if single else out


def transport_along(manifold, p, v, vectors, step=DEFAULT_STEP):
    """Endpoint of ``exp_p(v)`` together with ``vectors`` carried along that geodesic.

    Skips the shooting solve when the connecting geodesic is already known.
    """
    p = np.asarray(p, dtype=float)
    vectors = np.asarray(vectors, dtype=float)
    single = vectors.ndim == 1
    chart = manifold.select_chart(p)
    jac = manifold.chart_jacobian(chart, p)
    res = _flow(manifold, chart, manifold.to_chart(chart, p), jac @ v,
                np.atleast_2d(vectors) @ jac.T, step=step)
    q = manifold.project(manifold.from_chart(res.chart, res.xi))
    out = manifold.project_tangent(q, res.vectors @ manifold.inverse_jacobian(res.chart, res.xi).T)
    return q, (out[0] if single else out)


# ---------------------------------------------------------------------------
# typed layer


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    manifold: Manifold
    coords: np.ndarray

    def __post_init__(self):
        coords = _frozen(self.coords)
        if coords.shape != (self.manifold.ambient_dim,):
            raise ContractError(
                f"expected {self.manifold.ambient_dim} coordinates, got shape {coords.shape}")
        if not self.manifold.contains(coords, tol=1e-9):
            raise ChartDomainError(f"{coords} is not a point of {self.manifold.name}")
        object.__setattr__(self, "coords", coords)

    @property
    def chart(self):
        return self.manifold.select_chart(self.coords)

    def __repr__(self):
        return f"ManifoldPoint({self.manifold.name}, {self.coords.tolist()})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ManifoldPoint
    components: np.ndarray

    def __post_init__(self):
        comps = _frozen(self.components)
        if comps.shape != (self.base.manifold.ambient_dim,):
            raise ContractError(f"tangent components have shape {comps.shape}")
        scale = max(1.0, float(np.linalg.norm(comps)))
        if self.base.manifold.tangent_residual(self.base.coords, comps) > 1e-10 * scale:
            raise ContractError("vector is not tangent at its base point")
        object.__setattr__(self, "components", comps)

    def __repr__(self):
        return f"TangentVector(at {self.base.coords.tolist()}, {self.components.tolist()})"


@dataclass(frozen=True)
class ChristoffelTable:
    """``entries[k, i, j]`` holds Gamma^k_ij in ``chart``."""

    entries: np.ndarray
    chart: object

    def __getitem__(self, kij):
        return self.entries[kij]


@dataclass(frozen=True, eq=False)
class GeodesicSegment:
    start: ManifoldPoint
    velocity: TangentVector
    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    step: float

    def speeds(self):
        m = self.start.manifold
        return np.array([m.norm(p, v) for p, v in zip(self.points, self.velocities)])

    @property
    def length(self):
        return float(self.times[-1] * self.speeds()[0])


def _same_point(a: ManifoldPoint, b: ManifoldPoint):
    return a is b or (a.manifold is b.manifold and np.array_equal(a.coords, b.coords))


def _check_base(x: ManifoldPoint, *vectors: TangentVector):
    for u in vectors:
        if not _same_point(u.base, x):
            raise ContractError(f"tangent vector based at {u.base.coords} used at {x.coords}")


def metric_inner(x: ManifoldPoint, u: TangentVector, v: TangentVector) -> float:
    _check_base(x, u, v)
    return float(x.manifold.inner(x.coords, u.components, v.components))


def tangent_norm(x: ManifoldPoint, u: TangentVector) -> float:
    return math.sqrt(max(metric_inner(x, u, u), 0.0))


def distance(x: ManifoldPoint, y: ManifoldPoint, step=DEFAULT_STEP) -> float:
    if x.manifold is not y.manifold:
        raise ContractError("points live on different manifolds")
    return distance_array(x.manifold, x.coords, y.coords, step=step)


def exp_map(x: ManifoldPoint, v: TangentVector, step=DEFAULT_STEP) -> ManifoldPoint:
    _check_base(x, v)
    return ManifoldPoint(x.manifold, exp_array(x.manifold, x.coords, v.components, step=step))


def log_map(x: ManifoldPoint, y: ManifoldPoint, step=DEFAULT_STEP) -> TangentVector:
    if x.manifold is not y.manifold:
        raise ContractError("points live on different manifolds")
    return TangentVector(x, log_array(x.manifold, x.coords, y.coords, step=step))


def parallel_transport(x: ManifoldPoint, y: ManifoldPoint, v: TangentVector,
                       step=DEFAULT_STEP) -> TangentVector:
    _check_base(x, v)
    if x.manifold is not y.manifold:
        raise ContractError("points live on different manifolds")
    return TangentVector(y, transport_array(x.manifold, x.coords, y.coords, v.components, step=step))


def christoffel(x: ManifoldPoint) -> ChristoffelTable:
    m = x.manifold
    chart = m.select_chart(x.coords)
    return ChristoffelTable(m.christoffel(chart, m.to_chart(chart, x.coords)), chart)


def geodesic(x: ManifoldPoint, v: TangentVector, t_end=1.0, step=DEFAULT_STEP) -> GeodesicSegment:
    """Sampled geodesic ``t -> exp_x(t v)`` for ``t`` in ``[0, t_end]``."""
    _check_base(x, v)
    m = x.manifold
    chart = m.select_chart(x.coords)
    xi = m.to_chart(chart, x.coords)
    w = m.chart_jacobian(chart, x.coords) @ v.components
    res = _flow(m, chart, xi, w, t_end=t_end, step=step, record=True)
    n = m.dim
    points, velocities = [], []
    for row, c in zip(res.path, res.path_charts):
        points.append(m.project(m.from_chart(c, row[:n])))
        velocities.append(m.inverse_jacobian(c, row[:n]) @ row[n:2 * n])
    times = res.h * np.arange(len(points))
    return GeodesicSegment(x, v, times, np.array(points), np.array(velocities), res.h)
