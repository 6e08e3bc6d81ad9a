"""Orientor field E(t, x) = {(z0, f(t,x,u)) : u in Gamma(t,x), z0 >= f0(t,x,u)}.

Sets are represented by finite control grids. Membership of a point (z0, X) is
measured by the epigraph-aware distance

    d((z0, X), E) = min_u sqrt(max(f0(u) - z0, 0)^2 + |X - f(u)|_g^2),

computed on a fine grid and then polished by projected Levenberg-Marquardt
for continuous control sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .control import Ball, Box
from .geometry import ManifoldPoint, OutsideInjectivityError, transport_along, transport_array

GRID_CHUNK = 1024
POLISH_ITERATIONS = 400


class OrientorConfigError(ValueError):
    pass


def _coords(x):
    return np.asarray(x.coords if isinstance(x, ManifoldPoint) else x, dtype=float)


def _evaluate(system, t, x, controls):
    """Running cost and velocity for a batch of controls at one point."""
    controls = np.asarray(controls, dtype=float)
    xb = np.broadcast_to(x, (len(controls), x.size))
    f0 = np.broadcast_to(np.asarray(system.running_cost(t, xb, controls), float), (len(controls),))
    vel = np.broadcast_to(np.asarray(system.dynamics(t, xb, controls), float), (len(controls), x.size))
    return np.array(f0), np.array(vel)


def default_cap(f0):
    """max f0 + 10 (max f0 - min f0) + 1."""
    hi, lo = float(np.max(f0)), float(np.min(f0))
    return hi + 10.0 * (hi - lo) + 1.0


def _grid(control_set, resolution, truncate=None):
    if control_set.bounded:
        return control_set.grid(resolution)
    if truncate is None:
        raise OrientorConfigError("unbounded control set needs a truncation bound")
    lower = np.clip(control_set.lower, -truncate, truncate)
    upper = np.clip(control_set.upper, -truncate, truncate)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, control_set.dim)


@dataclass(frozen=True, eq=False)
class OrientorSample:
    """Finite stand-in for E(t, x) in R x T_x M.

    ``velocities`` live at ``base``; they are ``transport @ f(t, source, u)``, so
    ``transport`` is the identity unless the sample was translated from
    ``source`` to ``base``.
    """

    system: object
    t: float
    source: np.ndarray
    base: np.ndarray
    controls: np.ndarray
    f0: np.ndarray
    velocities: np.ndarray
    cap: float
    resolution: int
    transport: np.ndarray
    truncate: Optional[float] = None

    def __post_init__(self):
        if self.cap < float(np.max(self.f0)):
            raise OrientorConfigError("cap lies below the running cost on the grid")
        manifold = self.system.manifold
        scale = max(1.0, float(np.abs(self.velocities).max(initial=0.0)))
        worst = max((manifold.tangent_residual(self.base, v) for v in self.velocities), default=0.0)
        if worst > 1e-8 * scale:
            raise OrientorConfigError("sample velocities are not tangent at the base point")

    @property
    def points(self):
        """(z0, X) rows: each control at z0 = f0(u) and at z0 = cap."""
        low = np.column_stack([self.f0, self.velocities])
        high = np.column_stack([np.full(len(self.f0), self.cap), self.velocities])
        return np.vstack([low, high])

    def __len__(self):
        return 2 * len(self.f0)


def sample_orientor(system, t, x, resolution, z0_cap=None, truncate=None) -> OrientorSample:
    """Enumerate the control grid of Gamma(t, x) and map it through (f0, f)."""
    if resolution < 2:
        raise OrientorConfigError("resolution must be at least 2 per control dimension")
    x = _coords(x)
    gamma = system.gamma(t, x)
    if not gamma.bounded and z0_cap is None:
        raise OrientorConfigError("unbounded control set requires an explicit z0 cap")
    controls = _grid(gamma, resolution, truncate if truncate is not None else z0_cap)
    f0, vel = _evaluate(system, t, x, controls)
    cap = default_cap(f0) if z0_cap is None else float(z0_cap)
    return OrientorSample(system, float(t), x.copy(), x.copy(), controls, f0, vel, cap,
                          int(resolution), np.eye(x.size), truncate)


def _transport_matrix(manifold, y, x):
    """Matrix of parallel translation T_y M -> T_x M acting on ambient components."""
    basis = manifold.project_tangent(y, np.eye(y.size))
    return transport_array(manifold, y, x, basis).T


def transported_orientor(sample: OrientorSample, x) -> OrientorSample:
    """Translate the tangent components to ``x``; z0 is unchanged."""
    manifold = sample.system.manifold
    x = _coords(x)
    y = sample.base
    if np.array_equal(x, y):
        return sample
    if manifold.dist(y, x) >= manifold.injectivity_bound(x):
        raise OutsideInjectivityError("base point is beyond the injectivity bound of the target")
    mat = _transport_matrix(manifold, y, x)
    return OrientorSample(sample.system, sample.t, sample.source, x, sample.controls, sample.f0,
                          sample.velocities @ mat.T, sample.cap, sample.resolution,
                          mat @ sample.transport, sample.truncate)


# ---------------------------------------------------------------------------
# epigraph-aware membership


def _surjection(control_set):
    """Smooth maps w -> u onto a closed box or ball, with a right inverse.

    Boundary optima of the control set become interior critical points in w,
    which plain projection handles badly. Other sets fall back to projection.
    """
    if isinstance(control_set, Box) and control_set.bounded:
        mid = 0.5 * (control_set.lower + control_set.upper)
        half = 0.5 * control_set.widths
        safe = np.where(half > 0, half, 1.0)
        return (lambda w: mid + half * np.sin(w),
                lambda u: np.arcsin(np.clip((u - mid) / safe, -1.0, 1.0)))
    if isinstance(control_set, Ball):
        c = control_set.radius

        def forward(w):
            r = np.linalg.norm(w, axis=-1, keepdims=True)
            return c * np.sinc(r / np.pi) * w

        def inverse(u):
            r = np.linalg.norm(u, axis=-1, keepdims=True)
            ang = np.arcsin(np.clip(r / c, 0.0, 1.0))
            return np.where(r > 0, u * ang / np.maximum(r, 1e-300), 0.0)

        return forward, inverse
    return control_set.project, lambda u: u


class Membership:
    """Distance from points of R x T_x M to the set generated by a sample's structure."""

    def __init__(self, sample: OrientorSample, fine_resolution=None, polish=True):
        self.sample = sample
        system = sample.system
        gamma = system.gamma(sample.t, sample.source)
        self.gamma = gamma
        if fine_resolution is None:
            fine_resolution = max(sample.resolution, {1: 201, 2: 41, 3: 15}.get(gamma.dim, 9))
        self.grid = _grid(gamma, fine_resolution, sample.truncate if sample.truncate else sample.cap)
        self.f0, self.vel = self._map(self.grid)
        gram = np.array([[system.manifold.inner(sample.base, a, b) for b in np.eye(sample.base.size)]
                         for a in np.eye(sample.base.size)])
        # semidefinite Gram matrices (embedded manifolds) are factored by eigh
        w, v = np.linalg.eigh(gram)
        self.factor = v * np.sqrt(np.clip(w, 0.0, None))
        self.polish = polish and not hasattr(gamma, "points")
        self.to_control, self.from_control = _surjection(gamma)

    def _map(self, controls):
        s = self.sample
        f0, vel = _evaluate(s.system, s.t, s.source, controls)
        return f0, vel @ s.transport.T

    def _residuals(self, z, X, f0, vel):
        lift = np.maximum(f0 - z, 0.0)
        return np.column_stack([lift, (vel - X) @ self.factor])

    def coarse(self, z, X):
        """Grid distance and index of the nearest node (lowest index on ties)."""
        fv = self.vel @ self.factor
        xv = X @ self.factor
        fsq = np.sum(fv * fv, axis=1)
        xsq = np.sum(xv * xv, axis=1)
        best = np.empty(len(z))
        arg = np.empty(len(z), dtype=int)
        self._velocity_arg = np.empty(len(z), dtype=int)
        for lo in range(0, len(z), GRID_CHUNK):
            sl = slice(lo, lo + GRID_CHUNK)
            d2 = np.maximum(fsq[None, :] + xsq[sl, None] - 2.0 * xv[sl] @ fv.T, 0.0)
            self._velocity_arg[sl] = np.argmin(d2, axis=1)
            d2 += np.maximum(self.f0[None, :] - z[sl, None], 0.0) ** 2
            arg[sl] = np.argmin(d2, axis=1)
            best[sl] = d2[np.arange(len(d2)), arg[sl]]
        return np.sqrt(best), arg

    def _polish(self, z, X, u, tol=0.0):
        """Batched projected Levenberg-Marquardt.

        The hinge is replaced by a slack s >= 0, minimizing
        (f0(u) + s - z)^2 + |f(u) - X|_g^2, which is smooth in (u, s) and has
        the same minimum value. Rows stop once below ``tol / 2``.
        """
        n, m = u.shape
        s = np.maximum(z - self._map(u)[0], 0.0)
        w = self.from_control(u)
        mu = np.full(n, 1e-3)

        def value(w, s, rows):
            f0, vel = self._map(self.to_control(w))
            return np.column_stack([f0 + s - z[rows], (vel - X[rows]) @ self.factor])

        r = value(w, s, slice(None))
        cost = np.sum(r * r, axis=1)
        goal = (0.5 * tol) ** 2
        for _ in range(POLISH_ITERATIONS):
            act = np.flatnonzero((cost > goal) & (mu < 1e8))
            if not len(act):
                break
            wa, sa, ra = w[act], s[act], r[act]
            h = 1e-7 * np.maximum(1.0, np.abs(wa))
            jac = np.zeros(ra.shape + (m + 1,))
            for j in range(m):
                e = np.zeros_like(wa)
                e[:, j] = h[:, j]
                jac[:, :, j] = (value(wa + e, sa, act) - ra) / h[:, j, None]
            jac[:, 0, m] = 1.0
            jtj = np.einsum("nki,nkj->nij", jac, jac)
            g = np.einsum("nki,nk->ni", jac, ra)
            diag = 1.0 + np.einsum("nii->ni", jtj)
            damp = mu[act, None, None] * (np.eye(m + 1) * diag[:, :, None])
            step = np.linalg.solve(jtj + damp, -g[..., None])[..., 0]
            tw = wa + step[:, :m]
            ts = np.maximum(sa + step[:, m], 0.0)
            rt = value(tw, ts, act)
            ct = np.sum(rt * rt, axis=1)
            better = ct < cost[act]
            keep = act[better]
            w[keep], s[keep], r[keep], cost[keep] = tw[better], ts[better], rt[better], ct[better]
            mu[act] = np.where(better, np.maximum(mu[act] * 0.3, 1e-9), mu[act] * 10.0)
        u = self.gamma.project(self.to_control(w))
        f0, vel = self._map(u)
        exact = self._residuals(z, X, f0, vel)
        return np.sqrt(np.sum(exact * exact, axis=1)), u

    def _constrained(self, z, X, starts, tol):
        """Last resort for one point: SLSQP honouring the control set exactly.

        Batched LM stalls where the cost hinge meets the boundary of a ball, and
        non-injective maps u -> f(u) leave it in the wrong basin, so extra
        starts come from the grid nodes closest in velocity alone and in the
        full epigraph distance.
        """
        fv = (self.vel - X) @ self.factor
        dx = np.sum(fv * fv, axis=1)
        full = dx + np.maximum(self.f0 - z, 0.0) ** 2
        starts = list(starts) + [self.grid[k] for k in np.argsort(dx, kind="stable")[:4]]
        starts += [self.grid[k] for k in np.argsort(full, kind="stable")[1:4]]
        zs, Xs = np.array([z]), X[None]

        def objective(u):
            r = self._residuals(zs, Xs, *self._map(self.gamma.project(u[None])))
            return float(np.sum(r * r))

        kwargs = {"method": "SLSQP", "options": {"ftol": 1e-16, "maxiter": 200}}
        if isinstance(self.gamma, Box):
            kwargs["bounds"] = list(zip(self.gamma.lower, self.gamma.upper))
        elif isinstance(self.gamma, Ball):
            rad2 = self.gamma.radius ** 2
            kwargs["constraints"] = [{"type": "ineq", "fun": lambda u: rad2 - u @ u,
                                      "jac": lambda u: -2.0 * u}]
        else:
            kwargs = {"method": "Nelder-Mead", "options": {"xatol": 1e-10, "fatol": 1e-14}}
        best = math.inf
        for u0 in starts:
            best = min(best, minimize(objective, u0, **kwargs).fun)
            if best <= tol * tol:
                break
        return math.sqrt(max(best, 0.0))

    def _batched(self, z, X, tol):
        dist, arg = self.coarse(z, X)
        starts = self.grid[arg].copy()
        moved = starts.copy()
        if self.polish:
            todo = np.flatnonzero(dist > tol)
            if len(todo):
                polished, moved[todo] = self._polish(z[todo], X[todo], starts[todo], tol)
                dist[todo] = np.minimum(dist[todo], polished)
                # second basin: nearest node in velocity alone
                again = todo[dist[todo] > tol]
                if len(again):
                    alt = self.grid[self._velocity_arg[again]].copy()
                    dist[again] = np.minimum(dist[again], self._polish(z[again], X[again], alt, tol)[0])
        return dist, starts, moved

    def distance(self, points, tol=0.0):
        """Epigraph distance of each (z0, X) row.

        Rows whose grid bound is already within ``tol`` keep that bound, so
        values below ``tol`` are upper bounds rather than exact distances.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        z, X = points[:, 0], points[:, 1:]
        dist, starts, moved = self._batched(z, X, tol)
        if self.polish:
            for idx in np.flatnonzero(dist > tol):
                dist[idx] = min(dist[idx], self._constrained(
                    z[idx], X[idx], [moved[idx], starts[idx]], tol))
        return dist

    def max_distance(self, points):
        """Largest distance over ``points`` and its row.

        Batched values are upper bounds; rows are refined in decreasing order
        until the refined maximum dominates every unrefined bound.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        z, X = points[:, 0], points[:, 1:]
        dist, starts, moved = self._batched(z, X, 0.0)
        if not self.polish:
            k = int(np.argmax(dist))
            return float(dist[k]), k
        best, where = -1.0, -1
        for idx in np.argsort(-dist, kind="stable"):
            if dist[idx] <= best:
                break
            exact = min(dist[idx], self._constrained(z[idx], X[idx], [moved[idx], starts[idx]], 0.0))
            if exact > best:
                best, where = exact, int(idx)
        return float(best), where


def membership_distance(sample, points, tol=0.0, fine_resolution=None):
    return Membership(sample, fine_resolution).distance(points, tol)


# ---------------------------------------------------------------------------
# convexity


@dataclass
class ConvexityVerdict:
    verdict: str
    trials: int
    # an upper bound when the verdict is pass: bounds within tol are not refined
    worst_gap: float
    tol: float
    witness: Optional[dict] = None

    def __post_init__(self):
        if self.verdict == "fail" and (self.witness is None or not self.worst_gap > self.tol):
            raise ValueError("a failing verdict needs a witness with gap above tolerance")

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_record(self):
        return {"verdict": self.verdict, "trials": self.trials, "worst_gap": self.worst_gap,
                "tol": self.tol, "witness": self.witness}


def _conclusive(control_set):
    return bool(getattr(control_set, "bounded", False) and getattr(control_set, "closed", False))


def check_convex(sample: OrientorSample, trials=5000, tol=1e-3, seed=0,
                 fine_resolution=None) -> ConvexityVerdict:
    """Random convex combinations of sample points tested for membership.

    Even-numbered trials use lambda = 1/2. The verdict is ``inconclusive``
    instead of ``pass`` when the control set is not known to be closed and
    bounded, since closedness cannot be decided from samples.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    pts = sample.points
    i = rng.integers(len(pts), size=trials)
    j = rng.integers(len(pts), size=trials)
    lam = rng.uniform(0.0, 1.0, size=trials)
    lam[::2] = 0.5
    combos = lam[:, None] * pts[i] + (1.0 - lam[:, None]) * pts[j]
    gaps = Membership(sample, fine_resolution).distance(combos, tol)
    k = int(np.argmax(gaps))
    worst = float(gaps[k])
    if worst > tol:
        witness = {"p": pts[i[k]].tolist(), "q": pts[j[k]].tolist(), "lambda": float(lam[k]),
                   "point": combos[k].tolist(), "gap": worst}
        return ConvexityVerdict("fail", trials, worst, tol, witness)
    verdict = "pass" if _conclusive(sample.system.gamma(sample.t, sample.source)) else "inconclusive"
    return ConvexityVerdict(verdict, trials, worst, tol)


# ---------------------------------------------------------------------------
# direct finite-delta probe


@dataclass
class CesariReport:
    deltas: list
    deviations: list
    monotone: bool
    verdict: str
    tol: float
    # the decreasing-trend reading is a heuristic, not a proof of the property
    note: str = ("finite-delta probe: hull of translated nearby samples versus E(t,x); "
                 "the trend as delta decreases is a heuristic indicator only")

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_record(self):
        return {"deltas": self.deltas, "deviations": self.deviations, "monotone": self.monotone,
                "verdict": self.verdict, "tol": self.tol, "note": self.note}


def _random_unit_tangents(manifold, x, count, rng):
    raw = manifold.project_tangent(x, rng.normal(size=(count, x.size)))
    norms = np.sqrt(manifold.inner(np.broadcast_to(x, raw.shape), raw, raw))
    return raw / norms[:, None]


def _hull_points(points, count, rng):
    """Random convex combinations; odd draws are midpoints of two points."""
    n = len(points)
    out = np.empty((count, points.shape[1]))
    dim = points.shape[1]
    for k in range(count):
        if k % 2 == 1:
            i, j = rng.integers(n, size=2)
            out[k] = 0.5 * (points[i] + points[j])
        else:
            size = int(rng.integers(2, dim + 2))
            idx = rng.integers(n, size=size)
            w = rng.dirichlet(np.ones(size))
            out[k] = w @ points[idx]
    return out


def _translated_neighbour(system, t, x, v, resolution, cap):
    """E(t, y) at y = exp_x(v), translated back to x along the same geodesic."""
    manifold = system.manifold
    y, back = transport_along(manifold, x, v, v)
    near = sample_orientor(system, t, y, resolution, z0_cap=cap)
    basis = manifold.project_tangent(y, np.eye(y.size))
    # the geodesic from y to x starts with velocity -L_xy v
    _, moved = transport_along(manifold, y, -back, basis)
    mat = moved.T
    return OrientorSample(system, near.t, near.source, x, near.controls, near.f0,
                          near.velocities @ mat.T, near.cap, near.resolution, mat, near.truncate)


def check_cesari_local(system, t, x, delta_list, resolution=9, tol=1e-2, y_samples=8,
                       hull_points=2000, seed=0, fine_resolution=None) -> CesariReport:
    """Deviation of co(union of L_yx E(t,y), rho(x,y) < delta) from E(t,x) per delta.

    ``y_samples = 0`` uses only y = x. The point x itself is always included.
    """
    x = _coords(x)
    manifold = system.manifold
    deltas = sorted((float(d) for d in delta_list), reverse=True)
    if not deltas:
        raise ValueError("delta_list must be nonempty")
    if any(d <= 0 for d in deltas):
        raise ValueError("deltas must be positive")
    if deltas[0] >= manifold.injectivity_bound(x):
        raise OutsideInjectivityError("delta exceeds the injectivity bound at x")
    rng = np.random.default_rng(seed)
    here = sample_orientor(system, t, x, resolution)
    member = Membership(here, fine_resolution)
    deviations = []
    for delta in deltas:
        samples = [here.points]
        if y_samples:
            dirs = _random_unit_tangents(manifold, x, y_samples, rng)
            # uniform in the open delta-ball
            radii = 0.999 * delta * rng.uniform(size=y_samples) ** (1.0 / manifold.dim)
            for d, r in zip(dirs, radii):
                near = _translated_neighbour(system, t, x, d * r, resolution, here.cap)
                samples.append(near.points)
        pool = np.vstack(samples)
        probes = _hull_points(pool, hull_points, rng)
        deviations.append(member.max_distance(probes)[0])
    monotone = all(a >= b - 1e-12 for a, b in zip(deviations, deviations[1:]))
    verdict = "pass" if deviations[-1] <= tol else "fail"
    return CesariReport(deltas, deviations, monotone, verdict, tol)


def cesari_record(problem, t, x, resolution, trials, verdict: ConvexityVerdict):
    return {"problem": problem, "t": float(t), "x": np.asarray(x, float).tolist(),
            "resolution": resolution, "trials": trials, "verdict": verdict.verdict,
            "worst_gap": verdict.worst_gap, "witness": verdict.witness}
