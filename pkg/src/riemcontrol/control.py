"""Control systems on manifolds.

Dynamics, costs and constraint functions are vectorized callables: ``x`` has
shape ``(..., ambient_dim)``, ``u`` has shape ``(..., m)`` and ``t`` broadcasts
against ``x.shape[:-1]``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import (DEFAULT_STEP, DistanceUnavailableError, GeometryError, Manifold,
                       distance_array, transport_along)


class DomainExitError(Exception):
    def __init__(self, message, exit_time):
        super().__init__(message)
        self.exit_time = exit_time


class CostError(Exception):
    pass


# ---------------------------------------------------------------------------
# control sets


class Box:
    """Closed box ``lower <= u <= upper``; infinite bounds make it unbounded."""

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("invalid box bounds")
        self.dim = self.lower.size

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    closed = True

    def project(self, u):
        return np.clip(u, self.lower, self.upper)

    def distance(self, u):
        u = np.asarray(u, dtype=float)
        return np.linalg.norm(u - self.project(u), axis=-1)

    def contains(self, u, tol=0.0):
        return self.distance(u) <= tol

    def sample(self, rng, size):
        if not self.bounded:
            raise ValueError("cannot sample an unbounded box")
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def grid(self, resolution):
        if not self.bounded:
            raise ValueError("cannot grid an unbounded box")
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(self.lower, self.upper)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    @property
    def widths(self):
        return self.upper - self.lower

    def describe(self):
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class Ball:
    """Closed Euclidean ball of the given radius about the origin."""

    closed = True
    bounded = True

    def __init__(self, dim, radius):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.dim = dim
        self.radius = float(radius)

    def project(self, u):
        u = np.asarray(u, dtype=float)
        r = np.linalg.norm(u, axis=-1, keepdims=True)
        return np.where(r > self.radius, u * (self.radius / np.maximum(r, 1e-300)), u)

    def distance(self, u):
        return np.maximum(np.linalg.norm(u, axis=-1) - self.radius, 0.0)

    def contains(self, u, tol=0.0):
        return self.distance(u) <= tol

    def sample(self, rng, size):
        d = rng.normal(size=(size, self.dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * self.radius * rng.uniform(size=(size, 1)) ** (1.0 / self.dim)

    def grid(self, resolution):
        # box grid with outside nodes pulled radially onto the sphere
        axis = np.linspace(-self.radius, self.radius, resolution)
        pts = np.stack(np.meshgrid(*([axis] * self.dim), indexing="ij"), -1).reshape(-1, self.dim)
        return np.unique(np.round(self.project(pts), 12), axis=0)

    @property
    def widths(self):
        return np.full(self.dim, 2 * self.radius)

    def describe(self):
        return {"type": "ball", "dim": self.dim, "radius": self.radius}


class FiniteSet:
    closed = True
    bounded = True

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.dim = self.points.shape[1]

    def _nearest(self, u):
        u = np.asarray(u, dtype=float)
        d = np.linalg.norm(u[..., None, :] - self.points, axis=-1)
        return d.argmin(axis=-1), d.min(axis=-1)

    def project(self, u):
        return self.points[self._nearest(u)[0]]

    def distance(self, u):
        return self._nearest(u)[1]

    def contains(self, u, tol=0.0):
        return self.distance(u) <= tol

    def sample(self, rng, size):
        return self.points[rng.integers(len(self.points), size=size)]

    def grid(self, resolution=None):
        return self.points.copy()

    @property
    def widths(self):
        return np.ptp(self.points, axis=0)

    def describe(self):
        return {"type": "finite", "points": self.points.tolist()}


# ---------------------------------------------------------------------------
# system data


def _zero_residual(x):
    return np.zeros(np.shape(x)[:-1])


@dataclass(frozen=True)
class EndpointSet:
    """Product endpoint set: separate residuals for y(0) and y(T).

    Each residual is zero on the set and positive off it.
    """

    initial: Callable = _zero_residual
    terminal: Callable = _zero_residual
    description: str = "free"

    def residuals(self, x0, xT):
        return np.asarray(self.initial(x0), float), np.asarray(self.terminal(xT), float)


def fixed_point(point):
    point = np.asarray(point, dtype=float)
    return lambda x: np.linalg.norm(np.asarray(x) - point, axis=-1)


@dataclass(frozen=True, eq=False)
class ControlSystem:
    manifold: Manifold
    horizon: float
    dynamics: Callable
    controls: object
    running_cost: Callable
    endpoint: EndpointSet = field(default_factory=EndpointSet)
    endpoint_cost: Optional[Callable] = None
    state_violation: Optional[Callable] = None
    control_map: Optional[Callable] = None
    cost_bound: float = 0.0
    initial_state: Optional[np.ndarray] = None
    state_sampler: Optional[Callable] = None
    name: str = "system"

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def gamma(self, t, x):
        """Admissible control set at (t, x)."""
        if self.control_map is None:
            return self.controls
        return self.control_map(t, x)

    def make_signal(self, values, breakpoints=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if breakpoints is None:
            breakpoints = np.linspace(0.0, self.horizon, len(values) + 1)
        signal = ControlSignal(breakpoints, values)
        signal.validate(self.controls)
        return signal


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-constant control: ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float)
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if bp.ndim != 1 or len(bp) != len(vals) + 1:
            raise ValueError("need one more breakpoint than control values")
        if len(vals) < 1 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, horizon, values):
        values = np.asarray(values, dtype=float)
        return cls(np.linspace(0.0, horizon, len(values) + 1), values)

    @property
    def segments(self):
        return len(self.values)

    @property
    def horizon(self):
        return float(self.breakpoints[-1])

    def segment_index(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, self.segments - 1)

    def __call__(self, t):
        return self.values[self.segment_index(t)]

    def validate(self, control_set, tol=1e-12):
        bad = ~np.asarray(control_set.contains(self.values, tol))
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ValueError(f"control value {self.values[k].tolist()} outside the control set")

    def refined(self):
        """Same signal on twice as many segments."""
        mids = 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])
        bp = np.empty(2 * self.segments + 1)
        bp[0::2] = self.breakpoints
        bp[1::2] = mids
        return ControlSignal(bp, np.repeat(self.values, 2, axis=0))


@dataclass(frozen=True, eq=False)
class Trajectory:
    manifold: Manifold
    times: np.ndarray
    states: np.ndarray
    tangents: np.ndarray
    controls: np.ndarray
    step: float

    @property
    def initial(self):
        return self.states[0]

    @property
    def final(self):
        return self.states[-1]


@dataclass(frozen=True)
class FeasibilityTolerances:
    control: float = 1e-9
    state: float = 1e-9
    endpoint: float = 1e-6


@dataclass(frozen=True)
class FeasibilityReport:
    control_violation: float
    state_violation: float
    endpoint_residual: float
    tolerances: FeasibilityTolerances
    feasible: bool

    def as_dict(self):
        return {
            "control_violation": self.control_violation,
            "state_violation": self.state_violation,
            "endpoint_residual": self.endpoint_residual,
            "feasible": self.feasible,
        }


# ---------------------------------------------------------------------------
# integration


def time_grid(breakpoints, step):
    """Integration nodes refining ``breakpoints`` so no substep exceeds ``step``.

    Returns ``(times, seg)`` where ``seg[j]`` is the segment of substep ``j``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    times, seg = [np.array([breakpoints[0]])], []
    for k in range(len(breakpoints) - 1):
        a, b = breakpoints[k], breakpoints[k + 1]
        nsub = max(1, int(math.ceil((b - a) / step - 1e-9)))
        times.append(np.linspace(a, b, nsub + 1)[1:])
        seg.append(np.full(nsub, k))
    return np.concatenate(times), np.concatenate(seg)


def integrate_batch(system, values, breakpoints, x_init, step):
    """RK4 integration of a batch of piecewise-constant controls from one initial state.

    ``values`` has shape ``(B, N, m)``. Rows that leave the manifold are frozen at
    their last valid state and flagged. Returns a dict of arrays.
    """
    M = system.manifold
    f = system.dynamics
    values = np.asarray(values, dtype=float)
    batch = values.shape[0]
    times, seg = time_grid(np.asarray(breakpoints, float), step)
    x = np.broadcast_to(np.asarray(x_init, dtype=float), (batch, M.ambient_dim)).copy()
    states = np.empty((batch, len(times), M.ambient_dim))
    states[:, 0] = x
    exited = np.zeros(batch, dtype=bool)
    exit_time = np.full(batch, np.nan)
    for j in range(len(times) - 1):
        t, h = times[j], times[j + 1] - times[j]
        u = values[:, seg[j]]
        k1 = f(t, x, u)
        k2 = f(t + 0.5 * h, x + 0.5 * h * k1, u)
        k3 = f(t + 0.5 * h, x + 0.5 * h * k2, u)
        k4 = f(t + h, x + h * k3, u)
        new = M.project(x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        ok = np.all(np.isfinite(new), axis=-1) & np.asarray(M.contains(new), dtype=bool)
        left = ~ok & ~exited
        exit_time[left] = times[j + 1]
        exited |= left
        x = np.where(exited[:, None], x, new)
        states[:, j + 1] = x
    node_seg = np.append(seg, seg[-1])
    node_u = values[:, node_seg]
    tangents = f(times[None, :], states, node_u)
    return {"times": times, "seg": seg, "states": states, "tangents": tangents,
            "controls": node_u, "exited": exited, "exit_time": exit_time}


def integrate(system: ControlSystem, signal: ControlSignal, x_init, step=1e-2) -> Trajectory:
    """Fixed-step RK4 solution of y' = f(t, y, u(t)), y(0) = x_init.

    The grid contains every breakpoint of ``signal``; states are projected back
    onto the manifold after each step.
    """
    x_init = np.asarray(x_init, dtype=float)
    if not system.manifold.contains(x_init, tol=1e-9):
        raise DomainExitError("initial state is not on the manifold", 0.0)
    out = integrate_batch(system, signal.values[None], signal.breakpoints, x_init, step)
    if out["exited"][0]:
        t = float(out["exit_time"][0])
        raise DomainExitError(f"trajectory left the manifold at t={t:.6g}", t)
    return Trajectory(system.manifold, out["times"], out["states"][0], out["tangents"][0],
                      out["controls"][0], step)


# ---------------------------------------------------------------------------
# cost and feasibility


def _running_cost_batch(system, times, seg, states, values):
    # per-substep trapezoid with the substep's own control at both ends
    u = values[:, seg]
    left = system.running_cost(times[None, :-1], states[:, :-1], u)
    right = system.running_cost(times[None, 1:], states[:, 1:], u)
    h = np.diff(times)
    return left, right, h


def cost_batch(system, out, values):
    left, right, h = _running_cost_batch(system, out["times"], out["seg"], out["states"], values)
    total = np.sum(0.5 * (left + right) * h, axis=-1)
    if system.endpoint_cost is not None:
        total = total + system.endpoint_cost(out["states"][:, 0], out["states"][:, -1])
    return total


def evaluate_cost(system: ControlSystem, signal: ControlSignal, traj: Trajectory) -> float:
    """Trapezoid quadrature of the running cost plus the endpoint cost."""
    seg = signal.segment_index(traj.times[:-1])
    left, right, h = _running_cost_batch(system, traj.times, seg, traj.states[None],
                                         signal.values[None])
    bad = ~(np.isfinite(left[0]) & np.isfinite(right[0]))
    if np.any(bad):
        j = int(np.argmax(bad))
        raise CostError(f"running cost is not finite near t={traj.times[j]:.6g}")
    total = float(np.sum(0.5 * (left[0] + right[0]) * h))
    if system.endpoint_cost is not None:
        end = float(system.endpoint_cost(traj.initial, traj.final))
        if not math.isfinite(end):
            raise CostError("endpoint cost is not finite")
        total += end
    return total


def residuals_batch(system, out):
    """Control, state and endpoint violations for every row of a batch."""
    states = out["states"]
    gamma = system.controls
    if system.control_map is None:
        ctrl = np.max(gamma.distance(out["controls"]), axis=-1)
    else:
        ctrl = np.array([
            max(float(system.gamma(t, x).distance(u)) for t, x, u in zip(out["times"], xs, us))
            for xs, us in zip(states, out["controls"])
        ])
    if system.state_violation is None:
        state = np.zeros(len(states))
    else:
        state = np.max(system.state_violation(states), axis=-1)
    r0, rT = system.endpoint.residuals(states[:, 0], states[:, -1])
    return ctrl, state, np.maximum(r0, rT)


def check_feasible(system, signal, traj, tolerances=None) -> FeasibilityReport:
    """Evaluate the control, state and endpoint constraints on the trajectory grid.

    Inequality endpoint sets are closed, so reaching their boundary is feasible.
    """
    tol = tolerances if tolerances is not None else FeasibilityTolerances()
    out = {"times": traj.times, "states": traj.states[None], "controls": traj.controls[None]}
    ctrl, state, end = (float(r[0]) for r in residuals_batch(system, out))
    feasible = ctrl <= tol.control and state <= tol.state and end <= tol.endpoint
    return FeasibilityReport(ctrl, state, end, tol, feasible)


# ---------------------------------------------------------------------------
# growth bound and Lipschitz estimate


@dataclass(frozen=True, eq=False)
class GrowthData:
    """Constants of the linear-growth hypothesis: K, a step function ell >= 0, p, x0."""

    K: float
    ell_breakpoints: np.ndarray
    ell_values: np.ndarray
    p: float
    x0: np.ndarray

    def __post_init__(self):
        if not self.K > 1:
            raise ValueError("K must exceed 1")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        vals = np.atleast_1d(np.asarray(self.ell_values, dtype=float))
        bp = np.asarray(self.ell_breakpoints, dtype=float)
        if len(bp) != len(vals) + 1 or np.any(np.diff(bp) <= 0):
            raise ValueError("ell needs one more breakpoint than values")
        if np.any(vals < 0):
            raise ValueError("ell must be nonnegative")
        object.__setattr__(self, "ell_values", vals)
        object.__setattr__(self, "ell_breakpoints", bp)
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    @classmethod
    def constant(cls, K, ell, horizon, x0, p=2.0):
        return cls(K, np.array([0.0, horizon]), np.array([ell]), p, x0)

    def ell_integral(self, t):
        """Primitive of ell from 0 to t (vectorized)."""
        bp, vals = self.ell_breakpoints, self.ell_values
        t = np.asarray(t, dtype=float)
        lengths = np.clip(t[..., None] - bp[:-1], 0.0, np.diff(bp))
        return np.sum(lengths * vals, axis=-1)


@dataclass(frozen=True)
class GrowthCheck:
    holds: bool
    min_slack: float
    violations: int
    pairs: int
    fallbacks: int


def _arc_lengths(traj):
    speeds = np.array([traj.manifold.norm(x, v) for x, v in zip(traj.states, traj.tangents)])
    return np.concatenate([[0.0], np.cumsum(0.5 * (speeds[1:] + speeds[:-1]) * np.diff(traj.times))])


def verify_growth_bound(traj: Trajectory, growth: GrowthData, tol=1e-9,
                        step=DEFAULT_STEP) -> GrowthCheck:
    """Check rho(y(s), y(t)) <= rho(y(t), x0)(e^{K(s-t)} - 1) + K int_t^s ell e^{K(s-t)}
    over every pair of grid nodes t < s; ``min_slack`` is the tightest margin.

    Pairs whose distance cannot be computed fall back to the arc length of the
    trajectory between them, which only overestimates the left side.
    """
    M = traj.manifold
    pts, times = traj.states, traj.times
    arc = None
    fallbacks = 0

    def rho(a, b, i, j):
        nonlocal arc, fallbacks
        try:
            return distance_array(M, a, b, step=step)
        except DistanceUnavailableError:
            if i is None:
                raise
            if arc is None:
                arc = _arc_lengths(traj)
            fallbacks += 1
            return abs(arc[j] - arc[i])

    d0 = np.array([rho(x, growth.x0, None, None) for x in pts])
    prim = growth.ell_integral(times)
    min_slack = math.inf
    violations = 0
    pairs = 0
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            dt = times[j] - times[i]
            grow = math.exp(growth.K * dt)
            rhs = d0[i] * (grow - 1.0) + growth.K * (prim[j] - prim[i]) * grow + tol
            slack = rhs - rho(pts[i], pts[j], i, j)
            pairs += 1
            if slack < 0:
                violations += 1
            min_slack = min(min_slack, slack)
    return GrowthCheck(violations == 0, float(min_slack), violations, pairs, fallbacks)


@dataclass(frozen=True)
class LipschitzEstimate:
    value: float
    samples: int
    skipped: int

    def __float__(self):
        return self.value


def estimate_lipschitz(system: ControlSystem, sample_count, radius, seed=0, t=0.0,
                       controls_per_pair=4, sampler=None, step=DEFAULT_STEP) -> LipschitzEstimate:
    """Largest observed |L_{x1 x2} f(t, x1, u) - f(t, x2, u)| / rho(x1, x2).

    ``x2 = exp_{x1}(w)`` with |w| <= radius, so the connecting geodesic is known
    and no shooting solve is needed. Pairs beyond the injectivity bound are
    skipped and counted.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    M = system.manifold
    sampler = sampler or system.state_sampler
    if sampler is None:
        raise ValueError("system has no state sampler; pass one explicitly")
    rng = np.random.default_rng(seed)
    best = 0.0
    skipped = 0
    for _ in range(sample_count):
        x1 = sampler(rng, 1)[0]
        d = M.project_tangent(x1, rng.normal(size=M.ambient_dim))
        d = d / M.norm(x1, d)
        r = radius * (1.0 - rng.uniform())
        if r >= M.injectivity_bound(x1):
            skipped += 1
            continue
        u = system.gamma(t, x1).sample(rng, controls_per_pair)
        fx1 = system.dynamics(t, np.broadcast_to(x1, (len(u), len(x1))), u)
        try:
            x2, moved = transport_along(M, x1, r * d, fx1, step=step)
        except GeometryError:
            skipped += 1
            continue
        if r >= M.injectivity_bound(x2):
            skipped += 1
            continue
        fx2 = system.dynamics(t, np.broadcast_to(x2, (len(u), len(x2))), u)
        best = max(best, float(np.max(M.norm(x2, moved - fx2))) / r)
    return LipschitzEstimate(best, sample_count - skipped, skipped)


# ---------------------------------------------------------------------------
# export


def trajectory_record(problem, params, traj, cost, feasibility):
    return {
        "problem": problem,
        "params": params,
        "step": traj.step,
        "grid": traj.times.tolist(),
        "states": traj.states.tolist(),
        "controls": traj.controls.tolist(),
        "cost": cost,
        "feasibility": feasibility.as_dict(),
    }


def write_trajectory_json(path, record):
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)


def write_trajectory_csv(path, traj):
    n = traj.states.shape[1]
    m = traj.controls.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)])
        for t, x, u in zip(traj.times, traj.states, traj.controls):
            writer.writerow([repr(float(t))] + [repr(float(a)) for a in x] + [repr(float(a)) for a in u])
