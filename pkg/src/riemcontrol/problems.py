"""The two worked control problems (on H^3 and on S^2) and a nonconvex counterexample."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .control import (Ball, Box, ControlSignal, ControlSystem, EndpointSet, FiniteSet,
                      fixed_point)
from .manifolds import (EuclideanSpace, HyperbolicHalfSpace3, Sphere2, h3_field_norms,
                        h3_vector_fields, s2_vector_fields)

H3_START = np.array([0.0, 0.0, 1.0])
NORTH = np.array([0.0, 0.0, 1.0])
Q_FLOOR = 1e-9


def h3_optimal_angle(tol=1e-12):
    """Root of 2u = cos u on (0, pi/2) by bisection."""
    lo, hi = 0.0, math.pi / 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 2 * mid - math.cos(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _h3_dynamics(t, x, u):
    f1, f2 = h3_vector_fields(x)
    return np.sin(u[..., 0])[..., None] * f1 + u[..., 1][..., None] * f2


def _h3_running_cost(t, x, u):
    n1, n2 = h3_field_norms(x)
    return u[..., 0] ** 2 * n1 ** 2 + u[..., 1] * n2


def _h3_sampler(rng, size):
    return np.column_stack([rng.uniform(-2, 2, size), rng.uniform(-2, 2, size),
                            rng.uniform(0.5, 10.0, size)])


def build_h3_example(T: float) -> ControlSystem:
    """x' = f1(x) sin u + f2(x) v on H^3, (u, v) in [0, pi] x [0, 1],
    x(0) = (0, 0, 1), e^T <= x3(T) <= 2 e^T, cost u^2 |f1|_g^2 + v |f2|_g."""
    if not T > 0:
        raise ValueError("horizon must be positive")
    lo, hi = math.exp(T), 2 * math.exp(T)

    def terminal(x):
        x3 = np.asarray(x)[..., 2]
        return np.maximum(np.maximum(lo - x3, x3 - hi), 0.0)

    return ControlSystem(
        manifold=HyperbolicHalfSpace3(),
        horizon=T,
        dynamics=_h3_dynamics,
        controls=Box([0.0, 0.0], [math.pi, 1.0]),
        running_cost=_h3_running_cost,
        endpoint=EndpointSet(fixed_point(H3_START), terminal,
                             "x(0) = (0,0,1), e^T <= x3(T) <= 2e^T"),
        # Q = {x3 > 0} checked in the closed form x3 >= 1e-9
        state_violation=lambda x: np.maximum(Q_FLOOR - np.asarray(x)[..., 2], 0.0),
        cost_bound=0.0,
        initial_state=H3_START.copy(),
        state_sampler=_h3_sampler,
        name="h3-example",
    )


def _s2_dynamics(t, x, u):
    f1, f2, f3 = s2_vector_fields(x)
    return u[..., 0, None] * f1 + u[..., 1, None] * f2 + u[..., 2, None] * f3


S2_RUNNING_COSTS = {
    "quadratic": lambda t, x, u: np.sum(np.asarray(u) ** 2, axis=-1),
    # still C^1, bounded below and convex in u; penalizes leaving the north pole
    "quadratic-height": lambda t, x, u: np.sum(np.asarray(u) ** 2, axis=-1)
    + 0.5 * (1.0 - np.asarray(x)[..., 2]),
}


def _sphere_sampler(rng, size):
    d = rng.normal(size=(size, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def build_s2_example(T: float, C: float = 10.0, f0: str = "quadratic",
                     min_separation: float = math.sqrt(2.0)) -> ControlSystem:
    """x' = sum u_i f_i(x) on S^2 with |u| <= C, x(0) = N, |x(T) - N| >= min_separation."""
    if not T > 0 or not C > 0:
        raise ValueError("horizon and C must be positive")
    if f0 not in S2_RUNNING_COSTS:
        raise ValueError(f"unknown running cost {f0!r}; choose from {sorted(S2_RUNNING_COSTS)}")

    def terminal(x):
        return np.maximum(min_separation - np.linalg.norm(np.asarray(x) - NORTH, axis=-1), 0.0)

    return ControlSystem(
        manifold=Sphere2(),
        horizon=T,
        dynamics=_s2_dynamics,
        controls=Ball(3, C),
        running_cost=S2_RUNNING_COSTS[f0],
        endpoint=EndpointSet(fixed_point(NORTH), terminal,
                             f"x(0) = N, |x(T) - N| >= {min_separation:.6g}"),
        cost_bound=0.0,
        initial_state=NORTH.copy(),
        state_sampler=_sphere_sampler,
        name="s2-example",
    )


def build_nonconvex_synthetic() -> ControlSystem:
    """x' = u on R with u in {-1, +1}, zero cost, free endpoints."""
    return ControlSystem(
        manifold=EuclideanSpace(1),
        horizon=1.0,
        dynamics=lambda t, x, u: np.asarray(u, dtype=float) * np.ones_like(x),
        controls=FiniteSet([[-1.0], [1.0]]),
        running_cost=lambda t, x, u: np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])),
        initial_state=np.zeros(1),
        state_sampler=lambda rng, size: rng.uniform(-1, 1, size=(size, 1)),
        name="nonconvex-synthetic",
    )


@dataclass(frozen=True, eq=False)
class ProblemDescriptor:
    identifier: str
    horizon: float
    params: dict
    system: ControlSystem
    reference: Optional[ControlSignal] = None
    # constant control used as one designated solver start
    guess: Optional[np.ndarray] = None

    @property
    def x_init(self):
        return self.system.initial_state


def _h3_problem(horizon=1.0):
    system = build_h3_example(horizon)
    u = h3_optimal_angle()
    return ProblemDescriptor("h3-example", horizon, {}, system,
                             reference=system.make_signal([[0.0, 1.0]]),
                             guess=np.array([u, 1.0 - math.sin(u)]))


def _s2_problem(horizon=1.0, C=10.0, f0="quadratic", min_separation=math.sqrt(2.0)):
    system = build_s2_example(horizon, C, f0, min_separation)
    speed = math.pi / (2 * horizon)
    reference = guess = None
    if C >= speed:
        reference = system.make_signal([[0.0, speed, 0.0]])
        guess = np.array([0.0, speed, 0.0])
    params = {"C": C, "f0": f0, "min_separation": min_separation}
    return ProblemDescriptor("s2-example", horizon, params, system, reference, guess)


def _synthetic_problem(horizon=None):
    system = build_nonconvex_synthetic()
    return ProblemDescriptor("nonconvex-synthetic", system.horizon, {}, system,
                             reference=system.make_signal([[1.0]]))


PROBLEMS: dict = {
    "h3-example": _h3_problem,
    "s2-example": _s2_problem,
    "nonconvex-synthetic": _synthetic_problem,
}


def make_problem(identifier: str, **params) -> ProblemDescriptor:
    try:
        builder = PROBLEMS[identifier]
    except KeyError:
        raise ValueError(f"unknown problem {identifier!r}; choose from {sorted(PROBLEMS)}") from None
    return builder(**{k: v for k, v in params.items() if v is not None})
