"""Direct method: penalized Nelder-Mead over piecewise-constant controls.

All starts run in lockstep. Each start is a generator that yields the points it
needs evaluated, so one batched integration serves every start per cycle.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .control import (ControlSignal, check_feasible, cost_batch, evaluate_cost, integrate,
                      integrate_batch, residuals_batch)
from .problems import h3_optimal_angle

EXIT_PENALTY = 1e12


@dataclass
class SolveConfig:
    segments: int = 4
    starts: int = 16
    seed: int = 0
    penalty_weight: float = 10.0
    penalty_growth: float = 10.0
    penalty_rounds: int = 4
    max_iter: int = 300
    refine_max_iter: int = 1500
    simplex_scale: float = 0.1
    xatol: float = 1e-7
    fatol: float = 1e-10
    step: float = 1.0 / 64
    refinements: int = 0
    tolerance: float = 1e-3
    # residual that counts as exactly feasible when picking the incumbent, so the
    # result does not ride the outer tolerance
    accept_tolerance: float = 1e-12
    # exact-penalty pass from the incumbent that pushes it onto the feasible side
    restore_iter: int = 300

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be at least 1")
        if self.starts < 1 or self.penalty_rounds < 1:
            raise ValueError("starts and penalty_rounds must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.max_iter < 0 or self.refine_max_iter < 0 or self.refinements < 0 \
                or self.restore_iter < 0:
            raise ValueError("iteration and refinement counts must be nonnegative")
        if not (self.step > 0 and self.tolerance > 0 and self.penalty_weight > 0):
            raise ValueError("step, tolerance and penalty_weight must be positive")
        if not 0 < self.accept_tolerance <= self.tolerance:
            raise ValueError("accept_tolerance must lie in (0, tolerance]")


@dataclass
class SolveResult:
    signal: ControlSignal
    cost: float
    residuals: dict
    status: str
    trace: list
    starts: list
    evaluations: int
    wall_time: float
    config: SolveConfig

    @property
    def feasible(self):
        return self.status == "feasible"

    def to_record(self, problem):
        return {
            "problem": problem,
            "config": asdict(self.config),
            "best_cost": self.cost,
            "status": self.status,
            "residuals": self.residuals,
            "trace": list(self.trace),
            "signal": {"breakpoints": self.signal.breakpoints.tolist(),
                       "values": self.signal.values.tolist()},
            "evaluations": self.evaluations,
            "wall_time_ms": round(1000 * self.wall_time, 3),
        }


# ---------------------------------------------------------------------------
# Nelder-Mead as a coroutine


def nelder_mead(x0, scale, project, max_iter, xatol=1e-8, fatol=1e-10):
    """Adaptive Nelder-Mead that yields point batches and receives their values.

    ``project`` maps trial points back into the feasible box. Returns
    ``(x_best, f_best, iterations)`` through ``StopIteration``.
    """
    x0 = project(np.asarray(x0, dtype=float))
    d = len(x0)
    alpha, gamma = 1.0, 1.0 + 2.0 / d
    rho, sigma = 0.75 - 1.0 / (2 * d), 1.0 - 1.0 / d
    simplex = [x0]
    for i in range(d):
        trial = x0.copy()
        trial[i] += scale[i]
        trial = project(trial)
        if np.array_equal(trial, x0):
            trial = x0.copy()
            trial[i] -= scale[i]
            trial = project(trial)
        simplex.append(trial)
    simplex = np.array(simplex)
    fvals = np.array((yield simplex), dtype=float)
    it = 0
    for it in range(max_iter):
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if (np.max(np.abs(simplex[1:] - simplex[0])) <= xatol
                and np.max(np.abs(fvals[1:] - fvals[0])) <= fatol):
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = project(centroid + alpha * (centroid - simplex[-1]))
        fr = (yield xr[None])[0]
        if fr < fvals[0]:
            xe = project(centroid + gamma * (xr - centroid))
            fe = (yield xe[None])[0]
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = project(centroid + rho * (xr - centroid))
            fc = (yield xc[None])[0]
            accept = fc <= fr
        else:
            xc = project(centroid + rho * (simplex[-1] - centroid))
            fc = (yield xc[None])[0]
            accept = fc < fvals[-1]
        if accept:
            simplex[-1], fvals[-1] = xc, fc
            continue
        simplex[1:] = np.array([project(p) for p in simplex[0] + sigma * (simplex[1:] - simplex[0])])
        fvals[1:] = yield simplex[1:]
    best = int(np.argmin(fvals))
    return simplex[best], float(fvals[best]), it


def _run_lockstep(programs, evaluate, on_cycle=None):
    pending = {}
    results = {}
    for k, prog in enumerate(programs):
        pending[k] = next(prog)
    while pending:
        keys = list(pending)
        batch = np.concatenate([pending[k] for k in keys])
        values = evaluate(batch)
        offset = 0
        for k in keys:
            n = len(pending[k])
            chunk = {name: arr[offset:offset + n] for name, arr in values.items()}
            offset += n
            try:
                pending[k] = programs[k].send(chunk)
            except StopIteration as stop:
                results[k] = stop.value
                del pending[k]
        if on_cycle is not None:
            on_cycle()
    return [results[k] for k in range(len(programs))]


# ---------------------------------------------------------------------------
# objective


class _Problem:
    """Batched evaluation of cost and constraint residuals plus the incumbent."""

    def __init__(self, system, breakpoints, config, x_init):
        self.system = system
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.segments = len(breakpoints) - 1
        self.m = system.controls.dim
        self.config = config
        self.x_init = np.asarray(x_init, dtype=float)
        self.evaluations = 0
        # incumbents: best cost within accept_tolerance, within tolerance, and
        # the least-infeasible point
        self.best_strict = (math.inf, None)
        self.best_loose = (math.inf, None)
        self.least_infeasible = (math.inf, math.inf, None)

    def project(self, z):
        vals = self.system.controls.project(z.reshape(-1, self.m))
        return vals.reshape(z.shape)

    def scale(self):
        return np.tile(self.config.simplex_scale * self.system.controls.widths, self.segments)

    def __call__(self, batch):
        values = batch.reshape(len(batch), self.segments, self.m)
        out = integrate_batch(self.system, values, self.breakpoints, self.x_init, self.config.step)
        cost = cost_batch(self.system, out, values)
        ctrl, state, end = residuals_batch(self.system, out)
        worst = np.maximum(np.maximum(ctrl, state), end)
        exited = out["exited"] | ~np.isfinite(cost)
        violation = np.where(exited, EXIT_PENALTY, state ** 2 + end ** 2 + ctrl ** 2)
        cost = np.where(exited, EXIT_PENALTY, cost)
        worst = np.where(exited, math.inf, worst)
        self.evaluations += len(batch)
        for z, c, r in zip(batch, cost, worst):
            if r <= self.config.accept_tolerance and c < self.best_strict[0]:
                self.best_strict = (float(c), z.copy())
            if r <= self.config.tolerance:
                if c < self.best_loose[0]:
                    self.best_loose = (float(c), z.copy())
            elif (r, c) < self.least_infeasible[:2]:
                self.least_infeasible = (float(r), float(c), z.copy())
        return {"cost": cost, "violation": violation, "worst": worst}

    @property
    def incumbent(self):
        if self.best_strict[1] is not None:
            return self.best_strict
        return self.best_loose


def _start_program(problem, x0, weights, max_iter, exact=False):
    cfg = problem.config
    x = x0
    summary = {"rounds": []}
    for w in weights:
        nm = nelder_mead(x, problem.scale(), problem.project, max_iter, cfg.xatol, cfg.fatol)
        pts = next(nm)
        while True:
            vals = yield pts
            try:
                penalty = np.sqrt(vals["violation"]) if exact else vals["violation"]
                pts = nm.send(vals["cost"] + w * penalty)
            except StopIteration as stop:
                x, merit, iters = stop.value
                break
        summary["rounds"].append({"weight": w, "merit": merit, "iterations": iters})
    summary["x"] = x
    return summary


def _weights(config):
    return [config.penalty_weight * config.penalty_growth ** r for r in range(config.penalty_rounds)]


def _restore(problem, config, trace):
    """Unsquared (exact) penalty from the current best point.

    A squared hinge leaves the optimum infeasible by O(1/weight); the exact
    penalty has its minimizer on the feasible side once the weight exceeds the
    multiplier, which is what the strict incumbent tier needs.
    """
    if config.restore_iter == 0:
        return
    z = problem.incumbent[1]
    if z is None:
        z = problem.least_infeasible[2]
    if z is None:
        return
    weight = _weights(config)[-1]
    _run_lockstep([_start_program(problem, z, [weight], config.restore_iter, exact=True)],
                  problem, _traced(problem, trace))


def _finish(system, problem, config, trace, starts, t0, x_init):
    if problem.incumbent[1] is not None:
        z = problem.incumbent[1]
    elif problem.least_infeasible[2] is not None:
        z = problem.least_infeasible[2]
    else:
        raise RuntimeError("no finite evaluation was produced")
    trace = trace["strict"] if problem.best_strict[1] is not None else trace["loose"]
    signal = ControlSignal(problem.breakpoints, z.reshape(problem.segments, problem.m))
    traj = integrate(system, signal, x_init, config.step)
    cost = evaluate_cost(system, signal, traj)
    report = check_feasible(system, signal, traj)
    worst = max(report.control_violation, report.state_violation, report.endpoint_residual)
    if worst <= config.tolerance:
        status = "feasible"
    elif worst <= 10 * config.tolerance:
        status = "relaxed"
    else:
        status = "infeasible"
    residuals = {"control": report.control_violation, "state": report.state_violation,
                 "endpoint": report.endpoint_residual}
    return SolveResult(signal, cost, residuals, status, trace, starts, problem.evaluations,
                       time.perf_counter() - t0, config)


def _traced(problem, trace):
    """Record improvements of both incumbent tiers; ``_finish`` keeps the one in use."""
    def on_cycle():
        for tier in ("strict", "loose"):
            best = getattr(problem, "best_" + tier)[0]
            seq = trace[tier]
            if math.isfinite(best) and (not seq or best < seq[-1]):
                seq.append(best)
    return on_cycle


def solve(system, config: SolveConfig, guess=None, x_init=None) -> SolveResult:
    """Multi-start penalized direct method on ``config.segments`` uniform segments.

    ``guess`` is an optional constant control used as the first start; the rest
    are drawn uniformly from the control set per segment.
    """
    t0 = time.perf_counter()
    x_init = system.initial_state if x_init is None else x_init
    if x_init is None:
        raise ValueError("system has no initial state")
    rng = np.random.default_rng(config.seed)
    breakpoints = np.linspace(0.0, system.horizon, config.segments + 1)
    problem = _Problem(system, breakpoints, config, x_init)
    starts = []
    if guess is not None:
        starts.append(np.tile(system.controls.project(np.asarray(guess, float)), config.segments))
    while len(starts) < config.starts:
        starts.append(system.controls.sample(rng, config.segments).ravel())
    programs = [_start_program(problem, s, _weights(config), config.max_iter) for s in starts]
    trace = {"strict": [], "loose": []}
    summaries = _run_lockstep(programs, problem, _traced(problem, trace))
    _restore(problem, config, trace)
    per_start = [{"start": k, "merit": s["rounds"][-1]["merit"],
                  "iterations": sum(r["iterations"] for r in s["rounds"])}
                 for k, s in enumerate(summaries)]
    return _finish(system, problem, config, trace, per_start, t0, x_init)


def _rank(result):
    worst = max(result.residuals.values())
    order = {"feasible": 0, "relaxed": 1, "infeasible": 2}[result.status]
    return (order, result.cost) if order == 0 else (order, worst, result.cost)


def refine(system, result: SolveResult, config: SolveConfig, x_init=None) -> SolveResult:
    """Double the segment count, warm-start from the previous best and re-optimize.

    The previous signal (on the doubled mesh) competes with the new one, so the
    cost never increases.
    """
    t0 = time.perf_counter()
    x_init = system.initial_state if x_init is None else x_init
    warm = result.signal.refined()
    problem = _Problem(system, warm.breakpoints, config, x_init)
    z0 = warm.values.ravel()
    problem(z0[None])
    strict = max(result.residuals.values()) <= config.accept_tolerance
    trace = {"strict": list(result.trace) if strict else [], "loose": list(result.trace)}
    _traced(problem, trace)()
    summary = {"start": 0, "merit": None, "iterations": 0}
    if config.refine_max_iter > 0:
        weight = _weights(config)[-1]
        program = _start_program(problem, z0, [weight], config.refine_max_iter)
        last = _run_lockstep([program], problem, _traced(problem, trace))[0]["rounds"][-1]
        summary.update(merit=last["merit"], iterations=last["iterations"])
        _restore(problem, config, trace)
    new = _finish(system, problem, config, trace, [summary], t0, x_init)
    new.evaluations += result.evaluations
    new.wall_time += result.wall_time
    if _rank(new) <= _rank(result):
        return new
    # fall back to the old signal on the refined mesh
    traj = integrate(system, warm, x_init, config.step)
    return SolveResult(warm, evaluate_cost(system, warm, traj), dict(result.residuals),
                       result.status, list(result.trace), new.starts, new.evaluations, new.wall_time, config)


def solve_with_refinement(system, config: SolveConfig, guess=None, x_init=None) -> SolveResult:
    result = solve(system, config, guess=guess, x_init=x_init)
    for _ in range(config.refinements):
        result = refine(system, result, config, x_init=x_init)
    return result


def analytic_optimum(problem_id: str, T: float, params=None) -> float:
    """Closed-form optimal cost of the built-in problems.

    h3-example: on the invariant line x1 = x2 = 0 the problem reduces to
    minimizing int (u^2 + v) subject to int (sin u + v) >= T, whose optimum is
    T (u*^2 + 1 - sin u*) with 2 u* = cos u*.
    s2-example (quadratic cost): constant-speed great circle of angle
    2 arcsin(separation / 2), i.e. pi^2 / (4T) for separation sqrt(2).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    params = params or {}
    if problem_id == "h3-example":
        u = h3_optimal_angle()
        return T * (u * u + 1.0 - math.sin(u))
    if problem_id == "s2-example":
        if params.get("f0", "quadratic") != "quadratic":
            raise ValueError("closed form only available for the quadratic running cost")
        sep = params.get("min_separation", math.sqrt(2.0))
        angle = math.pi / 2 if sep == math.sqrt(2.0) else 2 * math.asin(min(sep / 2, 1.0))
        return angle ** 2 / T
    raise ValueError(f"no analytic optimum for {problem_id!r}")
