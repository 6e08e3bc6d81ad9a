"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line with its runtime."""

import json
import math
import time

import numpy as np
import pytest

from riemcontrol.cli import main, strip_timing
from riemcontrol.control import (ControlSignal, GrowthData, check_feasible, estimate_lipschitz,
                                 integrate, verify_growth_bound)
from riemcontrol.geometry import ManifoldPoint, christoffel
from riemcontrol.manifolds import HyperbolicHalfSpace3, s2_vector_fields
from riemcontrol.orientor import check_convex, sample_orientor
from riemcontrol.problems import make_problem
from riemcontrol.solver import SolveConfig, solve_with_refinement
from riemcontrol.suite import run_geometry_suite


def report(capsys, number, ok, detail, seconds, budget=None):
    limit = f" / {budget:.0f} s" if budget else ""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{seconds:.1f} s{limit}]"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def closed_form_christoffel(x):
    d = lambda a, b: 1.0 if a == b else 0.0
    out = np.zeros((3, 3, 3))
    for k in range(3):
        for i in range(3):
            for j in range(3):
                out[k, i, j] = (-d(j, k) * d(i, 2) - d(k, i) * d(j, 2) + d(i, j) * d(k, 2)) / x[2]
    return out


def random_signal(system, rng, segments=4):
    return ControlSignal.uniform(system.horizon, system.controls.sample(rng, segments))


@pytest.fixture(scope="module")
def solved():
    """Criteria 6-8 share the two full solves; each entry is (descriptor, result, seconds)."""
    out = {}
    for pid in ("h3-example", "s2-example"):
        d = make_problem(pid)
        t0 = time.perf_counter()
        result = solve_with_refinement(d.system, SolveConfig(segments=4, starts=16, refinements=2),
                                       guess=d.guess)
        out[pid] = (d, result, time.perf_counter() - t0)
    return out


def test_criterion_1_geometry_suite(capsys):
    t0 = time.perf_counter()
    reports = [run_geometry_suite(name, trials=200, seed=0) for name in ("h3", "s2")]
    seconds = time.perf_counter() - t0
    ok = all(r.passed(1e-6, 1e-6, 1e-5) for r in reports) and seconds <= 30
    detail = "; ".join(f"{r.manifold}: roundtrip {r.roundtrip:.1e}, isometry {r.isometry:.1e}, "
                       f"distance {r.distance_oracle:.1e}, transport {r.transport_oracle:.1e}"
                       for r in reports)
    report(capsys, 1, ok, detail, seconds, 30)


def test_criterion_2_christoffel(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    h3 = HyperbolicHalfSpace3()
    pts = np.column_stack([rng.uniform(-5, 5, (1000, 2)), np.exp(rng.uniform(-3, 3, 1000))])
    worst = max(float(np.max(np.abs(christoffel(ManifoldPoint(h3, x)).entries
                                    - closed_form_christoffel(x)))) for x in pts)
    report(capsys, 2, worst <= 1e-14, f"max abs error {worst:.1e} over 1000 points",
           time.perf_counter() - t0)


def test_criterion_3_tangency_and_invariants(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1000, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    tangency = max(float(np.max(np.abs(np.sum(x * f, axis=1)))) for f in s2_vector_fields(x))
    s2, h3 = make_problem("s2-example"), make_problem("h3-example")
    drift = line = 0.0
    for _ in range(50):
        traj = integrate(s2.system, random_signal(s2.system, rng), s2.x_init, step=1e-2)
        drift = max(drift, float(np.max(np.abs(np.linalg.norm(traj.states, axis=1) - 1))))
        traj = integrate(h3.system, random_signal(h3.system, rng), h3.x_init, step=1e-2)
        line = max(line, float(np.max(np.abs(traj.states[:, :2]))))
    ok = tangency <= 1e-10 and drift <= 1e-9 and line <= 1e-9
    report(capsys, 3, ok, f"tangency {tangency:.1e}, sphere drift {drift:.1e}, "
                          f"invariant line {line:.1e}", time.perf_counter() - t0)


def test_criterion_4_growth_bound(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    parts = []
    ok = True
    for pid in ("h3-example", "s2-example"):
        d = make_problem(pid)
        sys, x0 = d.system, d.x_init
        K = 1.1 * estimate_lipschitz(sys, 200, 0.5, seed=3).value
        grid = sys.controls.grid(21) if sys.controls.dim == 2 else sys.controls.grid(9)
        vel = sys.dynamics(0.0, np.broadcast_to(x0, (len(grid), x0.size)), grid)
        ell = float(np.max(sys.manifold.norm(np.broadcast_to(x0, vel.shape), vel)))
        growth = GrowthData.constant(K, ell, sys.horizon, x0)
        violations, slack = 0, math.inf
        for _ in range(100):
            traj = integrate(sys, random_signal(sys, rng), x0, step=1.0 / 16)
            check = verify_growth_bound(traj, growth, step=5e-3)
            violations += check.violations
            slack = min(slack, check.min_slack)
        ok = ok and violations == 0
        parts.append(f"{pid}: K {K:.3f}, ell {ell:.3f}, violations {violations}, min slack {slack:.2e}")
    seconds = time.perf_counter() - t0
    report(capsys, 4, ok and seconds <= 60, "; ".join(parts), seconds, 60)


def test_criterion_5_convexity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    parts = []
    ok = True
    for pid in ("h3-example", "s2-example"):
        d = make_problem(pid)
        states = d.system.state_sampler(rng, 50)
        times = rng.uniform(0, d.horizon, 50)
        verdicts = [check_convex(sample_orientor(d.system, t, x, 11), trials=5000, tol=1e-3, seed=k)
                    for k, (t, x) in enumerate(zip(times, states))]
        passed = sum(v.passed for v in verdicts)
        ok = ok and passed == 50
        parts.append(f"{pid}: {passed}/50 pass, worst gap {max(v.worst_gap for v in verdicts):.1e}")
    synth = make_problem("nonconvex-synthetic")
    v = check_convex(sample_orientor(synth.system, 0.0, [0.0], 2), trials=5000, tol=1e-3)
    ok = ok and v.verdict == "fail" and v.witness is not None
    parts.append(f"synthetic: {v.verdict}, witness lambda {v.witness['lambda']}, gap {v.worst_gap:.2f}")
    seconds = time.perf_counter() - t0
    report(capsys, 5, ok and seconds <= 60, "; ".join(parts), seconds, 60)


def test_criterion_6_h3_optimum(solved, capsys):
    d, r, seconds = solved["h3-example"]
    worst = max(r.residuals.values())
    ok = (r.signal.segments == 16 and r.cost <= 0.775 and r.cost >= 0.7665 and worst <= 1e-3
          and seconds <= 120)
    report(capsys, 6, ok, f"N={r.signal.segments}, J = {r.cost:.6f} (oracle 0.767534), "
                          f"max residual {worst:.1e}", seconds, 120)


def test_criterion_7_s2_optimum(solved, capsys):
    d, r, seconds = solved["s2-example"]
    worst = max(r.residuals.values())
    ok = 2.344 <= r.cost <= 2.591 and worst <= 1e-3 and seconds <= 120
    report(capsys, 7, ok, f"J = {r.cost:.6f} (oracle {math.pi ** 2 / 4:.6f}), "
                          f"max residual {worst:.1e}", seconds, 120)


def test_criterion_8_minimizing_sequence(solved, capsys):
    t0 = time.perf_counter()
    parts = []
    ok = True
    for pid, (d, r, _) in solved.items():
        monotone = all(a >= b for a, b in zip(r.trace, r.trace[1:]))
        traj = integrate(d.system, r.signal, d.x_init, r.config.step)
        feasible = check_feasible(d.system, r.signal, traj).feasible
        ok = ok and monotone and feasible and len(r.trace) > 0
        parts.append(f"{pid}: trace of {len(r.trace)} non-increasing={monotone}, feasible={feasible}")
    report(capsys, 8, ok, "; ".join(parts), time.perf_counter() - t0)


def _cli_payload(argv, capsys):
    main(argv)
    return json.dumps(strip_timing(json.loads(capsys.readouterr().out)), sort_keys=True)


def test_criterion_9_determinism(capsys):
    t0 = time.perf_counter()
    commands = [
        ["solve", "--problem", "h3-example", "--segments", "2", "--starts", "4",
         "--refinements", "1", "--max-iter", "60", "--refine-max-iter", "60"],
        ["solve", "--problem", "s2-example", "--segments", "2", "--starts", "4",
         "--refinements", "1", "--max-iter", "60", "--refine-max-iter", "60"],
        ["check-cesari", "--problem", "s2-example", "--samples", "2", "--trials", "500"],
        ["verify-geometry", "--manifold", "h3", "--trials", "20"],
    ]
    same = [_cli_payload(argv, capsys) == _cli_payload(argv, capsys) for argv in commands]
    report(capsys, 9, all(same), f"{sum(same)}/{len(same)} command reports byte-identical "
                                 "after removing wall-clock fields", time.perf_counter() - t0)
