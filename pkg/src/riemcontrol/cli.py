"""Command-line entry point: ``solve``, ``check-cesari`` and ``verify-geometry``.

Every command prints a JSON report (and writes it to ``--out`` when given).
Exit codes: 0 pass/feasible, 1 infeasible, 2 check failed, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass

import numpy as np

from .control import integrate, write_trajectory_csv
from .orientor import OrientorConfigError, cesari_record, check_convex, sample_orientor
from .problems import PROBLEMS, make_problem
from .solver import SolveConfig, analytic_optimum, solve_with_refinement
from .suite import run_geometry_suite

EXIT_OK, EXIT_INFEASIBLE, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2, 3
TIMING_KEYS = ("wall_time_ms",)


class ConfigError(Exception):
    pass


@dataclass
class RunReport:
    command: list
    config: dict
    output: dict
    exit_status: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def strip_timing(obj):
    """Copy of a report without wall-clock fields, for reproducibility checks."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _resolve(args, defaults):
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    file_cfg = _load_config(args.config)
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _problem_params(cfg):
    params = {}
    if cfg.get("problem") == "s2-example":
        params = {"C": cfg.get("C"), "f0": cfg.get("f0")}
    return params


# ---------------------------------------------------------------------------
# commands


SOLVE_DEFAULTS = {
    "problem": None, "horizon": 1.0, "segments": 4, "starts": 16, "seed": 0,
    "step": 1.0 / 64, "refinements": 2, "max_iter": 300, "refine_max_iter": 1500,
    "C": None, "f0": None, "out": None, "csv": None,
}


def cmd_solve(args) -> RunReport:
    cfg = _resolve(args, SOLVE_DEFAULTS)
    if cfg["problem"] not in ("h3-example", "s2-example"):
        raise ConfigError(f"--problem must be h3-example or s2-example, got {cfg['problem']!r}")
    try:
        desc = make_problem(cfg["problem"], horizon=float(cfg["horizon"]), **_problem_params(cfg))
        config = SolveConfig(segments=int(cfg["segments"]), starts=int(cfg["starts"]),
                             seed=int(cfg["seed"]), step=float(cfg["step"]),
                             refinements=int(cfg["refinements"]), max_iter=int(cfg["max_iter"]),
                             refine_max_iter=int(cfg["refine_max_iter"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = solve_with_refinement(desc.system, config, guess=desc.guess)
    output = result.to_record(desc.identifier)
    output["params"] = {"horizon": desc.horizon, **desc.params}
    output["analytic_optimum"] = analytic_optimum(desc.identifier, desc.horizon, desc.params)
    if cfg["csv"]:
        traj = integrate(desc.system, result.signal, desc.x_init, step=config.step)
        write_trajectory_csv(cfg["csv"], traj)
    status = EXIT_OK if result.feasible else EXIT_INFEASIBLE
    print(f"{desc.identifier}: J = {result.cost:.6f} ({result.status}), "
          f"max residual = {max(result.residuals.values()):.2e}", file=sys.stderr)
    return RunReport([], cfg, output, status)


CESARI_DEFAULTS = {
    "problem": None, "horizon": 1.0, "samples": 50, "resolution": 11, "seed": 0,
    "trials": 5000, "tol": 1e-3, "C": None, "f0": None, "out": None,
}


def cesari_points(desc, samples, seed):
    """(t, x) pairs drawn uniformly in time along the reference trajectory."""
    if desc.reference is None:
        raise ConfigError("problem has no feasible reference signal to sample along")
    traj = integrate(desc.system, desc.reference, desc.x_init, step=desc.horizon / 256)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.integers(len(traj.times), size=samples))
    return [(float(traj.times[i]), traj.states[i]) for i in idx]


def cmd_check_cesari(args) -> RunReport:
    cfg = _resolve(args, CESARI_DEFAULTS)
    if cfg["problem"] not in PROBLEMS:
        raise ConfigError(f"unknown problem {cfg['problem']!r}; choose from {sorted(PROBLEMS)}")
    if int(cfg["samples"]) < 1 or int(cfg["trials"]) < 1 or int(cfg["resolution"]) < 2:
        raise ConfigError("samples and trials must be positive, resolution at least 2")
    try:
        desc = make_problem(cfg["problem"], horizon=float(cfg["horizon"]), **_problem_params(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    records = []
    for k, (t, x) in enumerate(cesari_points(desc, int(cfg["samples"]), int(cfg["seed"]))):
        try:
            sample = sample_orientor(desc.system, t, x, int(cfg["resolution"]))
        except OrientorConfigError as exc:
            raise ConfigError(str(exc)) from exc
        verdict = check_convex(sample, int(cfg["trials"]), float(cfg["tol"]), seed=int(cfg["seed"]) + k)
        records.append(cesari_record(desc.identifier, t, x, int(cfg["resolution"]),
                                     int(cfg["trials"]), verdict))
    verdicts = [r["verdict"] for r in records]
    overall = "pass" if all(v == "pass" for v in verdicts) else (
        "fail" if "fail" in verdicts else "inconclusive")
    output = {"problem": desc.identifier, "verdict": overall,
              "worst_gap": max(r["worst_gap"] for r in records), "samples": records}
    print(f"{desc.identifier}: {overall} over {len(records)} samples, "
          f"worst gap {output['worst_gap']:.2e}", file=sys.stderr)
    return RunReport([], cfg, output, EXIT_OK if overall == "pass" else EXIT_CHECK_FAILED)


GEOMETRY_DEFAULTS = {"manifold": None, "trials": 200, "seed": 0, "tol": 1e-5, "out": None}


def cmd_verify_geometry(args) -> RunReport:
    cfg = _resolve(args, GEOMETRY_DEFAULTS)
    if cfg["manifold"] not in ("h3", "s2"):
        raise ConfigError("--manifold must be h3 or s2")
    if int(cfg["trials"]) < 1:
        raise ConfigError("--trials must be positive")
    report = run_geometry_suite(cfg["manifold"], int(cfg["trials"]), int(cfg["seed"]))
    tol = float(cfg["tol"])
    passed = report.passed(roundtrip_tol=min(tol, 1e-6), isometry_tol=min(tol, 1e-6), oracle_tol=tol)
    output = report.to_record()
    output["worst_deviation"] = report.worst()
    output["verdict"] = "pass" if passed else "fail"
    print(f"{cfg['manifold']}: worst deviation {report.worst():.2e} ({output['verdict']})",
          file=sys.stderr)
    return RunReport([], cfg, output, EXIT_OK if passed else EXIT_CHECK_FAILED)


# ---------------------------------------------------------------------------
# parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="riemcontrol", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="direct-method solve of a built-in problem")
    p.add_argument("--problem")
    p.add_argument("--horizon", type=float)
    p.add_argument("--segments", type=int)
    p.add_argument("--starts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--refinements", type=int)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--refine-max-iter", dest="refine_max_iter", type=int)
    p.add_argument("--C", dest="C", type=float, help="control radius (s2-example)")
    p.add_argument("--f0", help="running cost choice (s2-example)")
    p.add_argument("--csv", help="trajectory CSV path")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("check-cesari", help="convexity of the orientor field along a reference path")
    p.add_argument("--problem")
    p.add_argument("--horizon", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--C", dest="C", type=float)
    p.add_argument("--f0")
    p.set_defaults(handler=cmd_check_cesari)

    p = sub.add_parser("verify-geometry", help="randomized geometry checks against oracles")
    p.add_argument("--manifold")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(handler=cmd_verify_geometry)

    for name in ("solve", "check-cesari", "verify-geometry"):
        sp = sub.choices[name]
        sp.add_argument("--config", help="JSON file of defaults; flags override it")
        sp.add_argument("--out", help="write the JSON report here")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        report = args.handler(args)
    except ConfigError as exc:
        report = RunReport(argv, {}, {"error": str(exc)}, EXIT_CONFIG)
        print(f"configuration error: {exc}", file=sys.stderr)
    report.command = argv
    text = report.to_json()
    out = report.config.get("out")
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return report.exit_status


if __name__ == "__main__":
    sys.exit(main())
