"""Solve the S^2 example for a few control radii and running costs."""

import argparse
import json
import math

from riemcontrol.problems import make_problem
from riemcontrol.solver import SolveConfig, analytic_optimum, solve_with_refinement


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--radii", type=float, nargs="+", default=[10.0, 2.0])
    ap.add_argument("--costs", nargs="+", default=["quadratic", "quadratic-height"])
    ap.add_argument("--refinements", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="s2_example.json")
    args = ap.parse_args()

    runs = []
    for C in args.radii:
        for f0 in args.costs:
            d = make_problem("s2-example", horizon=args.horizon, C=C, f0=f0)
            cfg = SolveConfig(seed=args.seed, refinements=args.refinements)
            r = solve_with_refinement(d.system, cfg, guess=d.guess)
            oracle = analytic_optimum("s2-example", args.horizon) if f0 == "quadratic" else math.nan
            print(f"C={C:5.1f}  f0={f0:17s} J={r.cost:.6f}  oracle={oracle:.6f}  "
                  f"endpoint residual={r.residuals['endpoint']:.1e}  {r.status}")
            rec = r.to_record("s2-example")
            rec["params"] = d.params
            rec["analytic_optimum"] = None if math.isnan(oracle) else oracle
            runs.append(rec)
    with open(args.out, "w") as fh:
        json.dump(runs, fh, indent=2)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
