"""Finite-delta Cesari probe: deviation of translated nearby orientor hulls versus delta."""

import argparse
import json

from riemcontrol.orientor import check_cesari_local
from riemcontrol.problems import make_problem

POINTS = {"h3-example": [0.0, 0.0, 2.0], "s2-example": [0.0, 0.0, 1.0],
          "nonconvex-synthetic": [0.0]}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.02, 0.01, 0.005])
    ap.add_argument("--y-samples", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="cesari_probe.json")
    args = ap.parse_args()

    out = {}
    for pid, x in POINTS.items():
        d = make_problem(pid)
        res = 2 if pid == "nonconvex-synthetic" else 9
        rep = check_cesari_local(d.system, 0.0, x, args.deltas, resolution=res,
                                 y_samples=args.y_samples, seed=args.seed)
        out[pid] = rep.to_record()
        trend = "  ".join(f"{dl:g}:{dv:.4f}" for dl, dv in zip(rep.deltas, rep.deviations))
        ratio = "  ".join(f"{dv / dl:.2f}" for dl, dv in zip(rep.deltas, rep.deviations))
        print(f"{pid:20s} {trend}\n{'':20s} deviation/delta: {ratio}  ({rep.verdict})")
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
