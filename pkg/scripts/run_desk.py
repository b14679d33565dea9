"""Desk-preset baseline / P-PINN / FT / RT runs on the chosen problems, then a summary table.

    python3 scripts/run_desk.py --problems heat_da wave_da pinv --output runs
"""

import argparse

from ppinn import harness as H
from ppinn.problems import PROBLEM_IDS


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--problems", nargs="+", default=list(PROBLEM_IDS), choices=PROBLEM_IDS)
    ap.add_argument("--seeds", default="42,43,44")
    ap.add_argument("--output", default="runs")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--preset", default="desk", choices=("desk", "paper"))
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for pid in args.problems:
        cfg = H.RunConfig(problem=pid, preset=args.preset, seeds=seeds, output_dir=args.output, workers=args.workers)
        run_dir, r = H.experiment_run(cfg)
        rows += r
        print(f"{pid}: {run_dir}", flush=True)
    print(H.format_table(H.aggregate(rows), cols=("l2re", "l1re", "mse", "param_error", "wall_clock_s")))


if __name__ == "__main__":
    main()
