"""Pruning-strategy and importance-criterion ablations (P-PINN rows only).

    python3 scripts/ablations.py --problems heat_da wave_da pinv
"""

import argparse

from ppinn import harness as H


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--problems", nargs="+", default=["heat_da", "wave_da", "pinv"])
    ap.add_argument("--seeds", default="42,43,44")
    ap.add_argument("--output", default="runs")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for pid in args.problems:
        cfg = H.RunConfig(problem=pid, seeds=seeds, output_dir=args.output)
        rows += H.experiment_ablate_strategy(cfg)[1]
        rows += H.experiment_ablate_criteria(cfg)[1]
    print(H.format_table(H.aggregate(rows)))


if __name__ == "__main__":
    main()
