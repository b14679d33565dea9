"""Noise-level sweep (baseline vs P-PINN) and pruned-layer / retention-ratio sweep.

    python3 scripts/sweeps.py --noise heat_da wave_da --prune heat_da
"""

import argparse

from ppinn import harness as H


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--noise", nargs="*", default=["heat_da", "wave_da"])
    ap.add_argument("--prune", nargs="*", default=["heat_da"])
    ap.add_argument("--seeds", default="42,43,44")
    ap.add_argument("--output", default="runs")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for pid in args.noise:
        rows += H.experiment_sweep_noise(H.RunConfig(problem=pid, seeds=seeds, output_dir=args.output))[1]
    for pid in args.prune:
        rows += H.experiment_sweep_prune(H.RunConfig(problem=pid, seeds=seeds, output_dir=args.output))[1]
    print(H.format_table(H.aggregate(rows)))


if __name__ == "__main__":
    main()
