"""Command-line entry point: ``python -m ppinn <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import harness as H
from .problems import PROBLEM_IDS

SUBCOMMANDS = ("run", "ablate-strategy", "ablate-criteria", "sweep-noise", "sweep-prune", "metrics", "report")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _config_from_args(args) -> H.RunConfig:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.problem:
        d["problem"] = args.problem
    if args.preset:
        d["preset"] = args.preset
    if args.seeds:
        d["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.output:
        d["output_dir"] = args.output
    if args.workers:
        d["workers"] = args.workers
    known = {f.name for f in fields(H.RunConfig)}
    for item in args.set or []:
        key, _, val = item.partition("=")
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        d[key] = _parse_value(val)
    return H.RunConfig.from_dict(d)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppinn", description="Noisy-data unlearning for physics-informed networks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS[:5]:
        s = sub.add_parser(name)
        s.add_argument("--problem", choices=PROBLEM_IDS)
        s.add_argument("--preset", choices=("desk", "paper"))
        s.add_argument("--config", help="JSON file with flat RunConfig keys")
        s.add_argument("--seeds", help="comma-separated, e.g. 42,43,44")
        s.add_argument("--output", help=f"output root (default ${H.OUTPUT_ENV} or ./runs)")
        s.add_argument("--workers", type=int)
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    m = sub.add_parser("metrics", help="re-evaluate saved checkpoints of a run directory")
    m.add_argument("run_dir")
    m.add_argument("--out", help="CSV path for the recomputed rows")
    r = sub.add_parser("report", help="aggregate result CSVs to mean ± std tables")
    r.add_argument("csv", nargs="+")
    r.add_argument("--out", help="write the aggregate as CSV")
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "metrics":
        try:
            rows = H.reevaluate(args.run_dir)
        except (H.VersionMismatchError, FileNotFoundError) as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
        if args.out:
            H.write_rows(Path(args.out), rows)
        print(H.format_table(H.aggregate(rows)))
        return 0
    if args.command == "report":
        rows = [r for path in args.csv for r in H.read_rows(path)]
        if not rows:
            print("error: no rows to aggregate", file=sys.stderr)
            return 1
        agg = H.aggregate(rows)
        if args.out:
            with open(args.out, "w") as fh:
                keys = list(agg[0])
                fh.write(",".join(keys) + "\n")
                for rec in agg:
                    fh.write(",".join("" if rec[k] is None else str(rec[k]) for k in keys) + "\n")
        print(H.format_table(agg))
        return 0
    try:
        cfg = _config_from_args(args)
    except (ValueError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    driver = {
        "run": H.experiment_run,
        "ablate-strategy": H.experiment_ablate_strategy,
        "ablate-criteria": H.experiment_ablate_criteria,
        "sweep-noise": H.experiment_sweep_noise,
        "sweep-prune": H.experiment_sweep_prune,
    }[args.command]
    run_dir, rows = driver(cfg)
    print(H.format_table(H.aggregate(rows)))
    print(f"results written under {run_dir}")
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
