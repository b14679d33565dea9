"""Experiment orchestration: run configs and presets, per-seed cells, persistence, aggregation."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .metrics import BandConfig, dump_fields, evaluate
from .network import MaskedMlp
from .optim import AdamConfig
from .problems import Counts, Dataset, NoiseConfig, make_problem, sample_collocation, sample_observations
from .train import TrainConfig, train_baseline
from .unlearn import FinetuneConfig, PPinnConfig, PruneSchedule, baseline_ft, baseline_rt, unlearn

RUN_FORMAT = "ppinn-run/1"
CSV_COLUMNS = (
    "problem", "method", "seed", "l2re", "l1re", "mse", "mae", "fmse_low", "fmse_mid", "fmse_high",
    "param_error", "wall_clock_s", "eval_passes", "variant",
)
METHODS = ("pinn", "ppinn", "ft", "rt")
OUTPUT_ENV = "PPINN_OUTPUT_ROOT"

# smaller interior/boundary sets for the inversion problems keep a desk run within minutes
DESK_COUNTS = {
    "pinv": Counts(2500, 1024, 256, 0),
    "hinv": Counts(2500, 1024, 384, 256),
    "ebinv": Counts(2500, 1024, 100, 100),
    "winv": Counts(2500, 1024, 100, 100),
}
# retention ratio defaults to the expected clean share 1 - high_fraction; Heat uses a piloted value
RHO_OVERRIDES = {"heat_da": 0.8}


class VersionMismatchError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Flat run configuration; ``None`` means "take the preset/problem default"."""

    problem: str = "heat_da"
    preset: str = "desk"
    seeds: list[int] = field(default_factory=lambda: [42, 43, 44])
    output_dir: str | None = None
    workers: int = 1
    # network / baseline training
    hidden_widths: list[int] | None = None
    adam_epochs: int | None = None
    lbfgs_iters: int | None = None
    lr: float = 1e-3
    # data
    n_obs: int | None = None
    n_pde: int | None = None
    n_bc: int | None = None
    n_ic: int | None = None
    sigma_high: float | None = None
    sigma_low: float | None = None
    high_fraction: float | None = None
    # partition and pruning
    alpha_data: float = 1.0
    alpha_pde: float = 1e-3
    rho: float | None = None  # retention ratio; None -> RHO_OVERRIDES or 1 - high_fraction
    prune_fraction: float = 1.0
    prune_iterations: int = 20
    prune_layers: int | None = None
    criterion: str = "bias"
    prune_mode: str = "iterative"
    # fine-tuning
    ft_adam_epochs: int = 2000
    ft_lbfgs_iters: int = 500
    ft_lr: float = 1e-3
    ft_lambda_pde: float = 0.005
    # metrics
    band_k1: int = 4
    band_k2: int = 12
    dump_fields: bool = False  # write predicted/exact grid CSVs per method and seed

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.preset not in ("desk", "paper"):
            raise ValueError("preset must be 'desk' or 'paper'")
        make_problem(self.problem)

    # -- (de)serialisation ----------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        d = self.to_dict()
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    # -- resolution -----------------------------------------------------
    def resolve(self) -> "Resolved":
        pr = make_problem(self.problem)
        paper = self.preset == "paper"
        hidden = tuple(self.hidden_widths) if self.hidden_widths else ((100,) * 5 if paper else (50,) * 4)
        adam = self.adam_epochs if self.adam_epochs is not None else (20000 if paper else 2000)
        lbfgs = self.lbfgs_iters if self.lbfgs_iters is not None else (5000 if paper else 500)
        if pr.kind == "inverse":
            lbfgs = 0
        base_counts = pr.counts if paper else DESK_COUNTS.get(pr.id, pr.counts)
        counts = Counts(
            self.n_obs if self.n_obs is not None else base_counts.n_obs,
            self.n_pde if self.n_pde is not None else base_counts.n_pde,
            self.n_bc if self.n_bc is not None else base_counts.n_bc,
            self.n_ic if self.n_ic is not None else base_counts.n_ic,
        )
        noise = NoiseConfig(
            pr.noise.sigma_high if self.sigma_high is None else self.sigma_high,
            pr.noise.sigma_low if self.sigma_low is None else self.sigma_low,
            pr.noise.high_fraction if self.high_fraction is None else self.high_fraction,
        )
        train = TrainConfig(adam_epochs=adam, lbfgs_iters=lbfgs, adam=AdamConfig(lr=self.lr))
        schedule = PruneSchedule(
            fraction=self.prune_fraction, iterations=self.prune_iterations, n_layers=self.prune_layers,
            criterion=self.criterion, mode=self.prune_mode,
        )
        ft = FinetuneConfig(
            adam_epochs=self.ft_adam_epochs,
            lbfgs_iters=self.ft_lbfgs_iters if pr.kind == "da" else 0,
            lr=self.ft_lr,
            lambda_pde=self.ft_lambda_pde,
        )
        rho = self.rho if self.rho is not None else RHO_OVERRIDES.get(pr.id, round(1.0 - noise.high_fraction, 12))
        ppinn = PPinnConfig(self.alpha_data, self.alpha_pde, rho, schedule, ft)
        return Resolved(pr, hidden, train, counts, noise, ppinn, BandConfig(self.band_k1, self.band_k2))


@dataclass
class Resolved:
    problem: object
    hidden: tuple[int, ...]
    train: TrainConfig
    counts: Counts
    noise: NoiseConfig
    ppinn: PPinnConfig
    bands: BandConfig

    def baseline_key(self, seed: int) -> str:
        d = {
            "problem": self.problem.id, "hidden": self.hidden, "adam": self.train.adam_epochs,
            "lbfgs": self.train.lbfgs_iters, "lr": self.train.adam.lr, "counts": asdict(self.counts),
            "noise": asdict(self.noise), "seed": seed, "version": __version__,
        }
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:20]


def output_root(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir or os.environ.get(OUTPUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# one seed


_BASELINES: dict[str, tuple[MaskedMlp, dict]] = {}


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _evaluate(net, res: "Resolved", cell: Path, method: str, dump: bool):
    ev = evaluate(net, res.problem, res.bands)
    if dump:
        dump_fields(ev, res.problem, cell / f"{method}_fields.csv")
    return ev


def _row(problem: str, method: str, seed: int, variant: str, ev, wall: float, passes: int) -> dict:
    row = {"problem": problem, "method": method, "seed": seed, "variant": variant}
    row.update(ev.row())
    row["wall_clock_s"] = wall
    row["eval_passes"] = passes
    return row


def get_baseline(res: Resolved, dataset: Dataset, colloc, seed: int, root: Path) -> tuple[MaskedMlp, dict]:
    """Train or load the baseline network for (problem, data, training settings, seed)."""
    key = res.baseline_key(seed)
    if key in _BASELINES:
        net, info = _BASELINES[key]
        return net.copy(), info
    cache = root / ".cache" / "baselines"
    ck, meta = cache / f"{key}.npz", cache / f"{key}.json"
    if ck.exists() and meta.exists():
        net, info = MaskedMlp.load(ck), json.loads(meta.read_text())
    else:
        net, report = train_baseline(res.problem, dataset, colloc, seed, res.train, res.hidden)
        info = report.summary()
        cache.mkdir(parents=True, exist_ok=True)
        net.save(ck)
        meta.write_text(json.dumps(info))
        report.write_jsonl(cache / f"{key}.log.jsonl")
    _BASELINES[key] = (net, info)
    return net.copy(), info


def run_seed(cfg: RunConfig, seed: int, methods=METHODS, variant: str = "default") -> list[dict]:
    """Baseline, P-PINN, FT and RT for one seed; persists checkpoints and logs under the run dir."""
    res = cfg.resolve()
    pr = res.problem
    root = output_root(cfg)
    cell = root / pr.id / variant / f"seed{seed}"
    cell.mkdir(parents=True, exist_ok=True)
    dataset = sample_observations(pr, res.counts.n_obs, replace(res.noise, seed=seed))
    colloc = sample_collocation(pr, res.counts)
    dataset.to_csv(cell / "observations.csv", pr)
    base_net, base_info = get_baseline(res, dataset, colloc, seed, root)
    base_net.save(cell / "pinn.npz")
    rows = []
    if "pinn" in methods:
        rows.append(_row(pr.id, "pinn", seed, variant, _evaluate(base_net, res, cell, "pinn", cfg.dump_fields), base_info["wall_clock_s"], base_info["eval_passes"]))
    if not set(methods) & {"ppinn", "ft", "rt"}:
        return rows
    net, scores, partition, pruning, ft_report, counters, timing = unlearn(base_net, pr, dataset, colloc, res.ppinn)
    (cell / "partition.json").write_text(json.dumps(partition.to_dict()))
    with open(cell / "audit.jsonl", "w") as fh:
        for rec in pruning.audit:
            fh.write(json.dumps(rec) + "\n")
    report = {
        "problem": pr.id, "seed": seed, "variant": variant, "tau": partition.tau, "rho": partition.rho,
        "forget_high_noise_precision": float(dataset.noise_high[partition.forget].mean()),
        "counters": {"baseline_passes": base_info["eval_passes"], **counters},
        "timing": {"baseline_s": base_info["wall_clock_s"], **timing},
        "warnings": dataset.warnings + colloc.warnings + pruning.warnings,
        "schedule": res.ppinn.schedule.to_dict(),
    }
    if "ppinn" in methods:
        net.save(cell / "ppinn.npz")
        ft_report.write_jsonl(cell / "ppinn_finetune.jsonl")
        rows.append(_row(pr.id, "ppinn", seed, variant, _evaluate(net, res, cell, "ppinn", cfg.dump_fields), timing["overhead_s"], counters["overhead_passes"]))
    if "ft" in methods:
        ft_net, rep = baseline_ft(base_net, pr, dataset, partition, colloc, res.ppinn.finetune)
        ft_net.save(cell / "ft.npz")
        rows.append(_row(pr.id, "ft", seed, variant, _evaluate(ft_net, res, cell, "ft", cfg.dump_fields), rep.wall_clock_s, rep.eval_passes))
        report["counters"]["ft_passes"] = rep.eval_passes
    if "rt" in methods:
        rt_net, rep = baseline_rt(pr, dataset, partition, colloc, seed, res.train, res.hidden)
        rt_net.save(cell / "rt.npz")
        rows.append(_row(pr.id, "rt", seed, variant, _evaluate(rt_net, res, cell, "rt", cfg.dump_fields), rep.wall_clock_s, rep.eval_passes))
        report["counters"]["rt_passes"] = rep.eval_passes
    (cell / "report.json").write_text(json.dumps(report, indent=1))
    return rows


def _run_seed_star(args):
    return run_seed(*args)


def run_cells(cfg: RunConfig, methods=METHODS, variant: str = "default") -> list[dict]:
    jobs = [(cfg, s, methods, variant) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_seed_star, jobs))
    else:
        chunks = [_run_seed_star(j) for j in jobs]
    return [r for chunk in chunks for r in chunk]


# ---------------------------------------------------------------------------
# persistence


def write_manifest(run_dir: Path, cfg: RunConfig, extra: dict | None = None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"format": RUN_FORMAT, "version": __version__, "config": cfg.to_dict(), "config_hash": cfg.hash(), **(extra or {})}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def read_manifest(run_dir: Path) -> dict:
    m = json.loads((Path(run_dir) / "manifest.json").read_text())
    if m.get("format") != RUN_FORMAT or m.get("version") != __version__:
        raise VersionMismatchError(f"run written by {m.get('format')} v{m.get('version')}; this is {RUN_FORMAT} v{__version__}")
    return m


def write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in CSV_COLUMNS])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def reevaluate(run_dir, variant: str = "default") -> list[dict]:
    """Recompute metrics from saved checkpoints (no training)."""
    run_dir = Path(run_dir)
    m = read_manifest(run_dir)
    cfg = RunConfig.from_dict(m["config"])
    res = cfg.resolve()
    stored = {(r["method"], r["seed"], r["variant"]): r for r in read_rows(run_dir / "results.csv")}
    rows = []
    for (method, seed, var), old in sorted(stored.items(), key=lambda kv: (kv[0][2], int(kv[0][1]), METHODS.index(kv[0][0]))):
        ck = run_dir / var / f"seed{seed}" / f"{method}.npz"
        net = MaskedMlp.load(ck)
        row = _row(res.problem.id, method, int(seed), var, evaluate(net, res.problem, res.bands), float(old["wall_clock_s"]), int(old["eval_passes"]))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# aggregation


NUMERIC = ("l2re", "l1re", "mse", "mae", "fmse_low", "fmse_mid", "fmse_high", "param_error", "wall_clock_s", "eval_passes")


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and sample std per (problem, method, variant); single-row cells get std 0 and a flag."""
    if not rows:
        raise ValueError("nothing to aggregate")
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["problem"], r["method"], r.get("variant", "") or ""), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], METHODS.index(k[1]) if k[1] in METHODS else 99, k[2])):
        cell = groups[key]
        rec = {"problem": key[0], "method": key[1], "variant": key[2], "n": len(cell), "single_row": len(cell) == 1}
        for col in NUMERIC:
            vals = [float(r[col]) for r in cell if r.get(col) not in (None, "")]
            if not vals:
                rec[col + "_mean"] = rec[col + "_std"] = None
                continue
            rec[col + "_mean"] = statistics.fmean(vals)
            rec[col + "_std"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out.append(rec)
    return out


def format_table(agg: list[dict], cols=("l2re", "l1re", "mse", "mae")) -> str:
    head = "| problem | method | variant | n | " + " | ".join(cols) + " |"
    lines = [head, "|" + "---|" * (4 + len(cols))]
    for r in agg:
        cells = []
        for c in cols:
            m, s = r[c + "_mean"], r[c + "_std"]
            cells.append("-" if m is None else f"{m:.2E} ± {s:.2E}")
        flag = "*" if r["single_row"] else ""
        lines.append(f"| {r['problem']} | {r['method']} | {r['variant']} | {r['n']}{flag} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# experiment drivers


def experiment_run(cfg: RunConfig) -> tuple[Path, list[dict]]:
    run_dir = output_root(cfg) / cfg.problem
    rows = run_cells(cfg)
    write_rows(run_dir / "results.csv", rows)
    write_manifest(run_dir, cfg)
    return run_dir, rows


def _variants_run(cfg: RunConfig, name: str, variants: list[tuple[str, dict]], methods) -> tuple[Path, list[dict]]:
    run_dir = output_root(cfg) / cfg.problem
    rows = []
    for label, overrides in variants:
        rows += run_cells(replace(cfg, **overrides), methods, label)
    write_rows(run_dir / f"{name}.csv", rows)
    write_manifest(run_dir, cfg, {"experiment": name, "variants": [v for v, _ in variants]})
    return run_dir, rows


def experiment_ablate_strategy(cfg: RunConfig):
    frac_single = 1.0 - (1.0 - cfg.prune_fraction / cfg.prune_iterations) ** cfg.prune_iterations
    variants = [
        ("iterative", {"prune_mode": "iterative"}),
        ("single", {"prune_mode": "single", "prune_fraction": frac_single}),
    ]
    return _variants_run(cfg, "ablate_strategy", variants, ("ppinn",))


def experiment_ablate_criteria(cfg: RunConfig):
    variants = [(c, {"criterion": c}) for c in ("bias", "freq", "abs", "rms", "std")]
    return _variants_run(cfg, "ablate_criteria", variants, ("ppinn",))


def experiment_sweep_noise(cfg: RunConfig, levels=(0.25, 0.5, 0.75, 1.0)):
    variants = [(f"sigma={s:g}", {"sigma_high": s}) for s in levels]
    return _variants_run(cfg, "sweep_noise", variants, ("pinn", "ppinn"))


def experiment_sweep_prune(cfg: RunConfig, layer_counts=None, rhos=(0.4, 0.6, 0.8, 0.9)):
    depth = len(cfg.resolve().hidden)
    layer_counts = layer_counts or range(1, depth + 1)
    variants = [(f"layers={k}", {"prune_layers": k}) for k in layer_counts]
    variants += [(f"rho={r:g}", {"rho": r}) for r in rhos]
    return _variants_run(cfg, "sweep_prune", variants, ("ppinn",))
