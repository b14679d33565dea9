"""Residual-fidelity partitioning, neuron importance, iterative structured pruning and selective fine-tuning."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .autodiff import ContractError
from .network import MaskedMlp
from .optim import AdamConfig
from .problems import CollocationSets, Dataset, NetModel, Problem
from .train import LossWeights, Objective, TrainConfig, TrainReport, run_adam, run_lbfgs, train_baseline

CRITERIA = ("bias", "freq", "abs", "rms", "std")
EPS = 1e-8


# ---------------------------------------------------------------------------
# scoring and partition


@dataclass
class Scores:
    r_data: np.ndarray
    r_pde: np.ndarray
    M: np.ndarray
    alpha_data: float
    alpha_pde: float


def composite_score(r_data, r_pde, alpha_data: float = 1.0, alpha_pde: float = 1e-3) -> np.ndarray:
    if alpha_data <= 0 or alpha_pde <= 0:
        raise ValueError("score weights must be positive")
    return alpha_data * np.asarray(r_data) + alpha_pde * np.asarray(r_pde)


def pointwise_scores(net: MaskedMlp, problem: Problem, dataset: Dataset, alpha_data: float = 1.0, alpha_pde: float = 1e-3) -> Scores:
    """Data misfit and PDE residual norms at each observation point (one evaluation pass)."""
    with torch.no_grad():
        u = net.forward(dataset.points).state.value.numpy()[:, list(problem.observed)]
        r = problem.residual(NetModel(net, problem), dataset.points).numpy()
    r_data = np.linalg.norm(u - dataset.values, axis=1)
    r_pde = np.linalg.norm(r, axis=1)
    return Scores(r_data, r_pde, composite_score(r_data, r_pde, alpha_data, alpha_pde), alpha_data, alpha_pde)


@dataclass
class Partition:
    retain: np.ndarray
    forget: np.ndarray
    tau: float
    rho: float

    @property
    def n(self) -> int:
        return len(self.retain) + len(self.forget)

    def to_dict(self) -> dict:
        return {"retain": self.retain.tolist(), "forget": self.forget.tolist(), "tau": self.tau, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls(np.array(d["retain"], dtype=int), np.array(d["forget"], dtype=int), float(d["tau"]), float(d["rho"]))


def make_partition(M, rho: float) -> Partition:
    """Retain the floor(rho * N) smallest scores (ties by ascending index)."""
    M = np.asarray(M, dtype=np.float64)
    n = len(M)
    if not 0.0 < rho < 1.0:
        raise ValueError(f"retention ratio must lie in (0, 1), got {rho}")
    n_keep = int(math.floor(rho * n + 1e-9))
    if n_keep <= 0 or n_keep >= n:
        raise ValueError(f"rho={rho} with N={n} retains {n_keep} points; both sets must be nonempty")
    order = np.argsort(M, kind="stable")
    retain, forget = np.sort(order[:n_keep]), np.sort(order[n_keep:])
    return Partition(retain, forget, float(M[order[n_keep]]), rho)


# ---------------------------------------------------------------------------
# importance


def importance_from_activations(acts: np.ndarray, partition: Partition | None, criterion: str = "bias", active=None, eps: float = EPS) -> np.ndarray:
    """Per-neuron importance from an activation matrix (rows = observation points).

    Inactive neurons get NaN so they can never be selected.
    """
    acts = np.asarray(acts, dtype=np.float64)
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    if criterion == "bias":
        if partition is None or len(partition.retain) == 0 or len(partition.forget) == 0:
            raise ContractError("bias importance needs nonempty retain and forget sets")
        v = acts[partition.forget].mean(axis=0) - acts[partition.retain].mean(axis=0)
        score = v**2 / (acts.var(axis=0) + eps)
    elif criterion == "freq":
        score = (acts > 0).mean(axis=0)
    elif criterion == "abs":
        score = np.abs(acts).mean(axis=0)
    elif criterion == "rms":
        score = np.sqrt((acts**2).mean(axis=0))
    else:
        score = acts.std(axis=0)
    if active is not None:
        score = np.where(np.asarray(active, dtype=bool), score, np.nan)
    return score


def neuron_importance(net: MaskedMlp, dataset: Dataset, partition: Partition | None, layer: int, criterion: str = "bias", eps: float = EPS) -> np.ndarray:
    acts = net.capture_activations(dataset.points, layer)
    return importance_from_activations(acts, partition, criterion, net.masks[layer], eps)


# ---------------------------------------------------------------------------
# pruning


@dataclass(frozen=True)
class PruneSchedule:
    fraction: float = 1.0  # total p; per-iteration fraction of remaining neurons is p / K
    iterations: int = 20
    layers: tuple[int, ...] | None = None  # None: all hidden layers
    n_layers: int | None = None  # prune only the deepest n hidden layers
    criterion: str = "bias"
    mode: str = "iterative"
    eps: float = EPS

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("pruning fraction must lie in (0, 1]")
        if self.iterations < 1:
            raise ValueError("need at least one pruning iteration")
        if self.mode not in ("iterative", "single"):
            raise ValueError("mode must be 'iterative' or 'single'")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.layers is not None and self.n_layers is not None:
            raise ValueError("give either layers or n_layers, not both")

    @property
    def steps(self) -> int:
        return 1 if self.mode == "single" else self.iterations

    @property
    def step_fraction(self) -> float:
        return self.fraction if self.mode == "single" else self.fraction / self.iterations

    def prunable(self, n_hidden: int) -> tuple[int, ...]:
        if self.layers is not None:
            bad = [l for l in self.layers if not 0 <= l < n_hidden]
            if bad:
                raise IndexError(f"prunable layers {bad} are not hidden layers")
            return tuple(sorted(set(self.layers)))
        if self.n_layers is not None:
            if not 1 <= self.n_layers <= n_hidden:
                raise ValueError(f"n_layers must be in 1..{n_hidden}")
            return tuple(range(n_hidden - self.n_layers, n_hidden))
        return tuple(range(n_hidden))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fraction", "iterations", "layers", "n_layers", "criterion", "mode", "eps")}


def prune_count(active: int, fraction: float) -> int:
    """Neurons to remove from a layer with ``active`` survivors: round-half-up, at least 1, never all."""
    if active <= 1:
        return 0
    m = int(math.floor(fraction * active + 0.5 + 1e-9))
    return min(max(m, 1), active - 1)


def top_m(scores: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m largest finite scores; lower index wins ties."""
    idx = np.flatnonzero(np.isfinite(scores))
    order = sorted(idx, key=lambda i: (-scores[i], i))
    return np.array(order[:m], dtype=int)


@dataclass
class PruneStep:
    iteration: int
    pruned: dict[int, np.ndarray]
    scores: dict[int, np.ndarray]
    warnings: list[str] = field(default_factory=list)


def prune_iteration(net: MaskedMlp, dataset: Dataset, partition: Partition, schedule: PruneSchedule, k: int) -> PruneStep:
    """Score every prunable layer on the current network (one capture pass) and prune each."""
    if not 0 <= k < schedule.steps:
        raise ValueError(f"iteration {k} outside schedule of {schedule.steps}")
    layers = schedule.prunable(net.n_hidden)
    acts = net.capture_layers(dataset.points, layers)
    step = PruneStep(k, {}, {})
    for layer in layers:
        scores = importance_from_activations(acts[layer], partition, schedule.criterion, net.masks[layer], schedule.eps)
        m = prune_count(net.active_count(layer), schedule.step_fraction)
        step.scores[layer] = scores
        if m == 0:
            step.warnings.append(f"layer {layer} has a single active neuron; skipped at iteration {k}")
            step.pruned[layer] = np.zeros(0, dtype=int)
            continue
        chosen = top_m(scores, m)
        net.apply_prune(layer, chosen)
        step.pruned[layer] = chosen
    return step


@dataclass
class PruneResult:
    audit: list[dict]
    steps: list[PruneStep]
    passes: int
    warnings: list[str]


def run_pruning(net: MaskedMlp, dataset: Dataset, partition: Partition, schedule: PruneSchedule) -> PruneResult:
    """Prune ``net`` in place; the audit log lists every removed (layer, neuron, iteration, score)."""
    audit, steps, warnings = [], [], []
    for k in range(schedule.steps):
        step = prune_iteration(net, dataset, partition, schedule, k)
        steps.append(step)
        warnings += step.warnings
        for layer, neurons in step.pruned.items():
            for n in neurons:
                audit.append({"iteration": k, "layer": int(layer), "neuron": int(n), "score": float(step.scores[layer][n])})
    return PruneResult(audit, steps, len(steps), warnings)


def masks_from_audit(widths, audit: list[dict]) -> list[np.ndarray]:
    masks = [np.ones(w, dtype=bool) for w in widths]
    for rec in audit:
        masks[rec["layer"]][rec["neuron"]] = False
    return masks


# ---------------------------------------------------------------------------
# fine-tuning and the full pipeline


@dataclass
class FinetuneConfig:
    adam_epochs: int = 2000
    lbfgs_iters: int = 500  # used for data-assimilation problems only
    lr: float = 1e-3
    lambda_pde: float = 0.005
    log_every: int = 100

    def train_config(self, base: TrainConfig | None = None) -> TrainConfig:
        base = base or TrainConfig()
        return replace(base, adam_epochs=self.adam_epochs, lbfgs_iters=self.lbfgs_iters, adam=AdamConfig(lr=self.lr), log_every=self.log_every)


def finetune(
    net: MaskedMlp,
    problem: Problem,
    dataset: Dataset,
    partition: Partition,
    colloc: CollocationSets,
    cfg: FinetuneConfig | None = None,
    weights: LossWeights = LossWeights(),
) -> TrainReport:
    """Warm-started training on the retained data with a reduced PDE weight; masks stay enforced."""
    cfg = cfg or FinetuneConfig()
    if len(partition.retain) == 0:
        raise ValueError("fine-tuning needs a nonempty retain set")
    tcfg = cfg.train_config()
    obj = Objective(net, problem, dataset.subset(partition.retain), colloc, replace(weights, pde=cfg.lambda_pde))
    net.enforce_masks()
    report = run_adam(obj, cfg.adam_epochs, tcfg, phase="finetune_adam")
    if problem.kind == "da" and cfg.lbfgs_iters > 0:
        report = report.merge(run_lbfgs(obj, cfg.lbfgs_iters, tcfg, phase="finetune_lbfgs"))
    return report


@dataclass
class PPinnConfig:
    alpha_data: float = 1.0
    alpha_pde: float = 1e-3
    rho: float = 0.8
    schedule: PruneSchedule = field(default_factory=PruneSchedule)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)


@dataclass
class PipelineResult:
    net: MaskedMlp
    baseline_net: MaskedMlp
    baseline_report: TrainReport
    scores: Scores
    partition: Partition
    pruning: PruneResult
    finetune_report: TrainReport
    counters: dict
    wall_clock_s: dict


def unlearn(
    baseline_net: MaskedMlp,
    problem: Problem,
    dataset: Dataset,
    colloc: CollocationSets,
    config: PPinnConfig,
    partition: Partition | None = None,
    scores: Scores | None = None,
) -> tuple[MaskedMlp, Scores, Partition, PruneResult, TrainReport, dict, dict]:
    """Parts I-III on a trained network; the input network is left untouched."""
    t0 = time.perf_counter()
    score_passes = 0
    if scores is None:
        scores = pointwise_scores(baseline_net, problem, dataset, config.alpha_data, config.alpha_pde)
        score_passes = 1
    if partition is None:
        partition = make_partition(scores.M, config.rho)
    t1 = time.perf_counter()
    net = baseline_net.copy()
    pruning = run_pruning(net, dataset, partition, config.schedule)
    t2 = time.perf_counter()
    ft = finetune(net, problem, dataset, partition, colloc, config.finetune)
    t3 = time.perf_counter()
    counters = {
        "scoring_passes": score_passes,
        "pruning_passes": pruning.passes,
        "finetune_passes": ft.eval_passes,
        "overhead_passes": score_passes + pruning.passes + ft.eval_passes,
    }
    timing = {"scoring_s": t1 - t0, "pruning_s": t2 - t1, "finetune_s": t3 - t2, "overhead_s": t3 - t0}
    return net, scores, partition, pruning, ft, counters, timing


def run_ppinn(
    problem: Problem,
    dataset: Dataset,
    colloc: CollocationSets,
    config: PPinnConfig,
    seed: int,
    train_cfg: TrainConfig | None = None,
    hidden_widths=(50, 50, 50, 50),
    baseline: tuple[MaskedMlp, TrainReport] | None = None,
) -> PipelineResult:
    """Baseline training, scoring, partition, iterative pruning and selective fine-tuning."""
    if baseline is None:
        baseline = train_baseline(problem, dataset, colloc, seed, train_cfg, hidden_widths)
    base_net, base_report = baseline
    net, scores, partition, pruning, ft, counters, timing = unlearn(base_net, problem, dataset, colloc, config)
    counters = {"baseline_passes": base_report.eval_passes, **counters}
    counters["total_passes"] = counters["baseline_passes"] + counters["overhead_passes"]
    timing = {"baseline_s": base_report.wall_clock_s, **timing}
    return PipelineResult(net, base_net, base_report, scores, partition, pruning, ft, counters, timing)


def baseline_ft(net: MaskedMlp, problem: Problem, dataset: Dataset, partition: Partition, colloc: CollocationSets, cfg: FinetuneConfig | None = None) -> tuple[MaskedMlp, TrainReport]:
    """Fine-tune a copy of the baseline on the retained data without pruning."""
    out = net.copy()
    return out, finetune(out, problem, dataset, partition, colloc, cfg)


def baseline_rt(
    problem: Problem,
    dataset: Dataset,
    partition: Partition,
    colloc: CollocationSets,
    seed: int,
    train_cfg: TrainConfig | None = None,
    hidden_widths=(50, 50, 50, 50),
) -> tuple[MaskedMlp, TrainReport]:
    """Full baseline training from a fresh initialization on the retained data only."""
    return train_baseline(problem, dataset.subset(partition.retain), colloc, seed, train_cfg, hidden_widths)
