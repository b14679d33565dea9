"""Composite PINN loss and the two baseline training pipelines."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import autodiff as ad
from .network import MaskedMlp, NetworkConfig
from .optim import Adam, AdamConfig, LbfgsConfig, lbfgs_minimize
from .problems import CollocationSets, Dataset, NetModel, Problem


class DivergenceError(RuntimeError):
    def __init__(self, phase: str, step: int, loss: float):
        super().__init__(f"training diverged in {phase} at step {step} (loss {loss:.3e})")
        self.phase, self.step, self.loss = phase, step, loss


@dataclass(frozen=True)
class LossWeights:
    data: float = 1.0
    pde: float = 1.0
    bc: float = 1.0
    ic: float = 1.0

    def __post_init__(self):
        if min(self.data, self.pde, self.bc, self.ic) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    data: torch.Tensor
    pde: torch.Tensor
    bc: torch.Tensor
    ic: torch.Tensor
    total: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("data", "pde", "bc", "ic", "total")}


@dataclass
class TrainConfig:
    adam_epochs: int = 2000
    lbfgs_iters: int = 500
    adam: AdamConfig = field(default_factory=AdamConfig)
    lbfgs_history: int = 50
    lbfgs_gtol: float = 1e-8
    divergence_factor: float = 1e6
    log_every: int = 100

    def lbfgs_config(self) -> LbfgsConfig:
        return LbfgsConfig(history=self.lbfgs_history, gtol=self.lbfgs_gtol, max_iters=self.lbfgs_iters)


@dataclass
class TrainReport:
    params: np.ndarray
    history: list[float] = field(default_factory=list)  # total loss before every Adam step / after every L-BFGS iteration
    log: list[dict] = field(default_factory=list)
    adam_epochs: int = 0
    lbfgs_iters: int = 0
    lbfgs_evals: int = 0
    eval_passes: int = 0
    wall_clock_s: float = 0.0
    termination: str = ""
    phase_start_params: dict[str, np.ndarray] = field(default_factory=dict)

    def merge(self, other: "TrainReport") -> "TrainReport":
        return TrainReport(
            params=other.params,
            history=self.history + other.history,
            log=self.log + other.log,
            adam_epochs=self.adam_epochs + other.adam_epochs,
            lbfgs_iters=self.lbfgs_iters + other.lbfgs_iters,
            lbfgs_evals=self.lbfgs_evals + other.lbfgs_evals,
            eval_passes=self.eval_passes + other.eval_passes,
            wall_clock_s=self.wall_clock_s + other.wall_clock_s,
            termination=other.termination or self.termination,
            phase_start_params={**self.phase_start_params, **other.phase_start_params},
        )

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")

    def summary(self) -> dict:
        return {
            "adam_epochs": self.adam_epochs,
            "lbfgs_iters": self.lbfgs_iters,
            "lbfgs_evals": self.lbfgs_evals,
            "eval_passes": self.eval_passes,
            "wall_clock_s": self.wall_clock_s,
            "termination": self.termination,
            "final_loss": self.history[-1] if self.history else None,
        }


def network_config(problem: Problem, hidden_widths=(50, 50, 50, 50)) -> NetworkConfig:
    head = problem.param_head
    return NetworkConfig(
        input_dim=problem.input_dim,
        hidden_widths=tuple(hidden_widths),
        state_dim=len(problem.state_names),
        param_head=head,
        param_dim=len(problem.param_names) if head == "field" else len(problem.scalar_names),
        scalar_init=problem.scalar_init if head == "scalars" else (),
        input_lower=problem.lower,
        input_upper=problem.upper,
    )


# ---------------------------------------------------------------------------
# loss


class Objective:
    """Composite loss with all targets precomputed; counts every evaluation pass."""

    def __init__(self, net: MaskedMlp, problem: Problem, data: Dataset | None, colloc: CollocationSets, weights: LossWeights):
        self.net, self.problem, self.weights = net, problem, weights
        if weights.data > 0 and (data is None or len(data) == 0):
            raise ValueError("data term is weighted but the observation subset is empty")
        self.obs_x = ad.as_tensor(data.points) if data is not None else None
        self.obs_y = ad.as_tensor(data.values) if data is not None else None
        self.pde_x = ad.as_tensor(colloc.pde)
        self.pde_f = torch.from_numpy(problem.forcing(colloc.pde))
        self.bc_x = ad.as_tensor(colloc.bc)
        self.bc_g = torch.from_numpy(problem.bc_target(colloc.bc)) if len(colloc.bc) else None
        use_ic = problem.time_dependent and len(colloc.ic) > 0
        self.ic_x = ad.as_tensor(colloc.ic) if use_ic else None
        self.ic_h = torch.from_numpy(problem.ic_target(colloc.ic)) if use_ic else None
        self.passes = 0

    def breakdown(self, theta: torch.Tensor | None = None, full: bool = False) -> LossBreakdown:
        w, pr = self.weights, self.problem
        model = NetModel(self.net, pr, theta)
        zero = torch.zeros((), dtype=ad.DTYPE)
        terms = {"data": zero, "pde": zero, "bc": zero, "ic": zero}
        if self.obs_x is not None and len(self.obs_x) and (w.data > 0 or full):
            u = self.net.forward(self.obs_x, theta).state.value[:, list(pr.observed)]
            terms["data"] = ((u - self.obs_y) ** 2).sum(dim=1).mean()
        if len(self.pde_x) and (w.pde > 0 or full):
            r = pr.residual(model, self.pde_x, self.pde_f)
            terms["pde"] = (r**2).sum(dim=1).mean()
        if self.bc_g is not None and (w.bc > 0 or full):
            r = pr.bc_residual(model, self.bc_x, self.bc_g, check=False)
            terms["bc"] = (r**2).sum(dim=1).mean()
        if self.ic_h is not None and (w.ic > 0 or full):
            r = pr.ic_residual(model, self.ic_x, self.ic_h, check=False)
            terms["ic"] = (r**2).sum(dim=1).mean()
        total = w.data * terms["data"] + w.pde * terms["pde"] + w.bc * terms["bc"] + w.ic * terms["ic"]
        self.passes += 1
        return LossBreakdown(total=total, **terms)

    def value_and_grad(self) -> tuple[LossBreakdown, np.ndarray]:
        lb = self.breakdown()
        (g,) = ad.grad_params(lb.total, [self.net.theta])
        return lb, g.detach().numpy().copy()


def composite_loss(
    net: MaskedMlp,
    problem: Problem,
    data: Dataset | None,
    colloc: CollocationSets,
    weights: LossWeights = LossWeights(),
    theta: torch.Tensor | None = None,
) -> LossBreakdown:
    return Objective(net, problem, data, colloc, weights).breakdown(theta, full=True)


# ---------------------------------------------------------------------------
# optimisation loops


def _log_record(phase: str, step: int, lb: LossBreakdown, gnorm: float, t0: float) -> dict:
    rec = {"phase": phase, "step": step, **lb.floats(), "grad_norm": gnorm, "wall_s": time.perf_counter() - t0}
    return rec


def run_adam(obj: Objective, epochs: int, cfg: TrainConfig, phase: str = "adam") -> TrainReport:
    net = obj.net
    t0 = time.perf_counter()
    start = obj.passes
    report = TrainReport(params=net.params(), phase_start_params={phase: net.params()})
    opt = Adam(net.size, cfg.adam)
    view = net.param_view()
    mask = net.grad_mask
    initial = None
    for epoch in range(epochs):
        lb, g = obj.value_and_grad()
        total = float(lb.total.detach())
        if initial is None:
            initial = total
        if not math.isfinite(total) or total > cfg.divergence_factor * max(initial, 1e-300):
            raise DivergenceError(phase, epoch, total)
        report.history.append(total)
        if epoch % cfg.log_every == 0 or epoch == epochs - 1:
            report.log.append(_log_record(phase, epoch, lb, float(np.linalg.norm(g)), t0))
        opt.step(view, g, mask)
    report.adam_epochs = epochs
    report.params = net.params()
    report.eval_passes = obj.passes - start
    report.wall_clock_s = time.perf_counter() - t0
    report.termination = "max_epochs"
    return report


def run_lbfgs(obj: Objective, iters: int, cfg: TrainConfig, phase: str = "lbfgs") -> TrainReport:
    net = obj.net
    t0 = time.perf_counter()
    start = obj.passes
    report = TrainReport(params=net.params(), phase_start_params={phase: net.params()})
    if iters <= 0:
        return report
    view = net.param_view()
    initial = [None]
    last = {}

    def fun(x):
        view[:] = x
        lb, g = obj.value_and_grad()
        f = float(lb.total.detach())
        if initial[0] is None:
            initial[0] = f
        last["lb"] = lb
        if not math.isfinite(f) or f > cfg.divergence_factor * max(initial[0], 1e-300):
            return math.inf, g
        return f, g

    def callback(it, f, gnorm):
        report.history.append(f)
        if it % cfg.log_every == 0 or it == iters:
            report.log.append({"phase": phase, "step": it, "total": f, "grad_norm": gnorm, "wall_s": time.perf_counter() - t0})

    res = lbfgs_minimize(fun, net.params(), cfg.lbfgs_config(), mask=net.grad_mask, callback=callback)
    view[:] = res.x
    net.enforce_masks()
    report.params = net.params()
    report.lbfgs_iters = res.iters
    report.lbfgs_evals = res.n_evals
    report.eval_passes = obj.passes - start
    report.wall_clock_s = time.perf_counter() - t0
    report.termination = res.reason
    return report


# ---------------------------------------------------------------------------
# baseline pipelines


def train_baseline_inverse(
    problem: Problem,
    dataset: Dataset,
    colloc: CollocationSets,
    seed: int,
    cfg: TrainConfig | None = None,
    hidden_widths=(50, 50, 50, 50),
    net: MaskedMlp | None = None,
    weights: LossWeights = LossWeights(),
) -> tuple[MaskedMlp, TrainReport]:
    """Full-batch Adam on the complete composite loss."""
    if problem.kind != "inverse":
        raise ValueError(f"{problem.id} is not a parameter-inversion problem")
    cfg = cfg or TrainConfig()
    net = net if net is not None else MaskedMlp.init(network_config(problem, hidden_widths), seed)
    torch.manual_seed(seed)
    obj = Objective(net, problem, dataset, colloc, weights)
    report = run_adam(obj, cfg.adam_epochs, cfg, phase="adam")
    return net, report


def train_dgpinn_da(
    problem: Problem,
    dataset: Dataset,
    colloc: CollocationSets,
    seed: int,
    cfg: TrainConfig | None = None,
    hidden_widths=(50, 50, 50, 50),
    net: MaskedMlp | None = None,
    weights: LossWeights = LossWeights(),
) -> tuple[MaskedMlp, TrainReport]:
    """Data-only Adam pre-training, then L-BFGS on the full composite loss (warm start)."""
    if problem.kind != "da":
        raise ValueError(f"{problem.id} is not a data-assimilation problem")
    cfg = cfg or TrainConfig()
    net = net if net is not None else MaskedMlp.init(network_config(problem, hidden_widths), seed)
    torch.manual_seed(seed)
    pre = Objective(net, problem, dataset, colloc, replace(weights, pde=0.0, bc=0.0, ic=0.0))
    r1 = run_adam(pre, cfg.adam_epochs, cfg, phase="pretrain")
    full = Objective(net, problem, dataset, colloc, weights)
    r2 = run_lbfgs(full, cfg.lbfgs_iters, cfg, phase="lbfgs")
    return net, r1.merge(r2)


def train_baseline(problem: Problem, dataset, colloc, seed, cfg=None, hidden_widths=(50, 50, 50, 50), net=None, weights=LossWeights()):
    fn = train_baseline_inverse if problem.kind == "inverse" else train_dgpinn_da
    return fn(problem, dataset, colloc, seed, cfg, hidden_widths, net, weights)
