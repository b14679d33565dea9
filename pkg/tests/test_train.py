import numpy as np
import pytest
import torch

from ppinn.network import MaskedMlp
from ppinn.optim import AdamConfig
from ppinn.problems import (
    PROBLEM_IDS,
    CollocationSets,
    Counts,
    Dataset,
    NoiseConfig,
    make_problem,
    sample_collocation,
    sample_observations,
)
from ppinn.train import (
    DivergenceError,
    LossWeights,
    Objective,
    TrainConfig,
    composite_loss,
    network_config,
    train_baseline,
    train_baseline_inverse,
    train_dgpinn_da,
)

SMALL = {"pinv": Counts(36, 25, 16, 0), "hinv": Counts(27, 27, 24, 9), "ebinv": Counts(20, 16, 8, 8), "winv": Counts(20, 16, 8, 8)}


def small_setup(pid, widths=(8, 8), seed=0, noise=NoiseConfig(0.5, 0.1, 0.5)):
    pr = make_problem(pid)
    counts = SMALL.get(pid, Counts(30, 25, 12, 8 if pr.time_dependent else 0))
    ds = sample_observations(pr, counts.n_obs, noise, seed=seed)
    col = sample_collocation(pr, counts)
    net = MaskedMlp.init(network_config(pr, widths), seed)
    return pr, ds, col, net


def fd_gradient_errors(pid, n_params=20, h=1e-6, seed=0):
    pr, ds, col, net = small_setup(pid, seed=seed)
    obj = Objective(net, pr, ds, col, LossWeights())
    _, g = obj.value_and_grad()
    idx = np.random.default_rng(seed).choice(net.size, n_params, replace=False)
    theta0 = net.params()
    errs = []
    for i in idx:
        vals = []
        for s in (h, -h):
            th = theta0.copy()
            th[i] += s
            vals.append(float(obj.breakdown(torch.from_numpy(th)).total))
        fd = (vals[0] - vals[1]) / (2 * h)
        errs.append(abs(g[i] - fd) / max(abs(fd), abs(g[i]), 1e-8))
    return np.array(errs)


@pytest.mark.parametrize("pid", PROBLEM_IDS)
def test_gradient_matches_finite_differences(pid):
    assert fd_gradient_errors(pid).max() < 1e-5


def test_data_term_vanishes_on_own_predictions():
    pr = make_problem("pinv")
    col = sample_collocation(pr, Counts(0, 16, 8, 0))
    ds = sample_observations(pr, 25, NoiseConfig(0.0, 0.0, 0.5), seed=0)
    net = MaskedMlp.init(network_config(pr, (4,)), 0)
    ds.values[:] = net.predict(ds.points)[0]
    assert composite_loss(net, pr, ds, col).data.item() < 1e-28


def test_two_point_data_loss():
    pr = make_problem("poisson_da")
    net = MaskedMlp.init(network_config(pr, (4,)), 0)
    pts = np.array([[0.4, 0.5], [0.6, 0.5]])
    u, _ = net.predict(pts)
    ds = Dataset(pts, u + np.array([[0.1], [-0.3]]), np.zeros(2, bool), np.zeros(2))
    col = CollocationSets(np.array([[0.5, 0.5]]), np.zeros((0, 2)), np.zeros((0, 2)))
    lb = composite_loss(net, pr, ds, col)
    assert lb.data.item() == pytest.approx(0.05, rel=1e-12)


def test_weights_linearity_and_observation_independence():
    pr, ds, col, net = small_setup("heat_da")
    a = composite_loss(net, pr, ds, col, LossWeights(1, 1, 1, 1))
    b = composite_loss(net, pr, ds, col, LossWeights(1, 2, 1, 1))
    assert (b.total - a.total).item() == pytest.approx(a.pde.item(), rel=1e-12)
    other = sample_observations(pr, len(ds), seed=99)
    w = LossWeights(0, 1, 1, 1)
    assert composite_loss(net, pr, ds, col, w).total.item() == composite_loss(net, pr, other, col, w).total.item()
    with pytest.raises(ValueError):
        composite_loss(net, pr, ds.subset([]), col)
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def test_total_is_weighted_sum():
    pr, ds, col, net = small_setup("wave_da")
    w = LossWeights(0.3, 2.0, 0.7, 1.5)
    lb = composite_loss(net, pr, ds, col, w)
    want = 0.3 * lb.data + 2.0 * lb.pde + 0.7 * lb.bc + 1.5 * lb.ic
    assert lb.total.item() == pytest.approx(want.item(), rel=1e-12)


def test_subset_averages_only_retained():
    pr, ds, col, net = small_setup("heat_da")
    idx = np.arange(0, len(ds), 3)
    u, _ = net.predict(ds.points[idx])
    want = np.mean(np.sum((u - ds.values[idx]) ** 2, axis=1))
    assert composite_loss(net, pr, ds.subset(idx), col).data.item() == pytest.approx(want, rel=1e-12)


def test_ic_term_absent_for_stationary_problem():
    pr, ds, col, net = small_setup("poisson_da")
    assert len(col.ic) == 0
    assert composite_loss(net, pr, ds, col).ic.item() == 0.0
    obj = Objective(net, pr, ds, col, LossWeights())
    assert obj.ic_x is None


def test_inverse_training_deterministic_and_decreasing():
    cfg = TrainConfig(adam_epochs=300, log_every=50)
    runs = []
    for _ in range(2):
        pr, ds, col, _ = small_setup("pinv")
        net, rep = train_baseline_inverse(pr, ds, col, seed=5, cfg=cfg, hidden_widths=(8, 8))
        runs.append(rep)
    assert runs[0].history == runs[1].history
    h = runs[0].history
    assert np.mean(h[-50:]) < np.mean(h[:50])
    assert runs[0].eval_passes == 300 and runs[0].adam_epochs == 300
    with pytest.raises(ValueError):
        train_baseline_inverse(make_problem("heat_da"), ds, col, 0, cfg)


def test_dgpinn_phases_and_warm_start():
    pr, ds, col, _ = small_setup("heat_da", noise=NoiseConfig(0.0, 0.0, 0.5))
    cfg = TrainConfig(adam_epochs=400, lbfgs_iters=20, log_every=100)
    net, rep = train_dgpinn_da(pr, ds, col, seed=1, cfg=cfg, hidden_widths=(10, 10))
    assert {r["phase"] for r in rep.log} == {"pretrain", "lbfgs"}
    assert rep.history[399] < rep.history[0] / 10
    # L-BFGS starts from the pre-trained parameters
    start = rep.phase_start_params["lbfgs"]
    probe = MaskedMlp.init(network_config(pr, (10, 10)), 1)
    probe.set_params(start)
    want = composite_loss(probe, pr, ds, col).total.item()
    assert rep.history[400] <= want + 1e-12
    assert rep.lbfgs_iters <= 20 and rep.eval_passes == 400 + rep.lbfgs_evals
    assert train_baseline(pr, ds, col, 1, cfg, (10, 10))[1].history == rep.history


def test_divergence_guard():
    pr, ds, col, _ = small_setup("pinv")
    # a huge learning rate drives the loss up immediately
    cfg = TrainConfig(adam_epochs=200, adam=AdamConfig(lr=10.0), divergence_factor=2.0)
    with pytest.raises(DivergenceError) as err:
        train_baseline_inverse(pr, ds, col, 0, cfg, (8, 8))
    assert err.value.step > 0
