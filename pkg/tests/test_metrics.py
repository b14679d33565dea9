import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ppinn.metrics import BandConfig, band_masks, evaluate, fmse_bands, fmse_stack, radial_wavenumber, scalar_metrics
from ppinn.network import MaskedMlp
from ppinn.problems import make_problem
from ppinn.train import network_config


def test_scalar_examples():
    r = scalar_metrics([1.0, 2.0], [1.0, 2.0])
    assert (r.l2re, r.l1re, r.mse, r.mae) == (0, 0, 0, 0)
    t = np.array([1.0, -2.0, 0.5])
    r = scalar_metrics(2 * t, t)
    assert r.l2re == pytest.approx(1.0) and r.l1re == pytest.approx(1.0)
    r = scalar_metrics([3.0, 0.0], [3.0, 4.0])
    assert (r.l2re, r.mae, r.mse) == (pytest.approx(0.8), 4.0, 8.0)


def test_scalar_rejects_zero_reference_and_shape_mismatch():
    with pytest.raises(ValueError):
        scalar_metrics([1.0], [0.0])
    with pytest.raises(ValueError):
        scalar_metrics([1.0, 2.0], [1.0])


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite), st.floats(0.1, 5), st.booleans())
def test_scale_equivariance(p, t, c, neg):
    if np.linalg.norm(t) < 1e-3:
        return
    c = -c if neg else c
    a, b = scalar_metrics(p, t), scalar_metrics(c * p, c * t)
    assert b.l2re == pytest.approx(a.l2re, rel=1e-12, abs=1e-15)
    assert b.l1re == pytest.approx(a.l1re, rel=1e-12, abs=1e-15)
    assert b.mse == pytest.approx(c * c * a.mse, rel=1e-12, abs=1e-15)
    assert b.mae == pytest.approx(abs(c) * a.mae, rel=1e-12, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 9, elements=finite), arrays(np.float64, 9, elements=finite), st.randoms(use_true_random=False))
def test_permutation_invariance(p, t, rnd):
    if np.linalg.norm(t) < 1e-3:
        return
    perm = list(range(9))
    rnd.shuffle(perm)
    a, b = scalar_metrics(p, t), scalar_metrics(p[perm], t[perm])
    assert b.l2re == pytest.approx(a.l2re, rel=1e-12)
    assert b.mae == a.mae


def test_identical_fields_have_zero_bands():
    f = np.random.default_rng(0).normal(size=(32, 32))
    assert fmse_bands(f, f) == (0.0, 0.0, 0.0)


def test_single_mode_lands_in_low_band():
    n = 32
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    err = np.cos(2 * np.pi * 2 * i / n)
    low, mid, high = fmse_bands(err, np.zeros((n, n)))
    assert low > 0 and mid == pytest.approx(0, abs=1e-25) and high == pytest.approx(0, abs=1e-25)


def brute_force_bands(err, k1, k2):
    nx, ny = err.shape
    X = np.zeros((nx, ny), dtype=complex)
    for a in range(nx):
        for b in range(ny):
            for x in range(nx):
                for y in range(ny):
                    X[a, b] += err[x, y] * np.exp(-2j * np.pi * (a * x / nx + b * y / ny))
    sums, counts = [0.0, 0.0, 0.0], [0, 0, 0]
    for a in range(nx):
        for b in range(ny):
            ka = a if a < nx / 2 else a - nx
            kb = b if b < ny / 2 else b - ny
            k = int(round(np.hypot(ka, kb)))
            band = 0 if k <= k1 else 1 if k <= k2 else 2
            sums[band] += abs(X[a, b]) ** 2 / err.size
            counts[band] += 1
    return [s / c for s, c in zip(sums, counts)]


def test_brute_force_dft_oracle_16x16():
    rng = np.random.default_rng(1)
    p, t = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    got = fmse_bands(p, t, BandConfig(2, 6))
    want = brute_force_bands(p - t, 2, 6)
    assert got == pytest.approx(want, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_parseval_band_recombination(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(32, 32)), rng.normal(size=(32, 32))
    bands = fmse_bands(p, t)
    counts = [m.sum() for m in band_masks((32, 32))]
    total = sum(c * b for c, b in zip(counts, bands)) / p.size
    assert total == pytest.approx(np.mean((p - t) ** 2), rel=1e-8)


def test_band_masks_partition_and_small_grid_rejected():
    lo, mid, hi = band_masks((40, 30))
    assert np.all(lo.astype(int) + mid + hi == 1)
    assert radial_wavenumber((4, 4))[0, 0] == 0
    with pytest.raises(ValueError):
        band_masks((20, 32))
    with pytest.raises(ValueError):
        BandConfig(5, 5)


def test_stack_averages_slices():
    rng = np.random.default_rng(2)
    p, t = rng.normal(size=(3, 24, 24)), rng.normal(size=(3, 24, 24))
    per = np.array([fmse_bands(a, b) for a, b in zip(p, t)])
    assert fmse_stack(p, t) == pytest.approx(tuple(per.mean(axis=0)), rel=1e-14)


def test_evaluate_reports_by_problem_class():
    for pid, head in [("pinv", "field"), ("ebinv", "scalars"), ("heat_da", "none")]:
        pr = make_problem(pid)
        net = MaskedMlp.init(network_config(pr, (6,)), 0)
        ev = evaluate(net, pr)
        assert ev.primary.l2re > 0
        if head == "scalars":
            # init value 0.5 for alpha^2 -> alpha = sqrt(0.5)
            assert ev.param_error == pytest.approx((np.sqrt(0.5) - 1.0) ** 2)
            assert ev.primary.fmse_low is None
        else:
            assert ev.param_error is None and ev.primary.fmse_low is not None
        again = evaluate(net, pr)
        assert again.row() == ev.row()
