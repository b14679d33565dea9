"""Error metrics on noise-free test grids, including Fourier-band MSEs."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .network import MaskedMlp
from .problems import Problem


@dataclass
class MetricsReport:
    l2re: float
    l1re: float
    mse: float
    mae: float  # maximum absolute error
    fmse_low: float | None = None
    fmse_mid: float | None = None
    fmse_high: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def scalar_metrics(pred, truth) -> MetricsReport:
    """Relative L2/L1 errors, MSE and max-abs error of flattened (concatenated) fields."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} must be equal nonempty vectors")
    n2, n1 = np.linalg.norm(truth), np.abs(truth).sum()
    if n2 == 0:
        raise ValueError("relative metrics are undefined for an all-zero reference")
    err = pred - truth
    return MetricsReport(
        l2re=float(np.linalg.norm(err) / n2),
        l1re=float(np.abs(err).sum() / n1),
        mse=float(np.mean(err**2)),
        mae=float(np.max(np.abs(err))),
    )


@dataclass(frozen=True)
class BandConfig:
    k1: int = 4
    k2: int = 12

    def __post_init__(self):
        if not 0 < self.k1 < self.k2:
            raise ValueError("band edges need 0 < k1 < k2")


def radial_wavenumber(shape: tuple[int, int]) -> np.ndarray:
    kx = np.fft.fftfreq(shape[0]) * shape[0]
    ky = np.fft.fftfreq(shape[1]) * shape[1]
    return np.rint(np.sqrt(kx[:, None] ** 2 + ky[None, :] ** 2)).astype(int)


def band_masks(shape, cfg: BandConfig = BandConfig()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if min(shape) < 2 * cfg.k2:
        raise ValueError(f"grid {tuple(shape)} too small for band edge k2={cfg.k2} (need >= {2 * cfg.k2} per axis)")
    k = radial_wavenumber(shape)
    return k <= cfg.k1, (k > cfg.k1) & (k <= cfg.k2), k > cfg.k2


def fmse_bands(pred, truth, cfg: BandConfig = BandConfig()) -> tuple[float, float, float]:
    """Mean of |DFT(error)|^2 / n over the modes of each radial band.

    With this normalization sum_b count_b * band_b / n equals the grid MSE.
    """
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if err.ndim != 2:
        raise ValueError("fMSE needs 2-D fields")
    masks = band_masks(err.shape, cfg)
    power = np.abs(np.fft.fft2(err)) ** 2 / err.size
    return tuple(float(power[m].mean()) for m in masks)


def fmse_stack(pred, truth, cfg: BandConfig = BandConfig()) -> tuple[float, float, float]:
    """Average band values over leading slices: (..., nx, ny) fields or per-component stacks."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    p2 = pred.reshape((-1,) + pred.shape[-2:])
    t2 = truth.reshape((-1,) + truth.shape[-2:])
    bands = np.array([fmse_bands(a, b, cfg) for a, b in zip(p2, t2)])
    return tuple(float(v) for v in bands.mean(axis=0))


# ---------------------------------------------------------------------------


@dataclass
class Evaluation:
    primary: MetricsReport
    state: MetricsReport
    param: MetricsReport | None
    param_error: float | None
    fields: dict

    def row(self) -> dict:
        out = self.primary.to_dict()
        out["param_error"] = self.param_error
        return out


def _signed_sqrt(x: float) -> float:
    return math.copysign(math.sqrt(abs(x)), x)


def _grid_fields(values: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """(n, c) values on a test grid -> (c, *shape) with time (last grid axis) moved first for 3-D grids."""
    arr = values.T.reshape((values.shape[1],) + tuple(shape))
    if len(shape) == 3:
        arr = np.moveaxis(arr, -1, 1)  # (c, nt, nx, ny)
    return arr


def evaluate(net: MaskedMlp, problem: Problem, bands: BandConfig = BandConfig()) -> Evaluation:
    """Metrics of the network against the exact fields on the problem's test grid."""
    X, shape = problem.test_grid()
    u_pred, g_pred = net.predict(X)
    u_true = problem.exact_state(X)
    if problem.id == "stokes_da":
        u_pred = u_pred.copy()
        u_pred[:, 2] += np.mean(u_true[:, 2] - u_pred[:, 2])  # pressure is defined up to a constant
    state = scalar_metrics(u_pred, u_true)
    fields = {"points": X, "shape": shape, "state_pred": u_pred, "state_true": u_true}
    param, param_error = None, None
    if problem.param_head == "field":
        g_true = problem.exact_param(X)
        param = scalar_metrics(g_pred, g_true)
        fields.update(param_pred=g_pred, param_true=g_true)
        param.fmse_low, param.fmse_mid, param.fmse_high = fmse_stack(_grid_fields(g_pred, shape), _grid_fields(g_true, shape), bands)
        state.fmse_low, state.fmse_mid, state.fmse_high = fmse_stack(_grid_fields(u_pred, shape), _grid_fields(u_true, shape), bands)
        primary = param
    elif problem.param_head == "scalars":
        raw = net.scalars().detach().numpy()
        est = np.array([_signed_sqrt(v) for v in raw])
        true = np.array([math.sqrt(v) for v in problem.scalar_true])
        param = scalar_metrics(est, true)
        param_error = float(np.sum((est - true) ** 2))
        fields.update(scalar_raw=raw, scalar_est=est, scalar_true=true)
        primary = param
    else:
        state.fmse_low, state.fmse_mid, state.fmse_high = fmse_stack(_grid_fields(u_pred, shape), _grid_fields(u_true, shape), bands)
        primary = state
    return Evaluation(primary, state, param, param_error, fields)


def dump_fields(evaluation: Evaluation, problem: Problem, path) -> None:
    """CSV of grid coordinates with predicted and exact values for every field."""
    f = evaluation.fields
    cols = list(problem.coord_names)
    blocks = [f["points"]]
    for name, i in zip(problem.state_names, range(len(problem.state_names))):
        cols += [f"{name}_pred", f"{name}_exact"]
        blocks += [f["state_pred"][:, i : i + 1], f["state_true"][:, i : i + 1]]
    if "param_pred" in f:
        for i, name in enumerate(problem.param_names):
            cols += [f"{name}_pred", f"{name}_exact"]
            blocks += [f["param_pred"][:, i : i + 1], f["param_true"][:, i : i + 1]]
    data = np.hstack(blocks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        w.writerows(data.tolist())
