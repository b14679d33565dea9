"""Benchmark PDE problems: domains, exact fields, forcing, residual operators, sampling and noise."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from . import autodiff as ad
from .autodiff import DTYPE, Jet
from .sobol import sobol_sequence

PI = math.pi
PROBLEM_IDS = ("pinv", "hinv", "ebinv", "winv", "poisson_da", "heat_da", "wave_da", "stokes_da")
INVERSE_IDS = PROBLEM_IDS[:4]
DA_IDS = PROBLEM_IDS[4:]

ON_MANIFOLD_TOL = 1e-12


class ManifoldError(ValueError):
    """A boundary/initial residual was requested at a point off its manifold."""


@dataclass(frozen=True)
class NoiseConfig:
    sigma_high: float
    sigma_low: float
    high_fraction: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma_high < 0 or self.sigma_low < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if not 0.0 <= self.high_fraction <= 1.0:
            raise ValueError("high_fraction must be in [0, 1]")

    def n_high(self, n: int) -> int:
        return int(math.floor(self.high_fraction * n + 1e-9))


@dataclass(frozen=True)
class Counts:
    n_obs: int
    n_pde: int
    n_bc: int = 0
    n_ic: int = 0


@dataclass(frozen=True)
class Region:
    """Cartesian product of per-axis interval unions, optionally cut by a predicate."""

    intervals: tuple[tuple[tuple[float, float], ...], ...]
    predicate: Callable[[np.ndarray], np.ndarray] | None = None
    center: tuple[float, ...] | None = None

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        ok = np.ones(len(pts), dtype=bool)
        for axis, ivs in enumerate(self.intervals):
            inside = np.zeros(len(pts), dtype=bool)
            for lo, hi in ivs:
                inside |= (pts[:, axis] >= lo) & (pts[:, axis] <= hi)
            ok &= inside
        if self.predicate is not None:
            ok &= self.predicate(pts)
        return ok


# ---------------------------------------------------------------------------
# field evaluation


class FieldModel(Protocol):
    def fields(self, X: Jet) -> dict[str, Jet]: ...

    def scalars(self) -> dict[str, torch.Tensor]: ...


class FieldDerivs:
    """Pure directional derivatives of every named field, one jet pass per axis."""

    def __init__(self, model: FieldModel, points, plan: dict[int, int]):
        self.points = ad.as_tensor(points)
        self._jets: dict[int, dict[str, Jet]] = {}
        for axis, order in plan.items():
            direction = torch.zeros(self.points.shape[1], dtype=DTYPE)
            direction[axis] = 1.0
            self._jets[axis] = model.fields(Jet.variable(self.points, direction, order))
        if not self._jets:
            self._jets[-1] = model.fields(Jet.constant(self.points))
        self._scalars = model.scalars()

    def value(self, name: str) -> torch.Tensor:
        return next(iter(self._jets.values()))[name].value

    def d(self, name: str, axis: int, k: int = 1) -> torch.Tensor:
        if axis not in self._jets:
            raise ad.UnsupportedOrderError(f"axis {axis} not in derivative plan")
        return self._jets[axis][name].derivative(k)

    def scalar(self, name: str) -> torch.Tensor:
        return self._scalars[name]


class ExactModel:
    def __init__(self, problem: "Problem"):
        self.problem = problem

    def fields(self, X: Jet) -> dict[str, Jet]:
        return self.problem.exact(X)

    def scalars(self) -> dict[str, torch.Tensor]:
        return {k: torch.tensor(v, dtype=DTYPE) for k, v in zip(self.problem.scalar_names, self.problem.scalar_true)}


class NetModel:
    """Adapter exposing a MaskedMlp as named fields for a problem."""

    def __init__(self, net, problem: "Problem", theta: torch.Tensor | None = None):
        self.net = net
        self.problem = problem
        self.theta = theta

    def fields(self, X: Jet) -> dict[str, Jet]:
        out = self.net.forward(X, self.theta)
        named = {name: out.state[:, i] for i, name in enumerate(self.problem.state_names)}
        if self.problem.param_names:
            for i, name in enumerate(self.problem.param_names):
                named[name] = out.param[:, i]
        return named

    def scalars(self) -> dict[str, torch.Tensor]:
        phi = self.net.scalars(self.theta)
        if phi is None:
            return {}
        return {name: phi[i] for i, name in enumerate(self.problem.scalar_names)}


# ---------------------------------------------------------------------------
# problem base


class Problem:
    id: str = ""
    kind: str = ""  # "inverse" | "da"
    coord_names: tuple[str, ...] = ()
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    time_axis: int | None = None
    state_names: tuple[str, ...] = ("u",)
    observed: tuple[int, ...] = (0,)
    param_names: tuple[str, ...] = ()  # field parameters carried by a network head
    scalar_names: tuple[str, ...] = ()
    scalar_true: tuple[float, ...] = ()
    scalar_init: tuple[float, ...] = ()
    residual_names: tuple[str, ...] = ("pde",)
    plan: dict[int, int] = {}
    counts: Counts = Counts(0, 0)
    noise: NoiseConfig = NoiseConfig(0.0, 0.0, 0.0)
    test_shape: tuple[int, ...] = ()
    has_bc: bool = True

    # -- metadata -------------------------------------------------------
    @property
    def input_dim(self) -> int:
        return len(self.coord_names)

    @property
    def spatial_axes(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.input_dim) if i != self.time_axis)

    @property
    def time_dependent(self) -> bool:
        return self.time_axis is not None

    @property
    def param_head(self) -> str:
        if self.param_names:
            return "field"
        if self.scalar_names:
            return "scalars"
        return "none"

    @property
    def obs_region(self) -> Region:
        return Region(tuple(((lo, hi),) for lo, hi in zip(self.lower, self.upper)))

    def __repr__(self) -> str:
        return f"<Problem {self.id}>"

    # -- physics --------------------------------------------------------
    def exact(self, X: Jet) -> dict[str, Jet]:
        raise NotImplementedError

    def forcing(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros((len(pts), len(self.residual_names)))

    def operator(self, F: FieldDerivs) -> list[torch.Tensor]:
        raise NotImplementedError

    def exact_state(self, pts) -> np.ndarray:
        with torch.no_grad():
            f = self.exact(Jet.constant(ad.as_tensor(np.atleast_2d(pts))))
        return np.stack([f[n].value.numpy() for n in self.state_names], axis=1)

    def exact_param(self, pts) -> np.ndarray | None:
        if not self.param_names:
            return None
        with torch.no_grad():
            f = self.exact(Jet.constant(ad.as_tensor(np.atleast_2d(pts))))
        return np.stack([f[n].value.numpy() for n in self.param_names], axis=1)

    # -- residuals ------------------------------------------------------
    def residual(self, model: FieldModel, points, forcing: torch.Tensor | None = None) -> torch.Tensor:
        """PDE residual L(u) - f at each point, shape (n, n_residual_components)."""
        F = FieldDerivs(model, points, self.plan)
        L = torch.stack(self.operator(F), dim=1)
        if forcing is None:
            forcing = torch.from_numpy(self.forcing(np.asarray(F.points)))
        return L - forcing

    def _state_values(self, model: FieldModel, points) -> torch.Tensor:
        f = model.fields(Jet.constant(ad.as_tensor(points)))
        return torch.stack([f[n].value for n in self.state_names], dim=1)

    def on_boundary(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        hit = np.zeros(len(pts), dtype=bool)
        for a in self.spatial_axes:
            hit |= np.isclose(pts[:, a], self.lower[a], atol=ON_MANIFOLD_TOL, rtol=0)
            hit |= np.isclose(pts[:, a], self.upper[a], atol=ON_MANIFOLD_TOL, rtol=0)
        return hit

    def on_initial_slice(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.time_axis is None:
            return np.zeros(len(pts), dtype=bool)
        return np.isclose(pts[:, self.time_axis], self.lower[self.time_axis], atol=ON_MANIFOLD_TOL, rtol=0)

    def bc_target(self, pts) -> np.ndarray:
        return self.exact_state(pts)

    def ic_target(self, pts) -> np.ndarray:
        return self.exact_state(pts)

    def bc_residual(self, model: FieldModel, points, target: torch.Tensor | None = None, check: bool = True) -> torch.Tensor:
        pts = np.asarray(ad.as_tensor(points).detach())
        if check and not self.on_boundary(pts).all():
            raise ManifoldError(f"{self.id}: boundary residual requested off the spatial boundary")
        if target is None:
            target = torch.from_numpy(self.bc_target(pts))
        return self._state_values(model, points) - target

    def ic_residual(self, model: FieldModel, points, target: torch.Tensor | None = None, check: bool = True) -> torch.Tensor:
        pts = np.asarray(ad.as_tensor(points).detach())
        if self.time_axis is None:
            raise ManifoldError(f"{self.id} is stationary and has no initial condition")
        if check and not self.on_initial_slice(pts).all():
            raise ManifoldError(f"{self.id}: initial residual requested off t = {self.lower[self.time_axis]}")
        if target is None:
            target = torch.from_numpy(self.ic_target(pts))
        return self._state_values(model, points) - target

    # -- grids ----------------------------------------------------------
    def test_grid(self) -> tuple[np.ndarray, tuple[int, ...]]:
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.test_shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1), tuple(self.test_shape)


def _cols(X: Jet) -> list[Jet]:
    return [X[:, i] for i in range(X.shape[-1])]


# ---------------------------------------------------------------------------
# parameter inversion


class PInv(Problem):
    id = "pinv"
    kind = "inverse"
    coord_names = ("x", "y")
    lower, upper = (0.0, 0.0), (1.0, 1.0)
    param_names = ("a",)
    plan = {0: 2, 1: 2}
    counts = Counts(2500, 8192, 2048, 0)
    noise = NoiseConfig(1.0, 0.1, 0.6)
    test_shape = (100, 100)

    def exact(self, X):
        x, y = _cols(X)
        u = ad.sin(PI * x) * ad.sin(PI * y)
        a = 1.0 / (1.0 + x * x + y * y + (x - 1.0) * (x - 1.0) + (y - 1.0) * (y - 1.0))
        return {"u": u, "a": a}

    def forcing(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        D = 1 + x**2 + y**2 + (x - 1) ** 2 + (y - 1) ** 2
        u = np.sin(PI * x) * np.sin(PI * y)
        f = (
            2 * PI**2 * u / D
            + (4 * x - 2) / D**2 * PI * np.cos(PI * x) * np.sin(PI * y)
            + (4 * y - 2) / D**2 * PI * np.sin(PI * x) * np.cos(PI * y)
        )
        return f[:, None]

    def operator(self, F):
        a = F.value("a")
        div = a * (F.d("u", 0, 2) + F.d("u", 1, 2)) + F.d("a", 0) * F.d("u", 0) + F.d("a", 1) * F.d("u", 1)
        return [-div]


class HInv(Problem):
    id = "hinv"
    kind = "inverse"
    coord_names = ("x", "y", "t")
    lower, upper = (-1.0, -1.0, 0.0), (1.0, 1.0, 1.0)
    time_axis = 2
    param_names = ("a",)
    plan = {0: 2, 1: 2, 2: 1}
    counts = Counts(2500, 8192, 2048, 2048)
    noise = NoiseConfig(1.0, 0.1, 0.6)
    test_shape = (60, 60, 50)

    def exact(self, X):
        x, y, t = _cols(X)
        s = ad.sin(PI * x) * ad.sin(PI * y)
        return {"u": ad.exp(-t) * s, "a": 2.0 + s}

    def forcing(self, pts):
        x, y, t = pts[:, 0], pts[:, 1], pts[:, 2]
        sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
        e = np.exp(-t)
        u = e * sx * sy
        a = 2 + sx * sy
        f = -u + 2 * PI**2 * a * u - e * PI**2 * (cx**2 * sy**2 + sx**2 * cy**2)
        return f[:, None]

    def operator(self, F):
        a = F.value("a")
        div = a * (F.d("u", 0, 2) + F.d("u", 1, 2)) + F.d("a", 0) * F.d("u", 0) + F.d("a", 1) * F.d("u", 1)
        return [F.d("u", 2) - div]


class EBInv(Problem):
    id = "ebinv"
    kind = "inverse"
    coord_names = ("x", "t")
    lower, upper = (0.0, 0.0), (1.0, 1.0)
    time_axis = 1
    scalar_names = ("alpha2",)
    scalar_true = (1.0,)
    scalar_init = (0.5,)
    plan = {0: 4, 1: 2}
    counts = Counts(10000, 2000, 100, 200)
    noise = NoiseConfig(1.0, 0.1, 0.6)
    test_shape = (200, 200)

    def exact(self, X):
        x, t = _cols(X)
        return {"u": ad.sin(PI * x) * ad.cos(PI**2 * t)}

    def operator(self, F):
        return [F.d("u", 1, 2) + F.scalar("alpha2") * F.d("u", 0, 4)]


class WInv(Problem):
    id = "winv"
    kind = "inverse"
    coord_names = ("x", "t")
    lower, upper = (0.0, 0.0), (1.0, 1.0)
    time_axis = 1
    scalar_names = ("c2",)
    scalar_true = (4.0,)
    scalar_init = (1.0,)
    plan = {0: 2, 1: 2}
    counts = Counts(10000, 2000, 100, 200)
    noise = NoiseConfig(1.0, 0.1, 0.6)
    test_shape = (200, 200)

    def exact(self, X):
        x, t = _cols(X)
        c = 2.0
        return {"u": ad.sin(PI * x) * ad.cos(c * PI * t) + 0.5 * ad.sin(4 * PI * x) * ad.cos(4 * c * PI * t)}

    def operator(self, F):
        return [F.d("u", 1, 2) - F.scalar("c2") * F.d("u", 0, 2)]


# ---------------------------------------------------------------------------
# data assimilation


class PoissonDA(Problem):
    id = "poisson_da"
    kind = "da"
    coord_names = ("x", "y")
    lower, upper = (0.0, 0.0), (1.0, 1.0)
    plan = {0: 2, 1: 2}
    counts = Counts(225, 175, 0, 0)
    noise = NoiseConfig(1.0, 0.01, 0.2)
    test_shape = (200, 200)
    has_bc = False

    @property
    def obs_region(self):
        return Region((((0.125, 0.875),), ((0.125, 0.875),)))

    def exact(self, X):
        x, y = _cols(X)
        return {"u": 30.0 * x * y * (1.0 - x) * (1.0 - y)}

    def forcing(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        return (60.0 * (x * (1 - x) + y * (1 - y)))[:, None]

    def operator(self, F):
        return [-(F.d("u", 0, 2) + F.d("u", 1, 2))]


class HeatDA(Problem):
    id = "heat_da"
    kind = "da"
    coord_names = ("x", "t")
    lower, upper = (0.0, 0.0), (1.0, 0.02)
    time_axis = 1
    plan = {0: 2, 1: 1}
    counts = Counts(400, 320, 80, 0)
    noise = NoiseConfig(math.sqrt(0.5), 0.1, 0.4)
    test_shape = (200, 200)

    @property
    def obs_region(self):
        return Region((((0.2, 0.8),), ((0.0, 0.02),)))

    def exact(self, X):
        x, t = _cols(X)
        return {"u": ad.sin(2 * PI * x) * ad.exp(-4 * PI**2 * t)}

    def operator(self, F):
        return [F.d("u", 1) - F.d("u", 0, 2)]


class WaveDA(Problem):
    id = "wave_da"
    kind = "da"
    coord_names = ("x", "t")
    lower, upper = (0.0, 0.0), (1.0, 1.0)
    time_axis = 1
    plan = {0: 2, 1: 2}
    counts = Counts(1200, 2160, 240, 0)
    noise = NoiseConfig(math.sqrt(0.5), 0.1, 0.2)
    test_shape = (200, 200)

    @property
    def obs_region(self):
        return Region((((0.0, 0.2), (0.8, 1.0)), ((0.0, 1.0),)))

    def exact(self, X):
        x, t = _cols(X)
        return {"u": ad.sin(2 * PI * x) * ad.sin(2 * PI * t)}

    def operator(self, F):
        return [F.d("u", 1, 2) - F.d("u", 0, 2)]


class StokesDA(Problem):
    id = "stokes_da"
    kind = "da"
    coord_names = ("x", "y")
    lower, upper = (0.0, 0.0), (1.0, 1.0)
    state_names = ("u", "v", "p")
    observed = (0, 1)
    residual_names = ("momentum_x", "momentum_y", "divergence")
    plan = {0: 2, 1: 2}
    counts = Counts(320, 1280, 0, 0)
    noise = NoiseConfig(math.sqrt(0.5), 0.1, 0.2)
    test_shape = (200, 200)
    has_bc = False

    @property
    def obs_region(self):
        def in_disc(p):
            return (p[:, 0] - 0.5) ** 2 + (p[:, 1] - 0.5) ** 2 < 0.25**2

        return Region((((0.25, 0.75),), ((0.25, 0.75),)), predicate=in_disc, center=(0.5, 0.5))

    def exact(self, X):
        x, y = _cols(X)
        return {
            "u": 4.0 * x * y**3,
            "v": x**4 - y**4,
            "p": 12.0 * x * x * y - 4.0 * y**3 - 1.0,
        }

    def forcing(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([48 * x * y, 24 * (x**2 - y**2), np.zeros_like(x)], axis=1)

    def operator(self, F):
        lap_u = F.d("u", 0, 2) + F.d("u", 1, 2)
        lap_v = F.d("v", 0, 2) + F.d("v", 1, 2)
        return [lap_u + F.d("p", 0), lap_v + F.d("p", 1), F.d("u", 0) + F.d("v", 1)]


_REGISTRY = {cls.id: cls for cls in (PInv, HInv, EBInv, WInv, PoissonDA, HeatDA, WaveDA, StokesDA)}


def make_problem(problem_id: str) -> Problem:
    try:
        return _REGISTRY[problem_id]()
    except KeyError:
        raise ValueError(f"unknown problem id {problem_id!r}; expected one of {PROBLEM_IDS}") from None


# ---------------------------------------------------------------------------
# grids


def _factorizations(n: int, k: int):
    if k == 1:
        yield (n,)
        return
    for d in range(1, n + 1):
        if n % d == 0:
            for rest in _factorizations(n // d, k - 1):
                yield (d,) + rest


def _shape_cost(shape: Sequence[int], rel: Sequence[float]) -> float:
    n = math.prod(shape)
    scale = (n / math.prod(rel)) ** (1.0 / len(rel))
    return max(abs(math.log(s / (r * scale))) for s, r in zip(shape, rel))


def grid_shape(n: int, rel_lengths: Sequence[float], warnings: list | None = None) -> tuple[int, ...]:
    """Integer grid shape with product ~n and aspect close to ``rel_lengths``.

    Exact factorizations within a factor of two of the ideal aspect are preferred;
    otherwise the nearest count that admits one is used and a warning recorded.
    """
    if n < 1:
        raise ValueError("grid needs at least one point")
    rel = [float(r) for r in rel_lengths]
    limit = math.log(2.0) + 1e-12
    for delta in range(0, n):
        for m in ((n,) if delta == 0 else (n - delta, n + delta)):
            if m < 1:
                continue
            best = min(_factorizations(m, len(rel)), key=lambda s: (_shape_cost(s, rel), s))
            if _shape_cost(best, rel) <= limit or len(rel) == 1:
                if m != n and warnings is not None:
                    warnings.append(f"{n} points do not form a well-shaped grid; using {m} as {best}")
                return best
    raise AssertionError("unreachable")


def _axis_centers(intervals: Sequence[tuple[float, float]], count: int) -> np.ndarray:
    """Cell centres of ``count`` equal cells laid over the concatenated intervals."""
    lengths = np.array([hi - lo for lo, hi in intervals])
    total = lengths.sum()
    s = (np.arange(count) + 0.5) * total / count
    out = np.empty(count)
    starts = np.concatenate([[0.0], np.cumsum(lengths)])
    for i, (lo, _) in enumerate(intervals):
        sel = (s >= starts[i]) & (s < starts[i + 1] if i + 1 < len(intervals) else s <= starts[-1])
        out[sel] = lo + s[sel] - starts[i]
    return out


def cell_centered_grid(intervals: Sequence[Sequence[tuple[float, float]]], shape: Sequence[int]) -> np.ndarray:
    axes = [_axis_centers(ivs, n) for ivs, n in zip(intervals, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def region_grid(problem: Problem, region: Region, n: int, warnings: list) -> np.ndarray:
    full = [hi - lo for lo, hi in zip(problem.lower, problem.upper)]
    rel = [sum(hi - lo for lo, hi in ivs) / f for ivs, f in zip(region.intervals, full)]
    if region.predicate is None:
        shape = grid_shape(n, rel, warnings)
        return cell_centered_grid(region.intervals, shape)
    # non-box region: refine a box grid until enough points fall inside, then trim the outermost
    scale = 1
    while True:
        shape = [max(1, int(round(scale * r))) for r in np.array(rel) / max(rel)]
        pts = cell_centered_grid(region.intervals, shape)
        pts = pts[region.contains(pts)]
        if len(pts) >= n:
            break
        scale += 1
    if len(pts) > n:
        center = np.array(region.center if region.center is not None else pts.mean(axis=0))
        dist = np.linalg.norm(pts - center, axis=1)
        keep = np.sort(np.argsort(dist, kind="stable")[:n])
        warnings.append(f"grid {tuple(shape)} gives {len(pts)} points in the region; trimmed the {len(pts) - n} outermost")
        pts = pts[keep]
    return pts


# ---------------------------------------------------------------------------
# observations


@dataclass
class Dataset:
    points: np.ndarray  # (N, d)
    values: np.ndarray  # (N, n_observed)
    noise_high: np.ndarray  # (N,) bool; evaluation only
    sigma: np.ndarray  # (N,); evaluation only
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.points[idx], self.values[idx], self.noise_high[idx], self.sigma[idx], list(self.warnings))

    def to_csv(self, path, problem: Problem) -> None:
        names = [problem.state_names[i] for i in problem.observed]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(problem.coord_names) + names + ["eval_only_noise_class"])
            for p, v, h in zip(self.points, self.values, self.noise_high):
                w.writerow([repr(float(x)) for x in p] + [repr(float(x)) for x in v] + ["high" if h else "low"])

    @classmethod
    def from_csv(cls, path, problem: Problem) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = problem.input_dim
        k = len(problem.observed)
        if len(header) != d + k + 1 or header[-1] != "eval_only_noise_class":
            raise ValueError(f"unexpected dataset header {header}")
        arr = np.array([[float(x) for x in r[: d + k]] for r in body]).reshape(len(body), d + k)
        high = np.array([r[-1] == "high" for r in body], dtype=bool)
        sigma = np.where(high, problem.noise.sigma_high, problem.noise.sigma_low)
        return cls(arr[:, :d], arr[:, d:], high, sigma)


def sample_observations(problem: Problem, n: int | None = None, noise: NoiseConfig | None = None, seed: int | None = None) -> Dataset:
    """Noisy observations on a cell-centred uniform grid over the observation region."""
    n = problem.counts.n_obs if n is None else n
    noise = problem.noise if noise is None else noise
    seed = noise.seed if seed is None else seed
    warnings: list[str] = []
    pts = region_grid(problem, problem.obs_region, n, warnings)
    n_eff = len(pts)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_eff)
    high = np.zeros(n_eff, dtype=bool)
    high[perm[: noise.n_high(n_eff)]] = True
    sigma = np.where(high, noise.sigma_high, noise.sigma_low)
    clean = problem.exact_state(pts)[:, list(problem.observed)]
    eta = rng.standard_normal(clean.shape) * sigma[:, None]
    return Dataset(pts, clean + eta, high, sigma, warnings)


# ---------------------------------------------------------------------------
# collocation


@dataclass
class CollocationSets:
    pde: np.ndarray
    bc: np.ndarray
    ic: np.ndarray
    warnings: list[str] = field(default_factory=list)


def _box_grid(lower, upper, n, warnings) -> np.ndarray:
    rel = [1.0] * len(lower)
    shape = grid_shape(n, rel, warnings)
    return cell_centered_grid([((lo, hi),) for lo, hi in zip(lower, upper)], shape)


def boundary_points(problem: Problem, n: int, warnings: list) -> np.ndarray:
    """Uniform points on the spatial boundary (times the time interval), split evenly over faces."""
    faces = [(a, side) for a in problem.spatial_axes for side in (0, 1)]
    if n == 0:
        return np.zeros((0, problem.input_dim))
    per_face = [n // len(faces) + (1 if i < n % len(faces) else 0) for i in range(len(faces))]
    if n % len(faces):
        warnings.append(f"{n} boundary points do not split evenly over {len(faces)} faces")
    chunks = []
    for (axis, side), m in zip(faces, per_face):
        if m == 0:
            continue
        others = [i for i in range(problem.input_dim) if i != axis]
        if others:
            sub = _box_grid([problem.lower[i] for i in others], [problem.upper[i] for i in others], m, warnings)
        else:
            sub = np.zeros((1, 0))
        pts = np.empty((len(sub), problem.input_dim))
        pts[:, others] = sub
        pts[:, axis] = problem.upper[axis] if side else problem.lower[axis]
        chunks.append(pts)
    return np.concatenate(chunks)


def initial_points(problem: Problem, n: int, warnings: list) -> np.ndarray:
    if n == 0 or problem.time_axis is None:
        return np.zeros((0, problem.input_dim))
    sp = list(problem.spatial_axes)
    sub = _box_grid([problem.lower[i] for i in sp], [problem.upper[i] for i in sp], n, warnings)
    pts = np.empty((len(sub), problem.input_dim))
    pts[:, sp] = sub
    pts[:, problem.time_axis] = problem.lower[problem.time_axis]
    return pts


def sample_collocation(problem: Problem, counts: Counts | None = None, strategy: str | None = None) -> CollocationSets:
    """Interior points (uniform grid or Sobol), boundary and initial points on uniform grids."""
    counts = problem.counts if counts is None else counts
    if strategy is None:
        strategy = "sobol" if problem.kind == "da" else "uniform_grid"
    if strategy not in ("uniform_grid", "sobol"):
        raise ValueError(f"unknown collocation strategy {strategy!r}")
    warnings: list[str] = []
    lo, hi = np.array(problem.lower), np.array(problem.upper)
    if strategy == "sobol":
        pde = lo + sobol_sequence(problem.input_dim, counts.n_pde) * (hi - lo)
    else:
        pde = _box_grid(problem.lower, problem.upper, counts.n_pde, warnings)
    bc = boundary_points(problem, counts.n_bc, warnings) if problem.has_bc else np.zeros((0, problem.input_dim))
    ic = initial_points(problem, counts.n_ic, warnings)
    return CollocationSets(pde, bc, ic, warnings)


def random_interior(problem: Problem, n: int, seed: int = 0, margin: float = 0.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = np.array(problem.lower), np.array(problem.upper)
    span = hi - lo
    return lo + margin * span + rng.random((n, problem.input_dim)) * span * (1 - 2 * margin)
