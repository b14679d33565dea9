"""Full-batch Adam and L-BFGS (strong Wolfe) on flat float64 parameter vectors with mask projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import NonFiniteError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


def _project(g: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return g if mask is None else g * mask


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, size: int, config: AdamConfig | None = None):
        self.config = config or AdamConfig()
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, mask: np.ndarray | None = None) -> None:
        """In-place update of ``params``; entries with mask 0 are never moved."""
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"non-finite gradient at Adam step {self.t + 1}")
        c = self.config
        g = _project(grad, mask)
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        mhat = self.m / (1 - c.beta1**self.t)
        vhat = self.v / (1 - c.beta2**self.t)
        update = c.lr * mhat / (np.sqrt(vhat) + c.eps)
        params -= _project(update, mask)


# ---------------------------------------------------------------------------


@dataclass
class LbfgsConfig:
    history: int = 50
    gtol: float = 1e-8
    max_iters: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 25


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    reason: str
    iters: int
    n_evals: int
    history: list[float] = field(default_factory=list)


class _LineSearch:
    """Strong-Wolfe search along ``d`` (bracketing then zoom with safeguarded cubic steps)."""

    def __init__(self, fun: Objective, x: np.ndarray, d: np.ndarray, f0: float, g0: np.ndarray, cfg: LbfgsConfig, mask):
        self.fun, self.x, self.d, self.cfg, self.mask = fun, x, d, cfg, mask
        self.f0, self.dphi0 = f0, float(g0 @ d)
        self.evals = 0
        self.cache: dict[float, tuple[float, float, np.ndarray]] = {}

    def phi(self, a: float):
        if a not in self.cache:
            self.evals += 1
            f, g = self.fun(self.x + a * self.d)
            g = _project(np.asarray(g, dtype=np.float64), self.mask)
            self.cache[a] = (float(f), float(g @ self.d), g)
        return self.cache[a]

    def _armijo_fails(self, a, f):
        return not math.isfinite(f) or f > self.f0 + self.cfg.c1 * a * self.dphi0

    def _curvature_ok(self, dphi):
        return math.isfinite(dphi) and abs(dphi) <= -self.cfg.c2 * self.dphi0

    def run(self, a1: float) -> float | None:
        a_prev, f_prev, d_prev = 0.0, self.f0, self.dphi0
        a = a1
        first = True
        while self.evals < self.cfg.max_ls_evals:
            f, dphi, _ = self.phi(a)
            if self._armijo_fails(a, f) or (not first and f >= f_prev):
                return self._zoom(a_prev, f_prev, d_prev, a, f, dphi)
            if self._curvature_ok(dphi):
                return a
            if dphi >= 0:
                return self._zoom(a, f, dphi, a_prev, f_prev, d_prev)
            a_prev, f_prev, d_prev = a, f, dphi
            a = 2.0 * a
            first = False
        return self._fallback()

    def _zoom(self, lo, f_lo, d_lo, hi, f_hi, d_hi) -> float | None:
        while self.evals < self.cfg.max_ls_evals:
            a = _cubic_step(lo, f_lo, d_lo, hi, f_hi, d_hi)
            f, dphi, _ = self.phi(a)
            if self._armijo_fails(a, f) or f >= f_lo:
                hi, f_hi, d_hi = a, f, dphi
            else:
                if self._curvature_ok(dphi):
                    return a
                if dphi * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, dphi
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return self._fallback()

    def _fallback(self) -> float | None:
        # accept the best sufficient-decrease point seen, if any
        ok = [(v[0], a) for a, v in self.cache.items() if not self._armijo_fails(a, v[0]) and a > 0]
        return min(ok)[1] if ok else None


def _cubic_step(lo, f_lo, d_lo, hi, f_hi, d_hi) -> float:
    width = hi - lo
    left, right = min(lo, hi) + 0.1 * abs(width), max(lo, hi) - 0.1 * abs(width)
    if all(math.isfinite(v) for v in (f_hi, d_hi)):
        d1 = d_lo + d_hi - 3 * (f_lo - f_hi) / (lo - hi)
        rad = d1 * d1 - d_lo * d_hi
        if rad >= 0:
            d2 = math.copysign(math.sqrt(rad), hi - lo)
            denom = d_hi - d_lo + 2 * d2
            if denom != 0:
                a = hi - (hi - lo) * (d_hi + d2 - d1) / denom
                if left <= a <= right:
                    return a
    return 0.5 * (lo + hi)


def lbfgs_minimize(
    fun: Objective,
    x0: np.ndarray,
    config: LbfgsConfig | None = None,
    mask: np.ndarray | None = None,
    callback: Callable[[int, float, float], None] | None = None,
) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Terminates on max-abs gradient below ``gtol``, ``max_iters``, or a failed line search.
    """
    cfg = config or LbfgsConfig()
    x = np.array(x0, dtype=np.float64)
    if mask is not None:
        x = x * mask
    f, g = fun(x)
    g = _project(np.asarray(g, dtype=np.float64), mask)
    n_evals = 1
    if not (math.isfinite(f) and np.isfinite(g).all()):
        raise NonFiniteError("objective is not finite at the starting point")
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    hist = [float(f)]
    reason, it = "max_iters", 0
    for it in range(1, cfg.max_iters + 1):
        if np.max(np.abs(g), initial=0.0) < cfg.gtol:
            reason, it = "gtol", it - 1
            break
        d = -_two_loop(g, S, Y)
        d = _project(d, mask)
        if g @ d >= 0:  # lost descent; restart from steepest descent
            S.clear()
            Y.clear()
            d = -g
        a1 = min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300)) if not S else 1.0
        ls = _LineSearch(fun, x, d, f, g, cfg, mask)
        a = ls.run(a1)
        n_evals += ls.evals
        if a is None:
            reason = "line_search_failed"
            it -= 1
            break
        f_new, _, g_new = ls.cache[a]
        s = a * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y):
            S.append(s)
            Y.append(y)
            if len(S) > cfg.history:
                S.pop(0)
                Y.pop(0)
        x = x + s
        f, g = f_new, g_new
        hist.append(float(f))
        if callback is not None:
            callback(it, float(f), float(np.linalg.norm(g)))
    else:
        it = cfg.max_iters
        if np.max(np.abs(g), initial=0.0) < cfg.gtol:
            reason = "gtol"
    return LbfgsResult(x, float(f), reason, it, n_evals, hist)


def _two_loop(g: np.ndarray, S: list[np.ndarray], Y: list[np.ndarray]) -> np.ndarray:
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(S, Y)]
    for s, y, rho in reversed(list(zip(S, Y, rhos))):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if S:
        q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
    for (s, y, rho), a in zip(zip(S, Y, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q
