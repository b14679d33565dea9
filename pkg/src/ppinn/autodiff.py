"""Input derivatives by truncated Taylor (jet) propagation, parameter gradients by reverse mode.

A :class:`Jet` carries the normalized Taylor coefficients ``c[k] = f^(k)(0) / k!``
of a function restricted to a line ``x(s) = x0 + s * d``.  All coefficient
arithmetic is ordinary torch arithmetic, so the reverse tape that torch records
while a jet is pushed through a network also covers the input derivatives:
``grad_params`` of a loss built from a fourth-order input derivative is valid
without nesting reverse passes.

Mixed partials are recovered from pure directional derivatives along the
lattice directions ``beta`` with ``|beta| = k`` (polarization / interpolation).
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

DTYPE = torch.float64
MAX_ORDER = 4


class UnsupportedOrderError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when a NaN/Inf shows up in a loss or its gradient."""

    def __init__(self, message: str, node: str | None = None):
        super().__init__(message if node is None else f"{message} (first offending node: {node})")
        self.node = node


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


class Jet:
    """Truncated Taylor expansion along one input direction.

    ``coeffs`` has shape ``(order + 1, *batch)``.  Plain values are order-0 jets.
    """

    __slots__ = ("coeffs",)
    __array_priority__ = 100  # make numpy defer to our reflected operators

    def __init__(self, coeffs: torch.Tensor):
        self.coeffs = coeffs

    # -- construction ---------------------------------------------------
    @classmethod
    def constant(cls, value, order: int = 0) -> "Jet":
        value = as_tensor(value)
        c = torch.zeros((order + 1,) + tuple(value.shape), dtype=DTYPE)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, points, direction, order: int) -> "Jet":
        """Seed ``x(s) = points + s * direction`` for points of shape (n, d)."""
        points = as_tensor(points)
        direction = as_tensor(direction)
        c = torch.zeros((order + 1,) + tuple(points.shape), dtype=DTYPE)
        c[0] = points
        if order >= 1:
            c[1] = direction.expand_as(points)
        return cls(c)

    # -- accessors ------------------------------------------------------
    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def value(self) -> torch.Tensor:
        return self.coeffs[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.coeffs.shape[1:])

    def derivative(self, k: int) -> torch.Tensor:
        """k-th derivative along the seeding direction."""
        if k > self.order:
            raise UnsupportedOrderError(f"jet of order {self.order} has no derivative of order {k}")
        return math.factorial(k) * self.coeffs[k]

    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.coeffs[(slice(None),) + idx])

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, shape={self.shape})"

    # -- arithmetic -----------------------------------------------------
    def _coerce(self, other) -> "Jet | torch.Tensor | float":
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ContractError(f"jet orders differ: {self.order} vs {other.order}")
            return other
        if isinstance(other, (int, float)):
            return float(other)
        return as_tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        if isinstance(other, Jet):
            return Jet(self.coeffs + other.coeffs)
        head = self.coeffs[0] + other
        return Jet(torch.cat([head.unsqueeze(0), self.coeffs[1:].expand((self.order,) + head.shape)]))

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if isinstance(other, Jet):
            return Jet(_cauchy(self.coeffs, other.coeffs))
        return Jet(self.coeffs * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if isinstance(other, Jet):
            return self * reciprocal(other)
        return Jet(self.coeffs / other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ContractError("only non-negative integer powers are supported")
        out = Jet.constant(torch.ones(self.shape, dtype=DTYPE), self.order)
        base = self
        while n:
            if n & 1:
                out = out * base
            n >>= 1
            if n:
                base = base * base
        return out

    def linear(self, weight: torch.Tensor, bias: torch.Tensor | None = None) -> "Jet":
        """Affine map on the trailing axis: ``x @ weight.T + bias``."""
        out = self.coeffs @ weight.T
        if bias is None:
            return Jet(out)
        return Jet(torch.cat([(out[0] + bias).unsqueeze(0), out[1:]]))


def _cauchy(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    K = a.shape[0] - 1
    terms = []
    for k in range(K + 1):
        acc = a[0] * b[k]
        for j in range(1, k + 1):
            acc = acc + a[j] * b[k - j]
        terms.append(acc)
    return torch.stack(terms)


def _lift(x) -> Jet:
    return x if isinstance(x, Jet) else Jet.constant(x)


def tanh(x) -> Jet:
    # y' = (1 - y^2) x'
    x = _lift(x)
    c = x.coeffs
    y = [torch.tanh(c[0])]
    z = [1.0 - y[0] * y[0]]
    for k in range(1, x.order + 1):
        acc = c[1] * z[k - 1]
        for j in range(2, k + 1):
            acc = acc + j * c[j] * z[k - j]
        y.append(acc / k)
        if k < x.order:
            zk = y[0] * y[k]
            for i in range(1, k + 1):
                zk = zk + y[i] * y[k - i]
            z.append(-zk if k > 0 else 1.0 - zk)
    return Jet(torch.stack(y))


def exp(x) -> Jet:
    x = _lift(x)
    c = x.coeffs
    y = [torch.exp(c[0])]
    for k in range(1, x.order + 1):
        acc = c[1] * y[k - 1]
        for j in range(2, k + 1):
            acc = acc + j * c[j] * y[k - j]
        y.append(acc / k)
    return Jet(torch.stack(y))


def sincos(x) -> tuple[Jet, Jet]:
    x = _lift(x)
    c = x.coeffs
    s = [torch.sin(c[0])]
    co = [torch.cos(c[0])]
    for k in range(1, x.order + 1):
        acc_s = c[1] * co[k - 1]
        acc_c = c[1] * s[k - 1]
        for j in range(2, k + 1):
            acc_s = acc_s + j * c[j] * co[k - j]
            acc_c = acc_c + j * c[j] * s[k - j]
        s.append(acc_s / k)
        co.append(-acc_c / k)
    return Jet(torch.stack(s)), Jet(torch.stack(co))


def sin(x) -> Jet:
    return sincos(x)[0]


def cos(x) -> Jet:
    return sincos(x)[1]


def reciprocal(x) -> Jet:
    x = _lift(x)
    a = x.coeffs
    b0 = 1.0 / a[0]
    b = [b0]
    for k in range(1, x.order + 1):
        acc = a[1] * b[k - 1]
        for j in range(2, k + 1):
            acc = acc + a[j] * b[k - j]
        b.append(-b0 * acc)
    return Jet(torch.stack(b))


# ---------------------------------------------------------------------------
# input derivatives


def _multi_indices(dim: int, order: int) -> list[tuple[int, ...]]:
    return [m for m in itertools.product(range(order + 1), repeat=dim) if sum(m) == order]


@lru_cache(maxsize=None)
def mixed_partial_stencil(multi_index: tuple[int, ...]) -> tuple[tuple[tuple[int, ...], float], ...]:
    """Directions ``beta`` and weights ``w`` with ``d^alpha f = sum w * D_beta^k f``.

    ``D_beta^k f = sum_{|alpha|=k} k!/alpha! * beta^alpha * d^alpha f``; inverting
    that map over all lattice directions ``|beta| = k`` gives the stencil.
    """
    k = sum(multi_index)
    dim = len(multi_index)
    nonzero = sum(1 for m in multi_index if m)
    if nonzero <= 1:
        axis = next((i for i, m in enumerate(multi_index) if m), 0)
        direction = tuple(int(i == axis) for i in range(dim))
        return ((direction, 1.0),)
    alphas = _multi_indices(dim, k)
    betas = alphas
    M = np.empty((len(betas), len(alphas)))
    for r, beta in enumerate(betas):
        for col, alpha in enumerate(alphas):
            coef = math.factorial(k) / math.prod(math.factorial(a) for a in alpha)
            M[r, col] = coef * math.prod(b**a for b, a in zip(beta, alpha))
    inv = np.linalg.inv(M)
    row = inv[alphas.index(tuple(multi_index))]
    return tuple((beta, float(w)) for beta, w in zip(betas, row) if abs(w) > 1e-14)


def input_derivative(fn: Callable[[Jet], Jet], points, multi_index: Sequence[int]) -> torch.Tensor:
    """Mixed partial ``d^alpha fn`` at each row of ``points`` (shape (n, d)).

    ``fn`` maps an input jet with coefficients of shape (K+1, n, d) to an output
    jet.  The result stays on the reverse tape of whatever parameters ``fn`` uses.
    """
    points = as_tensor(points)
    if points.ndim == 1:
        points = points.unsqueeze(0)
    multi_index = tuple(int(m) for m in multi_index)
    if len(multi_index) != points.shape[-1]:
        raise ContractError(f"multi-index {multi_index} does not match input dimension {points.shape[-1]}")
    if any(m < 0 for m in multi_index):
        raise ContractError("multi-index entries must be non-negative")
    k = sum(multi_index)
    if k > MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {k} exceeds the supported maximum {MAX_ORDER}")
    if k == 0:
        return fn(Jet.constant(points)).value
    out = None
    for beta, w in mixed_partial_stencil(multi_index):
        term = fn(Jet.variable(points, torch.tensor(beta, dtype=DTYPE), k)).derivative(k)
        out = w * term if out is None else out + w * term
    return out


# ---------------------------------------------------------------------------
# parameter gradients


def grad_params(loss: torch.Tensor, params: Iterable[torch.Tensor], create_graph: bool = False) -> list[torch.Tensor]:
    """Gradient of a scalar loss w.r.t. each parameter tensor; unused params get exact zeros."""
    params = list(params)
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractError("grad_params needs a scalar loss node")
    if not torch.isfinite(loss).all():
        raise NonFiniteError("loss is not finite", node=_node_name(loss))
    needs = [p for p in params if p.requires_grad]
    if not needs or loss.grad_fn is None:
        return [torch.zeros_like(p) for p in params]
    grads = torch.autograd.grad(loss, needs, allow_unused=True, retain_graph=True, create_graph=create_graph)
    lookup = {id(p): g for p, g in zip(needs, grads)}
    out = []
    for p in params:
        g = lookup.get(id(p))
        out.append(torch.zeros_like(p) if g is None else g)
    if not all(torch.isfinite(g).all() for g in out):
        raise NonFiniteError("gradient is not finite", node=_backward_offender(loss, needs))
    return out


def _node_name(t: torch.Tensor) -> str | None:
    return None if t.grad_fn is None else type(t.grad_fn).__name__


def _backward_offender(loss: torch.Tensor, params: list[torch.Tensor]) -> str | None:
    # replay the backward pass with a hook on every node; the first to emit NaN/Inf is named
    found: list[str] = []
    handles = []
    seen = set()
    stack = [loss.grad_fn]
    while stack:
        node = stack.pop()
        if node is None or node in seen:
            continue
        seen.add(node)

        def hook(grad_inputs, grad_outputs, node=node):
            if not found and any(g is not None and not torch.isfinite(g).all() for g in grad_inputs):
                found.append(node.name())

        handles.append(node.register_hook(hook))
        stack.extend(n for n, _ in node.next_functions)
    try:
        torch.autograd.grad(loss, params, allow_unused=True, retain_graph=True)
    finally:
        for h in handles:
            h.remove()
    return found[0] if found else None


# ---------------------------------------------------------------------------
# finite-difference oracle

_CENTRAL = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


def central_difference(f: Callable[[np.ndarray], float], point, multi_index: Sequence[int], step: float) -> float:
    """Tensor-product second-order central difference for ``d^alpha f``."""
    point = np.asarray(point, dtype=np.float64)
    axes = [_CENTRAL[m].items() for m in multi_index]
    total = 0.0
    for combo in itertools.product(*axes):
        offset = np.array([s for s, _ in combo], dtype=np.float64) * step
        weight = math.prod(w for _, w in combo)
        total += weight * f(point + offset)
    return total / step ** sum(multi_index)


def fd_check(f: Callable[[Jet], Jet], point, multi_index: Sequence[int], step: float = 1e-3) -> float:
    """``|autodiff - central difference| / max(1, |autodiff|)`` for a jet-aware scalar ``f``."""
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    with torch.no_grad():
        ad = float(input_derivative(f, point[None, :], multi_index).reshape(-1)[0])

        def plain(x: np.ndarray) -> float:
            return float(f(Jet.constant(torch.as_tensor(x[None, :]))).value.reshape(-1)[0])

        fd = central_difference(plain, point, multi_index, step)
    return abs(ad - fd) / max(1.0, abs(ad))
