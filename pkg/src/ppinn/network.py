"""Masked tanh MLP with a shared backbone, a state head and an optional parameter head.

All trainable numbers live in one flat float64 vector ``theta`` so the
optimizers can work on plain arrays; layer tensors are views into it.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import autodiff as ad
from .autodiff import DTYPE, Jet

CHECKPOINT_FORMAT = "ppinn-checkpoint/1"

PARAM_HEADS = ("none", "field", "scalars")


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden_widths: tuple[int, ...] = (100, 100, 100, 100, 100)
    state_dim: int = 1
    param_head: str = "none"
    param_dim: int = 0
    scalar_init: tuple[float, ...] = ()
    # inputs are mapped affinely from [input_lower, input_upper] to [-1, 1]
    input_lower: tuple[float, ...] | None = None
    input_upper: tuple[float, ...] | None = None
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "scalar_init", tuple(float(s) for s in self.scalar_init))
        for name in ("input_lower", "input_upper"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(float(v) for v in val))
        if self.input_dim < 1 or self.state_dim < 1:
            raise ValueError("input_dim and state_dim must be positive")
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be nonempty")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"all hidden widths must be >= 1, got {self.hidden_widths}")
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")
        if self.param_head not in PARAM_HEADS:
            raise ValueError(f"param_head must be one of {PARAM_HEADS}")
        if self.param_head == "field" and self.param_dim < 1:
            raise ValueError("field parameter head needs param_dim >= 1")
        if self.param_head == "scalars":
            if len(self.scalar_init) != self.param_dim or self.param_dim < 1:
                raise ValueError("scalar parameter head needs param_dim == len(scalar_init) >= 1")
        if self.param_head == "none" and self.param_dim:
            raise ValueError("param_dim must be 0 without a parameter head")
        if (self.input_lower is None) != (self.input_upper is None):
            raise ValueError("input_lower and input_upper go together")
        if self.input_lower is not None and len(self.input_lower) != self.input_dim:
            raise ValueError("input bounds must match input_dim")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        for key in ("hidden_widths", "scalar_init", "input_lower", "input_upper"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _layout(cfg: NetworkConfig) -> dict[str, tuple[slice, tuple[int, ...]]]:
    entries: list[tuple[str, tuple[int, ...]]] = []
    widths = (cfg.input_dim,) + cfg.hidden_widths
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        entries += [(f"W{i}", (fan_out, fan_in)), (f"b{i}", (fan_out,))]
    last = cfg.hidden_widths[-1]
    entries += [("Wu", (cfg.state_dim, last)), ("bu", (cfg.state_dim,))]
    if cfg.param_head == "field":
        entries += [("Wg", (cfg.param_dim, last)), ("bg", (cfg.param_dim,))]
    elif cfg.param_head == "scalars":
        entries += [("phi", (cfg.param_dim,))]
    out, offset = {}, 0
    for name, shape in entries:
        size = int(np.prod(shape))
        out[name] = (slice(offset, offset + size), shape)
        offset += size
    return out


@dataclass
class NetOutput:
    state: Jet
    param: Jet | None
    hidden: list[torch.Tensor] = field(default_factory=list)


class MaskedMlp:
    """Network parameters (theta, phi), per-layer neuron masks, and evaluation."""

    def __init__(self, config: NetworkConfig, theta, masks: Sequence[np.ndarray] | None = None):
        self.config = config
        self.layout = _layout(config)
        self.size = max(s.stop for s, _ in self.layout.values())
        theta = np.array(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.size:
            raise ValueError(f"theta has {theta.size} entries, layout needs {self.size}")
        if not np.isfinite(theta).all():
            raise ValueError("theta has non-finite entries")
        self.theta = torch.from_numpy(theta).requires_grad_(True)
        if masks is None:
            masks = [np.ones(w, dtype=bool) for w in config.hidden_widths]
        self.masks = [np.array(m, dtype=bool).copy() for m in masks]
        if [m.size for m in self.masks] != list(config.hidden_widths):
            raise ValueError("mask sizes must match hidden widths")
        self._rebuild_grad_mask()
        if config.input_lower is not None:
            lo = torch.tensor(config.input_lower, dtype=DTYPE)
            hi = torch.tensor(config.input_upper, dtype=DTYPE)
            self._shift = (hi + lo) / 2
            self._scale = 2.0 / (hi - lo)
        else:
            self._shift = self._scale = None

    # -- construction ---------------------------------------------------
    @classmethod
    def init(cls, config: NetworkConfig, seed: int) -> "MaskedMlp":
        """Glorot-uniform weights, zero biases, scalars at their configured start values."""
        rng = np.random.default_rng(seed)
        layout = _layout(config)
        theta = np.zeros(max(s.stop for s, _ in layout.values()))
        for name, (sl, shape) in layout.items():
            if name.startswith("W"):
                fan_out, fan_in = shape
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                theta[sl] = rng.uniform(-bound, bound, size=shape).reshape(-1)
            elif name == "phi":
                theta[sl] = config.scalar_init
        return cls(config, theta)

    def copy(self) -> "MaskedMlp":
        return MaskedMlp(self.config, self.params(), self.masks)

    # -- views ----------------------------------------------------------
    @property
    def n_hidden(self) -> int:
        return len(self.config.hidden_widths)

    def params(self) -> np.ndarray:
        return self.theta.detach().numpy().copy()

    def param_view(self) -> np.ndarray:
        """Zero-copy numpy view of theta; in-place edits update the network."""
        return self.theta.detach().numpy()

    def set_params(self, values) -> None:
        with torch.no_grad():
            self.theta.copy_(torch.as_tensor(np.asarray(values, dtype=np.float64)))

    def tensor(self, name: str, theta: torch.Tensor | None = None) -> torch.Tensor:
        sl, shape = self.layout[name]
        t = self.theta if theta is None else theta
        return t[sl].view(shape)

    def scalars(self, theta: torch.Tensor | None = None) -> torch.Tensor | None:
        if self.config.param_head != "scalars":
            return None
        return self.tensor("phi", theta)

    def active_count(self, layer: int) -> int:
        return int(self.masks[layer].sum())

    @property
    def grad_mask(self) -> np.ndarray:
        return self._grad_mask

    def _rebuild_grad_mask(self) -> None:
        gm = np.ones(self.size)
        for layer, mask in enumerate(self.masks):
            dead = np.flatnonzero(~mask)
            if dead.size:
                for sl, idx in self._neuron_entries(layer, dead):
                    gm[sl][idx] = 0.0
        self._grad_mask = gm
        self._mask_tensors = [torch.from_numpy(m.astype(np.float64)) for m in self.masks]

    def _neuron_entries(self, layer: int, neurons: np.ndarray):
        """(flat slice, index into reshaped view) pairs touched by pruning ``neurons`` of ``layer``."""
        out = []
        sl, shape = self.layout[f"W{layer}"]
        rows = np.zeros(shape, dtype=bool)
        rows[neurons, :] = True
        out.append((sl, rows.reshape(-1)))
        sl, shape = self.layout[f"b{layer}"]
        bias = np.zeros(shape, dtype=bool)
        bias[neurons] = True
        out.append((sl, bias))
        nxt = [f"W{layer + 1}"] if layer + 1 < self.n_hidden else ["Wu"] + (["Wg"] if "Wg" in self.layout else [])
        for name in nxt:
            sl, shape = self.layout[name]
            cols = np.zeros(shape, dtype=bool)
            cols[:, neurons] = True
            out.append((sl, cols.reshape(-1)))
        return out

    # -- evaluation -----------------------------------------------------
    def forward(self, x, theta: torch.Tensor | None = None, capture: bool = False) -> NetOutput:
        """Evaluate on a jet (or a plain (n, d) array, treated as an order-0 jet)."""
        if not isinstance(x, Jet):
            x = Jet.constant(ad.as_tensor(x))
        if x.shape[-1] != self.config.input_dim:
            raise ValueError(f"input dimension {x.shape[-1]} does not match config.input_dim={self.config.input_dim}")
        h = x
        if self._shift is not None:
            h = (h - self._shift) * self._scale
        hidden = []
        for i in range(self.n_hidden):
            h = ad.tanh(h.linear(self.tensor(f"W{i}", theta), self.tensor(f"b{i}", theta)))
            h = h * self._mask_tensors[i]
            if capture:
                hidden.append(h.value)
        state = h.linear(self.tensor("Wu", theta), self.tensor("bu", theta))
        param = None
        if self.config.param_head == "field":
            param = h.linear(self.tensor("Wg", theta), self.tensor("bg", theta))
        return NetOutput(state, param, hidden)

    def __call__(self, points) -> tuple[torch.Tensor, torch.Tensor | None]:
        out = self.forward(points)
        return out.state.value, None if out.param is None else out.param.value

    def predict(self, points) -> tuple[np.ndarray, np.ndarray | None]:
        with torch.no_grad():
            u, g = self(points)
        return u.numpy().copy(), None if g is None else g.numpy().copy()

    def capture_layers(self, points, layers: Sequence[int]) -> dict[int, np.ndarray]:
        """Post-activation matrices (rows = points) for several hidden layers in one pass."""
        for layer in layers:
            if not 0 <= layer < self.n_hidden:
                raise IndexError(f"hidden layer index {layer} out of range [0, {self.n_hidden})")
        with torch.no_grad():
            out = self.forward(points, capture=True)
        return {layer: out.hidden[layer].numpy().copy() for layer in layers}

    def capture_activations(self, points, layer: int) -> np.ndarray:
        return self.capture_layers(points, [layer])[layer]

    # -- pruning --------------------------------------------------------
    def apply_prune(self, layer: int, neurons) -> None:
        """Zero the incoming row, bias and outgoing column of each neuron; mark it inactive."""
        if not 0 <= layer < self.n_hidden:
            raise IndexError(f"hidden layer index {layer} out of range")
        neurons = np.unique(np.asarray(neurons, dtype=int))
        if neurons.size == 0:
            return
        if neurons.min() < 0 or neurons.max() >= self.masks[layer].size:
            raise IndexError("neuron index out of range")
        already = neurons[~self.masks[layer][neurons]]
        if already.size:
            raise ad.ContractError(f"neurons {already.tolist()} in layer {layer} are already pruned")
        view = self.param_view()
        for sl, idx in self._neuron_entries(layer, neurons):
            view[sl][idx] = 0.0
        self.masks[layer][neurons] = False
        self._rebuild_grad_mask()

    def enforce_masks(self) -> None:
        """Re-zero every pruned entry (idempotent)."""
        view = self.param_view()
        view *= self._grad_mask

    # -- persistence ----------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        theta = self.params()
        masks = np.stack([np.pad(m, (0, max(self.config.hidden_widths) - m.size)) for m in self.masks])
        meta = {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.to_dict(),
            "theta_sha256": hashlib.sha256(theta.tobytes()).hexdigest(),
            "masks_sha256": hashlib.sha256(masks.tobytes()).hexdigest(),
        }
        buf = io.BytesIO()
        np.savez(buf, theta=theta, masks=masks, meta=np.array(json.dumps(meta)))
        path.write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "MaskedMlp":
        path = Path(path)
        try:
            with np.load(path, allow_pickle=False) as z:
                theta = z["theta"]
                masks = z["masks"]
                meta = json.loads(str(z["meta"]))
        except (zipfile.BadZipFile, OSError, ValueError, KeyError, EOFError) as err:
            raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"checkpoint format {meta.get('format')!r} != {CHECKPOINT_FORMAT!r}")
        if hashlib.sha256(theta.tobytes()).hexdigest() != meta["theta_sha256"]:
            raise CheckpointError("theta checksum mismatch")
        if hashlib.sha256(masks.tobytes()).hexdigest() != meta["masks_sha256"]:
            raise CheckpointError("mask checksum mismatch")
        config = NetworkConfig.from_dict(meta["config"])
        return cls(config, theta, [masks[i, :w] for i, w in enumerate(config.hidden_widths)])
