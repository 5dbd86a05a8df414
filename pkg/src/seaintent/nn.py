"""MLP blocks, Adam, the step learning-rate schedule and checkpoint files."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidArgument

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "weights.bin"


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths, input first. ReLU between layers, linear output."""

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 2 or any(int(w) < 1 for w in self.widths):
            raise InvalidArgument(f"MLP needs >= 2 positive widths, got {self.widths}")


class Mlp:
    def __init__(self, spec: MlpSpec | Sequence[int], name: str, rng: np.random.Generator | None = None,
                 zero: bool = False):
        self.spec = spec if isinstance(spec, MlpSpec) else MlpSpec(tuple(spec))
        self.name = name
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for i, (fan_in, fan_out) in enumerate(zip(self.spec.widths[:-1], self.spec.widths[1:])):
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True, name=f"{name}.{i}.weight"))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.{i}.bias"))

    @property
    def in_width(self) -> int:
        return self.spec.widths[0]

    @property
    def out_width(self) -> int:
        return self.spec.widths[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x: Tensor) -> Tensor:
        """Apply row-wise over the last axis of ``x``."""
        x = ag.as_tensor(x)
        if x.shape[-1] != self.in_width:
            raise InvalidArgument(f"{self.name}: expected last axis {self.in_width}, got shape {x.shape}")
        lead = x.shape[:-1]
        h = x.reshape(-1, self.in_width) if x.ndim != 2 else x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ag.add(ag.matmul(h, w), b)
            if i < last:
                h = ag.relu(h)
        return h.reshape(*lead, self.out_width) if x.ndim != 2 else h


def lr_schedule(epoch: int, base_lr: float = 1e-4, milestones: Iterable[int] = (160, 300),
                gamma: float = 0.5) -> float:
    """Multi-step decay: ``base_lr`` times ``gamma`` per milestone reached."""
    if epoch < 0:
        raise InvalidArgument("epoch must be >= 0")
    return base_lr * gamma ** sum(1 for m in milestones if epoch >= m)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray | None] | None = None) -> None:
    """One in-place Adam update with bias correction.

    ``grads`` defaults to each parameter's accumulated ``.grad``; parameters
    with no gradient are left untouched.
    """
    if grads is None:
        grads = [p.grad for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.shape:
            raise InvalidArgument(f"{p.name}: grad shape {g.shape} != param shape {p.shape}")
        key = p.name or str(id(p))
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``manifest.json`` + little-endian float32 ``weights.bin`` into ``path``.

    Arrays are stored in sorted-name order so identical inputs give identical
    bytes.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / BLOB_NAME, "wb") as fh:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    manifest = {"format": "seaintent-checkpoint/1", "blob": BLOB_NAME, "dtype": "float32-le",
                "params": entries, "meta": meta or {}}
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads((path / MANIFEST_NAME).read_text())
    blob = (path / manifest.get("blob", BLOB_NAME)).read_bytes()
    arrays = {}
    for e in manifest["params"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return arrays, manifest.get("meta", {})
