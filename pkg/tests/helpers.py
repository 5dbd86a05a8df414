"""Shared test utilities: finite-difference gradient oracle, tiny models, scenario canonicalisation."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from seaintent import autograd as ag
from seaintent.scenario_io import INDEX_NAME

FD_STEP = 1e-3


class _ReluRecorder:
    """Patches ``ag.relu`` to record which pre-activations are positive."""

    def __init__(self):
        self.pattern: list[bytes] = []

    def __enter__(self):
        self._orig = ag.relu

        def recording(x):
            self.pattern.append(np.packbits(np.asarray(x.data) > 0).tobytes())
            return self._orig(x)

        ag.relu = recording
        return self

    def __exit__(self, *exc):
        ag.relu = self._orig


def _evaluate(loss_fn) -> tuple[float, tuple[bytes, ...]]:
    with _ReluRecorder() as rec:
        value = loss_fn().data.item()
    return value, tuple(rec.pattern)


def numeric_grad(loss_fn, tensor: ag.Tensor, idx: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. selected flat entries of ``tensor``.

    The divisor is the perturbation that float32 actually realised, not 2h.
    Entries whose perturbation flips a ReLU come back as NaN: the function
    is not differentiable across that interval.
    """
    flat = tensor.data.reshape(-1)
    out = np.empty(len(idx), dtype=np.float64)
    with ag.no_grad():
        for n, i in enumerate(idx):
            orig = flat[i]
            up_val, dn_val = np.float32(orig + h), np.float32(orig - h)
            flat[i] = up_val
            up, up_kinks = _evaluate(loss_fn)
            flat[i] = dn_val
            dn, dn_kinks = _evaluate(loss_fn)
            flat[i] = orig
            out[n] = (up - dn) / (float(up_val) - float(dn_val)) if up_kinks == dn_kinks else np.nan
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error over finite entries, guarded for all-zero gradients."""
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-6)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(loss_fn, params, rng: np.random.Generator, max_entries: int = 40,
                    min_checked: float = 0.5, h: float = FD_STEP) -> dict[str, float]:
    """Relative error between analytic and numeric gradients per parameter tensor.

    Entries straddling a ReLU kink are skipped; at least ``min_checked`` of
    the sampled entries must remain. Piecewise-linear losses have no
    truncation error away from kinks, so they tolerate a larger step ``h``.
    """
    for p in params:
        p.zero_grad()
    ag.backward(loss_fn())
    errors = {}
    for p in params:
        size = p.data.size
        idx = np.arange(size) if size <= max_entries else rng.choice(size, max_entries, replace=False)
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)[idx].astype(np.float64)
        numeric = numeric_grad(loss_fn, p, idx, h)
        assert np.isfinite(numeric).mean() >= min_checked, f"{p.name}: too many entries at ReLU kinks"
        errors[p.name or str(p.shape)] = rel_error(analytic, numeric)
    return errors


def projection_loss(out: ag.Tensor, weights: np.ndarray) -> ag.Tensor:
    """Scalar sum(out * w) with O(1) magnitude, keeping float32 rounding small."""
    return ag.sum_(out * weights)


def tiny_model(seed: int = 0, m_protos: int = 5, L_d: int = 2, d: int = 4):
    """A stage-1-ready model with random prototypes, small enough for finite differences."""
    from seaintent.model import IntentionModel, ModelConfig
    from seaintent.prototypes import Normalizer, PrototypeSet

    cfg = ModelConfig(d=d, C=m_protos, L_d=L_d, hidden=(8,), cross_hidden=(8,), attn_width=6, seed=seed)
    norm = Normalizer((122.15, 30.15), (0.15, 0.15), motion_scale=0.1)
    model = IntentionModel(cfg, norm)
    rng = np.random.default_rng(seed + 100)
    start = rng.uniform(-0.8, 0.8, (m_protos, 1, 2))
    protos = start + np.cumsum(rng.normal(0, 0.01, (m_protos, cfg.L, 2)), axis=1)
    centroids = rng.normal(size=(m_protos, d + 2))
    model.protoset = PrototypeSet(protos.astype(np.float32), centroids.astype(np.float32))
    model.stage = 1
    return model


def random_scenario(rng: np.random.Generator, m: int, L: int = 18) -> np.ndarray:
    """(m, L, 2) degree tracks inside the tiny model's region."""
    start = np.array([122.15, 30.15]) + rng.uniform(-0.1, 0.1, (m, 1, 2))
    steps = rng.normal(0, 0.002, (m, 1, 2)) + rng.normal(0, 0.0003, (m, L, 2))
    return start + np.cumsum(steps, axis=1)


def canonical(obj):
    """Round floats to 8 decimals so spline solvers agree bit-for-bit."""
    if isinstance(obj, float):
        return round(obj, 8) + 0.0
    if isinstance(obj, list):
        return [canonical(v) for v in obj]
    if isinstance(obj, dict):
        return {k: canonical(v) for k, v in sorted(obj.items()) if k != "config"}
    return obj


def package_documents(out_dir: Path) -> list[dict]:
    index = json.loads((Path(out_dir) / INDEX_NAME).read_text())
    docs = []
    for entry in index["scenarios"]:
        doc = json.loads((Path(out_dir) / entry["path"]).read_text())
        doc["mask"] = entry["mask"]
        docs.append(doc)
    return docs


# acceptance verdict lines, echoed in the terminal summary by conftest.py
RESULTS: list[str] = []
