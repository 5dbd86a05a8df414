"""One JSON run configuration merging every module's settings.

Schema (all sections optional; missing keys take the defaults below)::

    {
      "seed": 0,
      "pipeline": {"gap_threshold_s", "min_points", "resample_dt_s", "region", "window_s", "L_o", "L_p"},
      "synth":    {"n_scenarios", "turn_angles", "noise_deg", "encounter_fraction", ...},
      "model":    {"d", "C", "L_d", "hidden", "cross_hidden", "attn_width", "latent_width"},
      "train":    {"epochs", "lr", "milestones", "gamma", "lambda1", "lambda2", "lambda3", "alpha",
                   "ae_epochs", "ae_lr", "ae_batch", "reg_reduction"},
      "sampler":  {"k", "n", "epsilon"}
    }

Command-line flags mirror the leaf keys and override the file.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, fields
from pathlib import Path

from .errors import InvalidArgument
from .model import ModelConfig
from .preprocess import PipelineConfig
from .synthetic import SynthConfig
from .training import LossWeights, TrainConfig
from .transient import SamplerConfig

_WEIGHT_KEYS = ("lambda1", "lambda2", "lambda3", "alpha")


def _train_defaults() -> dict:
    d = asdict(TrainConfig())
    d.pop("weights")
    d.pop("seed")
    d.pop("epsilon")
    d.update(asdict(LossWeights()))
    return d


def defaults() -> dict:
    model = asdict(ModelConfig())
    for key in ("seed", "L_o", "L_p"):
        model.pop(key)
    synth = asdict(SynthConfig())
    for key in ("seed", "L_o", "L_p"):
        synth.pop(key)
    pipeline = asdict(PipelineConfig())
    sampler = {"k": 10, "n": 50, "epsilon": 1.3}
    return {"seed": 0, "pipeline": pipeline, "synth": synth, "model": model,
            "train": _train_defaults(), "sampler": sampler}


SECTIONS = tuple(k for k in defaults() if k != "seed")


def merge(base: dict, override: dict, where: str = "") -> dict:
    """Recursive merge that rejects keys unknown to ``base``."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise InvalidArgument(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load(path: str | os.PathLike | None = None) -> dict:
    cfg = defaults()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InvalidArgument(f"config {path}: top level must be an object")
    return merge(cfg, doc)


def section_of(cfg: dict, key: str) -> str | None:
    for sec in SECTIONS:
        if key in cfg[sec]:
            return sec
    return None


def _tuple_fields(cls) -> set[str]:
    return {f.name for f in fields(cls) if "tuple" in str(f.type)}


def pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(**cfg["pipeline"])


def synth_config(cfg: dict) -> SynthConfig:
    p = cfg["pipeline"]
    kw = {k: tuple(v) if k in _tuple_fields(SynthConfig) and v is not None else v for k, v in cfg["synth"].items()}
    return SynthConfig(**kw, L_o=p["L_o"], L_p=p["L_p"], seed=cfg["seed"])


def model_config(cfg: dict) -> ModelConfig:
    p = cfg["pipeline"]
    return ModelConfig(**cfg["model"], L_o=p["L_o"], L_p=p["L_p"], seed=cfg["seed"])


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    weights = LossWeights(**{k: t.pop(k) for k in _WEIGHT_KEYS})
    return TrainConfig(**t, weights=weights, epsilon=cfg["sampler"]["epsilon"], seed=cfg["seed"])


def sampler_config(cfg: dict) -> SamplerConfig:
    s = cfg["sampler"]
    return SamplerConfig(epsilon=s["epsilon"], n=s["n"], k=s["k"], L_d=cfg["model"]["L_d"], seed=cfg["seed"])


def validate(cfg: dict) -> None:
    """Build every module config once so inconsistencies surface at load time."""
    try:
        pipeline_config(cfg)
        synth_config(cfg)
        model_config(cfg)
        train_config(cfg)
        sampler_config(cfg)
    except TypeError as exc:
        raise InvalidArgument(str(exc)) from None
