"""The full prediction network: parameters, training forward pass, inference."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from . import transient, tree
from .errors import InvalidArgument, InvalidState
from .nn import Mlp, load_checkpoint, save_checkpoint
from .prototypes import Autoencoder, Normalizer, PrototypeSet


@dataclass
class ModelConfig:
    """Network sizes. Defaults are the full-size reference architecture."""

    d: int = 64
    L_o: int = 6
    L_p: int = 12
    C: int = 30
    L_d: int = 2
    hidden: tuple[int, ...] = (1024, 512, 1024)
    cross_hidden: tuple[int, ...] = (1024, 1024)
    attn_width: int = 1024
    latent_width: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.cross_hidden = tuple(int(h) for h in self.cross_hidden)
        for name in ("d", "L_o", "L_p", "C", "attn_width"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.L_d < 0:
            raise InvalidArgument("L_d must be >= 0")

    @property
    def L(self) -> int:
        return self.L_o + self.L_p

    @property
    def z_width(self) -> int:
        return self.d if self.latent_width is None else int(self.latent_width)


@dataclass
class TrainForward:
    y_tilde: ag.Tensor
    labels: np.ndarray
    tree: tree.IntentionTree
    dist: transient.LatentDistribution
    dest_gt: ag.Tensor
    dest_hat: ag.Tensor
    pred: ag.Tensor
    target: ag.Tensor


@dataclass
class Prediction:
    """Inference output for one scenario; coordinates in degrees."""

    y_tilde: np.ndarray  # (m, C)
    branch_ids: np.ndarray  # (m, k)
    branch_probs: np.ndarray  # (m, k)
    candidates: np.ndarray  # (m, k, n/k, L_p, 2)
    destinations: np.ndarray  # (m, k, n/k, 2)

    def flat_candidates(self) -> np.ndarray:
        m, k, s = self.candidates.shape[:3]
        return self.candidates.reshape(m, k * s, *self.candidates.shape[3:])

    def candidate_branch(self) -> np.ndarray:
        """Branch id for every flattened candidate, shape (m, n)."""
        s = self.candidates.shape[2]
        return np.repeat(self.branch_ids, s, axis=1)


class IntentionModel:
    def __init__(self, cfg: ModelConfig | None = None, normalizer: Normalizer | None = None):
        self.cfg = cfg = cfg or ModelConfig()
        self.normalizer = normalizer
        self.protoset: PrototypeSet | None = None
        self.stage = 0
        self.extra_meta: dict = {}
        rng = np.random.default_rng(cfg.seed)
        d, h, zw = cfg.d, cfg.hidden, cfg.z_width
        self.ae = Autoencoder(cfg.L, d, h, seed=int(rng.integers(2**31)))
        self.E_o = Mlp((2 * cfg.L_o, *h, d), "E_o", rng)
        self.E_i = Mlp((2 * cfg.L, *h, d), "E_i", rng)
        self.E_d = Mlp((2, *h, d), "E_d", rng)
        self.D_d = Mlp((zw + 2 * d, *h, 2), "D_d", rng)
        self.E_l = Mlp((3 * d, *h, 2 * zw), "E_l", rng)
        self.A_c_Q = Mlp((d, *cfg.cross_hidden, d), "A_c.Q", rng)
        self.A_c_K = Mlp((d, *cfg.cross_hidden, d), "A_c.K", rng)
        self.A_n = [
            transient.AttentionLayer(
                Mlp((3 * d, *h, cfg.attn_width), f"A_n.{l}.Q", rng),
                Mlp((3 * d, *h, cfg.attn_width), f"A_n.{l}.K", rng),
                Mlp((3 * d, *h, 3 * d), f"A_n.{l}.V", rng),
            )
            for l in range(cfg.L_d)
        ]
        self.D_p = Mlp((3 * d, *h, 2 * cfg.L_p), "D_p", rng)

    # -- parameters -------------------------------------------------------

    def blocks(self) -> list[Mlp]:
        out = [self.ae.E_h, self.ae.D_h, self.E_o, self.E_i, self.E_d, self.D_d, self.E_l,
               self.A_c_Q, self.A_c_K]
        for layer in self.A_n:
            out += [layer.Q, layer.K, layer.V]
        return out + [self.D_p]

    def parameters(self) -> list[ag.Tensor]:
        return [p for b in self.blocks() for p in b.parameters()]

    def stage2_parameters(self) -> list[ag.Tensor]:
        """Everything except the frozen history autoencoder."""
        frozen = {id(p) for p in self.ae.parameters()}
        return [p for p in self.parameters() if id(p) not in frozen]

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {p.name: p.data for p in self.parameters()}
        if self.protoset is not None:
            arrays["prototypes"] = self.protoset.prototypes
            arrays["centroids"] = self.protoset.centroids
        return arrays

    def meta(self) -> dict:
        cfg = asdict(self.cfg)
        cfg["hidden"] = list(cfg["hidden"])
        cfg["cross_hidden"] = list(cfg["cross_hidden"])
        meta = {"model": cfg, "stage": self.stage}
        if self.normalizer is not None:
            meta["normalizer"] = self.normalizer.to_meta()
        return meta

    def save(self, path: str | os.PathLike, extra_meta: dict | None = None) -> None:
        save_checkpoint(path, self.state_arrays(), {**self.meta(), **(extra_meta or {})})

    @classmethod
    def load(cls, path: str | os.PathLike) -> "IntentionModel":
        arrays, meta = load_checkpoint(path)
        cfg = ModelConfig(**meta["model"])
        norm = meta.get("normalizer")
        model = cls(cfg, Normalizer.from_meta(norm) if norm else None)
        for p in model.parameters():
            if p.name not in arrays:
                raise InvalidState(f"checkpoint lacks parameter {p.name}")
            if arrays[p.name].shape != p.shape:
                raise InvalidState(f"{p.name}: checkpoint shape {arrays[p.name].shape} != {p.shape}")
            p.data = np.array(arrays[p.name], dtype=np.float32)
        if "prototypes" in arrays:
            model.protoset = PrototypeSet(arrays["prototypes"], arrays["centroids"])
        model.stage = int(meta.get("stage", 0))
        model.extra_meta = {k: v for k, v in meta.items() if k not in ("model", "stage", "normalizer")}
        return model

    # -- forward passes ---------------------------------------------------

    def _require(self, stage: int) -> None:
        if self.normalizer is None or self.protoset is None or self.stage < stage:
            raise InvalidState(f"model needs stage-{stage} artifacts (has stage {self.stage})")

    def _norm32(self, coords) -> np.ndarray:
        return self.normalizer.to_norm(coords).astype(np.float32)

    def _anchored(self, x: np.ndarray, anchor: int) -> np.ndarray:
        """Rows become motion-scaled offsets from point ``anchor``, which itself stays absolute.

        Absolute normalised positions span the whole region while a window's
        motion is a small fraction of it; this keeps both signals of order one.
        """
        x = np.asarray(x, dtype=np.float32)
        ref = x[..., anchor:anchor + 1, :]
        out = (x - ref) / np.float32(self.normalizer.motion_scale)
        out[..., anchor, :] = ref[..., 0, :]
        return out

    def _observed_keys(self, obs: np.ndarray) -> ag.Tensor:
        return tree.encode_observed(self.E_o, self._anchored(obs, self.cfg.L_o - 1), self.cfg.L_o)

    def _prototype_keys(self) -> ag.Tensor:
        feats = self._anchored(self.protoset.prototypes, self.cfg.L_o - 1)
        return tree.encode_prototypes(self.E_i, feats, self.cfg.L)

    def forward_train(self, coords_deg: np.ndarray, mask: np.ndarray, labels, rng: np.random.Generator) -> TrainForward:
        """Teacher-forced single-sample pass (n = k = 1) on one scenario."""
        self._require(1)
        cfg = self.cfg
        x = self._norm32(coords_deg)
        if x.ndim != 3 or x.shape[1] != cfg.L:
            raise InvalidArgument(f"expected (m, {cfg.L}, 2) trajectories, got {x.shape}")
        obs, fut = x[:, :cfg.L_o], x[:, cfg.L_o:]
        last = obs[:, -1:, :]
        ms = np.float32(self.normalizer.motion_scale)
        z_o = self._observed_keys(obs)
        z_i = self._prototype_keys()
        y_tilde = tree.classify(self.A_c_Q, self.A_c_K, z_o, z_i)
        t = tree.teacher_forced_tree(z_o, z_i, labels)
        dest_gt = ag.Tensor((fut[:, -1, :] - last[:, 0, :]) / ms)
        dist = transient.encode_latent(self.E_d, self.E_l, dest_gt, t.branches)
        z = transient.sample_posterior(dist, rng)
        dest_hat = transient.decode_destination(self.D_d, z, t.branches)
        fused = transient.fuse(self.E_d, t.branches, dest_hat)
        fused = transient.nonlocal_stack(self.A_n, fused, mask)
        pred = transient.predict_offsets(self.D_p, fused, cfg.L_p)
        m = x.shape[0]
        return TrainForward(y_tilde, np.asarray(labels), t, dist, dest_gt, dest_hat.reshape(m, 2),
                            pred.reshape(m, cfg.L_p, 2), ag.Tensor((fut - last) / ms))

    def class_probabilities(self, observed_deg: np.ndarray) -> np.ndarray:
        self._require(1)
        with ag.no_grad():
            z_o = self._observed_keys(self._norm32(observed_deg))
            return tree.classify(self.A_c_Q, self.A_c_K, z_o, self._prototype_keys()).data.copy()

    def predict(self, observed_deg: np.ndarray, mask: np.ndarray, sampler: transient.SamplerConfig) -> Prediction:
        """Prior-sampled multimodal forecast for one scenario's observed part."""
        self._require(1)
        cfg = self.cfg
        if sampler.k > self.protoset.C:
            raise InvalidArgument(f"k={sampler.k} exceeds prototype count {self.protoset.C}")
        obs = self._norm32(observed_deg)
        if obs.ndim != 3 or obs.shape[1] != cfg.L_o:
            raise InvalidArgument(f"expected (m, {cfg.L_o}, 2) observations, got {obs.shape}")
        m = obs.shape[0]
        with ag.no_grad():
            z_o = self._observed_keys(obs)
            z_i = self._prototype_keys()
            y_tilde = tree.classify(self.A_c_Q, self.A_c_K, z_o, z_i)
            t = tree.build_tree(z_o, z_i, y_tilde, sampler.k)
            z = transient.sample_latent(sampler, "prior", m, cfg.z_width)
            dest_hat = transient.decode_destination(self.D_d, z, t.branches)
            fused = transient.fuse(self.E_d, t.branches, dest_hat)
            fused = transient.nonlocal_stack(self.A_n, fused, mask)
            offsets = transient.predict_offsets(self.D_p, fused, cfg.L_p).data
        last = obs[:, -1, :].astype(np.float64)
        ms = self.normalizer.motion_scale
        cand = self.normalizer.to_deg(last[:, None, None, None, :] + offsets.astype(np.float64) * ms)
        dest = self.normalizer.to_deg(last[:, None, None, :] + dest_hat.data.astype(np.float64) * ms)
        return Prediction(y_tilde.data.copy(), t.branch_ids, t.branch_probs, cand, dest)
