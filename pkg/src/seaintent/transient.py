"""Destination CVAE, encounter-masked attention over vessels, and decoding."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidArgument
from .nn import Mlp


@dataclass(frozen=True)
class SamplerConfig:
    epsilon: float = 1.3
    n: int = 50
    k: int = 10
    L_d: int = 2
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")
        if not 1 <= self.k <= self.n:
            raise InvalidArgument(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.n % self.k:
            raise InvalidArgument(f"n={self.n} is not divisible by k={self.k}")

    @property
    def per_branch(self) -> int:
        return self.n // self.k


@dataclass
class LatentDistribution:
    mu: Tensor  # (m, k, d)
    logvar: Tensor  # (m, k, d); variance = exp(logvar)


@dataclass
class AttentionLayer:
    Q: Mlp
    K: Mlp
    V: Mlp

    def parameters(self):
        return self.Q.parameters() + self.K.parameters() + self.V.parameters()


def encode_latent(E_d: Mlp, E_l: Mlp, dest, branches: Tensor) -> LatentDistribution:
    """Posterior parameters from ground-truth destinations (m, 2) and the tree (m, k, 2d)."""
    dest = ag.as_tensor(dest)
    m, k, w = branches.shape
    if dest.shape != (m, 2):
        raise InvalidArgument(f"destinations must be ({m}, 2), got {dest.shape}")
    e = E_d(dest)
    d = e.shape[-1]
    e = ag.broadcast_to(e.reshape(m, 1, d), (m, k, d))
    z_lat = E_l(ag.concat([e, branches]))
    half = z_lat.shape[-1] // 2
    return LatentDistribution(z_lat[..., :half], z_lat[..., half:])


def sample_prior(m: int, cfg: SamplerConfig, latent_width: int) -> np.ndarray:
    """z ~ N(0, epsilon I) with shape (m, k, n/k, latent_width).

    Each (branch rank, sample index) slot draws from its own stream seeded by
    (seed, rank, index), so a smaller (k, n) setting sees exactly a subset of
    the samples of a larger one.
    """
    s = cfg.per_branch
    z = np.empty((m, cfg.k, s, latent_width), dtype=np.float32)
    scale = math.sqrt(cfg.epsilon)
    for j in range(cfg.k):
        for t in range(s):
            rng = np.random.default_rng([cfg.seed, j, t])
            z[:, j, t, :] = rng.standard_normal((m, latent_width)) * scale
    return z


def sample_posterior(dist: LatentDistribution, rng: np.random.Generator) -> Tensor:
    """Reparameterised draw mu + exp(logvar / 2) * eta, shape (m, k, 1, d)."""
    eta = rng.standard_normal(dist.mu.shape).astype(np.float32)
    z = dist.mu + ag.exp(dist.logvar * 0.5) * eta
    m, k, d = z.shape
    return z.reshape(m, k, 1, d)


def sample_latent(cfg: SamplerConfig, mode: str, m: int, latent_width: int,
                  dist: LatentDistribution | None = None, rng: np.random.Generator | None = None):
    if mode == "prior":
        return ag.Tensor(sample_prior(m, cfg, latent_width))
    if mode == "posterior":
        if dist is None:
            raise InvalidArgument("posterior sampling needs a latent distribution")
        return sample_posterior(dist, rng if rng is not None else np.random.default_rng(cfg.seed))
    raise InvalidArgument(f"unknown sampling mode {mode!r}")


def _expand_branches(branches: Tensor, s: int) -> Tensor:
    m, k, w = branches.shape
    return ag.broadcast_to(branches.reshape(m, k, 1, w), (m, k, s, w))


def decode_destination(D_d: Mlp, z, branches: Tensor) -> Tensor:
    """(m, k, s, latent) ⊕ tree -> destinations (m, k, s, 2)."""
    z = ag.as_tensor(z)
    if z.ndim != 4 or z.shape[:2] != branches.shape[:2]:
        raise InvalidArgument(f"latent {z.shape} does not match tree {branches.shape}")
    return D_d(ag.concat([z, _expand_branches(branches, z.shape[2])]))


def fuse(E_d: Mlp, branches: Tensor, dest_hat: Tensor) -> Tensor:
    """z' = tree ⊕ E_d(destination), shape (m, k, s, 3d)."""
    return ag.concat([_expand_branches(branches, dest_hat.shape[2]), E_d(dest_hat)])


def attention_mask(mask: np.ndarray, m: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != (m, m):
        raise InvalidArgument(f"encounter mask must be ({m}, {m}), got {mask.shape}")
    return (mask != 0) | np.eye(m, dtype=bool)


def nonlocal_layer(layer: AttentionLayer, z: Tensor, allowed: np.ndarray) -> Tensor:
    """One residual step z + A(z, M), attending across vessels per (branch, sample)."""
    x = ag.transpose(z, (1, 2, 0, 3))  # (k, s, m, w)
    q, kk, v = layer.Q(x), layer.K(x), layer.V(x)
    logits = ag.matmul(q, ag.swapaxes(kk, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    attn = ag.softmax(logits, mask=allowed)
    out = ag.transpose(ag.matmul(attn, v), (2, 0, 1, 3))
    return z + out


def nonlocal_stack(layers: list[AttentionLayer], z: Tensor, mask: np.ndarray) -> Tensor:
    allowed = attention_mask(mask, z.shape[0])
    for layer in layers:
        z = nonlocal_layer(layer, z, allowed)
    return z


def predict_offsets(D_p: Mlp, z: Tensor, L_p: int) -> Tensor:
    """(m, k, s, 3d) -> (m, k, s, L_p, 2) displacements from the last observed point."""
    out = D_p(z)
    return out.reshape(*z.shape[:-1], L_p, 2)
