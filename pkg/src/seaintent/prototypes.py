"""History autoencoder and latent-space clustering into route prototypes."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .errors import InvalidArgument, InvalidState
from .nn import AdamState, Mlp, adam_step


@dataclass(frozen=True)
class Normalizer:
    """Per-axis affine map sending a (lon, lat) bounding box onto [-1, 1]^2.

    ``motion_scale`` (normalised units) divides displacement quantities, such
    as shapes relative to an anchor point, so that they are of order one.
    """

    center: tuple[float, float]
    half_range: tuple[float, float]
    motion_scale: float = 1.0

    def __post_init__(self):
        if not self.motion_scale > 0:
            raise InvalidArgument("motion_scale must be positive")

    @classmethod
    def from_bbox(cls, lon_min, lat_min, lon_max, lat_max) -> "Normalizer":
        half = ((lon_max - lon_min) / 2, (lat_max - lat_min) / 2)
        half = tuple(h if h > 0 else 1.0 for h in half)
        return cls(((lon_min + lon_max) / 2, (lat_min + lat_max) / 2), half)

    @classmethod
    def fit(cls, coords: np.ndarray) -> "Normalizer":
        flat = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        return cls.from_bbox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def with_motion_scale(self, coords: np.ndarray, anchor: int = 0, quantile: float = 0.95) -> "Normalizer":
        """Copy whose motion scale is a high quantile of per-track displacement from ``anchor``."""
        x = self.to_norm(np.asarray(coords, dtype=np.float64))
        reach = np.abs(x - x[:, anchor:anchor + 1]).max(axis=(1, 2))
        scale = float(np.quantile(reach, quantile)) if len(reach) else 0.0
        return replace(self, motion_scale=scale if scale > 0 else 1.0)

    def to_norm(self, coords) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - np.asarray(self.center)) / np.asarray(self.half_range)

    def to_deg(self, coords) -> np.ndarray:
        return np.asarray(coords, dtype=np.float64) * np.asarray(self.half_range) + np.asarray(self.center)

    def to_meta(self) -> dict:
        return {"center": [float(v) for v in self.center], "half_range": [float(v) for v in self.half_range],
                "motion_scale": float(self.motion_scale)}

    @classmethod
    def from_meta(cls, meta: dict) -> "Normalizer":
        return cls(tuple(meta["center"]), tuple(meta["half_range"]), float(meta.get("motion_scale", 1.0)))


@dataclass
class DecoupledHistory:
    p0: np.ndarray  # (m, 2)
    p_rel: np.ndarray  # (m, L, 2) in motion-scale units, p_rel[:, 0] == 0
    scale: float = 1.0

    def recompose(self) -> np.ndarray:
        return self.p0[:, None, :] + self.p_rel * self.scale


def decouple(coords: np.ndarray, normalizer: Normalizer | None = None) -> DecoupledHistory:
    """Split trajectories into first points and zero-based relative shapes.

    Input is (m, L, 2) (or a list of equal-length (L, 2) arrays). With a
    ``normalizer`` the coordinates are normalised first and the relative
    shape is expressed in units of its motion scale. Values are rounded
    to float32 and differenced in float64, so recomposition is exact at
    float32 precision whenever the coordinates span less than 2**29 in
    magnitude (always the case for normalised tracks).
    """
    if isinstance(coords, (list, tuple)):
        lengths = {len(np.asarray(c)) for c in coords}
        if len(lengths) != 1:
            raise InvalidArgument(f"trajectories differ in length: {sorted(lengths)}")
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != 2:
        raise InvalidArgument(f"expected (m, L, 2) coordinates, got {x.shape}")
    scale = 1.0
    if normalizer is not None:
        x = normalizer.to_norm(x)
        scale = normalizer.motion_scale
    x = x.astype(np.float32).astype(np.float64)
    p0 = x[:, 0, :].copy()
    return DecoupledHistory(p0, (x - p0[:, None, :]) / scale, scale)


class Autoencoder:
    """E_h: relative shape (L*2) -> d, D_h: d + 2 -> relative shape (L*2).

    The latent code is E_h's output followed by the first point; decoding
    adds that point back, so a decoded code is an absolute trajectory.
    """

    def __init__(self, L: int, d: int, hidden=(1024, 512, 1024), seed: int = 0, zero: bool = False):
        rng = np.random.default_rng(seed)
        self.L, self.d = L, d
        self.E_h = Mlp((2 * L, *hidden, d), "E_h", rng, zero=zero)
        self.D_h = Mlp((d + 2, *hidden, 2 * L), "D_h", rng, zero=zero)

    def parameters(self):
        return self.E_h.parameters() + self.D_h.parameters()

    def encode(self, hist: DecoupledHistory) -> ag.Tensor:
        m = len(hist.p0)
        feat = self.E_h(ag.Tensor(hist.p_rel.reshape(m, 2 * self.L)))
        return ag.concat([feat, ag.Tensor(hist.p0)])

    def decode_shape(self, latents) -> ag.Tensor:
        """Relative shape (m, L, 2) in motion-scale units."""
        out = self.D_h(ag.as_tensor(latents))
        return out.reshape(out.shape[0], self.L, 2)

    def decode(self, latents, scale: float = 1.0) -> np.ndarray:
        """Absolute (normalised) trajectories for latent codes, no gradient."""
        lat = np.asarray(ag.as_tensor(latents).data, dtype=np.float64)
        with ag.no_grad():
            shape = self.decode_shape(lat).data.astype(np.float64)
        return lat[:, None, -2:] + shape * scale

    def latents(self, hist: DecoupledHistory) -> np.ndarray:
        with ag.no_grad():
            return self.encode(hist).data.copy()


def reconstruction_loss(ae: Autoencoder, hist: DecoupledHistory) -> ag.Tensor:
    """Mean squared error of the decoded relative shape (motion-scale units)."""
    return ag.mean(ag.square(ae.decode_shape(ae.encode(hist)) - ag.Tensor(hist.p_rel)))


def train_autoencoder(hist: DecoupledHistory, ae: Autoencoder, epochs: int = 500, lr: float = 1e-4,
                      batch_size: int = 64, seed: int = 0) -> list[float]:
    """Minimise mean squared reconstruction error with Adam; returns per-epoch mean loss."""
    m = len(hist.p0)
    if m < 1:
        raise InvalidArgument("autoencoder needs at least one trajectory")
    rng = np.random.default_rng(seed)
    opt = AdamState(lr=lr)
    params = ae.parameters()
    history = []
    for _ in range(epochs):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, batch_size):
            idx = order[start:start + batch_size]
            batch = DecoupledHistory(hist.p0[idx], hist.p_rel[idx])
            for p in params:
                p.zero_grad()
            loss = reconstruction_loss(ae, batch)
            ag.backward(loss)
            adam_step(opt, params)
            total += float(loss.data) * len(idx)
        history.append(total / m)
    return history


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list[float] = field(default_factory=list)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def nearest_centroid(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    d2 = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


def kmeans(x: np.ndarray, C: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding, run until assignments stop changing."""
    x = np.asarray(x, dtype=np.float64)
    m = len(x)
    if C < 1 or m < C:
        raise InvalidArgument(f"need at least C={C} points to cluster, got {m}")
    rng = np.random.default_rng(seed)
    centroids = [x[rng.integers(m)]]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, C):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(m, p=d2 / total)
        else:
            idx = rng.integers(m)
        centroids.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    centroids = np.array(centroids)
    labels = nearest_centroid(x, centroids)
    history = [float(((x - centroids[labels]) ** 2).sum())]
    for _ in range(max_iter):
        for c in range(C):
            members = x[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
        new_labels = nearest_centroid(x, centroids)
        history.append(float(((x - centroids[new_labels]) ** 2).sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(centroids, labels, history)


@dataclass
class PrototypeSet:
    """Decoded cluster centroids; ``prototypes`` are normalised (C, L, 2) trajectories."""

    prototypes: np.ndarray
    centroids: np.ndarray

    @property
    def C(self) -> int:
        return len(self.centroids)

    def assign(self, latents: np.ndarray) -> np.ndarray:
        return nearest_centroid(latents, self.centroids)


def extract_prototypes(ae: Autoencoder, latents: np.ndarray, C: int, seed: int = 0,
                       max_iter: int = 300, scale: float = 1.0) -> tuple[PrototypeSet, KMeansResult]:
    """Cluster latent codes and decode the centroids into normalised prototypes."""
    km = kmeans(latents, C, seed, max_iter)
    centroids = km.centroids.astype(np.float32)
    protos = ae.decode(centroids, scale).astype(np.float32)
    return PrototypeSet(protos, centroids), km


def assign_labels(ae: Autoencoder, protoset: PrototypeSet | None, coords: np.ndarray,
                  normalizer: Normalizer | None = None) -> np.ndarray:
    """Nearest-prototype label for each full-length trajectory in ``coords``."""
    if protoset is None or protoset.centroids is None or len(protoset.centroids) == 0:
        raise InvalidState("prototype set has not been fitted")
    return protoset.assign(ae.latents(decouple(coords, normalizer)))
