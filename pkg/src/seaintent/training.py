"""Loss terms and the two-stage training procedure."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidArgument, InvalidState
from .model import IntentionModel
from .nn import AdamState, adam_step, lr_schedule
from .prototypes import Normalizer, assign_labels, decouple, extract_prototypes, train_autoencoder
from .transient import LatentDistribution

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    alpha: float = 0.01

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.alpha) < 0:
            raise InvalidArgument("loss weights must be non-negative")


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-4
    milestones: tuple[int, ...] = (160, 300)
    gamma: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    epsilon: float = 1.3
    seed: int = 0
    ae_epochs: int = 500
    ae_lr: float = 1e-4
    ae_batch: int = 64
    # "sum_mean": sum over vessels of the per-vessel mean; "sum": plain sum
    reg_reduction: str = "sum_mean"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.reg_reduction not in ("sum_mean", "sum"):
            raise InvalidArgument(f"unknown reg_reduction {self.reg_reduction!r}")
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")


def loss_clf(y_tilde: Tensor, labels) -> Tensor:
    """Mean cross-entropy of the class probabilities against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    m, C = y_tilde.shape
    if labels.shape != (m,) or np.any(labels < 0) or np.any(labels >= C):
        raise InvalidArgument(f"labels must be {m} integers in [0, {C})")
    picked = y_tilde[np.arange(m), labels]
    return ag.mean(-ag.log(ag.clamp_min(picked, PROB_FLOOR)))


def kl_to_prior(dist: LatentDistribution, epsilon: float) -> Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, epsilon I)), summed over latent dims, mean over vessels."""
    var_ratio = ag.exp(dist.logvar) * (1.0 / epsilon)
    per = var_ratio + ag.square(dist.mu) * (1.0 / epsilon) - 1.0 - dist.logvar + math.log(epsilon)
    m = dist.mu.shape[0]
    return ag.sum_(per) * (0.5 / m)


def destination_error(dest_gt: Tensor, dest_hat: Tensor) -> Tensor:
    """Mean over vessels of the squared Euclidean destination error."""
    diff = dest_hat - dest_gt
    return ag.sum_(ag.square(diff)) * (1.0 / diff.shape[0])


def loss_cvae(dist: LatentDistribution, dest_gt: Tensor, dest_hat: Tensor, alpha: float = 0.01,
              epsilon: float = 1.3) -> Tensor:
    return kl_to_prior(dist, epsilon) + destination_error(dest_gt, dest_hat) * alpha


def loss_reg(pred: Tensor, gt, reduction: str = "sum_mean") -> Tensor:
    """Trajectory regression error for (m, L_p, 2) arrays.

    ``sum_mean``: per-vessel mean over steps and coordinates, summed over
    vessels (a constant offset delta gives m * delta**2). ``sum``: plain sum.
    """
    gt = ag.as_tensor(gt)
    if pred.shape != gt.shape:
        raise InvalidArgument(f"loss_reg: shapes {pred.shape} and {gt.shape} differ")
    sq = ag.square(pred - gt)
    if reduction == "sum":
        return ag.sum_(sq)
    per_vessel = int(np.prod(pred.shape[1:]))
    return ag.sum_(sq) * (1.0 / per_vessel)


@dataclass
class TrainReport:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "lr", "loss_total", "loss_clf", "loss_cvae", "loss_kl", "loss_dest", "loss_reg")

    def column(self, name: str) -> list[float]:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        """Loss history as CSV; wall time stays out so reruns are byte-identical."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.rows:
            writer.writerow([r["epoch"], repr(r["lr"])] + [repr(r[c]) for c in self.COLUMNS[2:]])
        return buf.getvalue()


@dataclass
class Stage1Result:
    history: list[float]
    labels: list[np.ndarray]
    inertia_history: list[float]


def train_stage1(model: IntentionModel, trajectories: Sequence[np.ndarray], cfg: TrainConfig,
                 region=None) -> Stage1Result:
    """Fit the autoencoder on full-length history trajectories and freeze prototypes.

    ``trajectories`` is a list of (m_s, L, 2) degree arrays, one per scenario;
    labels come back in the same grouping.
    """
    if not trajectories:
        raise InvalidArgument("stage 1 needs at least one scenario")
    allc = np.concatenate([np.asarray(t, dtype=np.float64) for t in trajectories])
    if model.normalizer is None:
        norm = Normalizer.from_bbox(*region) if region is not None else Normalizer.fit(allc)
        model.normalizer = norm.with_motion_scale(allc)
    hist = decouple(allc, model.normalizer)
    history = train_autoencoder(hist, model.ae, cfg.ae_epochs, cfg.ae_lr, cfg.ae_batch, cfg.seed)
    latents = model.ae.latents(hist)
    C = min(model.cfg.C, len(allc))
    if C != model.cfg.C:
        log.warning("only %d trajectories; clustering into %d prototypes instead of %d", len(allc), C, model.cfg.C)
        model.cfg.C = C
    model.protoset, km = extract_prototypes(model.ae, latents, C, cfg.seed,
                                           scale=model.normalizer.motion_scale)
    model.stage = 1
    flat = model.protoset.assign(latents)
    bounds = np.cumsum([0] + [len(t) for t in trajectories])
    return Stage1Result(history, [flat[a:b] for a, b in zip(bounds[:-1], bounds[1:])], km.inertia_history)


def scenario_labels(model: IntentionModel, coords_deg: np.ndarray) -> np.ndarray:
    return assign_labels(model.ae, model.protoset, coords_deg, model.normalizer)


def total_loss(model: IntentionModel, coords_deg, mask, labels, rng, cfg: TrainConfig):
    fwd = model.forward_train(coords_deg, mask, labels, rng)
    w = cfg.weights
    l_clf = loss_clf(fwd.y_tilde, labels)
    l_kl = kl_to_prior(fwd.dist, cfg.epsilon)
    l_dest = destination_error(fwd.dest_gt, fwd.dest_hat)
    l_cvae = l_kl + l_dest * w.alpha
    l_reg = loss_reg(fwd.pred, fwd.target, cfg.reg_reduction)
    total = l_clf * w.lambda1 + l_cvae * w.lambda2 + l_reg * w.lambda3
    parts = {"loss_total": total, "loss_clf": l_clf, "loss_cvae": l_cvae, "loss_kl": l_kl,
             "loss_dest": l_dest, "loss_reg": l_reg}
    return total, parts, fwd


def train_stage2(model: IntentionModel, scenarios: Sequence[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
                 labels: Sequence[np.ndarray] | None = None, callback=None) -> TrainReport:
    """Joint training of every block except the frozen autoencoder.

    ``scenarios`` holds (coords_deg (m, L, 2), encounter mask) pairs; one
    Adam step per scenario, scenarios shuffled each epoch.
    """
    if model.stage < 1 or model.protoset is None:
        raise InvalidState("stage 2 needs stage-1 prototypes; run prototype extraction first")
    if labels is None:
        labels = [scenario_labels(model, c) for c, _ in scenarios]
    rng = np.random.default_rng(cfg.seed)
    params = model.stage2_parameters()
    opt = AdamState(lr=cfg.lr)
    report = TrainReport()
    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule(epoch, cfg.lr, cfg.milestones, cfg.gamma)
        start = time.perf_counter()
        sums = dict.fromkeys(TrainReport.COLUMNS[2:], 0.0)
        order = rng.permutation(len(scenarios))
        for idx in order:
            coords, mask = scenarios[idx]
            for p in params:
                p.zero_grad()
            total, parts, _ = total_loss(model, coords, mask, labels[idx], rng, cfg)
            ag.backward(total)
            adam_step(opt, params)
            for key, t in parts.items():
                sums[key] += float(t.data)
        row = {"epoch": epoch, "lr": opt.lr, **{k: v / len(scenarios) for k, v in sums.items()},
               "wall_s": time.perf_counter() - start}
        report.rows.append(row)
        if callback is not None:
            callback(row)
    model.stage = 2
    return report
