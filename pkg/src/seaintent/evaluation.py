"""Best-of-n ADE/FDE and dataset-level evaluation."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument
from .geo import compute_encounter_mask, haversine_array
from .model import IntentionModel, Prediction
from .scenario_io import DatasetItem, read_scenario
from .transient import SamplerConfig

log = logging.getLogger(__name__)


def candidate_errors(candidates: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-candidate (ADE, FDE) in meters for (n, L_p, 2) candidates vs (L_p, 2) truth."""
    candidates = np.asarray(candidates, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if candidates.ndim != 3 or candidates.shape[1:] != gt.shape or gt.ndim != 2:
        raise InvalidArgument(f"candidates {candidates.shape} do not match ground truth {gt.shape}")
    if len(candidates) < 1:
        raise InvalidArgument("need at least one candidate")
    dist = haversine_array(candidates, gt[None])
    return dist.mean(axis=1), dist[:, -1]


def ade_fde(candidates: np.ndarray, gt: np.ndarray) -> tuple[float, float, int]:
    """Best-of-n (ADE, FDE, index) with one index minimising ADE + FDE.

    Ties resolve to the lowest candidate index.
    """
    ade, fde = candidate_errors(candidates, gt)
    j = int(np.argmin(ade + fde))
    return float(ade[j]), float(fde[j]), j


@dataclass
class ScenarioMetrics:
    path: str
    vessels: int
    ade_sum_m: float
    fde_sum_m: float
    per_vessel: list[dict] = field(default_factory=list)


@dataclass
class MetricReport:
    ade_m: float | None
    fde_m: float | None
    n: int
    k: int
    seed: int
    num_vessels: int = 0
    scenarios: list[ScenarioMetrics] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.num_vessels == 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = [f"{'scenario':<32} {'vessels':>7} {'ADE (m)':>10} {'FDE (m)':>10}"]
        for s in self.scenarios:
            lines.append(f"{s.path:<32} {s.vessels:>7} {s.ade_sum_m / s.vessels:>10.2f} {s.fde_sum_m / s.vessels:>10.2f}")
        if self.empty:
            lines.append("(no vessels evaluated)")
        else:
            lines.append(f"{'mean over vessels':<32} {self.num_vessels:>7} {self.ade_m:>10.2f} {self.fde_m:>10.2f}")
        for p in self.missing:
            lines.append(f"missing: {p}")
        return "\n".join(lines)


def score_prediction(pred_candidates: np.ndarray, future: np.ndarray) -> list[tuple[float, float, int]]:
    """Best-of-n metrics per vessel for (m, n, L_p, 2) candidates and (m, L_p, 2) truth."""
    return [ade_fde(c, g) for c, g in zip(pred_candidates, future)]


def aggregate(per_scenario: Sequence[ScenarioMetrics], n: int, k: int, seed: int, missing=(), config=None) -> MetricReport:
    vessels = sum(s.vessels for s in per_scenario)
    if vessels == 0:
        return MetricReport(None, None, n, k, seed, 0, list(per_scenario), list(missing), config or {})
    ade = sum(s.ade_sum_m for s in per_scenario) / vessels
    fde = sum(s.fde_sum_m for s in per_scenario) / vessels
    return MetricReport(ade, fde, n, k, seed, vessels, list(per_scenario), list(missing), config or {})


def _scenario_metrics(path: str, mmsis, results) -> ScenarioMetrics:
    per = [{"mmsi": mm, "ade_m": a, "fde_m": f, "best": j} for mm, (a, f, j) in zip(mmsis, results)]
    return ScenarioMetrics(path, len(per), sum(r[0] for r in results), sum(r[1] for r in results), per)


def evaluate_items(model: IntentionModel, items: Iterable[DatasetItem], sampler: SamplerConfig,
                   missing=(), config=None) -> MetricReport:
    out = []
    for item in sorted(items, key=lambda it: it.path):
        coords = item.scenario.coords()
        obs, fut = coords[:, :item.L_o], coords[:, item.L_o:]
        pred = model.predict(obs, item.mask, sampler)
        out.append(_scenario_metrics(item.path, item.scenario.mmsis, score_prediction(pred.flat_candidates(), fut)))
    return aggregate(out, sampler.n, sampler.k, sampler.seed, missing, config)


def evaluate_nested(model: IntentionModel, items: Iterable[DatasetItem], settings: Sequence[tuple[int, int]],
                    seed: int = 0, epsilon: float = 1.3) -> dict[tuple[int, int], MetricReport]:
    """Evaluate several (k, n) settings on one shared set of candidates.

    One forward pass at the largest k and samples-per-branch; each setting
    scores the first k branches and their first n/k samples, so candidate
    sets are nested and best-of-n errors can only shrink as they grow.
    """
    for k, n in settings:
        SamplerConfig(epsilon, n, k, seed=seed)
    k_max = max(k for k, _ in settings)
    s_max = max(n // k for k, n in settings)
    big = SamplerConfig(epsilon, k_max * s_max, k_max, seed=seed)
    per: dict[tuple[int, int], list[ScenarioMetrics]] = {s: [] for s in settings}
    for item in sorted(items, key=lambda it: it.path):
        coords = item.scenario.coords()
        pred = model.predict(coords[:, :item.L_o], item.mask, big)
        fut = coords[:, item.L_o:]
        for k, n in settings:
            cand = pred.candidates[:, :k, :n // k]
            cand = cand.reshape(cand.shape[0], -1, *cand.shape[3:])
            per[(k, n)].append(_scenario_metrics(item.path, item.scenario.mmsis, score_prediction(cand, fut)))
    return {s: aggregate(per[s], s[1], s[0], seed) for s in settings}


def evaluate_dataset(checkpoint: str | os.PathLike, scenario_files: Sequence[str | os.PathLike], n: int = 50,
                     k: int = 10, seed: int = 0, epsilon: float = 1.3, masks: dict | None = None) -> MetricReport:
    """Load a checkpoint and score prior-sampled forecasts on scenario files.

    Unreadable or missing files are listed in the report rather than raised.
    """
    model = IntentionModel.load(checkpoint)
    sampler = SamplerConfig(epsilon, n, k, seed=seed)
    items, missing = [], []
    for path in scenario_files:
        path = Path(path)
        try:
            scn, L_o, L_p = read_scenario(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path, exc)
            missing.append(str(path))
            continue
        mask = (masks or {}).get(path.name)
        mask = np.asarray(mask) if mask is not None else compute_encounter_mask(scn.split(L_o)[0])
        items.append(DatasetItem(path.name, scn, mask, L_o, L_p))
    config = {"checkpoint": str(checkpoint), "epsilon": epsilon}
    return evaluate_items(model, items, sampler, missing, config)
