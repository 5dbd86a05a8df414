"""Scenario JSON files, dataset index and label sidecar."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .geo import Scenario, Trajectory

INDEX_NAME = "index.json"
LABELS_NAME = "labels.json"


def dump_json(obj, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def scenario_to_dict(scn: Scenario, L_o: int, L_p: int, config: dict | None = None) -> dict:
    doc = {
        "dt": scn.dt,
        "t0": scn.t0,
        "L_o": L_o,
        "L_p": L_p,
        "trajectories": [{"mmsi": tr.mmsi, "points": tr.points.tolist()} for tr in scn.trajectories],
    }
    if config is not None:
        doc["config"] = config
    return doc


def scenario_from_dict(doc: dict) -> tuple[Scenario, int, int]:
    try:
        dt, t0 = float(doc["dt"]), float(doc["t0"])
        trajs = [Trajectory(np.asarray(t["points"], dtype=np.float64), t["mmsi"], t0, dt)
                 for t in doc["trajectories"]]
        L_o, L_p = int(doc["L_o"]), int(doc["L_p"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"malformed scenario document: {exc}") from None
    scn = Scenario(trajs)
    if scn.length != L_o + L_p:
        raise InvalidArgument(f"scenario length {scn.length} != L_o + L_p = {L_o + L_p}")
    return scn, L_o, L_p


def read_scenario(path: str | os.PathLike) -> tuple[Scenario, int, int]:
    return scenario_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_dataset(out_dir: str | os.PathLike, scenarios: Sequence[Scenario], masks: Sequence[np.ndarray],
                  L_o: int, L_p: int, config: dict | None = None, extra_index: dict | None = None) -> list[Path]:
    """One ``scenario_NNNNN.json`` per scenario plus ``index.json`` with masks."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths, entries = [], []
    for i, (scn, mask) in enumerate(zip(scenarios, masks)):
        name = f"scenario_{i:05d}.json"
        dump_json(scenario_to_dict(scn, L_o, L_p, config), out_dir / name)
        paths.append(out_dir / name)
        entries.append({"path": name, "mmsi": scn.mmsis, "mask": np.asarray(mask, dtype=int).tolist()})
    index = {"scenarios": entries, "config": config or {}, **(extra_index or {})}
    dump_json(index, out_dir / INDEX_NAME)
    return paths


@dataclass
class DatasetItem:
    path: str
    scenario: Scenario
    mask: np.ndarray
    L_o: int
    L_p: int


def load_dataset(data_dir: str | os.PathLike) -> list[DatasetItem]:
    """Read every scenario listed in ``index.json`` (or all ``scenario_*.json``)."""
    from .geo import compute_encounter_mask

    data_dir = Path(data_dir)
    index_path = data_dir / INDEX_NAME
    if index_path.exists():
        entries = json.loads(index_path.read_text())["scenarios"]
    else:
        entries = [{"path": p.name} for p in sorted(data_dir.glob("scenario_*.json"))]
    items = []
    for e in entries:
        scn, L_o, L_p = read_scenario(data_dir / e["path"])
        mask = np.asarray(e["mask"], dtype=np.uint8) if "mask" in e else compute_encounter_mask(scn.split(L_o)[0])
        if mask.shape != (scn.m, scn.m):
            raise InvalidArgument(f"{e['path']}: mask shape {mask.shape} != ({scn.m}, {scn.m})")
        items.append(DatasetItem(e["path"], scn, mask, L_o, L_p))
    return items


def read_labels(data_dir: str | os.PathLike) -> dict:
    path = Path(data_dir) / LABELS_NAME
    return json.loads(path.read_text()) if path.exists() else {}
