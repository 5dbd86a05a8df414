"""Labelled multimodal scenarios with known route modes and encounters.

Each vessel follows a heading program: hold course, then turn left or right
at a fixed rate from ``turn_start`` until its turn angle is reached. The
onset of the turn lies inside the observed window, while the final angle
and a speed change after the last observation are drawn per vessel, so the
future keeps genuine spread within every mode.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .geo import (DCPA_RANGE_NM, NM_M, TCPA_RANGE_H, Scenario, Trajectory, compute_encounter_mask,
                  estimate_velocity)
from . import scenario_io

M_PER_DEG = math.pi * 6_371_000.0 / 180.0
KN = NM_M / 3600.0


@dataclass
class SynthConfig:
    n_scenarios: int = 100
    turn_angles: tuple[float, ...] = (0.0, 60.0, -60.0)  # degrees, positive = port (left)
    turn_rate: float = 15.0  # degrees per step
    turn_start: int = 2
    angle_jitter: tuple[float, float] = (0.6, 1.0)
    speed_kn: tuple[float, float] = (8.0, 14.0)
    speed_change: tuple[float, float] = (0.8, 1.2)
    lane_headings: tuple[float, ...] = (45.0, 225.0)
    heading_spread: float = 10.0
    vessels: tuple[int, int] = (1, 3)
    noise_deg: float = 0.0002
    encounter_fraction: float = 0.3
    region: tuple[float, float, float, float] = (122.0, 30.0, 122.3, 30.25)
    dt_s: float = 30.0
    L_o: int = 6
    L_p: int = 12
    t0: float = 1_650_000_600.0
    seed: int = 0

    def __post_init__(self):
        self.turn_angles = tuple(float(a) for a in self.turn_angles)
        if len(self.turn_angles) < 2:
            raise InvalidArgument("need at least two modes")
        if self.noise_deg < 0:
            raise InvalidArgument("noise must be non-negative")
        if not 0 <= self.encounter_fraction <= 1:
            raise InvalidArgument("encounter_fraction must lie in [0, 1]")

    @property
    def K_modes(self) -> int:
        return len(self.turn_angles)

    @property
    def L(self) -> int:
        return self.L_o + self.L_p


@dataclass
class SynthCorpus:
    scenarios: list[Scenario] = field(default_factory=list)
    modes: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)


def heading_program(cfg: SynthConfig, mode: int, extent: float = 1.0) -> np.ndarray:
    """Heading change (degrees, positive = left) for each of the L - 1 steps."""
    angle = cfg.turn_angles[mode] * extent
    steps = np.arange(cfg.L - 1)
    turned = cfg.turn_rate * np.maximum(0, steps - cfg.turn_start + 1)
    return np.sign(angle) * np.minimum(turned, abs(angle))


def _track(cfg: SynthConfig, start, heading0: float, speed_kn: float, mode: int, extent: float,
           speed_factor: float) -> np.ndarray:
    prog = heading_program(cfg, mode, extent)
    pts = np.empty((cfg.L, 2))
    pts[0] = start
    for t in range(cfg.L - 1):
        hdg = math.radians(heading0 - prog[t])  # compass heading, clockwise from north
        speed = speed_kn * KN * (speed_factor if t >= cfg.L_o - 1 else 1.0)
        east, north = speed * cfg.dt_s * math.sin(hdg), speed * cfg.dt_s * math.cos(hdg)
        lat = pts[t, 1]
        pts[t + 1] = pts[t] + (east / (M_PER_DEG * math.cos(math.radians(lat))), north / M_PER_DEG)
    return pts


def _random_vessel(cfg: SynthConfig, rng: np.random.Generator, start=None, lane: int | None = None):
    mode = int(rng.integers(cfg.K_modes))
    lane = int(rng.integers(len(cfg.lane_headings))) if lane is None else lane
    heading = cfg.lane_headings[lane] + rng.uniform(-cfg.heading_spread, cfg.heading_spread)
    if start is None:
        r = cfg.region
        start = (rng.uniform(r[0], r[2]), rng.uniform(r[1], r[3]))
    pts = _track(cfg, start, heading, rng.uniform(*cfg.speed_kn), mode, rng.uniform(*cfg.angle_jitter),
                 rng.uniform(*cfg.speed_change))
    return pts, mode, lane


def _traj(points, mmsi: str, t0: float, cfg: SynthConfig) -> Trajectory:
    return Trajectory(points, mmsi, t0, cfg.dt_s)


def _observed_velocity(pts: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    return np.array(estimate_velocity(_traj(pts[:cfg.L_o], "x", 0.0, cfg)))


def _place_encounter(cfg: SynthConfig, rng: np.random.Generator, anchor: np.ndarray, tau_h: float):
    """A vessel on the opposite lane whose constant-velocity path meets ``anchor`` after ``tau_h``."""
    lane = int(rng.integers(len(cfg.lane_headings)))
    pts, mode, _ = _random_vessel(cfg, rng, start=(0.0, 0.0), lane=lane)
    last = cfg.L_o - 1
    lat0 = anchor[last, 1]
    pts = pts + (anchor[last] - pts[last])  # align at last observation, then shift along relative motion
    v_a, v_b = _observed_velocity(anchor, cfg), _observed_velocity(pts, cfg)
    rel = (v_a - v_b) * tau_h * 3600.0
    rel_dir = rel / max(np.linalg.norm(rel), 1e-9)
    lateral = np.array([-rel_dir[1], rel_dir[0]]) * rng.uniform(-0.5, 0.5) * NM_M
    shift_m = rel + lateral
    shift = np.array([shift_m[0] / (M_PER_DEG * math.cos(math.radians(lat0))), shift_m[1] / M_PER_DEG])
    return pts + shift, mode


def _pair_ok(mask: np.ndarray, want: np.ndarray) -> bool:
    return np.array_equal(mask, want)


def generate_scenario(cfg: SynthConfig, rng: np.random.Generator, t0: float, index: int,
                      max_tries: int = 200) -> tuple[Scenario, np.ndarray, np.ndarray]:
    lo, hi = cfg.vessels
    for _ in range(max_tries):
        encounter = rng.uniform() < cfg.encounter_fraction
        tracks, modes = [], []
        want_pairs = []
        if encounter:
            n_enc = int(rng.integers(2, 4))
            anchor, mode, _ = _random_vessel(cfg, rng)
            tracks.append(anchor)
            modes.append(mode)
            tau = rng.uniform(0.05, 0.3)
            for j in range(1, n_enc):
                pts, mode = _place_encounter(cfg, rng, anchor, tau)
                tracks.append(pts)
                modes.append(mode)
            want_pairs = [(a, b) for a in range(n_enc) for b in range(a + 1, n_enc)]
            extra = int(rng.integers(0, max(1, hi - n_enc + 1)))
        else:
            extra = int(rng.integers(lo, hi + 1))
        for _ in range(extra):
            pts, mode, _ = _random_vessel(cfg, rng)
            tracks.append(pts)
            modes.append(mode)
        m = len(tracks)
        want = np.zeros((m, m), dtype=np.uint8)
        for a, b in want_pairs:
            want[a, b] = want[b, a] = 1
        mmsis = [f"{200000000 + index * 10 + i}" for i in range(m)]
        try:
            clean = Scenario([_traj(p, mm, t0, cfg) for p, mm in zip(tracks, mmsis)])
        except InvalidArgument:
            continue
        if not _pair_ok(compute_encounter_mask(clean.split(cfg.L_o)[0]), want):
            continue
        noisy = [p + rng.normal(0.0, cfg.noise_deg, p.shape) if cfg.noise_deg > 0 else p for p in tracks]
        return Scenario([_traj(p, mm, t0, cfg) for p, mm in zip(noisy, mmsis)]), np.array(modes), want
    raise RuntimeError("could not place a valid synthetic scenario; loosen the configuration")


def generate(cfg: SynthConfig) -> SynthCorpus:
    """Scenarios, per-vessel oracle mode labels and oracle encounter masks."""
    corpus = SynthCorpus()
    window = cfg.L * cfg.dt_s
    for i in range(cfg.n_scenarios):
        rng = np.random.default_rng([cfg.seed, i])
        scn, modes, mask = generate_scenario(cfg, rng, cfg.t0 + i * window, i)
        corpus.scenarios.append(scn)
        corpus.modes.append(modes)
        corpus.masks.append(mask)
    return corpus


def template_mode(points: np.ndarray, cfg: SynthConfig) -> int:
    """Nearest heading-program template (full nominal angles) for a noise-free track."""
    d = np.diff(np.asarray(points, dtype=np.float64), axis=0)
    lat = np.radians(np.asarray(points)[:-1, 1])
    east, north = d[:, 0] * np.cos(lat), d[:, 1]
    hdg = np.degrees(np.arctan2(east, north))
    change = -(((hdg - hdg[0]) + 180.0) % 360.0 - 180.0)
    errs = [np.sum((change - heading_program(cfg, k)) ** 2) for k in range(cfg.K_modes)]
    return int(np.argmin(errs))


def write_corpus(out_dir, corpus: SynthCorpus, cfg: SynthConfig) -> list[Path]:
    """Same scenario files and index as preprocessing, plus ``labels.json``."""
    config = {"synth": asdict(cfg)}
    masks = [compute_encounter_mask(s.split(cfg.L_o)[0]) for s in corpus.scenarios]
    paths = scenario_io.write_dataset(out_dir, corpus.scenarios, masks, cfg.L_o, cfg.L_p, config)
    labels = {
        "mode_names": ["straight" if a == 0 else ("left" if a > 0 else "right") for a in cfg.turn_angles],
        "scenarios": {p.name: {"modes": m.tolist(), "oracle_mask": om.tolist()}
                      for p, m, om in zip(paths, corpus.modes, corpus.masks)},
        "config": config,
    }
    scenario_io.dump_json(labels, Path(out_dir) / scenario_io.LABELS_NAME)
    return paths


def prototype_modes(cluster_labels: np.ndarray, modes: np.ndarray, C: int) -> np.ndarray:
    """Majority oracle mode of each prototype's training members (-1 when empty)."""
    out = np.full(C, -1, dtype=np.int64)
    for c in range(C):
        members = modes[cluster_labels == c]
        if len(members):
            out[c] = int(np.bincount(members).argmax())
    return out
