"""AIS records to uniformly resampled, windowed scenarios."""
from __future__ import annotations

import csv
import logging
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InsufficientData, InvalidArgument
from .geo import Scenario, Trajectory, compute_encounter_mask
from . import scenario_io

log = logging.getLogger(__name__)

BBox = tuple[float, float, float, float]  # lon_min, lat_min, lon_max, lat_max


@dataclass(frozen=True)
class AisRecord:
    mmsi: str
    timestamp: float
    lon: float
    lat: float
    sog: float | None = None
    cog: float | None = None


@dataclass
class Segment:
    mmsi: str
    times: np.ndarray
    points: np.ndarray

    def __len__(self):
        return len(self.times)


@dataclass
class PipelineConfig:
    gap_threshold_s: float = 600.0
    min_points: int = 20
    resample_dt_s: float = 30.0
    region: BBox | None = None
    window_s: float | None = None  # defaults to (L_o + L_p) * resample_dt_s
    L_o: int = 6
    L_p: int = 12

    def __post_init__(self):
        if self.region is not None:
            self.region = tuple(float(v) for v in self.region)
            if len(self.region) != 4 or self.region[0] > self.region[2] or self.region[1] > self.region[3]:
                raise InvalidArgument(f"bad region bbox {self.region}")
        for name in ("gap_threshold_s", "min_points", "resample_dt_s", "L_o", "L_p"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.window_s is not None and self.window_s < self.L * self.resample_dt_s:
            raise InvalidArgument("window_s shorter than one scenario")

    @property
    def L(self) -> int:
        return self.L_o + self.L_p

    @property
    def window(self) -> float:
        return self.window_s if self.window_s is not None else self.L * self.resample_dt_s


@dataclass
class ReadResult:
    records: list[AisRecord] = field(default_factory=list)
    rejected: int = 0


def _opt_float(text: str | None) -> float | None:
    if text is None or text.strip() == "":
        return None
    return float(text)


def parse_record(row: dict) -> AisRecord:
    """Build a validated record from a CSV row; raises ValueError when malformed."""
    mmsi = (row.get("mmsi") or "").strip()
    if not mmsi:
        raise ValueError("missing mmsi")
    ts, lon, lat = float(row["timestamp"]), float(row["lon"]), float(row["lat"])
    if not all(math.isfinite(v) for v in (ts, lon, lat)):
        raise ValueError("non-finite field")
    if ts < 0 or not -180 <= lon <= 180 or not -90 <= lat <= 90:
        raise ValueError("field out of range")
    return AisRecord(mmsi, ts, lon, lat, _opt_float(row.get("sog")), _opt_float(row.get("cog")))


def read_ais_csv(path: str | os.PathLike) -> ReadResult:
    """Read ``mmsi,timestamp,lon,lat,sog,cog`` CSV; malformed rows are counted, not fatal."""
    out = ReadResult()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"mmsi", "timestamp", "lon", "lat"} - set(reader.fieldnames or ())
        if missing:
            raise InvalidArgument(f"CSV header lacks columns {sorted(missing)}")
        for row in reader:
            try:
                out.records.append(parse_record(row))
            except (ValueError, TypeError, KeyError):
                out.rejected += 1
    if out.rejected:
        log.warning("rejected %d malformed AIS rows", out.rejected)
    return out


def _in_region(rec: AisRecord, region: BBox | None) -> bool:
    if region is None:
        return True
    return region[0] <= rec.lon <= region[2] and region[1] <= rec.lat <= region[3]


def extract_tracks(records: Iterable[AisRecord], region: BBox | None = None) -> dict[str, list[AisRecord]]:
    """Group by MMSI, sort by time, drop repeated timestamps, clip to ``region``.

    Of several records sharing (mmsi, timestamp) the first one in input order
    wins; region clipping happens after de-duplication.
    """
    by_mmsi: dict[str, list[AisRecord]] = defaultdict(list)
    for rec in records:
        by_mmsi[rec.mmsi].append(rec)
    tracks = {}
    for mmsi in sorted(by_mmsi):
        recs = sorted(by_mmsi[mmsi], key=lambda r: r.timestamp)  # stable: keeps input order on ties
        kept = []
        for rec in recs:
            if kept and kept[-1].timestamp == rec.timestamp:
                continue
            kept.append(rec)
        kept = [r for r in kept if _in_region(r, region)]
        if kept:
            tracks[mmsi] = kept
    return tracks


def segment_track(track: Sequence[AisRecord], gap_threshold_s: float = 600.0, min_points: int = 20) -> list[Segment]:
    """Split where consecutive timestamps differ by more than the threshold."""
    groups: list[list[AisRecord]] = []
    for rec in track:
        if groups and rec.timestamp - groups[-1][-1].timestamp <= gap_threshold_s:
            groups[-1].append(rec)
        else:
            groups.append([rec])
    return [
        Segment(g[0].mmsi, np.array([r.timestamp for r in g], dtype=np.float64),
                np.array([[r.lon, r.lat] for r in g], dtype=np.float64))
        for g in groups if len(g) >= min_points
    ]


def resample_segment(seg: Segment, dt_s: float = 30.0, align: bool = False) -> Trajectory:
    """Cubic-spline resample of lon(t) and lat(t) onto a uniform grid.

    The grid starts at the first timestamp (or, with ``align``, at the first
    multiple of ``dt_s`` not before it) and stops at the last grid point not
    after the final timestamp.
    """
    if len(seg) < 4:
        raise InsufficientData(f"spline resampling needs >= 4 points, got {len(seg)}")
    t = seg.times
    if np.any(np.diff(t) <= 0):
        raise InvalidArgument("segment timestamps must be strictly increasing")
    t_first, t_last = float(t[0]), float(t[-1])
    if align:
        start_idx = math.ceil(t_first / dt_s)
        stop_idx = math.floor(t_last / dt_s)
        if stop_idx < start_idx:
            raise InsufficientData("segment spans no aligned grid point")
        grid = np.arange(start_idx, stop_idx + 1, dtype=np.float64) * dt_s
    else:
        count = int(math.floor((t_last - t_first) / dt_s + 1e-9)) + 1
        grid = t_first + np.arange(count, dtype=np.float64) * dt_s
    rel = t - t_first
    spline = CubicSpline(rel, seg.points, axis=0, bc_type="not-a-knot")
    values = spline(grid - t_first)
    return Trajectory(values, seg.mmsi, float(grid[0]), float(dt_s))


def build_scenarios(trajectories: Sequence[Trajectory], L_o: int = 6, L_p: int = 12,
                    window_s: float | None = None) -> list[Scenario]:
    """Cut grid-aligned trajectories into consecutive non-overlapping windows.

    Windows start at epoch multiples of ``window_s`` (default ``L * dt``); a
    vessel joins a window's scenario only if it covers the window's first
    ``L`` grid points.
    """
    L = L_o + L_p
    if not trajectories:
        return []
    dt = trajectories[0].dt
    window_s = L * dt if window_s is None else window_s
    stride = int(round(window_s / dt))
    if stride < L or abs(stride * dt - window_s) > 1e-9 * window_s:
        raise InvalidArgument("window must be a whole number of steps and at least L steps")
    windows: dict[int, list[Trajectory]] = defaultdict(list)
    for tr in trajectories:
        if tr.dt != dt:
            raise InvalidArgument("all trajectories must share dt")
        g0 = int(round(tr.t0 / dt))
        if abs(g0 * dt - tr.t0) > 1e-6:
            raise InvalidArgument(f"trajectory {tr.mmsi} is not grid-aligned")
        g_end = g0 + len(tr) - 1
        w = -(-g0 // stride)
        while w * stride + L - 1 <= g_end:
            start = w * stride - g0
            windows[w].append(Trajectory(tr.points[start:start + L], tr.mmsi, w * stride * dt, dt))
            w += 1
    out = []
    for w in sorted(windows):
        trajs = sorted(windows[w], key=lambda tr: tr.mmsi)
        out.append(Scenario(trajs))
    return out


def run_pipeline(records: Iterable[AisRecord], cfg: PipelineConfig) -> list[Scenario]:
    tracks = extract_tracks(records, cfg.region)
    resampled = []
    for mmsi, track in tracks.items():
        for seg in segment_track(track, cfg.gap_threshold_s, cfg.min_points):
            try:
                resampled.append(resample_segment(seg, cfg.resample_dt_s, align=True))
            except InsufficientData:
                log.info("segment of %s too short for the aligned grid; skipped", mmsi)
    return build_scenarios(resampled, cfg.L_o, cfg.L_p, cfg.window)


def preprocess_csv(csv_path: str | os.PathLike, out_dir: str | os.PathLike, cfg: PipelineConfig,
                   extra_config: dict | None = None) -> list[Path]:
    """Full CSV-to-files pipeline; returns the written scenario paths."""
    read = read_ais_csv(csv_path)
    scenarios = run_pipeline(read.records, cfg)
    config = {"pipeline": asdict(cfg), **(extra_config or {})}
    masks = [compute_encounter_mask(s.split(cfg.L_o)[0]) for s in scenarios]
    return scenario_io.write_dataset(out_dir, scenarios, masks, cfg.L_o, cfg.L_p, config,
                                     extra_index={"rejected_records": read.rejected})
