"""Trajectory/scenario types, great-circle distance and encounter geometry."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InsufficientData, InvalidArgument

EARTH_RADIUS_M = 6_371_000.0
NM_M = 1852.0
TCPA_RANGE_H = (-0.3, 0.8)
DCPA_RANGE_NM = (0.0, 2.0)
# Relative speeds below this are treated as "already at CPA".
MIN_REL_SPEED = 1e-6


class Point(NamedTuple):
    lon: float
    lat: float

    def validate(self) -> "Point":
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise InvalidArgument(f"non-finite point {self!r}")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise InvalidArgument(f"point out of range {self!r}")
        return self


def _check_coords(points: np.ndarray) -> None:
    if not np.all(np.isfinite(points)):
        raise InvalidArgument("non-finite coordinates")
    if np.any(np.abs(points[..., 0]) > 180.0) or np.any(np.abs(points[..., 1]) > 90.0):
        raise InvalidArgument("coordinates out of lon/lat range")


@dataclass
class Trajectory:
    """An ordered, uniformly sampled sequence of (lon, lat) positions."""

    points: np.ndarray
    mmsi: str = ""
    t0: float = 0.0
    dt: float = 30.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) < 1:
            raise InvalidArgument("trajectory needs at least one point")
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        _check_coords(self.points)
        self.mmsi = str(self.mmsi)

    def __len__(self) -> int:
        return len(self.points)

    def point(self, t: int) -> Point:
        lon, lat = self.points[t]
        return Point(float(lon), float(lat))

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(self.points[start:stop], self.mmsi, self.t0 + start * self.dt, self.dt)


@dataclass
class Scenario:
    """Co-temporal trajectories on a shared time grid."""

    trajectories: list[Trajectory] = field(default_factory=list)

    def __post_init__(self):
        if not self.trajectories:
            raise InvalidArgument("scenario needs at least one trajectory")
        first = self.trajectories[0]
        for tr in self.trajectories[1:]:
            if (tr.t0, tr.dt, len(tr)) != (first.t0, first.dt, len(first)):
                raise InvalidArgument("scenario trajectories must share t0, dt and length")
        ids = [tr.mmsi for tr in self.trajectories]
        if len(set(ids)) != len(ids):
            raise InvalidArgument(f"duplicate mmsi in scenario: {ids}")

    @property
    def m(self) -> int:
        return len(self.trajectories)

    @property
    def length(self) -> int:
        return len(self.trajectories[0])

    @property
    def t0(self) -> float:
        return self.trajectories[0].t0

    @property
    def dt(self) -> float:
        return self.trajectories[0].dt

    @property
    def mmsis(self) -> list[str]:
        return [tr.mmsi for tr in self.trajectories]

    def coords(self) -> np.ndarray:
        """Positions as an (m, L, 2) float64 array."""
        return np.stack([tr.points for tr in self.trajectories])

    def split(self, L_o: int) -> tuple["Scenario", "Scenario"]:
        """Observed (first ``L_o`` steps) and future parts."""
        obs = [tr.slice(0, L_o) for tr in self.trajectories]
        fut = [tr.slice(L_o, len(tr)) for tr in self.trajectories]
        return Scenario(obs), Scenario(fut)


def haversine_m(a: Point, b: Point) -> float:
    """Great-circle distance in meters between two (lon, lat) points."""
    lon1, lat1 = float(a[0]), float(a[1])
    lon2, lat2 = float(b[0]), float(b[1])
    if not all(math.isfinite(v) for v in (lon1, lat1, lon2, lat2)):
        raise InvalidArgument("haversine_m needs finite coordinates")
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(abs(lat2 - lat1))
    dlam = math.radians(abs(lon2 - lon1))
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


def haversine_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised haversine over trailing (lon, lat) axes, broadcasting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidArgument("haversine_array needs finite coordinates")
    phi1 = np.radians(a[..., 1])
    phi2 = np.radians(b[..., 1])
    dphi = np.radians(np.abs(b[..., 1] - a[..., 1]))
    dlam = np.radians(np.abs(b[..., 0] - a[..., 0]))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


def local_offset_m(origin: Point, target: Point) -> tuple[float, float]:
    """Signed (east, north) offset in meters from ``origin`` to ``target``.

    East is the haversine along longitude at the pair's mean latitude, north
    the haversine along latitude; both carry the sign of the coordinate
    difference. The construction is antisymmetric in its arguments.
    """
    mean_lat = (origin[1] + target[1]) / 2
    east = haversine_m((origin[0], mean_lat), (target[0], mean_lat))
    north = haversine_m((origin[0], origin[1]), (origin[0], target[1]))
    return (math.copysign(east, target[0] - origin[0]) if target[0] != origin[0] else 0.0,
            math.copysign(north, target[1] - origin[1]) if target[1] != origin[1] else 0.0)


def estimate_velocity(traj: Trajectory) -> tuple[float, float]:
    """(v_east, v_north) in m/s from the last two points of ``traj``."""
    if len(traj) < 2:
        raise InsufficientData("velocity needs at least two points")
    east, north = local_offset_m(traj.point(-2), traj.point(-1))
    return east / traj.dt, north / traj.dt


def cpa(pos_i: Point, vel_i: Sequence[float], pos_j: Point, vel_j: Sequence[float]) -> tuple[float, float]:
    """Closest point of approach under constant velocities.

    Velocities are (east, north) in m/s. Returns (tcpa in hours, dcpa in
    nautical miles); a negative tcpa means the closest approach is past.
    """
    px, py = local_offset_m(pos_i, pos_j)
    vx = float(vel_j[0]) - float(vel_i[0])
    vy = float(vel_j[1]) - float(vel_i[1])
    return cpa_flat((px, py), (vx, vy))


def cpa_flat(p: Sequence[float], v: Sequence[float]) -> tuple[float, float]:
    """CPA for relative position ``p`` (m) and relative velocity ``v`` (m/s)."""
    px, py = float(p[0]), float(p[1])
    vx, vy = float(v[0]), float(v[1])
    speed2 = vx * vx + vy * vy
    if math.sqrt(speed2) < MIN_REL_SPEED:
        t = 0.0
    else:
        t = -(px * vx + py * vy) / speed2
    dx, dy = px + t * vx, py + t * vy
    return t / 3600.0, math.hypot(dx, dy) / NM_M


def in_encounter(tcpa_h: float, dcpa_nm: float,
                 tcpa_range: tuple[float, float] = TCPA_RANGE_H,
                 dcpa_range: tuple[float, float] = DCPA_RANGE_NM) -> bool:
    return tcpa_range[0] <= tcpa_h <= tcpa_range[1] and dcpa_range[0] <= dcpa_nm <= dcpa_range[1]


def compute_encounter_mask(scenario_observed: Scenario,
                           tcpa_range: tuple[float, float] = TCPA_RANGE_H,
                           dcpa_range: tuple[float, float] = DCPA_RANGE_NM) -> np.ndarray:
    """Binary m x m encounter matrix from last observed positions and velocities."""
    trajs = scenario_observed.trajectories
    vels = [estimate_velocity(tr) for tr in trajs]
    m = len(trajs)
    mask = np.zeros((m, m), dtype=np.uint8)
    for i in range(m):
        for j in range(i + 1, m):
            tcpa, dcpa = cpa(trajs[i].point(-1), vels[i], trajs[j].point(-1), vels[j])
            if in_encounter(tcpa, dcpa, tcpa_range, dcpa_range):
                mask[i, j] = mask[j, i] = 1
    return mask
