"""Independent brute-force re-implementations used as test oracles.

Nothing here imports the package: the rules are replayed with plain loops,
hand-written geometry and a dense linear solve for the spline.
"""
from __future__ import annotations

import math

import numpy as np

R = 6_371_000.0
NM = 1852.0


def hav(a, b):
    p1, p2 = math.radians(a[1]), math.radians(b[1])
    h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(b[0] - a[0]) / 2) ** 2
    return 2 * R * math.asin(math.sqrt(min(1.0, h)))


def offset(a, b):
    lat = (a[1] + b[1]) / 2
    e = hav((a[0], lat), (b[0], lat)) * np.sign(b[0] - a[0])
    n = hav((a[0], a[1]), (a[0], b[1])) * np.sign(b[1] - a[1])
    return np.array([e, n])


def mask(coords, dt, tcpa=(-0.3, 0.8), dcpa=(0.0, 2.0)):
    """Encounter mask from the last two points of each (L, 2) track."""
    m = len(coords)
    out = np.zeros((m, m), dtype=np.uint8)
    vel = [offset(c[-2], c[-1]) / dt for c in coords]
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            p = offset(coords[i][-1], coords[j][-1])
            v = vel[j] - vel[i]
            t = 0.0 if np.linalg.norm(v) < 1e-6 else -p @ v / (v @ v)
            d = np.linalg.norm(p + t * v) / NM
            out[i, j] = tcpa[0] <= t / 3600 <= tcpa[1] and dcpa[0] <= d <= dcpa[1]
    return out


def not_a_knot(x, y, xq):
    """Cubic spline with not-a-knot ends via second derivatives from a dense solve."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x) - 1
    h = np.diff(x)
    A = np.zeros((n + 1, n + 1))
    rhs = np.zeros(n + 1)
    # third derivative continuous across the first and last interior knots
    A[0, 0], A[0, 1], A[0, 2] = -1 / h[0], 1 / h[0] + 1 / h[1], -1 / h[1]
    A[n, n - 2], A[n, n - 1], A[n, n] = -1 / h[n - 2], 1 / h[n - 2] + 1 / h[n - 1], -1 / h[n - 1]
    for i in range(1, n):
        A[i, i - 1] = h[i - 1]
        A[i, i] = 2 * (h[i - 1] + h[i])
        A[i, i + 1] = h[i]
        rhs[i] = 6 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1])
    M = np.linalg.solve(A, rhs)
    out = []
    for q in xq:
        i = min(max(int(np.searchsorted(x, q, side="right")) - 1, 0), n - 1)
        a, b = x[i + 1] - q, q - x[i]
        out.append(M[i] * a ** 3 / (6 * h[i]) + M[i + 1] * b ** 3 / (6 * h[i])
                   + (y[i] / h[i] - M[i] * h[i] / 6) * a + (y[i + 1] / h[i] - M[i + 1] * h[i] / 6) * b)
    return np.array(out)


def preprocess(csv_text: str, region, gap=600.0, min_points=20, dt=30.0, L_o=6, L_p=12):
    """Scenario documents and index entries for an AIS CSV, replaying every rule."""
    lines = csv_text.strip().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    first_seen = {}
    for r in rows:
        key = (r["mmsi"], float(r["timestamp"]))
        if key not in first_seen:
            first_seen[key] = (float(r["lon"]), float(r["lat"]))
    tracks = {}
    for (mmsi, ts), (lon, lat) in first_seen.items():
        if region[0] <= lon <= region[2] and region[1] <= lat <= region[3]:
            tracks.setdefault(mmsi, []).append((ts, lon, lat))
    resampled = []  # (mmsi, first grid index, points)
    for mmsi in sorted(tracks):
        pts = sorted(tracks[mmsi])
        segs, cur = [], [pts[0]]
        for p in pts[1:]:
            if p[0] - cur[-1][0] > gap:
                segs.append(cur)
                cur = [p]
            else:
                cur.append(p)
        segs.append(cur)
        for seg in segs:
            if len(seg) < min_points:
                continue
            t = np.array([p[0] for p in seg])
            g0, g1 = math.ceil(t[0] / dt), math.floor(t[-1] / dt)
            grid = np.arange(g0, g1 + 1) * dt
            lon = not_a_knot(t - t[0], [p[1] for p in seg], grid - t[0])
            lat = not_a_knot(t - t[0], [p[2] for p in seg], grid - t[0])
            resampled.append((mmsi, g0, np.column_stack([lon, lat])))
    L = L_o + L_p
    lo = min(g0 for _, g0, _ in resampled)
    hi = max(g0 + len(p) for _, g0, p in resampled)
    docs = []
    for w in range(lo // L - 1, hi // L + 2):
        start = w * L
        members = []
        for mmsi, g0, pts in resampled:
            if g0 <= start and start + L - 1 <= g0 + len(pts) - 1:
                members.append((mmsi, pts[start - g0:start - g0 + L]))
        if not members:
            continue
        members.sort(key=lambda t: t[0])
        docs.append({
            "dt": dt, "t0": start * dt, "L_o": L_o, "L_p": L_p,
            "trajectories": [{"mmsi": mm, "points": p.tolist()} for mm, p in members],
            "mask": mask([p[:L_o] for _, p in members], dt).tolist(),
        })
    return docs


def best_of_n(candidates, gt):
    """Exhaustive best-of-n: every j scored, smallest ADE + FDE, first index on ties."""
    best = None
    for j, c in enumerate(candidates):
        d = [hav(c[t], gt[t]) for t in range(len(gt))]
        ade, fde = sum(d) / len(d), d[-1]
        if best is None or ade + fde < best[0] + best[1]:
            best = (ade, fde, j)
    return best
