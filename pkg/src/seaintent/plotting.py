"""Standalone SVG and GeoJSON renderings of predictions and prototypes."""
from __future__ import annotations

from typing import Sequence

import numpy as np

OBSERVED_STYLE = 'stroke="#e0a800" stroke-width="2.5" stroke-dasharray="6 3" fill="none"'
TRUTH_STYLE = 'stroke="#000000" stroke-width="2" fill="none"'
BRANCH_COLORS = ("#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")


def _branch_style(rank: int, prob: float) -> str:
    color = BRANCH_COLORS[rank % len(BRANCH_COLORS)]
    width = 0.8 + 2.5 * float(prob)
    return f'stroke="{color}" stroke-width="{width:.2f}" stroke-dasharray="4 2" fill="none" opacity="0.85"'


class _Projector:
    def __init__(self, pts: np.ndarray, size: int, pad: int):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.maximum(hi - lo, 1e-9)
        self.lo, self.pad = lo, pad
        self.scale = (size - 2 * pad) / span.max()
        self.height = size

    def __call__(self, lon: float, lat: float) -> tuple[float, float]:
        x = self.pad + (lon - self.lo[0]) * self.scale
        y = self.height - self.pad - (lat - self.lo[1]) * self.scale
        return x, y


def _polyline(proj: _Projector, pts, style: str, title: str = "") -> str:
    coords = " ".join("%.2f,%.2f" % proj(lon, lat) for lon, lat in pts)
    tip = f"<title>{title}</title>" if title else ""
    return f'<polyline points="{coords}" {style}>{tip}</polyline>'


def prediction_svg(doc: dict, size: int = 800, pad: int = 40) -> str:
    """Render a prediction document: observed, ground truth, candidates by branch rank."""
    vessels = doc["vessels"]
    pts = [np.asarray(v["observed"]) for v in vessels]
    pts += [np.asarray(v["ground_truth"]) for v in vessels if v.get("ground_truth")]
    pts += [np.asarray(c["points"]) for v in vessels for c in v["candidates"]]
    proj = _Projector(np.concatenate(pts), size, pad)
    body = []
    for v in vessels:
        ranks = {b: r for r, b in enumerate(v["branch_ids"])}
        for c in v["candidates"]:
            r = ranks[c["branch_id"]]
            start = [v["observed"][-1]] + c["points"]
            body.append(_polyline(proj, start, _branch_style(r, c["branch_prob"]),
                                  f"{v['mmsi']} branch {c['branch_id']} p={c['branch_prob']:.4f}"))
        if v.get("ground_truth"):
            body.append(_polyline(proj, [v["observed"][-1]] + v["ground_truth"], TRUTH_STYLE, f"{v['mmsi']} truth"))
        body.append(_polyline(proj, v["observed"], OBSERVED_STYLE, f"{v['mmsi']} observed"))
        x, y = proj(*v["observed"][0])
        body.append(f'<text x="{x:.2f}" y="{y - 6:.2f}" font-size="11" font-family="sans-serif">{v["mmsi"]}</text>')
    legend = [("observed", OBSERVED_STYLE), ("ground truth", TRUTH_STYLE)]
    legend += [(f"branch rank {r + 1}", _branch_style(r, 0.5)) for r in range(min(3, max(len(v["branch_ids"]) for v in vessels)))]
    for i, (label, style) in enumerate(legend):
        y = 18 + 16 * i
        body.append(f'<line x1="10" y1="{y}" x2="40" y2="{y}" {style}/>')
        body.append(f'<text x="46" y="{y + 4}" font-size="12" font-family="sans-serif">{label}</text>')
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def _line(coords, **props) -> dict:
    return {"type": "Feature", "properties": props,
            "geometry": {"type": "LineString", "coordinates": [list(map(float, p)) for p in coords]}}


def prediction_geojson(doc: dict) -> dict:
    feats = []
    for v in doc["vessels"]:
        feats.append(_line(v["observed"], mmsi=v["mmsi"], kind="observed"))
        if v.get("ground_truth"):
            feats.append(_line(v["ground_truth"], mmsi=v["mmsi"], kind="ground_truth"))
        for c in v["candidates"]:
            feats.append(_line(c["points"], mmsi=v["mmsi"], kind="candidate", branch_id=c["branch_id"],
                               branch_prob=c["branch_prob"]))
    return {"type": "FeatureCollection", "features": feats}


def prototypes_geojson(prototypes_deg: Sequence[np.ndarray]) -> dict:
    return {"type": "FeatureCollection",
            "features": [_line(p, prototype=i, kind="prototype") for i, p in enumerate(prototypes_deg)]}
