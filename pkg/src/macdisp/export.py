"""CSV, JSON and SVG writers for boundaries and reports."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Sequence

import numpy as np

from .region import RegionBoundary

LN2 = math.log(2.0)
BOUNDARY_COLUMNS = ("r1_bits", "r2_bits", "r1_nats", "r2_nats", "kind")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Stable JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def boundaries_csv(boundaries: Sequence[RegionBoundary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOUNDARY_COLUMNS)
    for b in boundaries:
        for r1, r2 in b.points:
            w.writerow([repr(float(r1) / LN2), repr(float(r2) / LN2), repr(float(r1)), repr(float(r2)), b.csv_kind])
    return buf.getvalue()


def rows_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
    return buf.getvalue()


def boundary_provenance(boundaries: Sequence[RegionBoundary]) -> list[dict]:
    return [{"kind": b.csv_kind, "points": len(b.points), **b.provenance} for b in boundaries]


_PALETTE = ("#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(hi: float, count: int = 5) -> list[float]:
    if hi <= 0:
        return [0.0]
    raw = hi / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    return [k * step for k in range(int(hi / step + 1e-9) + 1)]


def boundaries_svg(boundaries: Sequence[RegionBoundary], title: str = "") -> str:
    """Self-contained line plot with bits on the bottom/left and nats on the top/right."""
    width, height, pad = 640, 560, 70
    pts_all = [b.points for b in boundaries if len(b.points)]
    hi = max((float(p.max()) for p in pts_all), default=1.0) / LN2
    hi = hi * 1.05 if hi > 0 else 1.0
    plot = width - 2 * pad

    def sx(bits):
        return pad + plot * bits / hi

    def sy(bits):
        return height - pad - plot * bits / hi

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{pad}" y="{height - pad - plot}" width="{plot}" height="{plot}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(hi):
        out.append(f'<line x1="{sx(t):.2f}" y1="{height - pad}" x2="{sx(t):.2f}" y2="{height - pad + 5}" stroke="#444"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{height - pad + 18}" text-anchor="middle">{t:g}</text>')
        out.append(f'<line x1="{pad - 5}" y1="{sy(t):.2f}" x2="{pad}" y2="{sy(t):.2f}" stroke="#444"/>')
        out.append(f'<text x="{pad - 8}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    for t in _ticks(hi * LN2):
        b = t / LN2
        top = height - pad - plot
        out.append(f'<line x1="{sx(b):.2f}" y1="{top}" x2="{sx(b):.2f}" y2="{top - 5}" stroke="#888"/>')
        out.append(f'<text x="{sx(b):.2f}" y="{top - 8}" text-anchor="middle" fill="#666">{t:g}</text>')
        out.append(f'<line x1="{pad + plot}" y1="{sy(b):.2f}" x2="{pad + plot + 5}" y2="{sy(b):.2f}" stroke="#888"/>')
        out.append(f'<text x="{pad + plot + 8}" y="{sy(b) + 4:.2f}" fill="#666">{t:g}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 25}" text-anchor="middle">R1 (bits/use)</text>')
    out.append(f'<text x="{width / 2}" y="{pad - 30}" text-anchor="middle" fill="#666">R1 (nats/use)</text>')
    out.append(f'<text transform="translate(22,{height / 2}) rotate(-90)" text-anchor="middle">R2 (bits/use)</text>')
    out.append(
        f'<text transform="translate({width - 18},{height / 2}) rotate(90)" text-anchor="middle" fill="#666">R2 (nats/use)</text>'
    )
    for k, b in enumerate(boundaries):
        colour = _PALETTE[k % len(_PALETTE)]
        if len(b.points):
            path = " ".join(f"{sx(r1 / LN2):.2f},{sy(r2 / LN2):.2f}" for r1, r2 in b.points)
            dash = ' stroke-dasharray="6,4"' if b.kind == "first_order" else ""
            out.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="1.6"{dash}/>')
        ly = height - pad - plot + 18 + 16 * k
        out.append(f'<line x1="{pad + plot - 150}" y1="{ly - 4}" x2="{pad + plot - 125}" y2="{ly - 4}" stroke="{colour}"/>')
        out.append(f'<text x="{pad + plot - 120}" y="{ly}">{b.csv_kind}{" (empty)" if b.empty else ""}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
