"""Standalone SVG plots built from row tables (no external assets)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import EmptyPlotError, UsageError

WIDTH, HEIGHT = 640, 400
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#17becf")
BELOW, ABOVE = "#1f77b4", "#d62728"


@dataclass
class PlotSpec:
    x: str
    y: Sequence[str]
    kind: str = "line"  # line | scatter
    title: str = ""
    thresholds: Sequence[float] = ()
    split_at: float | None = None  # colour points above this value differently
    fit: bool = False  # least-squares line through the first series
    log_y: bool = False
    labels: Mapping[str, str] = field(default_factory=dict)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """(intercept, slope) of the least-squares line."""
    slope, intercept = np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)
    return float(intercept), float(slope)


def emit_svg(table: Sequence[Mapping[str, float]], spec: PlotSpec) -> str:
    """Render ``table`` rows according to ``spec``."""
    if not table:
        raise EmptyPlotError("cannot plot an empty table")
    cols = [spec.x, *spec.y]
    for c in cols:
        if c not in table[0]:
            raise UsageError(f"column {c!r} not in table")
    if spec.kind not in ("line", "scatter"):
        raise UsageError("kind must be line or scatter")
    xs = np.array([float(r[spec.x]) for r in table])
    ys = {c: np.array([float(r[c]) for r in table]) for c in spec.y}

    def ty(v):
        if spec.log_y:
            return np.log10(np.maximum(v, 1e-300))
        return v

    all_y = np.concatenate([ty(v) for v in ys.values()] + [ty(np.array(spec.thresholds, float))])
    finite = all_y[np.isfinite(all_y)]
    y0, y1 = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    x0, x1 = float(xs.min()), float(xs.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if spec.title:
        out.append(f'<text x="{WIDTH / 2}" y="18" text-anchor="middle">{escape(spec.title)}</text>')
    # axes
    out.append(
        f'<path d="M{left},{top} V{top + ph} H{left + pw}" stroke="black" fill="none" class="axes"/>'
    )
    for t in _ticks(x0, x1):
        out.append(
            f'<text x="{_fmt(px(t))}" y="{top + ph + 15}" text-anchor="middle">{_fmt(t)}</text>'
        )
    for t in _ticks(y0, y1):
        label = _fmt(10**t) if spec.log_y else _fmt(t)
        out.append(f'<text x="{left - 5}" y="{_fmt(py(t) + 4)}" text-anchor="end">{label}</text>')
    out.append(
        f'<text x="{left + pw / 2}" y="{HEIGHT - 8}" text-anchor="middle">'
        f"{escape(spec.labels.get(spec.x, spec.x))}</text>"
    )
    for t in spec.thresholds:
        yy = _fmt(py(float(ty(np.array(t)))))
        out.append(
            f'<line x1="{left}" x2="{left + pw}" y1="{yy}" y2="{yy}" stroke="#888" '
            f'stroke-dasharray="4 3" class="threshold"/>'
        )
    for i, (name, v) in enumerate(ys.items()):
        colour = PALETTE[i % len(PALETTE)]
        tv = ty(v)
        ok = np.isfinite(tv)
        if len(table) == 1 or spec.kind == "scatter" or spec.split_at is not None:
            for xv, yv, raw in zip(xs[ok], tv[ok], v[ok]):
                c = colour
                if spec.split_at is not None:
                    c = ABOVE if raw > spec.split_at else BELOW
                out.append(
                    f'<circle cx="{_fmt(px(xv))}" cy="{_fmt(py(yv))}" r="2" fill="{c}" class="marker"/>'
                )
        else:
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(xs[ok], tv[ok]))
            out.append(f'<polyline points="{pts}" stroke="{colour}" fill="none" class="series"/>')
        out.append(
            f'<text x="{left + pw - 5}" y="{top + 12 + 13 * i}" text-anchor="end" fill="{colour}">'
            f"{escape(spec.labels.get(name, name))}</text>"
        )
    if spec.fit and len(table) >= 2:
        a, b = linear_fit(xs, ys[spec.y[0]])
        out.append(
            f'<line x1="{_fmt(px(x0))}" y1="{_fmt(py(ty(np.array(a + b * x0))))}" '
            f'x2="{_fmt(px(x1))}" y2="{_fmt(py(ty(np.array(a + b * x1))))}" stroke="black" '
            f'class="fit" data-intercept="{a!r}" data-slope="{b!r}"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
