"""Minimal SVG line charts (no plotting dependency)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
DASHES = {"solid": "", "dashed": "6,4", "dotted": "2,3", "dashdot": "6,3,2,3"}


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    style: str = "solid"
    err: np.ndarray | None = None
    color: str | None = None


@dataclass
class Chart:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False
    width: int = 720
    height: int = 480
    series: list = field(default_factory=list)

    def add(self, label, x, y, style="solid", err=None, color=None) -> "Chart":
        self.series.append(Series(label, np.asarray(x, float), np.asarray(y, float), style,
                                  None if err is None else np.asarray(err, float), color))
        return self

    def render(self) -> str:
        return render(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v):
    return f"{v:.3g}"


def render(chart: Chart) -> str:
    left, right, top, bottom = 80, 170, 40, 55
    W, H = chart.width, chart.height
    pw, ph = W - left - right, H - top - bottom
    xs = [s.x for s in chart.series if len(s.x)]
    ys = []
    for s in chart.series:
        y = s.y
        if s.err is not None:
            y = np.concatenate([y - s.err, y + s.err])
        ys.append(y)
    xall = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    yall = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    if chart.logy:
        yall = yall[yall > 0]
        if not len(yall):
            yall = np.array([1.0, 10.0])
    fin = np.isfinite(yall)
    yall = yall[fin] if fin.any() else np.array([0.0, 1.0])
    x0, x1 = float(np.min(xall)), float(np.max(xall))
    if x1 == x0:
        x1 = x0 + 1
    if chart.logy:
        y0, y1 = math.floor(math.log10(np.min(yall))), math.ceil(math.log10(np.max(yall)))
        if y1 == y0:
            y1 += 1
    else:
        y0, y1 = float(np.min(yall)), float(np.max(yall))
        pad = 0.05 * (y1 - y0 or abs(y1) or 1.0)
        y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        if chart.logy:
            y = math.log10(y) if y > 0 else y0
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{X:.1f}" y1="{top + ph}" x2="{X:.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{top + ph + 18}" text-anchor="middle">{_fmt(t)}</text>')
    yticks = [10.0**k for k in range(int(y0), int(y1) + 1)] if chart.logy else _ticks(y0, y1)
    for t in yticks:
        Y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{Y:.1f}" x2="{left}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{H - 12}" text-anchor="middle">{escape(chart.xlabel)}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2})">{escape(chart.ylabel)}</text>'
    )
    out.append(f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(chart.title)}</text>')
    out.append(f'<clipPath id="plot"><rect x="{left}" y="{top}" width="{pw}" height="{ph}"/></clipPath>')
    for i, s in enumerate(chart.series):
        color = s.color or COLORS[i % len(COLORS)]
        ok = np.isfinite(s.y) & (s.y > 0 if chart.logy else True)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(s.x[ok], s.y[ok]))
        dash = DASHES.get(s.style, "")
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        if s.err is not None:
            for a, b, e in zip(s.x[ok], s.y[ok], s.err[ok]):
                lo = b - e if not chart.logy or b - e > 0 else b
                out.append(
                    f'<line x1="{px(a):.2f}" y1="{py(lo):.2f}" x2="{px(a):.2f}" y2="{py(b + e):.2f}" '
                    f'stroke="{color}" stroke-opacity="0.4" clip-path="url(#plot)"/>'
                )
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} '
            'clip-path="url(#plot)"/>'
        )
        ly = top + 14 + 18 * i
        out.append(
            f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 40}" y2="{ly}" stroke="{color}" '
            f'stroke-width="1.5"{dash_attr}/>'
        )
        out.append(f'<text x="{left + pw + 45}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
