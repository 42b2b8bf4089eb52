"""Minimal static SVG line plots; CSV stays the canonical output."""
from __future__ import annotations

import math
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 62, 14, 34, 46


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if not (hi > lo):
        hi = lo + 1.0
    # Spans below float resolution cannot be subdivided.
    if hi - lo <= 8.0 * abs(max(abs(lo), abs(hi))) * 2.3e-16:
        return [lo, hi]
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m for m in (1.0, 2.0, 2.5, 5.0, 10.0)), key=lambda m: abs(m * mag - raw)) * mag
    first = math.ceil(lo / step) * step
    count = int(math.floor((hi - first) / step + 1e-9)) + 1
    ticks = []
    for k in range(max(min(count, 20), 0)):
        t = first + k * step
        ticks.append(0.0 if abs(t) < 1e-12 * abs(step) else t)
    return ticks or [lo, hi]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.2e}"
    return f"{v:.6g}"


def line_plot(path, x: Sequence[float], ys: Sequence[Sequence[float]],
              labels: Sequence[str] | None = None, title: str = "",
              xlabel: str = "", ylabel: str = "") -> None:
    """Write a line plot of one or more series sharing the x axis."""
    x = np.asarray(x, dtype=float)
    series = [np.asarray(y, dtype=float) for y in ys]
    finite = np.concatenate([s[np.isfinite(s)] for s in series if np.isfinite(s).any()]
                            or [np.array([0.0, 1.0])])
    xlo, xhi = float(np.min(x)), float(np.max(x))
    ylo, yhi = float(np.min(finite)), float(np.max(finite))
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad

    def px(v):
        return _ML + (v - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def py(v):
        return _H - _MB - (v - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}">',
           f"<metadata>generated {datetime.now(timezone.utc).isoformat()}</metadata>",
           f'<rect width="{_W}" height="{_H}" fill="white"/>']
    # axes box and ticks
    out.append(f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
               f'height="{_H - _MT - _MB}" fill="none" stroke="#333"/>')
    for t in _ticks(xlo, xhi):
        xp = px(t)
        out.append(f'<line x1="{xp:.1f}" y1="{_H - _MB}" x2="{xp:.1f}" '
                   f'y2="{_H - _MB + 4}" stroke="#333"/>')
        out.append(f'<text x="{xp:.1f}" y="{_H - _MB + 16}" font-size="11" '
                   f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        yp = py(t)
        out.append(f'<line x1="{_ML - 4}" y1="{yp:.1f}" x2="{_ML}" y2="{yp:.1f}" stroke="#333"/>')
        out.append(f'<text x="{_ML - 7}" y="{yp + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{_fmt(t)}</text>')
    if title:
        out.append(f'<text x="{_W / 2}" y="{_MT - 12}" font-size="14" '
                   f'text-anchor="middle">{title}</text>')
    if xlabel:
        out.append(f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 8}" font-size="12" '
                   f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{(_MT + _H - _MB) / 2}" font-size="12" '
                   f'text-anchor="middle" transform="rotate(-90 14 {(_MT + _H - _MB) / 2})">'
                   f'{ylabel}</text>')
    for k, s in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        good = np.isfinite(s)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[good], s[good]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if labels is not None and k < len(labels):
            ly = _MT + 16 + 15 * k
            out.append(f'<line x1="{_W - _MR - 120}" y1="{ly - 4}" x2="{_W - _MR - 95}" '
                       f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_W - _MR - 90}" y="{ly}" font-size="11">{labels[k]}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
