"""Minimal native SVG 1.1 line plots: polylines, axes with ticks, legend.

Output is deterministic: coordinates are written with two decimals and
series keep their input order, so identical data give identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf")


@dataclass(frozen=True)
class Series:
    """One polyline.  Series without a label are drawn but left out of the legend."""

    x: np.ndarray
    y: np.ndarray
    label: str | None = None
    color: str | None = None
    width: float = 1.5
    opacity: float = 1.0
    dashed: bool = False


@dataclass(frozen=True)
class _Axis:
    lo: float
    hi: float
    log: bool

    def scale(self, v: np.ndarray, start: float, stop: float) -> np.ndarray:
        a, b, w = (math.log10(self.lo), math.log10(self.hi), np.log10(v)) if self.log else (self.lo, self.hi, v)
        return start + (w - a) / (b - a) * (stop - start)


def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick positions (1, 2 or 5 times a power of ten) covering ``[lo, hi]``."""
    span = hi - lo
    raw = span / max(target, 1)
    magnitude = 10 ** math.floor(math.log10(raw))
    step = next(m * magnitude for m in (1, 2, 5, 10) if m * magnitude >= raw)
    first = math.ceil(lo / step - 1e-9) * step
    ticks, v = [], first
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _log_ticks(lo: float, hi: float) -> list[float]:
    return [10.0**k for k in range(math.ceil(math.log10(lo) - 1e-9), math.floor(math.log10(hi) + 1e-9) + 1)]


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}".replace("e+0", "e").replace("e-0", "e-")
    return f"{v:.6g}"


def _range(values: list[np.ndarray], log: bool, fixed: tuple[float, float] | None) -> _Axis:
    if fixed is not None:
        return _Axis(float(fixed[0]), float(fixed[1]), log)
    data = np.concatenate([v[np.isfinite(v) & ((v > 0) if log else True)] for v in values]) if values else np.array([])
    if data.size == 0:
        return _Axis(1.0, 10.0, log) if log else _Axis(0.0, 1.0, log)
    lo, hi = float(data.min()), float(data.max())
    if log:
        return _Axis(10 ** math.floor(math.log10(lo)), 10 ** math.ceil(math.log10(hi)) if hi > lo else lo * 10, True)
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return _Axis(lo - pad, hi + pad, False)
    pad = 0.03 * (hi - lo)
    return _Axis(lo - pad, hi + pad, False)


def _segments(x: np.ndarray, y: np.ndarray, xa: _Axis, ya: _Axis) -> list[np.ndarray]:
    ok = np.isfinite(x) & np.isfinite(y)
    if xa.log:
        ok &= x > 0
    if ya.log:
        ok &= y > 0
    runs, current = [], []
    for i in range(x.size):
        if ok[i]:
            current.append(i)
        elif current:
            runs.append(np.array(current))
            current = []
    if current:
        runs.append(np.array(current))
    return [r for r in runs if r.size >= 2]


def line_plot(
    series: Sequence[Series],
    path: str | Path,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logx: bool = False,
    logy: bool = False,
    xlim: tuple[float, float] | None = None,
    ylim: tuple[float, float] | None = None,
    width: int = 720,
    height: int = 440,
) -> Path:
    """Write an SVG line plot and return its path."""
    left, right, top, bottom = 78, 24, 40, 56
    xa = _range([np.asarray(s.x, float) for s in series], logx, xlim)
    ya = _range([np.asarray(s.y, float)[np.isfinite(np.asarray(s.x, float))] for s in series], logy, ylim)
    x0, x1, y0, y1 = left, width - right, height - bottom, top
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<defs><clipPath id="plotarea"><rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}"/></clipPath></defs>',
    ]
    xticks = _log_ticks(xa.lo, xa.hi) if logx else nice_ticks(xa.lo, xa.hi)
    yticks = _log_ticks(ya.lo, ya.hi) if logy else nice_ticks(ya.lo, ya.hi)
    for t in xticks:
        px = float(xa.scale(np.array(t), x0, x1))
        out.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y1}" stroke="#e6e6e6"/>')
        out.append(f'<text x="{px:.2f}" y="{y0 + 18}" text-anchor="middle">{_label(t)}</text>')
    for t in yticks:
        py = float(ya.scale(np.array(t), y0, y1))
        out.append(f'<line x1="{x0 - 5}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<line x1="{x0}" y1="{py:.2f}" x2="{x1}" y2="{py:.2f}" stroke="#e6e6e6"/>')
        out.append(f'<text x="{x0 - 8}" y="{py + 4:.2f}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{height - 14}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="18" y="{(y0 + y1) / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2:.2f})">{escape(ylabel)}</text>'
    )
    out.append('<g clip-path="url(#plotarea)" fill="none">')
    legend: list[tuple[str, str, bool]] = []
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        x, y = np.asarray(s.x, float), np.asarray(s.y, float)
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        alpha = f' stroke-opacity="{s.opacity:.3g}"' if s.opacity < 1 else ""
        for run in _segments(x, y, xa, ya):
            px, py = xa.scale(x[run], x0, x1), ya.scale(y[run], y0, y1)
            points = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
            out.append(f'<polyline points="{points}" stroke="{color}" stroke-width="{s.width:.3g}"{alpha}{dash}/>')
        if s.label and all(s.label != entry[0] for entry in legend):
            legend.append((s.label, color, s.dashed))
    out.append("</g>")
    for j, (label, color, dashed) in enumerate(legend):
        ly = y1 + 16 + 18 * j
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        out.append(f'<line x1="{x1 - 170}" y1="{ly}" x2="{x1 - 142}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{x1 - 136}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path
