"""Minimal static SVG line plots with optional log axes.

Output is a pure function of the input series: coordinates go through the
same 17-digit formatter as the CSV files, so identical data gives identical
bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .artifacts import fmt

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _transform(values, log):
    v = np.asarray(values, dtype=float)
    if log:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(v > 0, np.log10(v), np.nan)
    return v


def _ticks(lo, hi, log):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if log:
        return [(k, f"1e{k}") for k in range(math.ceil(lo), math.floor(hi) + 1)]
    step = 10 ** math.floor(math.log10(hi - lo)) if hi > lo else 1.0
    if (hi - lo) / step < 3:
        step /= 2
    start = math.ceil(lo / step) * step
    return [(start + i * step, format(start + i * step, ".3g"))
            for i in range(int((hi - start) / step + 1e-9) + 1)]


def line_plot(path, series, title="", xlabel="", ylabel="", logx=False, logy=False) -> Path:
    """``series`` is a list of ``(label, x, y)``; points that cannot be drawn on a log axis are dropped."""
    prepared = []
    for label, x, y in series:
        tx, ty = _transform(x, logx), _transform(y, logy)
        keep = np.isfinite(tx) & np.isfinite(ty)
        prepared.append((str(label), tx[keep], ty[keep]))
    xs = np.concatenate([p[1] for p in prepared]) if prepared else np.empty(0)
    ys = np.concatenate([p[2] for p in prepared]) if prepared else np.empty(0)
    if xs.size:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    for v, lab in _ticks(x0, x1, logx):
        X = fmt(px(v))
        out.append(f'<line x1="{X}" y1="{MARGIN["top"] + ph}" x2="{X}" y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{escape(lab)}</text>')
    for v, lab in _ticks(y0, y1, logy):
        Y = fmt(py(v))
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{Y}" x2="{MARGIN["left"]}" y2="{Y}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{Y}" text-anchor="end" dominant-baseline="middle">{escape(lab)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {MARGIN["top"] + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, tx, ty) in enumerate(prepared):
        color = PALETTE[i % len(PALETTE)]
        if tx.size:
            pts = " ".join(f"{fmt(px(a))},{fmt(py(b))}" for a, b in zip(tx, ty))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN["top"] + 12 + 14 * i
        lx = WIDTH - MARGIN["right"] + 10
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 22}" y="{ly}" dominant-baseline="middle">{escape(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path
