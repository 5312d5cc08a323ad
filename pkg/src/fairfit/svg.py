"""Minimal SVG line and scatter plots (no styling beyond a palette)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
W, H = 640, 420
ML, MR, MT, MB = 60, 150, 30, 45


def _range(vals):
    vals = np.asarray([v for v in vals if math.isfinite(v)], float)
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def _frame(title, xlabel, ylabel, xr, yr):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
           'fill="none" stroke="#000"/>',
           f'<text x="{ML}" y="{MT - 10}" font-size="13">{escape(title)}</text>',
           f'<text x="{(ML + W - MR) / 2:g}" y="{H - 8}" text-anchor="middle">'
           f'{escape(xlabel)}</text>',
           f'<text x="14" y="{(MT + H - MB) / 2:g}" text-anchor="middle" '
           f'transform="rotate(-90 14 {(MT + H - MB) / 2:g})">{escape(ylabel)}</text>']
    for t in np.linspace(*xr, 5):
        out.append(f'<text x="{_sx(t, xr):.2f}" y="{H - MB + 14}" text-anchor="middle">'
                   f'{t:.3g}</text>')
    for t in np.linspace(*yr, 5):
        out.append(f'<text x="{ML - 4}" y="{_sy(t, yr) + 4:.2f}" text-anchor="end">'
                   f'{t:.3g}</text>')
    return out


def _sx(x, xr):
    return ML + (x - xr[0]) / (xr[1] - xr[0]) * (W - ML - MR)


def _sy(y, yr):
    return H - MB - (y - yr[0]) / (yr[1] - yr[0]) * (H - MT - MB)


def _legend(names):
    out = []
    for i, name in enumerate(names[:20]):
        y = MT + 12 + 14 * i
        col = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{W - MR + 10}" y1="{y - 4}" x2="{W - MR + 26}" y2="{y - 4}" '
                   f'stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{W - MR + 30}" y="{y}">{escape(str(name))}</text>')
    return out


def line_plot(series, title="", xlabel="", ylabel=""):
    """``series`` maps a name to ``(x, y)``; returns the SVG text."""
    xs = [v for x, _ in series.values() for v in x]
    ys = [v for _, y in series.values() for v in y]
    xr, yr = _range(xs), _range(ys)
    out = _frame(title, xlabel, ylabel, xr, yr)
    for i, (x, y) in enumerate(series.values()):
        pts = " ".join(f"{_sx(a, xr):.2f},{_sy(b, yr):.2f}" for a, b in zip(x, y)
                       if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{PALETTE[i % len(PALETTE)]}" '
                   f'stroke-width="1.5" points="{pts}"/>')
    out += _legend(list(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_plot(x, y, title="", xlabel="", ylabel="", diagonal=False):
    xr, yr = _range(x), _range(y)
    out = _frame(title, xlabel, ylabel, xr, yr)
    if diagonal:
        lo, hi = max(xr[0], yr[0]), min(xr[1], yr[1])
        if lo < hi:
            out.append(f'<line x1="{_sx(lo, xr):.2f}" y1="{_sy(lo, yr):.2f}" '
                       f'x2="{_sx(hi, xr):.2f}" y2="{_sy(hi, yr):.2f}" stroke="#999"/>')
    for a, b in zip(x, y):
        out.append(f'<circle cx="{_sx(a, xr):.2f}" cy="{_sy(b, yr):.2f}" r="1.8" '
                   f'fill="{PALETTE[0]}" fill-opacity="0.6"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
