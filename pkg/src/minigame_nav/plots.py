"""Dependency-free SVG plots of speed and liveness traces."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .simulator import TrajectoryLog

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10)), key=lambda s: abs(s - raw))
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _panel(x, series, title, ylabel, y0, height, width, hline=None, hlabel=""):
    """One axes box; ``series`` is a list of (label, y array)."""
    left, right, top = 70, 20, 30
    w, h = width - left - right, height - top - 45
    ys = [np.asarray(y, dtype=float) for _, y in series]
    finite = np.concatenate([y[np.isfinite(y)] for y in ys] + [np.array([hline or 0.0])])
    ylo, yhi = float(finite.min()), float(finite.max())
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(x[0]), float(x[-1]) if x[-1] > x[0] else float(x[0]) + 1.0

    def px(v):
        return left + (v - xlo) / (xhi - xlo) * w

    def py(v):
        return y0 + top + (1 - (v - ylo) / (yhi - ylo)) * h

    out = [f'<text x="{left}" y="{y0 + 20}" font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{y0 + top}" width="{w}" height="{h}" fill="none" stroke="#333"/>']
    for t in _ticks(xlo, xhi):
        out.append(f'<line x1="{px(t):.2f}" y1="{y0 + top + h}" x2="{px(t):.2f}" '
                   f'y2="{y0 + top + h + 5}" stroke="#333"/>')
        out.append(f'<text x="{px(t):.2f}" y="{y0 + top + h + 18}" font-size="11" '
                   f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" '
                   f'stroke="#333"/>')
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{left + w / 2}" y="{y0 + top + h + 36}" font-size="12" '
               f'text-anchor="middle">time [s]</text>')
    out.append(f'<text x="18" y="{y0 + top + h / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 18 {y0 + top + h / 2})">{escape(ylabel)}</text>')
    if hline is not None:
        out.append(f'<line x1="{left}" y1="{py(hline):.2f}" x2="{left + w}" y2="{py(hline):.2f}" '
                   f'stroke="#555" stroke-dasharray="6 4"/>')
        out.append(f'<text x="{left + w - 4}" y="{py(hline) - 4:.2f}" font-size="11" '
                   f'text-anchor="end">{escape(hlabel)}</text>')
    for k, (label, y) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{left + 10 + 90 * k}" y="{y0 + top + 14}" font-size="11" '
                   f'fill="{color}">{escape(label)}</text>')
    return out


def trace_svg(log: TrajectoryLog, ell_thresh: float, title: str = "") -> str:
    """Two stacked panels: speed per agent, and min liveness with the threshold line."""
    width, ph = 720, 260
    t = log.times
    V, L = log.column("v"), log.column("min_liveness")
    names = [f"agent {i}" for i in range(log.n_agents)]
    body = _panel(t, list(zip(names, V.T)), f"{title} speed", "speed [m/s]", 0, ph, width)
    body += _panel(t, list(zip(names, L.T)), f"{title} liveness", "liveness [rad]", ph, ph, width,
                   hline=ell_thresh, hlabel=f"threshold {ell_thresh:.3f}")
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{2 * ph}" '
            f'viewBox="0 0 {width} {2 * ph}" font-family="sans-serif">\n'
            '<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def write_trace_svg(log: TrajectoryLog, ell_thresh: float, path, title: str = "") -> Path:
    path = Path(path)
    path.write_text(trace_svg(log, ell_thresh, title))
    return path
