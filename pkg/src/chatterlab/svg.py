"""Minimal native SVG line plots."""

from __future__ import annotations

from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 420
MARGIN = (70, 20, 40, 50)  # left, right, top, bottom


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def _decimate(x: np.ndarray, y: np.ndarray, max_points: int) -> Tuple[np.ndarray, np.ndarray]:
    if len(x) <= max_points:
        return x, y
    idx = np.unique(np.linspace(0, len(x) - 1, max_points).astype(int))
    return x[idx], y[idx]


def _ticks(lo: float, hi: float, k: int = 5):
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, k))


def line_plot(series: Sequence[Tuple[Sequence[float], Sequence[float], str]], title: str = "",
              xlabel: str = "", ylabel: str = "", max_points: int = 4000,
              path: Optional[str] = None) -> str:
    """Render ``(x, y, label)`` series as polylines and return the SVG text."""
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    data = [(np.asarray(x, float), np.asarray(y, float), lab) for x, y, lab in series]
    finite = [(x[np.isfinite(y)], y[np.isfinite(y)]) for x, y, _ in data]
    xs = np.concatenate([x for x, _ in finite]) if finite else np.array([0.0])
    ys = np.concatenate([y for _, y in finite]) if finite else np.array([0.0])
    if xs.size == 0:
        xs, ys = np.array([0.0]), np.array([0.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1):
        px = _fmt(sx(v))
        out.append(f'<line x1="{px}" y1="{top + ph}" x2="{px}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px}" y="{top + ph + 16}" text-anchor="middle">{_fmt(float(f"{v:.4g}"))}</text>')
    for v in _ticks(y0, y1):
        py = _fmt(sy(v))
        out.append(f'<line x1="{left - 4}" y1="{py}" x2="{left}" y2="{py}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{py}" text-anchor="end" dominant-baseline="middle">'
                   f'{_fmt(float(f"{v:.4g}"))}</text>')
    for i, (x, y, lab) in enumerate(data):
        ok = np.isfinite(x) & np.isfinite(y)
        x, y = _decimate(x[ok], y[ok], max_points)
        pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x, y))
        color = COLORS[i % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        if lab:
            ly = top + 14 + 14 * i
            out.append(f'<line x1="{left + pw - 110}" y1="{ly}" x2="{left + pw - 90}" y2="{ly}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{left + pw - 85}" y="{ly + 4}">{escape(lab)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="{top - 14}" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def time_plot(traj, columns: Sequence[str], title: str = "", path: Optional[str] = None) -> str:
    """Plot selected trajectory columns against time."""
    series = [(traj.times, traj.column(c), c) for c in columns]
    return line_plot(series, title=title, xlabel="t", ylabel=", ".join(columns), path=path)


def phase_plot(traj, title: str = "", path: Optional[str] = None) -> str:
    """Plot ``z21`` against the queue difference."""
    return line_plot([(traj.column("z21"), traj.delta, "")], title=title,
                     xlabel="z21", ylabel="q2 - q1", path=path)
