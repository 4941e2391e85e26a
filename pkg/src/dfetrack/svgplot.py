"""Dependency-free SVG output for the report plots.

Line charts (sorted errors, cumulative error vs the confidence line, P-P
curves, CDFs) and rectangle-grid heatmaps for SSR landscapes.  SVG keeps
review diffs readable and avoids a plotting dependency.
"""

from __future__ import annotations

import math

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 16, 28, 46


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-9 * step:
        out.append(t)
        t += step
    return out


def line_chart(
    series: dict[str, tuple[np.ndarray, np.ndarray]],
    title: str,
    xlabel: str,
    ylabel: str,
    diagonal: bool = False,
    log_y: bool = False,
) -> str:
    """Render named (x, y) series to an SVG string."""
    xs_all = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys_all = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    finite = np.isfinite(ys_all)
    ys_all = ys_all[finite] if finite.any() else np.array([0.0, 1.0])
    if log_y:
        ys_all = ys_all[ys_all > 0]
        if ys_all.size == 0:
            ys_all = np.array([0.1, 1.0])
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    if log_y:
        y_lo, y_hi = math.log10(y_lo), math.log10(y_hi)

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def sx(x: float) -> float:
        return _ML + pw * (x - x_lo) / (x_hi - x_lo)

    def sy(y: float) -> float:
        if log_y:
            y = math.log10(y) if y > 0 else y_lo
        return _MT + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="16" text-anchor="middle" font-size="13">{title}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        parts.append(
            f'<line x1="{sx(t):.1f}" y1="{_MT + ph}" x2="{sx(t):.1f}" y2="{_MT + ph + 4}" stroke="#333"/>'
            f'<text x="{sx(t):.1f}" y="{_MT + ph + 16}" text-anchor="middle">{_fmt(t)}</text>'
        )
    y_tick_vals = _ticks(y_lo, y_hi)
    for t in y_tick_vals:
        label = _fmt(10**t) if log_y else _fmt(t)
        yy = _MT + ph * (1.0 - (t - y_lo) / (y_hi - y_lo))
        parts.append(
            f'<line x1="{_ML - 4}" y1="{yy:.1f}" x2="{_ML}" y2="{yy:.1f}" stroke="#333"/>'
            f'<text x="{_ML - 7}" y="{yy + 3:.1f}" text-anchor="end">{label}</text>'
        )
    parts.append(
        f'<text x="{_ML + pw / 2}" y="{_H - 8}" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="14" y="{_MT + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_MT + ph / 2})">{ylabel}</text>'
    )
    if diagonal:
        lo = max(x_lo, y_lo if not log_y else 10**y_lo)
        hi = min(x_hi, y_hi if not log_y else 10**y_hi)
        parts.append(
            f'<line x1="{sx(lo):.1f}" y1="{sy(lo):.1f}" x2="{sx(hi):.1f}" y2="{sy(hi):.1f}" '
            f'stroke="#999" stroke-dasharray="4 3"/>'
        )
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = []
        for x, y in zip(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)):
            if not math.isfinite(y) or (log_y and y <= 0):
                continue
            pts.append(f"{sx(float(x)):.1f},{sy(float(y)):.1f}")
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_ML + pw - 6}" y="{_MT + 14 + 14 * i}" text-anchor="end" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def heatmap(values: np.ndarray, title: str, max_cells: int = 256) -> str:
    """Rectangle-grid heatmap of a 2-D array, dark = low.

    Grids wider than ``max_cells`` per axis are block-averaged first; the
    binning factor is recorded in the title.
    """
    values = np.asarray(values, dtype=float)
    h, w = values.shape
    bin_f = max(1, math.ceil(max(h, w) / max_cells))
    if bin_f > 1:
        th, tw = h // bin_f * bin_f, w // bin_f * bin_f
        values = values[:th, :tw].reshape(th // bin_f, bin_f, tw // bin_f, bin_f).mean(axis=(1, 3))
        h, w = values.shape
        title = f"{title} (binned x{bin_f})"
    lo, hi = float(np.nanmin(values)), float(np.nanmax(values))
    span = hi - lo if hi > lo else 1.0
    cell = max(2, min(640 // w, 640 // h))
    width, height = w * cell, h * cell + 24
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2}" y="14" text-anchor="middle">{title}</text>',
    ]
    norm = (values - lo) / span
    for i in range(h):
        for j in range(w):
            v = norm[i, j]
            r = int(255 * v)
            g = int(64 + 128 * v)
            b = int(255 * (1.0 - v))
            parts.append(
                f'<rect x="{j * cell}" y="{24 + i * cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({r},{g},{b})"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)
