"""Minimal static SVG output: heatmaps as rect grids and line charts as polylines.

Styling is fixed and numbers are formatted with a fixed precision so that
repeated runs write identical files.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"]
LINE_COLOURS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
MISSING = "#bbbbbb"


def _colour(t: float) -> str:
    """Piecewise-linear colour ramp over ``PALETTE`` for t in [0, 1]."""
    t = min(max(t, 0.0), 1.0) * (len(PALETTE) - 1)
    i = min(int(t), len(PALETTE) - 2)
    f = t - i
    a = [int(PALETTE[i][k:k + 2], 16) for k in (1, 3, 5)]
    b = [int(PALETTE[i + 1][k:k + 2], 16) for k in (1, 3, 5)]
    return "#" + "".join(f"{round(x + f * (y - x)):02x}" for x, y in zip(a, b))


def _doc(width, height, body) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def heatmap_svg(path, values, row_labels, col_labels, title="", xlabel="", ylabel="", vmin=None, vmax=None):
    """Write a heatmap; NaN entries are drawn grey (failed or overflowed cells)."""
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    lo = float(finite.min()) if vmin is None and finite.size else (vmin or 0.0)
    hi = float(finite.max()) if vmax is None and finite.size else (vmax if vmax is not None else 1.0)
    span = hi - lo if hi > lo else 1.0
    cell, left, top = 40, 70, 40
    nr, nc = values.shape
    body = [f'<text x="{left}" y="20">{escape(title)}</text>']
    # row 0 at the bottom so the y axis increases upwards
    for r in range(nr):
        y = top + (nr - 1 - r) * cell
        body.append(f'<text x="{left - 6}" y="{y + cell / 2 + 4:.1f}" text-anchor="end">{escape(str(row_labels[r]))}</text>')
        for c in range(nc):
            v = values[r, c]
            fill = _colour((v - lo) / span) if np.isfinite(v) else MISSING
            body.append(f'<rect x="{left + c * cell}" y="{y}" width="{cell}" height="{cell}" fill="{fill}">'
                        f'<title>{v:.4f}</title></rect>')
    for c in range(nc):
        body.append(f'<text x="{left + c * cell + cell / 2:.1f}" y="{top + nr * cell + 14}" '
                    f'text-anchor="middle">{escape(str(col_labels[c]))}</text>')
    body.append(f'<text x="{left + nc * cell / 2:.1f}" y="{top + nr * cell + 32}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(f'<text x="12" y="{top + nr * cell / 2:.1f}" transform="rotate(-90 12 {top + nr * cell / 2:.1f})" '
                f'text-anchor="middle">{escape(ylabel)}</text>')
    body.append(f'<text x="{left + nc * cell + 10}" y="{top + 10}">{hi:.3f}</text>')
    body.append(f'<text x="{left + nc * cell + 10}" y="{top + nr * cell}">{lo:.3f}</text>')
    Path(path).write_text(_doc(left + nc * cell + 70, top + nr * cell + 50, body))


def lines_svg(path, series, title="", xlabel="", ylabel="", logy=False):
    """Write a line chart.  ``series`` is a list of ``(label, xs, ys)``."""
    w, h, left, top, pad = 560, 360, 60, 30, 20
    pw, ph = w - left - pad - 120, h - top - 40
    pts = []
    for _, xs, ys in series:
        ys = np.asarray(ys, dtype=float)
        if logy:
            ys = np.log10(np.maximum(ys, 1e-300))
        pts.append((np.asarray(xs, dtype=float), ys))
    allx = np.concatenate([p[0] for p in pts]) if pts else np.array([0.0, 1.0])
    ally = np.concatenate([p[1] for p in pts]) if pts else np.array([0.0, 1.0])
    ally = ally[np.isfinite(ally)]
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    body = [f'<text x="{left}" y="18">{escape(title)}</text>',
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
            f'<text x="{left}" y="{top + ph + 14}">{x0:.3g}</text>',
            f'<text x="{left + pw}" y="{top + ph + 14}" text-anchor="end">{x1:.3g}</text>',
            f'<text x="{left - 4}" y="{top + ph}" text-anchor="end">{y0:.3g}</text>',
            f'<text x="{left - 4}" y="{top + 10}" text-anchor="end">{y1:.3g}</text>',
            f'<text x="{left + pw / 2:.1f}" y="{h - 6}" text-anchor="middle">{escape(xlabel)}</text>',
            f'<text x="14" y="{top + ph / 2:.1f}" transform="rotate(-90 14 {top + ph / 2:.1f})" '
            f'text-anchor="middle">{escape(ylabel + (" (log10)" if logy else ""))}</text>']
    for k, ((label, _, _), (xs, ys)) in enumerate(zip(series, pts)):
        colour = LINE_COLOURS[k % len(LINE_COLOURS)]
        ok = np.isfinite(ys)
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs[ok], ys[ok]))
        body.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        body.append(f'<text x="{left + pw + 10}" y="{top + 14 * (k + 1)}" fill="{colour}">{escape(str(label))}</text>')
    Path(path).write_text(_doc(w, h, body))
