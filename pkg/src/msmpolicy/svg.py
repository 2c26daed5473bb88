"""Minimal static SVG line charts for sweep output.

Fixed 800x500 viewBox, one mean polyline plus one band polygon per series,
no interactivity.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 500
MARGIN = dict(left=70, right=160, top=46, bottom=52)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _scale(vals, lo, hi, out_lo, out_hi):
    vals = np.asarray(vals, dtype=float)
    span = hi - lo if hi > lo else 1.0
    return out_lo + (vals - lo) / span * (out_hi - out_lo)


def render_line_chart(title: str, x, series: list[dict], x_label: str = "",
                      y_label: str = "") -> str:
    """Render mean lines with shaded bands.

    ``series`` entries: {"name", "mean", "lo", "hi"} arrays aligned with x.
    """
    x = np.asarray(x, dtype=float)
    all_lo = np.concatenate([np.asarray(s["lo"], float) for s in series])
    all_hi = np.concatenate([np.asarray(s["hi"], float) for s in series])
    y_min, y_max = float(all_lo.min()), float(all_hi.max())
    pad = 0.05 * (y_max - y_min or 1.0)
    y_min, y_max = y_min - pad, y_max + pad
    px_l, px_r = MARGIN["left"], WIDTH - MARGIN["right"]
    px_t, px_b = MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def xs(v):
        return _scale(v, float(x.min()), float(x.max()), px_l, px_r)

    def ys(v):
        return _scale(v, y_min, y_max, px_b, px_t)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{escape(title)}</text>',
        f'<line x1="{px_l}" y1="{px_b}" x2="{px_r}" y2="{px_b}" stroke="#333"/>',
        f'<line x1="{px_l}" y1="{px_t}" x2="{px_l}" y2="{px_b}" stroke="#333"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = float(x.min() + frac * (x.max() - x.min()))
        yv = y_min + frac * (y_max - y_min)
        parts.append(f'<text x="{xs(xv):.1f}" y="{px_b + 18}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{xv:.2f}</text>')
        parts.append(f'<text x="{px_l - 8}" y="{ys(yv) + 4:.1f}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif">{yv:.3g}</text>')
    if x_label:
        parts.append(f'<text x="{(px_l + px_r) / 2:.0f}" y="{HEIGHT - 12}" '
                     f'text-anchor="middle" font-size="12" font-family="sans-serif">'
                     f'{escape(x_label)}</text>')
    if y_label:
        parts.append(f'<text x="18" y="{(px_t + px_b) / 2:.0f}" font-size="12" '
                     f'font-family="sans-serif" text-anchor="middle" '
                     f'transform="rotate(-90 18 {(px_t + px_b) / 2:.0f})">'
                     f'{escape(y_label)}</text>')
    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        band_x = np.concatenate([x, x[::-1]])
        band_y = np.concatenate([np.asarray(s["hi"], float), np.asarray(s["lo"], float)[::-1]])
        pts = " ".join(f"{xs(a):.2f},{ys(b):.2f}" for a, b in zip(band_x, band_y))
        parts.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.15" '
                     'stroke="none"/>')
        mean_pts = " ".join(f"{xs(a):.2f},{ys(b):.2f}"
                            for a, b in zip(x, np.asarray(s["mean"], float)))
        parts.append(f'<polyline points="{mean_pts}" fill="none" stroke="{color}" '
                     'stroke-width="2"/>')
        ly = px_t + 18 * idx
        parts.append(f'<line x1="{px_r + 12}" y1="{ly}" x2="{px_r + 34}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{px_r + 40}" y="{ly + 4}" font-size="12" '
                     f'font-family="sans-serif">{escape(str(s["name"]))}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
