"""Minimal dependency-free SVG line plots."""

from __future__ import annotations

from typing import Dict, Sequence

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def line_plot_svg(xs: Dict[str, Sequence[float]], ys: Dict[str, Sequence[float]], title: str = "",
                  xlabel: str = "", ylabel: str = "", width: int = 480, height: int = 320,
                  y_range=(0.0, 1.0)) -> str:
    """One polyline per key of ``ys``; the y axis spans ``y_range``."""
    pad_l, pad_r, pad_t, pad_b = 50, 110, 30, 40
    all_x = [x for k in ys for x in xs[k]]
    x0, x1 = (min(all_x), max(all_x)) if all_x else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    y0, y1 = y_range
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad_l}" y="18" font-family="sans-serif" font-size="13">{title}</text>',
             f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(5):
        y = y0 + (y1 - y0) * k / 4
        parts.append(f'<text x="{pad_l - 6}" y="{py(y) + 4:.1f}" font-family="sans-serif" '
                     f'font-size="10" text-anchor="end">{y:.2f}</text>')
    for x in sorted(set(all_x)):
        parts.append(f'<text x="{px(x):.1f}" y="{pad_t + ph + 14}" font-family="sans-serif" '
                     f'font-size="10" text-anchor="middle">{x:g}</text>')
    parts.append(f'<text x="{pad_l + pw / 2}" y="{height - 6}" font-family="sans-serif" '
                 f'font-size="11" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="12" y="{pad_t + ph / 2}" font-family="sans-serif" font-size="11" '
                 f'transform="rotate(-90 12 {pad_t + ph / 2})" text-anchor="middle">{ylabel}</text>')
    for n, (name, values) in enumerate(ys.items()):
        color = COLORS[n % len(COLORS)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs[name], values))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(xs[name], values):
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = pad_t + 14 + 16 * n
        parts.append(f'<line x1="{width - pad_r + 10}" y1="{ly - 4}" x2="{width - pad_r + 30}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - pad_r + 34}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
