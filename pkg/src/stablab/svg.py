"""Minimal dependency-free line charts so divergence and sweep figures can be
viewed without external tooling."""

from __future__ import annotations

import math

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 640, 400, 56


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span <= 0:
        span = 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def line_chart(path, xs, series: dict, title: str = "", xlabel: str = "",
               ylabel: str = "") -> None:
    """Write a single-panel polyline chart; series maps label -> y values."""
    xs = [float(x) for x in xs]
    all_y = [float(y) for ys in series.values() for y in ys if math.isfinite(y)]
    if not xs or not all_y:
        xs, all_y = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y + [0.0]), max(all_y)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{_H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_H / 2})">{ylabel}</text>',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" '
        'stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<text x="{_PAD}" y="{_H - _PAD + 16}" font-size="10">{x_lo:.4g}</text>',
        f'<text x="{_W - _PAD}" y="{_H - _PAD + 16}" text-anchor="end" font-size="10">'
        f'{x_hi:.4g}</text>',
        f'<text x="{_PAD - 4}" y="{_PAD}" text-anchor="end" font-size="10">{y_hi:.4g}</text>',
        f'<text x="{_PAD - 4}" y="{_H - _PAD}" text-anchor="end" font-size="10">'
        f'{y_lo:.4g}</text>',
    ]
    for k, (label, ys) in enumerate(sorted(series.items())):
        color = _PALETTE[k % len(_PALETTE)]
        px = _scale(xs, x_lo, x_hi, _PAD, _W - _PAD)
        py = _scale([float(y) for y in ys], y_lo, y_hi, _H - _PAD, _PAD)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        parts.append(f'<text x="{_W - _PAD + 4}" y="{_PAD + 14 * k}" font-size="10" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
