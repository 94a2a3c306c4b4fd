"""Minimal SVG emitters: binned-error line plots and bird-eye views.

Outputs are deterministic plain text so runs diff cleanly.
"""

from __future__ import annotations

import math

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def svg_line_plot(series, xlabel="", ylabel="", width=640, height=400, title="") -> str:
    """Line plot of {name: (x values, y values)}; NaN y breaks the line."""
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = 0.0, float(ys.max()) if len(ys) else 1.0
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    y1 *= 1.05

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2}" y="18" text-anchor="middle">{title}</text>')
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        parts.append(
            f'<text x="{px(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{_fmt(xv)}</text>'
        )
        parts.append(
            f'<text x="{ml - 6}" y="{py(yv):.1f}" text-anchor="end" dominant-baseline="middle">{_fmt(yv)}</text>'
        )
    if xlabel:
        parts.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        parts.append(
            f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
            f'transform="rotate(-90 14 {mt + ph / 2})">{ylabel}</text>'
        )
    for idx, (name, (x, y)) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        run = []
        segs = []
        for xi, yi in zip(x, y):
            if math.isfinite(yi):
                run.append(f"{px(xi):.1f},{py(yi):.1f}")
            elif run:
                segs.append(run)
                run = []
        if run:
            segs.append(run)
        for seg in segs:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                parts.append(f'<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>')
            else:
                parts.append(
                    f'<polyline points="{" ".join(seg)}" fill="none" stroke="{color}" stroke-width="2"/>'
                )
        ly = mt + 16 + 16 * idx
        parts.append(f'<line x1="{ml + pw - 130}" y1="{ly - 4}" x2="{ml + pw - 110}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw - 104}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _bev_footprint(obj) -> list[tuple[float, float]]:
    """Ground-plane corners (x, z) of an object's yawed footprint."""
    x, _, z = obj.location
    h, w, l = obj.dims
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    corners = []
    for dx, dz in ((l / 2, w / 2), (l / 2, -w / 2), (-l / 2, -w / 2), (-l / 2, w / 2)):
        corners.append((x + c * dx + s * dz, z - s * dx + c * dz))
    return corners


def bev_svg(gt_objects, estimates, x_range=(-30.0, 30.0), z_range=(0.0, 85.0),
            width=480, height=640, title="bird-eye view") -> str:
    """Top-down scene: ground-truth footprints and estimated centers.

    `estimates` is a list of (x, y, z) locations (y ignored); x maps to
    the horizontal axis and z increases upward.
    """
    ml, mr, mt, mb = 50, 15, 30, 35
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x_range[0]) / (x_range[1] - x_range[0]) * pw

    def pz(z):
        return mt + ph - (z - z_range[0]) / (z_range[1] - z_range[0]) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle">{title}</text>',
        f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">x (m)</text>',
        f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 14 {mt + ph / 2})">z (m)</text>',
    ]
    for zv in range(int(z_range[0]), int(z_range[1]) + 1, 10):
        parts.append(
            f'<line x1="{ml}" y1="{pz(zv):.1f}" x2="{ml + pw}" y2="{pz(zv):.1f}" stroke="#eee"/>'
        )
        parts.append(
            f'<text x="{ml - 5}" y="{pz(zv):.1f}" text-anchor="end" dominant-baseline="middle">{zv}</text>'
        )
    parts.append(f'<polygon points="{px(0):.1f},{pz(0):.1f} {px(-2):.1f},{pz(0) + 10:.1f} '
                 f'{px(2):.1f},{pz(0) + 10:.1f}" fill="#888"/>')
    for obj in gt_objects:
        pts = " ".join(f"{px(cx):.1f},{pz(cz):.1f}" for cx, cz in _bev_footprint(obj))
        parts.append(f'<polygon class="gt" points="{pts}" fill="none" stroke="#2ca02c" stroke-width="1.5"/>')
    for est in estimates:
        ex, ez = px(est[0]), pz(est[2])
        parts.append(
            f'<path class="est" d="M {ex - 4:.1f} {ez:.1f} L {ex + 4:.1f} {ez:.1f} '
            f'M {ex:.1f} {ez - 4:.1f} L {ex:.1f} {ez + 4:.1f}" stroke="#d62728" stroke-width="2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
