"""Minimal self-contained SVG writers for charts and sweep curves.

No plotting dependency: scatter plots color each point on a green-to-red
ramp driven by a value in [0, 1] (the first ground-truth coordinate in the
callers), which makes spatial scrambling visible at a glance.  Output is
deterministic byte-for-byte for identical inputs.
"""

import numpy as np

_SIZE = 480
_MARGIN = 36

_LINE_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ramp(value: float) -> str:
    """Green (0) to red (1)."""
    t = min(max(float(value), 0.0), 1.0)
    return f"rgb({round(220 * t)},{round(170 * (1 - t))},40)"


def _viewport(points):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    scale = (_SIZE - 2 * _MARGIN) / span.max()
    centre = (lo + hi) / 2.0

    def to_px(xy):
        x = _SIZE / 2 + (xy[0] - centre[0]) * scale
        y = _SIZE / 2 - (xy[1] - centre[1]) * scale  # SVG y grows downward
        return x, y

    return to_px


def scatter_svg(path, points, color_values, title: str = "", markers=None) -> None:
    """Scatter plot of (N, 2) points; optional triangle markers (AP sites)."""
    points = np.asarray(points, dtype=np.float64)
    color_values = np.asarray(color_values, dtype=np.float64)
    all_pts = points if markers is None else np.vstack([points, np.asarray(markers)])
    to_px = _viewport(all_pts)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{_SIZE // 2}" y="20" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13">{title}</text>')
    for pt, val in zip(points, color_values):
        x, y = to_px(pt)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.2" fill="{_ramp(val)}"/>')
    if markers is not None:
        for mk in np.asarray(markers, dtype=np.float64):
            x, y = to_px(mk)
            parts.append(
                f'<polygon points="{x:.2f},{y - 6:.2f} {x - 5:.2f},{y + 5:.2f} '
                f'{x + 5:.2f},{y + 5:.2f}" fill="#1f77b4"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def line_svg(path, x_values, series, title: str = "", xlabel: str = "",
             ylabel: str = "") -> None:
    """Line plot: ``series`` is a list of (label, y_values) pairs."""
    xs = np.asarray(x_values, dtype=np.float64)
    ys_all = np.concatenate([np.asarray(y, dtype=np.float64) for _, y in series])
    x_lo, x_hi = xs.min(), xs.max()
    y_lo, y_hi = ys_all.min(), ys_all.max()
    x_span = max(x_hi - x_lo, 1e-12)
    y_span = max(y_hi - y_lo, 1e-12)

    def to_px(x, y):
        px = _MARGIN + (x - x_lo) / x_span * (_SIZE - 2 * _MARGIN)
        py = _SIZE - _MARGIN - (y - y_lo) / y_span * (_SIZE - 2 * _MARGIN)
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
        f'<line x1="{_MARGIN}" y1="{_SIZE - _MARGIN}" x2="{_SIZE - _MARGIN}" '
        f'y2="{_SIZE - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_SIZE - _MARGIN}" stroke="black"/>',
    ]
    if title:
        parts.append(f'<text x="{_SIZE // 2}" y="18" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13">{title}</text>')
    if xlabel:
        parts.append(f'<text x="{_SIZE // 2}" y="{_SIZE - 8}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="12" y="{_SIZE // 2}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11" '
                     f'transform="rotate(-90 12 {_SIZE // 2})">{ylabel}</text>')
    for tick_x in np.unique(xs):
        px, _ = to_px(tick_x, y_lo)
        parts.append(f'<text x="{px:.1f}" y="{_SIZE - _MARGIN + 14}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{tick_x:g}</text>')
    for k, (label, ys) in enumerate(series):
        color = _LINE_COLORS[k % len(_LINE_COLORS)]
        pts = " ".join(f"{to_px(x, y)[0]:.2f},{to_px(x, y)[1]:.2f}"
                       for x, y in zip(xs, np.asarray(ys, dtype=np.float64)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.8"/>')
        parts.append(f'<text x="{_SIZE - _MARGIN}" y="{_MARGIN + 14 * k}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="11" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
