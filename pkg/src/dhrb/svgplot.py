"""Minimal hand-emitted SVG line plots.

CSV is the canonical output of every command; these plots are a convenience
for eyeballing sweep curves without a plotting stack. Non-finite samples
break the polyline, rendering as gaps.
"""

import math
from xml.sax.saxutils import escape

_WIDTH = 640
_HEIGHT = 420
_MARGIN_L = 64
_MARGIN_R = 16
_MARGIN_T = 36
_MARGIN_B = 48
_COLORS = ("#1f6fb2", "#d1495b", "#3a7d44", "#8a5a83")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if step >= raw:
            break
    first = math.ceil(lo / step) * step
    values = []
    v = first
    while v <= hi + 1e-9 * step:
        values.append(0.0 if abs(v) < 1e-12 else v)
        v += step
    return values


def _fmt(v):
    return f"{v:.6g}"


def line_plot_svg(series, title="", xlabel="", ylabel=""):
    """Render ``series`` — a list of (label, x array, y array) — as an SVG
    string. Non-finite y values split the polyline into segments."""
    xs, ys = [], []
    for _, x, y in series:
        for xv, yv in zip(x, y):
            if math.isfinite(xv) and math.isfinite(yv):
                xs.append(float(xv))
                ys.append(float(yv))
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def px(xv):
        return _MARGIN_L + (xv - x_lo) / (x_hi - x_lo) * plot_w

    def py(yv):
        return _MARGIN_T + (y_hi - yv) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_WIDTH / 2:.1f}" y="22" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{escape(title)}</text>')

    axis_style = 'stroke="#333" stroke-width="1"'
    x_axis_y = _MARGIN_T + plot_h
    parts.append(f'<line x1="{_MARGIN_L}" y1="{x_axis_y}" '
                 f'x2="{_MARGIN_L + plot_w}" y2="{x_axis_y}" {axis_style}/>')
    parts.append(f'<line x1="{_MARGIN_L}" y1="{_MARGIN_T}" '
                 f'x2="{_MARGIN_L}" y2="{x_axis_y}" {axis_style}/>')

    for tx in _ticks(x_lo, x_hi):
        x = px(tx)
        parts.append(f'<line x1="{x:.1f}" y1="{x_axis_y}" x2="{x:.1f}" '
                     f'y2="{x_axis_y + 5}" {axis_style}/>')
        parts.append(f'<text x="{x:.1f}" y="{x_axis_y + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{_fmt(tx)}</text>')
    for ty in _ticks(y_lo, y_hi):
        y = py(ty)
        parts.append(f'<line x1="{_MARGIN_L - 5}" y1="{y:.1f}" '
                     f'x2="{_MARGIN_L}" y2="{y:.1f}" {axis_style}/>')
        parts.append(f'<text x="{_MARGIN_L - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{_fmt(ty)}</text>')
    if xlabel:
        parts.append(f'<text x="{_MARGIN_L + plot_w / 2:.1f}" '
                     f'y="{_HEIGHT - 10}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">'
                     f'{escape(xlabel)}</text>')
    if ylabel:
        cy = _MARGIN_T + plot_h / 2
        parts.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12" '
                     f'transform="rotate(-90 16 {cy:.1f})">'
                     f'{escape(ylabel)}</text>')

    for k, (label, x, y) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        segment = []
        segments = []
        for xv, yv in zip(x, y):
            if math.isfinite(xv) and math.isfinite(yv):
                segment.append(f"{px(float(xv)):.2f},{py(float(yv)):.2f}")
            elif segment:
                segments.append(segment)
                segment = []
        if segment:
            segments.append(segment)
        for seg in segments:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                parts.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" '
                             f'fill="{color}"/>')
            else:
                parts.append(f'<polyline points="{" ".join(seg)}" '
                             f'fill="none" stroke="{color}" '
                             f'stroke-width="1.8"/>')
        if label:
            ly = _MARGIN_T + 16 + 16 * k
            lx = _MARGIN_L + plot_w - 130
            parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" '
                         f'y2="{ly - 4}" stroke="{color}" '
                         f'stroke-width="1.8"/>')
            parts.append(f'<text x="{lx + 30}" y="{ly}" '
                         f'font-family="sans-serif" font-size="12">'
                         f'{escape(label)}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
