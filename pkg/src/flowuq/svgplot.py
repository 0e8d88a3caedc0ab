"""Minimal SVG line plots; numeric CSVs remain the authoritative output."""

from __future__ import annotations

from xml.sax.saxutils import escape

_COLORS = ["#1f6fb4", "#d45500", "#2e8b57", "#8b2e8b", "#b4a11f"]

_WIDTH, _HEIGHT = 640, 400
_MARGIN = 60


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0.0:
        return [(out_lo + out_hi) / 2.0 for _ in values]
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def write_line_plot(path, x_values, series, title="", x_label=""):
    """Write one SVG with a polyline per series.

    Each series is min-max normalized to the plot box (the legend carries
    its numeric range), so differently scaled metrics share one canvas.
    """
    x_values = [float(v) for v in x_values]
    x_lo, x_hi = min(x_values), max(x_values)
    xs = _scale(x_values, x_lo, x_hi, _MARGIN, _WIDTH - _MARGIN)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" font-size="16">'
        f"{escape(title)}</text>",
        f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 16}" text-anchor="middle" '
        f'font-size="12">{escape(x_label)}</text>',
    ]
    for tick_x, tick_v in zip((xs[0], xs[-1]), (x_values[0], x_values[-1])):
        parts.append(
            f'<text x="{tick_x}" y="{_HEIGHT - _MARGIN + 18}" text-anchor="middle" '
            f'font-size="11">{tick_v:g}</text>'
        )
    for i, (label, values) in enumerate(series.items()):
        values = [float(v) for v in values]
        lo, hi = min(values), max(values)
        ys = _scale(values, lo, hi, _HEIGHT - _MARGIN, _MARGIN)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        color = _COLORS[i % len(_COLORS)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>'
        )
        parts.append(
            f'<text x="{_WIDTH - _MARGIN + 4}" y="{_MARGIN + 16 * i}" font-size="11" '
            f'fill="{color}" text-anchor="end">'
            f"{escape(label)} [{lo:.4g}, {hi:.4g}]</text>"
        )
    parts.append("</svg>")
    with open(path, "w") as handle:
        handle.write("\n".join(parts) + "\n")
