"""Bare-bones SVG line charts so the toolkit needs no plotting dependency."""
from __future__ import annotations

from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def line_chart(x, series: dict[str, list[float]], title: str = "", width: int = 640, height: int = 400) -> str:
    pad = 50
    xs = [float(v) for v in x]
    ys = [float(v) for vals in series.values() for v in vals]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / ((y1 - y0) or 1.0)

    def pt(a, b):
        return f"{pad + (a - x0) * sx:.2f},{height - pad - (b - y0) * sy:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 18}" font-size="11">{x0:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 18}" font-size="11" text-anchor="end">{x1:g}</text>',
        f'<text x="{pad - 4}" y="{pad}" font-size="11" text-anchor="end">{y1:.3g}</text>',
    ]
    for i, (name, vals) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        points = " ".join(pt(a, b) for a, b in zip(xs, vals))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 16 * i}" font-size="11" fill="{color}" '
                     f'text-anchor="end">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
