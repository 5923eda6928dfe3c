"""Minimal SVG line plots for sweep results."""

import json
import math
from typing import Any, Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

WIDTH = 640
HEIGHT = 420
MARGIN = {"left": 70, "right": 170, "top": 40, "bottom": 55}
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"]

Series = Dict[str, List[Tuple[float, float]]]


def _ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


class SVGPlot:
    """Line plot: one polyline per series, axes, ticks and a legend."""

    def __init__(self, title: str, x_label: str, y_label: str):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label

    def render(self, series: Series, metadata: Dict[str, Any]) -> str:
        points = [
            (x, y)
            for values in series.values()
            for x, y in values
            if math.isfinite(x) and math.isfinite(y)
        ]
        xs = [p[0] for p in points] or [0.0]
        ys = [p[1] for p in points] or [0.0]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(0.0, min(ys)), max(ys)
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
        plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

        def sx(x: float) -> float:
            if x_hi == x_lo:
                return MARGIN["left"] + plot_w / 2
            return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * plot_w

        def sy(y: float) -> float:
            return MARGIN["top"] + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
            f"<metadata>{escape(json.dumps(metadata, sort_keys=True))}</metadata>",
            f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
            f"{escape(self.title)}</text>",
        ]
        x0, y0 = MARGIN["left"], MARGIN["top"] + plot_h
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>')
        out.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
        for tick in _ticks(x_lo, x_hi):
            out.append(
                f'<text x="{sx(tick):.1f}" y="{y0 + 16}" text-anchor="middle">{tick:.3g}</text>'
            )
        for tick in _ticks(y_lo, y_hi):
            out.append(
                f'<text x="{x0 - 6}" y="{sy(tick) + 4:.1f}" text-anchor="end">{tick:.3g}</text>'
            )
        out.append(
            f'<text x="{x0 + plot_w / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">'
            f"{escape(self.x_label)}</text>"
        )
        out.append(
            f'<text x="18" y="{MARGIN["top"] + plot_h / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {MARGIN["top"] + plot_h / 2:.1f})">'
            f"{escape(self.y_label)}</text>"
        )

        for i, (name, values) in enumerate(series.items()):
            color = COLORS[i % len(COLORS)]
            finite = [(x, y) for x, y in values if math.isfinite(x) and math.isfinite(y)]
            coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in finite)
            if coords:
                out.append(
                    f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
                )
                for x, y in finite:
                    out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
            legend_y = MARGIN["top"] + 10 + 18 * i
            legend_x = WIDTH - MARGIN["right"] + 15
            out.append(
                f'<line x1="{legend_x}" y1="{legend_y}" x2="{legend_x + 20}" y2="{legend_y}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            out.append(f'<text x="{legend_x + 26}" y="{legend_y + 4}">{escape(name)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def write(self, series: Series, path: str, metadata: Dict[str, Any]) -> None:
        with open(path, "w") as f:
            f.write(self.render(series, metadata))


def rmse_series(
    results: Sequence[Any], x_of: Any, group_of: Any = None
) -> Series:
    """Collect (x, rmse) per method, optionally split further by a group label."""
    series: Series = {}
    for result in results:
        for method, summary in result.methods.items():
            name = method.value if group_of is None else f"{method.value} {group_of(result)}"
            series.setdefault(name, []).append((x_of(result), summary.rmse))
    for values in series.values():
        values.sort()
    return series
