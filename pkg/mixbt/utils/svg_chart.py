"""
Static SVG line charts for exported training curves.

The markup lives in one Jinja2 template below; this module only does the layout
arithmetic (data to pixel coordinates, ticks, legend placement).
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from jinja2 import Environment

# Colours cycle when a panel has more series than entries here.
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]

PANEL_WIDTH = 640
PANEL_HEIGHT = 300
MARGIN_LEFT = 70
MARGIN_RIGHT = 180
MARGIN_TOP = 36
MARGIN_BOTTOM = 44
TICKS = 5

SVG_CHART_TEMPLATE = """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" viewBox="0 0 {{ width }} {{ height }}" font-family="sans-serif" font-size="11">
  <rect x="0" y="0" width="{{ width }}" height="{{ height }}" fill="#ffffff"/>
{% for panel in panels %}
  <g transform="translate(0,{{ panel.offset }})">
    <text x="{{ panel.plot_left }}" y="22" font-size="13" font-weight="bold">{{ panel.title }}</text>
    <line x1="{{ panel.plot_left }}" y1="{{ panel.plot_bottom }}" x2="{{ panel.plot_right }}" y2="{{ panel.plot_bottom }}" stroke="#333333"/>
    <line x1="{{ panel.plot_left }}" y1="{{ panel.plot_top }}" x2="{{ panel.plot_left }}" y2="{{ panel.plot_bottom }}" stroke="#333333"/>
{% for tick in panel.x_ticks %}
    <line x1="{{ tick.pos }}" y1="{{ panel.plot_bottom }}" x2="{{ tick.pos }}" y2="{{ panel.plot_bottom + 4 }}" stroke="#333333"/>
    <text x="{{ tick.pos }}" y="{{ panel.plot_bottom + 16 }}" text-anchor="middle">{{ tick.label }}</text>
{% endfor %}
{% for tick in panel.y_ticks %}
    <line x1="{{ panel.plot_left - 4 }}" y1="{{ tick.pos }}" x2="{{ panel.plot_left }}" y2="{{ tick.pos }}" stroke="#333333"/>
    <text x="{{ panel.plot_left - 6 }}" y="{{ tick.pos + 4 }}" text-anchor="end">{{ tick.label }}</text>
{% endfor %}
    <text x="{{ (panel.plot_left + panel.plot_right) / 2 }}" y="{{ panel.plot_bottom + 34 }}" text-anchor="middle">{{ panel.x_label }}</text>
    <text x="16" y="{{ (panel.plot_top + panel.plot_bottom) / 2 }}" text-anchor="middle" transform="rotate(-90 16 {{ (panel.plot_top + panel.plot_bottom) / 2 }})">{{ panel.y_label }}</text>
{% for line in panel.lines %}
    <polyline fill="none" stroke="{{ line.colour }}" stroke-width="1.5" points="{{ line.points }}"/>
{% endfor %}
{% for line in panel.lines %}
    <rect x="{{ panel.plot_right + 14 }}" y="{{ panel.plot_top + loop.index0 * 18 }}" width="12" height="3" fill="{{ line.colour }}"/>
    <text x="{{ panel.plot_right + 32 }}" y="{{ panel.plot_top + loop.index0 * 18 + 5 }}">{{ line.name }}</text>
{% endfor %}
  </g>
{% endfor %}
</svg>
"""

_environment = Environment(autoescape=True, trim_blocks=True, lstrip_blocks=True)
_template = _environment.from_string(SVG_CHART_TEMPLATE)

Series = Dict[str, Tuple[Sequence[float], Sequence[float]]]


@dataclass
class Panel:
    title: str
    x_label: str
    y_label: str
    series: Series


def _tick_label(value: float) -> str:
    return f"{value:.4g}"


def _extent(values: List[float]) -> Tuple[float, float]:
    if not values:
        return 0.0, 1.0
    low, high = min(values), max(values)
    if low == high:
        pad = abs(low) * 0.05 or 0.5
        return low - pad, high + pad
    return low, high


def _layout_panel(panel: Panel, offset: int) -> dict:
    left, right = MARGIN_LEFT, PANEL_WIDTH - MARGIN_RIGHT
    top, bottom = MARGIN_TOP, PANEL_HEIGHT - MARGIN_BOTTOM
    points = [(x, y) for xs, ys in panel.series.values() for x, y in zip(xs, ys)
              if math.isfinite(x) and math.isfinite(y)]
    x_low, x_high = _extent([p[0] for p in points])
    y_low, y_high = _extent([p[1] for p in points])

    def px(x: float) -> float:
        return left + (x - x_low) / (x_high - x_low) * (right - left)

    def py(y: float) -> float:
        return bottom - (y - y_low) / (y_high - y_low) * (bottom - top)

    lines = []
    for number, (name, (xs, ys)) in enumerate(panel.series.items()):
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y))
        lines.append({"name": name, "colour": PALETTE[number % len(PALETTE)], "points": coords})
    x_ticks = [{"pos": px(v), "label": _tick_label(v)}
               for v in (x_low + i * (x_high - x_low) / (TICKS - 1) for i in range(TICKS))]
    y_ticks = [{"pos": py(v), "label": _tick_label(v)}
               for v in (y_low + i * (y_high - y_low) / (TICKS - 1) for i in range(TICKS))]
    return {
        "title": panel.title, "x_label": panel.x_label, "y_label": panel.y_label, "offset": offset,
        "plot_left": left, "plot_right": right, "plot_top": top, "plot_bottom": bottom,
        "x_ticks": x_ticks, "y_ticks": y_ticks, "lines": lines,
    }


def render_chart(panels: Sequence[Panel]) -> str:
    """One SVG document with the panels stacked vertically, one polyline per series."""
    laid_out = [_layout_panel(panel, i * PANEL_HEIGHT) for i, panel in enumerate(panels)]
    return _template.render(width=PANEL_WIDTH, height=PANEL_HEIGHT * max(1, len(panels)), panels=laid_out)
