"""Minimal SVG line charts, emitted as text (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _fmt(v):
    return f"{v:.3g}"


class Panel:
    """One set of axes holding named series of (x, y) points."""

    def __init__(self, title, xlabel, ylabel, log_x=False, log_y=False):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.log_x, self.log_y = log_x, log_y
        self.series: list[tuple[str, list, list]] = []

    def add(self, name, xs, ys):
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if math.isfinite(float(x)) and math.isfinite(float(y))]
        if self.log_x:
            pts = [p for p in pts if p[0] > 0]
        if self.log_y:
            pts = [p for p in pts if p[1] > 0]
        self.series.append((name, [p[0] for p in pts], [p[1] for p in pts]))
        return self

    def _tx(self, v, log):
        return math.log10(v) if log else v

    def render(self, x0, y0, width, height):
        left, right, top, bottom = 60, 110, 28, 42
        pw, ph = width - left - right, height - top - bottom
        xs = [self._tx(x, self.log_x) for _, sx, _ in self.series for x in sx]
        ys = [self._tx(y, self.log_y) for _, _, sy in self.series for y in sy]
        xlo, xhi = (min(xs), max(xs)) if xs else (0.0, 1.0)
        ylo, yhi = (min(ys), max(ys)) if ys else (0.0, 1.0)
        if xhi == xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        if yhi == ylo:
            ylo, yhi = ylo - 0.5, yhi + 0.5

        def px(v):
            return x0 + left + (self._tx(v, self.log_x) - xlo) / (xhi - xlo) * pw

        def py(v):
            return y0 + top + ph - (self._tx(v, self.log_y) - ylo) / (yhi - ylo) * ph

        out = [f'<g class="panel">',
               f'<text x="{x0 + left + pw / 2:.1f}" y="{y0 + 18}" text-anchor="middle" '
               f'font-size="14">{escape(self.title)}</text>',
               f'<rect x="{x0 + left}" y="{y0 + top}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#444"/>']
        for t in _ticks(xlo, xhi):
            X = x0 + left + (t - xlo) / (xhi - xlo) * pw
            label = _fmt(10 ** t if self.log_x else t)
            out.append(f'<text x="{X:.1f}" y="{y0 + top + ph + 16}" text-anchor="middle" '
                       f'font-size="10">{label}</text>')
        for t in _ticks(ylo, yhi):
            Y = y0 + top + ph - (t - ylo) / (yhi - ylo) * ph
            label = _fmt(10 ** t if self.log_y else t)
            out.append(f'<text x="{x0 + left - 6}" y="{Y + 3:.1f}" text-anchor="end" '
                       f'font-size="10">{label}</text>')
        out.append(f'<text x="{x0 + left + pw / 2:.1f}" y="{y0 + height - 8}" '
                   f'text-anchor="middle" font-size="11">{escape(self.xlabel)}</text>')
        out.append(f'<text x="{x0 + 14}" y="{y0 + top + ph / 2:.1f}" text-anchor="middle" '
                   f'font-size="11" transform="rotate(-90 {x0 + 14} {y0 + top + ph / 2:.1f})">'
                   f'{escape(self.ylabel)}</text>')
        for k, (name, sx, sy) in enumerate(self.series):
            color = PALETTE[k % len(PALETTE)]
            points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, sy))
            out.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5" points="{points}"/>')
            ly = y0 + top + 12 + 16 * k
            lx = x0 + left + pw + 8
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 16}" y2="{ly}" stroke="{color}" '
                       f'stroke-width="2"/>')
            out.append(f'<text x="{lx + 20}" y="{ly + 4}" font-size="10">{escape(name)}</text>')
        out.append("</g>")
        return "\n".join(out)


def render(panels, panel_width=460, panel_height=300) -> str:
    """Lay panels out side by side in one SVG document."""
    width = panel_width * max(1, len(panels))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{panel_height}" '
             f'viewBox="0 0 {width} {panel_height}">',
             f'<rect width="{width}" height="{panel_height}" fill="white"/>']
    for k, panel in enumerate(panels):
        parts.append(panel.render(k * panel_width, 0, panel_width, panel_height))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write(path, panels, **kw):
    with open(path, "w") as fh:
        fh.write(render(panels, **kw))
