"""Static SVG pictures of a solved straightening map.

Output is a pure function of its inputs: fixed element order and
fixed-precision coordinates, so identical runs give identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .uniformize import INFINITY, Skeleton, StraighteningMap, evaluate_straightening

__all__ = ["RenderStyle", "hatching_lines", "render_svg"]


@dataclass(frozen=True)
class RenderStyle:
    size: int = 640
    margin: float = 0.08
    digits: int = 4
    hatch_per_cell: int = 2
    hatch_samples: int = 16
    edge_color: str = "#1f3a93"
    hatch_color: str = "#b0b0b0"
    pole_color: str = "#c0392b"
    pole_radius: float = 3.0
    stroke: float = 1.2


def hatching_lines(fmap: StraighteningMap, per_cell: int = 2, samples: int = 16) -> list[np.ndarray]:
    """Images of the horizontal and vertical source lines subdividing each cell."""
    grid = fmap.grid
    if grid is None:
        return []
    m = grid.m
    k = np.arange(m * per_cell + 1) / per_cell
    coords_x = grid.x_min + k * grid.cell_side
    coords_y = grid.y_min + k * grid.cell_side
    t = np.linspace(0.0, 1.0, m * samples + 1)
    lines = []
    for x in coords_x:
        lines.append(x + 1j * (grid.y_min + t * 2 * grid.half_width))
    for y in coords_y:
        lines.append(grid.x_min + t * 2 * grid.half_width + 1j * y)
    return [np.asarray(evaluate_straightening(fmap, src)) for src in lines]


class _Frame:
    """Affine map from the plane to SVG pixels with y pointing down."""

    def __init__(self, points: np.ndarray, style: RenderStyle) -> None:
        x0, x1 = float(points.real.min()), float(points.real.max())
        y0, y1 = float(points.imag.min()), float(points.imag.max())
        span = max(x1 - x0, y1 - y0, 1e-12)
        pad = style.margin * span
        self.x0, self.y1 = x0 - pad, y1 + pad
        self.scale = style.size / (span + 2 * pad)
        self.width = round((x1 - x0 + 2 * pad) * self.scale)
        self.height = round((y1 - y0 + 2 * pad) * self.scale)
        self.digits = style.digits
        self.fmt = f"{{:.{style.digits}f}}"
        self.extent = 2 * span

    def xy(self, z: complex) -> str:
        # rounding first and adding 0.0 keeps "-0.0000" out of the output
        x = round((z.real - self.x0) * self.scale, self.digits) + 0.0
        y = round((self.y1 - z.imag) * self.scale, self.digits) + 0.0
        return f"{self.fmt.format(x)},{self.fmt.format(y)}"

    def path(self, pts) -> str:
        pts = list(pts)
        return "M" + " L".join(self.xy(complex(p)) for p in pts)


def _ray(p: complex, far: complex, length: float) -> np.ndarray:
    d = far - p
    return np.array([p, p + d / abs(d) * length])


def render_svg(fmap: StraighteningMap, skel: Skeleton | None = None, hatch: bool = True,
               style: RenderStyle | None = None, title: str | None = None) -> str:
    style = style or RenderStyle()
    poles = np.asarray(fmap.symbol.positions, complex)
    finite = [np.asarray(e) for k, e in sorted((skel.edges if skel else {}).items()) if INFINITY not in k]
    lines = hatching_lines(fmap, style.hatch_per_cell, style.hatch_samples) if hatch else []
    frame = _Frame(np.concatenate([poles, *finite, *lines]) if (finite or lines) else poles, style)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{frame.width}" height="{frame.height}" '
        f'viewBox="0 0 {frame.width} {frame.height}">',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append(f'<rect x="0" y="0" width="{frame.width}" height="{frame.height}" fill="white"/>')
    if lines:
        out.append(f'<g id="hatching" fill="none" stroke="{style.hatch_color}" stroke-width="{style.stroke / 2}">')
        out.extend(f'<path d="{frame.path(line)}"/>' for line in lines)
        out.append("</g>")
    if skel is not None:
        out.append(f'<g id="skeleton" fill="none" stroke="{style.edge_color}" stroke-width="{style.stroke}">')
        for key in sorted(skel.edges):
            pts = np.asarray(skel.edges[key])
            if INFINITY in key:
                pts = _ray(pts[0], pts[-1], frame.extent)
            out.append(f'<path data-edge="{key[0]} {key[1]}" d="{frame.path(pts)}"/>')
        out.append("</g>")
    out.append(f'<g id="poles" fill="{style.pole_color}">')
    for k, p in enumerate(poles):
        x, y = frame.xy(complex(p)).split(",")
        out.append(f'<circle data-pole="{k}" cx="{x}" cy="{y}" r="{style.pole_radius}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
