"""
Coverage map visualization

Renders an occupancy raster as SVG, optionally overlaid with an RSSI heat
raster, anchor positions and a planned robot path.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from fallchain.fingerprint import OCCUPIED, UNKNOWN, HeatRaster, OccupancyRaster
from fallchain.utils.exceptions import ParameterValidationError

logger = logging.getLogger(__name__)


@dataclass
class VisualizationConfig:
    """Configuration for coverage map rendering."""

    # SVG canvas dimensions
    canvas_width: int = 800
    canvas_height: int = 800
    margin: int = 60

    # Color scheme
    free_color: str = "#FAFAFA"
    occupied_color: str = "#424242"
    unknown_color: str = "#BDBDBD"
    heat_low_color: str = "#2C7BB6"  # weak signal
    heat_high_color: str = "#D7191C"  # strong signal
    heat_opacity: float = 0.75
    anchor_color: str = "#FFC107"
    path_color: str = "#4CAF50"

    # Heat scale (dBm)
    floor_dbm: float = -100.0
    ceiling_dbm: float = -30.0

    show_legend: bool = True

    # Font settings
    font_family: str = "Arial, sans-serif"
    font_size: int = 11

    def __post_init__(self):
        if self.canvas_width <= 2 * self.margin or self.canvas_height <= 2 * self.margin:
            raise ParameterValidationError("canvas must be larger than twice the margin")
        if not self.ceiling_dbm > self.floor_dbm:
            raise ParameterValidationError("ceiling_dbm must be above floor_dbm")


def _rgb(color: str) -> Tuple[int, int, int]:
    color = color.lstrip("#")
    return int(color[0:2], 16), int(color[2:4], 16), int(color[4:6], 16)


def heat_color(value: float, config: VisualizationConfig) -> str:
    """Linear blend between the low and high heat colors, clamped to the dBm scale."""
    frac = (value - config.floor_dbm) / (config.ceiling_dbm - config.floor_dbm)
    frac = min(max(frac, 0.0), 1.0)
    low, high = _rgb(config.heat_low_color), _rgb(config.heat_high_color)
    mixed = [round(a + (b - a) * frac) for a, b in zip(low, high)]
    return "#{:02X}{:02X}{:02X}".format(*mixed)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class HeatmapVisualizer:
    """Generates SVG coverage maps."""

    def __init__(self, config: Optional[VisualizationConfig] = None):
        self.config = config or VisualizationConfig()
        self.logger = logging.getLogger(__name__)

    def _scale(self, raster: OccupancyRaster) -> float:
        usable_w = self.config.canvas_width - 2 * self.config.margin
        usable_h = self.config.canvas_height - 2 * self.config.margin
        return min(usable_w / raster.width, usable_h / raster.height)

    def generate_map(self, raster: OccupancyRaster, heat: Optional[HeatRaster] = None,
                     anchors: Iterable = (), path: Optional[Sequence[Tuple[int, int]]] = None,
                     title: Optional[str] = None) -> str:
        """
        Generate an SVG map.

        Args:
            raster: Occupancy raster drawn as the base layer
            heat: Optional block-mean RSSI raster for one anchor
            anchors: Objects with ``mac``, ``x`` and ``y`` (world meters)
            path: Optional list of (row, col) cells, e.g. ``PathPlan.cells``
            title: Caption; defaults to the heat raster's anchor

        Returns:
            SVG content as string
        """
        cfg = self.config
        scale = self._scale(raster)
        m = cfg.margin

        svg_parts: List[str] = []
        svg_parts.append(f'<svg width="{cfg.canvas_width}" height="{cfg.canvas_height}" '
                         f'xmlns="http://www.w3.org/2000/svg">')
        svg_parts.append(f'<rect x="{m}" y="{m}" width="{raster.width * scale:.2f}" '
                         f'height="{raster.height * scale:.2f}" fill="{cfg.free_color}" stroke="#999"/>')
        svg_parts.append(self._generate_cells(raster, scale))
        if heat is not None:
            svg_parts.append(self._generate_heat(raster, heat, scale))
        if path:
            svg_parts.append(self._generate_path(path, scale))
        anchor_svg = self._generate_anchors(raster, anchors, scale)
        if anchor_svg:
            svg_parts.append(anchor_svg)

        caption = title if title is not None else (f"RSSI coverage - {heat.anchor}" if heat is not None else "Occupancy map")
        svg_parts.append(f'<text x="{cfg.canvas_width / 2}" y="{m / 2 + 6}" text-anchor="middle" '
                         f'font-family="{cfg.font_family}" font-size="16" font-weight="bold" '
                         f'fill="#333">{_escape(caption)}</text>')
        if cfg.show_legend and heat is not None:
            svg_parts.append(self._generate_legend())
        svg_parts.append('</svg>')
        return '\n'.join(svg_parts)

    def _generate_cells(self, raster: OccupancyRaster, scale: float) -> str:
        # one rect per horizontal run of equal non-free cells
        cfg = self.config
        elements = []
        for row in range(raster.height):
            line = raster.cells[row]
            col = 0
            while col < raster.width:
                value = int(line[col])
                if value not in (OCCUPIED, UNKNOWN):
                    col += 1
                    continue
                end = col
                while end < raster.width and int(line[end]) == value:
                    end += 1
                color = cfg.occupied_color if value == OCCUPIED else cfg.unknown_color
                elements.append(f'<rect x="{cfg.margin + col * scale:.2f}" y="{cfg.margin + row * scale:.2f}" '
                                f'width="{(end - col) * scale:.2f}" height="{scale:.2f}" fill="{color}"/>')
                col = end
        return '\n'.join(elements)

    def _generate_heat(self, raster: OccupancyRaster, heat: HeatRaster, scale: float) -> str:
        cfg = self.config
        elements = []
        rows, cols = np.nonzero(heat.mask)
        for br, bc in zip(rows.tolist(), cols.tolist()):
            r0, c0 = br * heat.block_size, bc * heat.block_size
            h = min(heat.block_size, raster.height - r0)
            w = min(heat.block_size, raster.width - c0)
            value = float(heat.values[br, bc])
            elements.append(f'<rect x="{cfg.margin + c0 * scale:.2f}" y="{cfg.margin + r0 * scale:.2f}" '
                            f'width="{w * scale:.2f}" height="{h * scale:.2f}" fill="{heat_color(value, cfg)}" '
                            f'opacity="{cfg.heat_opacity}"><title>{value:.1f} dBm</title></rect>')
        return '\n'.join(elements)

    def _generate_path(self, path: Sequence[Tuple[int, int]], scale: float) -> str:
        m = self.config.margin
        points = " ".join(f"{m + (c + 0.5) * scale:.2f},{m + (r + 0.5) * scale:.2f}" for r, c in path)
        return (f'<polyline points="{points}" fill="none" stroke="{self.config.path_color}" '
                f'stroke-width="{max(scale / 2, 1.5):.2f}" stroke-linejoin="round"/>')

    def _generate_anchors(self, raster: OccupancyRaster, anchors: Iterable, scale: float) -> str:
        cfg = self.config
        elements = []
        for anchor in anchors:
            col = (anchor.x - raster.origin[0]) / raster.resolution
            row = raster.height - (anchor.y - raster.origin[1]) / raster.resolution
            x, y = cfg.margin + col * scale, cfg.margin + row * scale
            elements.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="6" fill="{cfg.anchor_color}" stroke="#333"/>')
            elements.append(f'<text x="{x + 8:.2f}" y="{y - 8:.2f}" font-family="{cfg.font_family}" '
                            f'font-size="{cfg.font_size - 2}" fill="#333">{_escape(anchor.mac)}</text>')
        return '\n'.join(elements)

    def _generate_legend(self) -> str:
        """Color bar for the dBm scale."""
        cfg = self.config
        x = cfg.margin
        y = cfg.canvas_height - cfg.margin / 2
        width = min(240, cfg.canvas_width - 2 * cfg.margin)
        steps = 12
        elements = []
        for i in range(steps):
            value = cfg.floor_dbm + (cfg.ceiling_dbm - cfg.floor_dbm) * i / (steps - 1)
            elements.append(f'<rect x="{x + i * width / steps:.2f}" y="{y - 10:.2f}" width="{width / steps:.2f}" '
                            f'height="10" fill="{heat_color(value, cfg)}"/>')
        elements.append(f'<text x="{x}" y="{y + 12:.2f}" font-family="{cfg.font_family}" '
                        f'font-size="{cfg.font_size - 1}" fill="#333">{cfg.floor_dbm:.0f} dBm</text>')
        elements.append(f'<text x="{x + width}" y="{y + 12:.2f}" text-anchor="end" font-family="{cfg.font_family}" '
                        f'font-size="{cfg.font_size - 1}" fill="#333">{cfg.ceiling_dbm:.0f} dBm</text>')
        return '\n'.join(elements)

    def save_svg(self, svg_content: str, output_path: Path) -> None:
        try:
            output_path = Path(output_path)
            output_path.parent.mkdir(parents=True, exist_ok=True)
            output_path.write_text(svg_content, encoding="utf-8")
            self.logger.info(f"Coverage map saved to {output_path}")
        except Exception as e:
            self.logger.error(f"Failed to save coverage map: {e}")
            raise
