"""
Tests for SVG coverage maps.
"""

import pytest

from fallchain.fingerprint import UNKNOWN, render_heatmap
from fallchain.mission import RadioModel, default_anchors, plan_path, synth_fingerprint_table
from fallchain.utils.exceptions import ParameterValidationError
from fallchain.visualizer import HeatmapVisualizer, VisualizationConfig, heat_color


class TestHeatColor:
    """dBm to color blend"""

    def test_scale_ends(self):
        config = VisualizationConfig()
        assert heat_color(-100.0, config) == "#2C7BB6"
        assert heat_color(-30.0, config) == "#D7191C"

    def test_clamped(self):
        config = VisualizationConfig()
        assert heat_color(-140.0, config) == heat_color(-100.0, config)
        assert heat_color(0.0, config) == heat_color(-30.0, config)

    def test_config_validation(self):
        with pytest.raises(ParameterValidationError):
            VisualizationConfig(canvas_width=100, margin=60)
        with pytest.raises(ParameterValidationError):
            VisualizationConfig(floor_dbm=-30.0, ceiling_dbm=-40.0)


class TestHeatmapVisualizer:
    def test_occupancy_only(self, room):
        room.cells[5, 5:8] = UNKNOWN
        svg = HeatmapVisualizer().generate_map(room)
        assert svg.startswith("<svg") and svg.endswith("</svg>")
        assert "#424242" in svg
        assert "#BDBDBD" in svg
        assert "Occupancy map" in svg
        assert "dBm" not in svg

    def test_heat_overlay_and_legend(self, room):
        anchors = default_anchors()
        table = synth_fingerprint_table(room, anchors, RadioModel(sigma=0.0), n=150, seed=1)
        heat = render_heatmap(table, room, 0, 8)
        svg = HeatmapVisualizer().generate_map(room, heat, anchors)
        assert f"RSSI coverage - {table.macs[0]}" in svg
        assert svg.count("dBm</title>") == int(heat.mask.sum())
        assert "-100 dBm" in svg
        assert svg.count("<circle") == len(anchors)

    def test_path_and_title(self, room):
        plan = plan_path(room, (2, 2), (20, 30))
        config = VisualizationConfig(show_legend=False)
        svg = HeatmapVisualizer(config).generate_map(room, path=plan.cells, title="route <a&b>")
        assert "<polyline" in svg
        assert "route &lt;a&amp;b&gt;" in svg

    def test_save(self, room, tmp_path):
        visualizer = HeatmapVisualizer()
        path = tmp_path / "maps" / "room.svg"
        visualizer.save_svg(visualizer.generate_map(room), path)
        assert path.read_text().startswith("<svg")
