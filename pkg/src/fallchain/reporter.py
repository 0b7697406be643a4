"""
Run report generator

Collects the evaluation outputs a pipeline run leaves in one directory
(fall detection, localization, vision, simulation), adds the end-to-end
reliability figures and coverage heatmaps, and writes report.json,
summary.csv and an HTML page.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from jinja2 import Environment, FileSystemLoader, select_autoescape

from fallchain.config import MissionConfig
from fallchain.fingerprint import FingerprintTable, OccupancyRaster, render_heatmap, write_heat_csv, write_heat_pgm
from fallchain.locmodel import REFERENCE_RF
from fallchain.mission import ReliabilityModel, combined_reliability
from fallchain.utils.exceptions import ReportGenerationError
from fallchain.visionstage import REFERENCE_BEST_COMBO_ACC, REFERENCE_DETECTORS
from fallchain.visualizer import HeatmapVisualizer, VisualizationConfig

logger = logging.getLogger(__name__)

# section name -> file written by the matching CLI stage
REPORT_INPUTS = {
    "fall": "fall_eval.json",
    "localization": "loc_eval.json",
    "detection": "detection_eval.json",
    "vision": "vision_eval.json",
    "simulation": "simulation.json",
}

PathLike = Union[str, Path]


def flatten(data: Any, prefix: str = "") -> List[tuple]:
    """(dotted key, scalar) pairs of a nested mapping, in sorted key order."""
    if isinstance(data, dict):
        rows = []
        for key in sorted(data):
            rows.extend(flatten(data[key], f"{prefix}.{key}" if prefix else str(key)))
        return rows
    if isinstance(data, (list, tuple)):
        return []
    return [(prefix, data)]


class RunReporter:
    """Builds the run report from a directory of stage outputs."""

    def __init__(self, visualization: Optional[VisualizationConfig] = None):
        self.template_dir = Path(__file__).parent / "templates"
        self.env = Environment(
            loader=FileSystemLoader(self.template_dir),
            autoescape=select_autoescape(['html', 'xml'])
        )
        self.visualizer = HeatmapVisualizer(visualization)
        self.logger = logging.getLogger(__name__)

    def collect(self, run_dir: PathLike, mission: Optional[MissionConfig] = None) -> Dict[str, Any]:
        """
        Read whatever stage outputs exist under ``run_dir``.

        Missing stage files leave their section ``None``; the reliability section
        is always present, computed from the simulated scenario's failure rates
        or else from ``mission``.
        """
        run_dir = Path(run_dir)
        mission = mission or MissionConfig()
        sections: Dict[str, Any] = {}
        for section, name in REPORT_INPUTS.items():
            path = run_dir / name
            if not path.is_file():
                self.logger.debug(f"No {section} output at {path}")
                sections[section] = None
                continue
            try:
                sections[section] = json.loads(path.read_text(encoding="utf-8"))
            except ValueError as e:
                raise ReportGenerationError(f"{path}: unreadable stage output ({e})")
        simulated = sections["simulation"] or {}
        if simulated.get("rates"):
            # the rates the simulated scenario ran with
            model = ReliabilityModel(**simulated["rates"])
        else:
            model = ReliabilityModel.from_config(mission)
        reliability = combined_reliability(model).to_dict()
        reliability["rates"] = {"detect_fail": model.detect_fail, "nav_fail": model.nav_fail,
                                "vision_fail": model.vision_fail}
        sections["reliability"] = reliability
        sections["reference"] = {
            "localization_random_forest": REFERENCE_RF,
            "detectors_map50": REFERENCE_DETECTORS,
            "vision_best_combo_accuracy": REFERENCE_BEST_COMBO_ACC,
            "note": "published reference figures measured on other hardware and datasets; documentation only",
        }
        present = [s for s in REPORT_INPUTS if sections[s] is not None]
        self.logger.info(f"Collected report sections: {', '.join(present) or 'none'} + reliability")
        return sections

    def export_heatmaps(self, table: FingerprintTable, raster: OccupancyRaster, output_dir: PathLike,
                        block_size: int = 8, floor_dbm: float = -100.0,
                        anchors: Sequence = ()) -> List[Dict[str, Any]]:
        """One CSV grid, PGM pair and SVG map per anchor of the table."""
        output_dir = Path(output_dir)
        entries = []
        for index, mac in enumerate(table.macs):
            heat = render_heatmap(table, raster, index, block_size)
            stem = f"heat_{mac.replace(':', '')}"
            csv_path = output_dir / f"{stem}.csv"
            write_heat_csv(heat, csv_path)
            pgm_path, mask_path = write_heat_pgm(heat, output_dir / f"{stem}.pgm", floor_dbm)
            svg = self.visualizer.generate_map(raster, heat, anchors)
            svg_path = output_dir / f"{stem}.svg"
            self.visualizer.save_svg(svg, svg_path)
            entries.append({
                "anchor": mac,
                "blocks": int(heat.mask.sum()),
                "skipped_rows": heat.skipped,
                "csv": csv_path.name,
                "pgm": pgm_path.name,
                "mask": mask_path.name,
                "svg": svg_path.name,
                "svg_content": svg,
            })
        self.logger.info(f"Wrote {len(entries)} heatmaps to {output_dir}")
        return entries

    def generate_report(self, run_dir: PathLike, output_dir: Optional[PathLike] = None,
                        mission: Optional[MissionConfig] = None,
                        heatmaps: Optional[List[Dict[str, Any]]] = None) -> Dict[str, Any]:
        """
        Write report.json, summary.csv and report.html.

        Args:
            run_dir: Directory holding the stage outputs
            output_dir: Where to write the report (defaults to ``run_dir``)
            mission: Mission settings supplying the failure rates
            heatmaps: Entries from ``export_heatmaps``

        Returns:
            The report document written to report.json
        """
        output_dir = Path(output_dir) if output_dir is not None else Path(run_dir)
        try:
            sections = self.collect(run_dir, mission)
            heatmaps = heatmaps or []
            sections["heatmaps"] = [{k: v for k, v in h.items() if k != "svg_content"} for h in heatmaps]
            document = {"format": "fallchain-report", "version": 1, "sections": sections}

            self.export_json_data(document, output_dir / "report.json")
            self.export_csv_summary(sections, output_dir / "summary.csv")

            template = self.env.get_template("report.html.j2")
            html_content = template.render(sections=sections, heatmaps=heatmaps,
                                           summary_rows=self._summary_rows(sections))
            self._save_html_file(html_content, output_dir / "report.html")

            self.logger.info(f"Run report generated in {output_dir}")
            return document

        except ReportGenerationError:
            raise
        except Exception as e:
            self.logger.error(f"Failed to generate run report: {e}")
            raise ReportGenerationError(f"report generation failed: {e}") from e

    @staticmethod
    def _summary_rows(sections: Dict[str, Any]) -> List[tuple]:
        rows = []
        for section in list(REPORT_INPUTS) + ["reliability"]:
            if sections.get(section) is None:
                continue
            rows.extend((section, key, value) for key, value in flatten(sections[section]))
        return rows

    def _save_html_file(self, html_content: str, output_path: Path) -> None:
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            output_path.write_text(html_content, encoding="utf-8")
            self.logger.info(f"HTML report saved to {output_path}")
        except Exception as e:
            self.logger.error(f"Failed to save HTML report: {e}")
            raise

    def export_json_data(self, document: Dict[str, Any], output_path: Path) -> None:
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            output_path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")
            self.logger.info(f"JSON data exported to {output_path}")
        except Exception as e:
            self.logger.error(f"Failed to export JSON data: {e}")
            raise

    def export_csv_summary(self, sections: Dict[str, Any], output_path: Path) -> None:
        """``section,metric,value`` rows for every scalar of every present section."""
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            with open(output_path, 'w', newline='', encoding='utf-8') as f:
                writer = csv.writer(f)
                writer.writerow(['section', 'metric', 'value'])
                for section, key, value in self._summary_rows(sections):
                    writer.writerow([section, key, repr(value) if isinstance(value, float) else value])
            self.logger.info(f"CSV summary exported to {output_path}")
        except Exception as e:
            self.logger.error(f"Failed to export CSV summary: {e}")
            raise
