"""
fallchain command line

Every subcommand resolves one RunConfig (defaults < --config file <
FALLCHAIN_* environment < flags), runs one stage and writes its outputs
under --out. Exit status: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from fallchain.artifacts import (
    FallModel,
    load_artifact,
    load_fall_model,
    load_loc_model,
    load_vision_model,
    save_autoencoder,
    save_fall_model,
    save_loc_model,
    save_vision_model,
)
from fallchain.config import FEATURE_MODES, REGRESSOR_KINDS, VISION_CLASSIFIERS, FallchainConfig, RunConfig, dotted_overrides
from fallchain.fedsim import ClassificationMetrics, run_experiment, synth_window_set, write_eval_report, write_round_log
from fallchain.fingerprint import (
    build_table,
    correct_pose,
    read_drift_csv,
    read_pose_csv,
    read_raster,
    read_rssi_csv,
    read_table_csv,
    render_heatmap,
    write_heat_csv,
    write_heat_pgm,
    write_log_csv,
    write_raster,
    write_table_csv,
)
from fallchain.locmodel import REFERENCE_RF, LocalizationModel, compare_models, evaluate_loc, split_table
from fallchain.mission import (
    ScenarioArtifacts,
    SimScenario,
    load_scenario,
    run_batch,
    synth_survey,
    validate_log,
    write_jsonl,
)
from fallchain.preproc import TimeSeries, TrialSeries, WindowSet, build_window_set, write_windows_csv
from fallchain.reporter import REPORT_INPUTS, RunReporter
from fallchain.signal_io import discover_trials, load_trial, trial_to_series
from fallchain.utils.exceptions import FallchainException, NotFitted, ParameterValidationError
from fallchain.utils.logger import setup_logger
from fallchain.visionstage import (
    REFERENCE_BEST_COMBO_ACC,
    eval_detection_set,
    evaluate_fall_classifier,
    feature_table,
    load_detection_set,
    read_features_csv,
    synth_frames,
    train_fall_classifier,
    write_features_csv,
    write_frame_files,
)

logger = logging.getLogger(__name__)

PROG = "fallchain"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class UsageErrorParser(argparse.ArgumentParser):
    """Bad command lines are input errors and exit 1, like any failed validation."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--seed", type=int, help="Root seed for every random stream")
    common.add_argument("--jobs", type=int, help="Worker cap for parallel stages")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one configuration value (repeatable)")
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory (default: out)")
    common.add_argument("--log-level", choices=["debug", "info", "warning", "error"], help="Logging level")
    common.add_argument("--log-file", type=Path, help="Also log to this file")
    return common


def _add_frame_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--detections", type=Path, help="Directory of per-frame detection files")
    p.add_argument("--classes", type=Path, help="Class map file (id name per line)")
    p.add_argument("--truth", type=Path, help="Directory of per-frame ground-truth files")
    p.add_argument("--times", type=Path, help="CSV of per-frame inference seconds")
    p.add_argument("--synthetic", type=int, metavar="N", help="Use N synthetic frames instead of files")
    p.add_argument("--fall-fraction", type=float, default=0.5, help="Share of fallen synthetic frames")


def build_parser() -> argparse.ArgumentParser:
    p = UsageErrorParser(prog=PROG, description="Fall detection, localization and inspection pipeline")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True
    common = _common_parser()

    s = sub.add_parser("ingest", parents=[common], help="SisFall tree or synthetic traces -> window dataset")
    s.add_argument("--sisfall", type=Path, help="Root of a SisFall download")
    s.add_argument("--synthetic", action="store_true", help="Generate per-subject synthetic traces")
    s.add_argument("--subjects", type=int, default=6, help="Synthetic subjects")
    s.add_argument("--falls", type=int, default=5, help="Synthetic fall trials per subject")
    s.add_argument("--adls", type=int, default=5, help="Synthetic ADL trials per subject")
    s.add_argument("--csv", action="store_true", help="Also export windows.csv")

    for name, text in (("train-fed", "Federated autoencoder + frozen-encoder classifier"),
                       ("train-central", "Centralized autoencoder + frozen-encoder classifier")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--data", type=Path, required=True, help="Window dataset directory (from ingest)")
        s.add_argument("--rounds", type=int, help="Federated rounds")
        s.add_argument("--epochs", type=int,
                       help="Local epochs per round (train-fed) or pooled epochs (train-central)")
        s.add_argument("--feedback", type=Path, action="append", default=[],
                       help="records.jsonl from simulate; false-alarm windows join the labeled set")

    s = sub.add_parser("eval-fall", parents=[common], help="Evaluate a fall model on a window dataset")
    s.add_argument("--data", type=Path, required=True, help="Window dataset directory")
    s.add_argument("--model", type=Path, help="Fall model artifact (default: OUT/fall_model.json)")
    s.add_argument("--subjects", help="Comma-separated subject ids to evaluate on")

    s = sub.add_parser("build-map", parents=[common], help="Pose/drift/RSSI logs -> fingerprint table + heatmaps")
    s.add_argument("--pose", type=Path, help="pose.csv (t,x,y)")
    s.add_argument("--drift", type=Path, help="drift.csv (t,dx,dy)")
    s.add_argument("--rssi", type=Path, help="rssi.csv (t,mac,rssi)")
    s.add_argument("--map", type=Path, help="Occupancy raster PGM with a .yaml sidecar")
    s.add_argument("--synthetic", action="store_true", help="Survey the scenario world to produce the logs")
    s.add_argument("--scenario", type=Path, help="Scenario file for the synthetic world")
    s.add_argument("--floor-dbm", type=float, help="RSSI floor in dBm")

    s = sub.add_parser("train-loc", parents=[common], help="Train a localization model on a fingerprint table")
    s.add_argument("--table", type=Path, help="Fingerprint table CSV (default: OUT/table.csv)")
    s.add_argument("--kind", choices=REGRESSOR_KINDS, help="Regressor")
    s.add_argument("--features", choices=FEATURE_MODES, help="raw or engineered inputs")
    s.add_argument("--floor-dbm", type=float, help="RSSI floor in dBm")
    s.add_argument("--compare", action="store_true", help="Also compare every regressor with and without features")

    s = sub.add_parser("eval-loc", parents=[common], help="Evaluate a localization model on the held-out split")
    s.add_argument("--table", type=Path, help="Fingerprint table CSV (default: OUT/table.csv)")
    s.add_argument("--model", type=Path, help="Localization model artifact")

    s = sub.add_parser("extract-features", parents=[common], help="Detections -> 13-value scene features")
    _add_frame_source(s)
    s.add_argument("--write-frames", action="store_true", help="Also write synthetic frames as record files")

    s = sub.add_parser("train-vision", parents=[common], help="Train the fallen/not-fallen classifier")
    s.add_argument("--features", type=Path, help="Feature CSV (default: OUT/features.csv)")
    s.add_argument("--classifier", choices=VISION_CLASSIFIERS, help="Classifier kind")

    s = sub.add_parser("eval-vision", parents=[common], help="Detection mAP50 / P / R and classifier metrics")
    _add_frame_source(s)
    s.add_argument("--model", type=Path, help="Vision classifier artifact")

    s = sub.add_parser("simulate", parents=[common], help="Run seeded end-to-end scenarios")
    s.add_argument("--scenario", type=Path, help="Scenario file (default: built-in room)")
    s.add_argument("--runs", type=int, default=1, help="Number of seeded runs")
    s.add_argument("--source", choices=["truth", "model"], help="Override the scenario stage source")
    s.add_argument("--fall-model", type=Path)
    s.add_argument("--loc-model", type=Path)
    s.add_argument("--vision-model", type=Path)

    s = sub.add_parser("validate-log", parents=[common], help="Replay an event log through the state machine")
    s.add_argument("log", type=Path, help="events JSON-lines file")

    s = sub.add_parser("report", parents=[common], help="Aggregate report.json, summary.csv, heatmaps and HTML")
    s.add_argument("--run-dir", type=Path, help="Directory of stage outputs (default: OUT)")
    s.add_argument("--table", type=Path, help="Fingerprint table for heatmaps (default: RUN_DIR/table.csv)")
    s.add_argument("--map", type=Path, help="Raster for heatmaps (default: RUN_DIR/map.pgm)")
    s.add_argument("--scenario", type=Path, help="Scenario whose anchors are drawn on the heatmaps")
    return p


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _flag_layer(args: argparse.Namespace) -> Dict[str, Any]:
    layer = dotted_overrides(args.set)

    def put(section: Optional[str], key: str, value: Any) -> None:
        if value is None:
            return
        if section is None:
            layer[key] = value
        else:
            layer.setdefault(section, {})[key] = value

    put(None, "seed", args.seed)
    put(None, "jobs", args.jobs)
    put(None, "log_level", args.log_level)
    command = args.command
    if command in ("train-fed", "train-central"):
        put("fed", "rounds", args.rounds)
        if command == "train-fed":
            put("train", "epochs", args.epochs)
        else:
            put("fed", "central_epochs", args.epochs)
    if command in ("build-map", "train-loc"):
        put("fingerprint", "floor_dbm", args.floor_dbm)
        put("loc", "floor_dbm", args.floor_dbm)
    if command == "train-loc":
        put("loc", "kind", args.kind)
        put("loc", "features", args.features)
    if command == "train-vision":
        put("vision", "classifier", args.classifier)
    return layer


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    return FallchainConfig(args.config).resolve(environ=environ, flags=_flag_layer(args))


def _write_json(data: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
    if bool(args.sisfall) == bool(args.synthetic):
        raise ParameterValidationError("ingest needs exactly one of --sisfall DIR or --synthetic")
    if args.synthetic:
        windows = synth_window_set(args.subjects, args.falls, args.adls, config.seed, config.preproc)
        source = {"source": "synthetic", "subjects": args.subjects, "falls": args.falls, "adls": args.adls}
    else:
        trials = []
        for path in discover_trials(args.sisfall):
            raw = load_trial(path)
            t, values = trial_to_series(raw, config.signal)
            trials.append(TrialSeries(raw.subject_id, raw.activity_code, raw.trial_index, TimeSeries(t, values)))
        windows = build_window_set(trials, config.preproc)
        source = {"source": "sisfall", "trials": len(trials)}
    target = windows.save(args.out / "windows", extra={**source, "preproc": config.preproc.to_dict()})
    if args.csv:
        write_windows_csv(windows, args.out / "windows.csv")
    print(f"{len(windows)} windows ({int(np.sum(windows.labels))} fall) from "
          f"{len(windows.subject_ids())} subjects -> {target}")
    return 0


def _feedback_windows(paths: List[Path]) -> Optional[np.ndarray]:
    rows = []
    for path in paths:
        for line_no, text in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not text.strip():
                continue
            try:
                record = json.loads(text)
            except ValueError as e:
                raise ParameterValidationError(f"{path}:{line_no}: unreadable record ({e})")
            if record.get("type") == "feedback":
                rows.append(record["window"])
    return np.asarray(rows, dtype=np.float64) if rows else None


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    mode = "federated" if args.command == "train-fed" else "centralized"
    windows = WindowSet.load(args.data)
    result = run_experiment(windows, mode, config, feedback=_feedback_windows(args.feedback), jobs=config.jobs)
    meta = {"mode": mode, "seed": config.seed}
    save_fall_model(FallModel(result.classifier, result.bounds, config.preproc), args.out / "fall_model.json", meta)
    save_autoencoder(result.autoencoder, result.bounds, args.out / "autoencoder.json", meta)
    write_round_log(result.round_log, args.out / "round_log.csv")
    write_eval_report(result.metrics, mode, args.out / REPORT_INPUTS["fall"], extra={"split": result.split.to_dict()})
    m = result.metrics
    print(f"{mode}: acc={m.acc:.4f} pr={m.pr:.4f} re={m.re:.4f} f1={m.f1:.4f}")
    return 0


def cmd_eval_fall(args: argparse.Namespace, config: RunConfig) -> int:
    path = args.model or args.out / "fall_model.json"
    _, meta = load_artifact(path, "fall-model")
    model = load_fall_model(path)
    windows = WindowSet.load(args.data)
    if args.subjects:
        windows = windows.for_subjects([s.strip() for s in args.subjects.split(",") if s.strip()])
    if len(windows) == 0:
        raise ParameterValidationError("no windows to evaluate")
    metrics = ClassificationMetrics.from_predictions(windows.labels, model.predict_windows(windows.values))
    mode = meta.get("mode", "federated")
    write_eval_report(metrics, mode, args.out / REPORT_INPUTS["fall"], extra={"windows": len(windows)})
    print(f"{mode} model on {len(windows)} windows: acc={metrics.acc:.4f} f1={metrics.f1:.4f}")
    return 0


def cmd_build_map(args: argparse.Namespace, config: RunConfig) -> int:
    out = args.out
    if args.synthetic:
        scenario = load_scenario(args.scenario) if args.scenario else SimScenario()
        base_dir = args.scenario.parent if args.scenario else None
        raster = scenario.build_raster(base_dir)
        survey = synth_survey(raster, scenario.anchors, scenario.radio, seed=config.seed)
        pose_path, drift_path, rssi_path = out / "pose.csv", out / "drift.csv", out / "rssi.csv"
        write_log_csv(survey.odom, ["t", "x", "y"], pose_path)
        write_log_csv(survey.drift, ["t", "dx", "dy"], drift_path)
        write_log_csv(survey.rssi, ["t", "mac", "rssi"], rssi_path)
    else:
        if not (args.pose and args.drift and args.rssi and args.map):
            raise ParameterValidationError("build-map needs --pose, --drift, --rssi and --map (or --synthetic)")
        raster = read_raster(args.map)
        pose_path, drift_path, rssi_path = args.pose, args.drift, args.rssi

    poses = correct_pose(read_pose_csv(pose_path), read_drift_csv(drift_path))
    table = build_table(poses, read_rssi_csv(rssi_path))
    write_table_csv(table, out / "table.csv")
    write_raster(raster, out / "map.pgm", config.fingerprint.occupied_threshold, config.fingerprint.free_threshold)
    for index, mac in enumerate(table.macs):
        heat = render_heatmap(table, raster, index, config.fingerprint.block_size)
        stem = out / "heat" / f"heat_{mac.replace(':', '')}"
        write_heat_csv(heat, stem.with_suffix(".csv"))
        write_heat_pgm(heat, stem.with_suffix(".pgm"), config.fingerprint.floor_dbm)
    print(f"Fingerprint table: {len(table)} rows x {len(table.macs)} anchors "
          f"({table.missing_count()} missing cells) -> {out / 'table.csv'}")
    return 0


def _loc_split(args: argparse.Namespace, config: RunConfig):
    table = read_table_csv(args.table or args.out / "table.csv")
    return split_table(table, config.loc.test_fraction, config.seed)


def _loc_report(results: Dict[str, Dict[str, Dict]], rows: int) -> Dict[str, Any]:
    return {"results": results, "test_rows": rows, "reference": REFERENCE_RF,
            "reference_note": "published capture; a sanity band on synthetic data only"}


def cmd_train_loc(args: argparse.Namespace, config: RunConfig) -> int:
    train, test = _loc_split(args, config)
    loc = config.loc
    model = LocalizationModel.train(train, loc.kind, loc.features, loc, config.seed, config.jobs)
    save_loc_model(model, args.out / "loc_model.json", {"kind": loc.kind, "features": loc.features, "seed": config.seed})
    if args.compare:
        results = compare_models(train, test, REGRESSOR_KINDS, FEATURE_MODES, loc, config.seed, config.jobs)
    else:
        metrics = evaluate_loc(model.predict_table(test), test.positions)
        results = {loc.kind: {loc.features: metrics.to_dict()}}
    _write_json(_loc_report(results, len(test)), args.out / REPORT_INPUTS["localization"])
    m = results[loc.kind][loc.features]
    print(f"{loc.kind}/{loc.features}: mae={m['mae']:.4f} mse={m['mse']:.4f} mde={m['mde']:.4f}")
    return 0


def cmd_eval_loc(args: argparse.Namespace, config: RunConfig) -> int:
    if args.model is None:
        raise NotFitted("no trained localization model given; run train-loc and pass --model")
    model = load_loc_model(args.model)
    _, test = _loc_split(args, config)
    metrics = evaluate_loc(model.predict_table(test), test.positions)
    kind = model.regressor.kind
    _write_json(_loc_report({kind: {model.features: metrics.to_dict()}}, len(test)),
                args.out / REPORT_INPUTS["localization"])
    print(f"{kind}/{model.features}: mae={metrics.mae:.4f} mse={metrics.mse:.4f} mde={metrics.mde:.4f}")
    return 0


def _frames(args: argparse.Namespace, config: RunConfig):
    if args.synthetic is not None:
        if args.detections:
            raise ParameterValidationError("use either --synthetic or --detections, not both")
        return synth_frames(args.synthetic, config.seed, args.fall_fraction)
    if not (args.detections and args.classes):
        raise ParameterValidationError("frames need --detections and --classes (or --synthetic N)")
    return load_detection_set(args.detections, args.classes, args.truth, args.times)


def cmd_extract_features(args: argparse.Namespace, config: RunConfig) -> int:
    frames = _frames(args, config)
    X, y = feature_table(frames, config.vision)
    write_features_csv([f.frame for f in frames], X, y, args.out / "features.csv")
    if args.write_frames:
        frames_dir = args.out / "frames"
        write_frame_files(frames, frames_dir / "detections", frames_dir / "truth", frames_dir / "classes.txt",
                          frames_dir / "times.csv")
    print(f"{len(frames)} frames ({int(np.sum(y))} fallen) -> {args.out / 'features.csv'}")
    return 0


def cmd_train_vision(args: argparse.Namespace, config: RunConfig) -> int:
    _, X, y = read_features_csv(args.features or args.out / "features.csv")
    kind = config.vision.classifier
    model = train_fall_classifier(kind, X, y, config.vision, config.seed, config.jobs)
    save_vision_model(model, args.out / "vision_model.json", {"kind": kind, "seed": config.seed})
    metrics = evaluate_fall_classifier(model, X, y)
    print(f"{kind}: training acc={metrics.acc:.4f} on {len(y)} frames")
    return 0


def cmd_eval_vision(args: argparse.Namespace, config: RunConfig) -> int:
    frames = _frames(args, config)
    det = eval_detection_set(frames, config.vision.iou_threshold)
    _write_json(det.to_dict(), args.out / REPORT_INPUTS["detection"])
    print(f"detections: P={det.precision:.4f} R={det.recall:.4f} mAP50={det.map50:.4f}")
    if args.model is not None:
        model = load_vision_model(args.model)
        X, y = feature_table(frames, config.vision)
        metrics = evaluate_fall_classifier(model, X, y)
        _write_json({"classifier": model.kind, "frames": len(y), "metrics": metrics.to_dict(),
                     "reference_best_combo_accuracy": REFERENCE_BEST_COMBO_ACC},
                    args.out / REPORT_INPUTS["vision"])
        print(f"{model.kind}: acc={metrics.acc:.4f} f1={metrics.f1:.4f}")
    return 0


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else SimScenario()
    if args.source:
        data = scenario.to_dict()
        data["stage_source"] = args.source
        if args.source == "model":
            data["inject_failures"] = False
        scenario = SimScenario.from_dict(data)
    artifacts = ScenarioArtifacts(
        fall_model=load_fall_model(args.fall_model) if args.fall_model else None,
        loc_model=load_loc_model(args.loc_model) if args.loc_model else None,
        vision_model=load_vision_model(args.vision_model) if args.vision_model else None,
    )
    base_dir = args.scenario.parent if args.scenario else None
    batch, results = run_batch(scenario, args.runs, artifacts, config, config.jobs, base_dir)
    for result in results:
        stem = args.out / "runs" / f"run_{result.index:04d}"
        write_jsonl(result.log_lines(), stem.with_suffix(".events.jsonl"))
        write_jsonl(result.record_lines(), stem.with_suffix(".records.jsonl"))
    rates = scenario.reliability(config.mission)
    _write_json({
        "scenario": scenario.name,
        "stage_source": scenario.stage_source,
        "inject_failures": scenario.inject_failures,
        "batch": batch.to_dict(),
        "per_run": [r.summary() for r in results],
        "rates": {"detect_fail": rates.detect_fail, "nav_fail": rates.nav_fail, "vision_fail": rates.vision_fail},
    }, args.out / REPORT_INPUTS["simulation"])
    print(f"{batch.runs} runs: {batch.confirmed} confirmed, {batch.missed} missed, "
          f"{batch.false_alarms} false alarms, {batch.aborted} aborted")
    return 0


def cmd_validate_log(args: argparse.Namespace, config: RunConfig) -> int:
    lines = args.log.read_text(encoding="utf-8").splitlines()
    events = validate_log(lines, source=str(args.log))
    print(f"{args.log}: {events} events, all transitions legal")
    return 0


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    run_dir = args.run_dir or args.out
    reporter = RunReporter()
    heatmaps = []
    table_path = args.table or run_dir / "table.csv"
    map_path = args.map or run_dir / "map.pgm"
    if table_path.is_file() and map_path.is_file():
        anchors = load_scenario(args.scenario).anchors if args.scenario else ()
        heatmaps = reporter.export_heatmaps(read_table_csv(table_path), read_raster(map_path), args.out / "heat",
                                            config.fingerprint.block_size, config.fingerprint.floor_dbm, anchors)
    elif args.table or args.map:
        raise ParameterValidationError(f"heatmaps need both {table_path} and {map_path}")
    document = reporter.generate_report(run_dir, args.out, config.mission, heatmaps)
    reliability = document["sections"]["reliability"]
    print(f"combined accuracy {reliability['accuracy_text']}% "
          f"(serial alternative {reliability['alternative']['accuracy_percent']:.5f}%) -> {args.out / 'report.html'}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "ingest": cmd_ingest,
    "train-fed": cmd_train,
    "train-central": cmd_train,
    "eval-fall": cmd_eval_fall,
    "build-map": cmd_build_map,
    "train-loc": cmd_train_loc,
    "eval-loc": cmd_eval_loc,
    "extract-features": cmd_extract_features,
    "train-vision": cmd_train_vision,
    "eval-vision": cmd_eval_vision,
    "simulate": cmd_simulate,
    "validate-log": cmd_validate_log,
    "report": cmd_report,
}


def run(argv: List[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits 0, usage errors exit 1
        return e.code if isinstance(e.code, int) else 1

    try:
        config = resolve_config(args)
        setup_logger("fallchain", config.log_level, args.log_file)
        logger.debug(f"{args.command} with seed={config.seed} jobs={config.jobs}")
        return COMMANDS[args.command](args, config)
    except ParameterValidationError as e:
        print(f"{PROG} {args.command}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"{PROG} {args.command}: missing input: {e.filename}", file=sys.stderr)
        return 1
    except FallchainException as e:
        print(f"{PROG} {args.command}: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.debug("Unhandled failure", exc_info=True)
        print(f"{PROG} {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run(sys.argv[1:]))
