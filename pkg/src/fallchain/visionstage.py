"""
Vision stage on detection records.

No detector runs here: frames arrive as YOLO-style text records (normalized
center boxes with a confidence). This module scores them against ground truth
(IoU, AP@50, mAP50), turns the detections of one frame into a fixed-length
scene vector and trains the fall / not-fall classifiers on those vectors.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from fallchain.config import VisionConfig
from fallchain.fedsim import ClassificationMetrics
from fallchain.trees import RandomForest
from fallchain.utils.exceptions import (
    ArtifactError,
    EmptyTestSet,
    EmptyTrainSet,
    MalformedRow,
    NotFitted,
    ParameterValidationError,
    SingleClassDataset,
)
from fallchain.utils.seeding import stream

logger = logging.getLogger(__name__)

BBox = Tuple[float, float, float, float]

FALLEN = "fallen"
NOT_FALLEN = "not_fallen"
COUNT_CLASSES = ("person", "chair", "bed", "couch")
FEATURE_NAMES = (
    "n_person", "n_chair", "n_bed", "n_couch", "n_relevant",
    "avg_width", "avg_height",
    "person_y_mean", "person_y_std", "person_y_max", "person_y_min",
    "person_aspect", "person_support_distance",
)
N_FEATURES = len(FEATURE_NAMES)
# 中心距离上界 √2 < 2, 无人帧取 2.0
NO_SUPPORT_DISTANCE = 2.0

# 文献中的检测器与分类器指标, 仅用于报告
REFERENCE_DETECTORS = {"yolo11n": {"map50": 0.842}, "yolov10n": {"map50": 0.818}}
REFERENCE_BEST_COMBO_ACC = 0.963


def _check_bbox(bbox: Sequence[float], what: str) -> BBox:
    if len(bbox) != 4:
        raise ParameterValidationError(f"{what} needs 4 box values, got {len(bbox)}")
    cx, cy, w, h = (float(v) for v in bbox)
    errors = []
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        errors.append("center must lie in [0, 1]")
    if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
        errors.append("width and height must lie in (0, 1]")
    if errors:
        raise ParameterValidationError(f"{what}: " + "; ".join(errors))
    return cx, cy, w, h


@dataclass(frozen=True)
class Detection:
    class_name: str
    bbox: BBox
    confidence: float = 1.0
    frame: str = ""
    fallen: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", _check_bbox(self.bbox, "detection"))
        if not (0.0 <= self.confidence <= 1.0):
            raise ParameterValidationError(f"confidence must be in [0, 1], got {self.confidence}")

    @property
    def sort_key(self) -> Tuple:
        return (self.class_name, self.bbox, -self.confidence)


@dataclass(frozen=True)
class GroundTruthBox:
    class_name: str
    bbox: BBox
    frame: str = ""

    def __post_init__(self):
        object.__setattr__(self, "bbox", _check_bbox(self.bbox, "ground truth"))


@dataclass
class FrameRecord:
    """Detections and truths of one image, with the optional detector latency."""

    frame: str
    detections: List[Detection] = field(default_factory=list)
    truths: List[GroundTruthBox] = field(default_factory=list)
    inference_s: Optional[float] = None

    @property
    def label(self) -> int:
        return frame_label(self.truths)


def frame_label(truths: Iterable[GroundTruthBox]) -> int:
    """1 when any box is ``fallen``; frames without truths count as not fallen."""
    return int(any(t.class_name == FALLEN for t in truths))


# ---------------------------------------------------------------------------
# IoU / AP
# ---------------------------------------------------------------------------

def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two center-format boxes."""
    ax0, ay0 = a[0] - a[2] / 2.0, a[1] - a[3] / 2.0
    ax1, ay1 = a[0] + a[2] / 2.0, a[1] + a[3] / 2.0
    bx0, by0 = b[0] - b[2] / 2.0, b[1] - b[3] / 2.0
    bx1, by1 = b[0] + b[2] / 2.0, b[1] + b[3] / 2.0
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, inter / union))


@dataclass(frozen=True)
class APResult:
    ap: float
    n_truths: int
    n_detections: int
    tp: int
    fp: int
    no_ground_truth: bool = False

    def to_dict(self) -> Dict:
        return {"ap": self.ap, "n_truths": self.n_truths, "n_detections": self.n_detections,
                "tp": self.tp, "fp": self.fp, "no_ground_truth": self.no_ground_truth}


def match_detections(detections: Sequence[Detection], truths: Sequence[GroundTruthBox],
                     iou_threshold: float = 0.5) -> List[bool]:
    """Greedy one-to-one matching, highest confidence first (stable on ties).

    Each detection takes the unmatched truth of the same frame and class with
    the highest IoU; it is a hit when that IoU reaches the threshold. Returned
    flags follow the descending-confidence order.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    pools: Dict[Tuple[str, str], List[GroundTruthBox]] = {}
    for truth in truths:
        pools.setdefault((truth.frame, truth.class_name), []).append(truth)
    used = {key: [False] * len(boxes) for key, boxes in pools.items()}
    hits = []
    for i in order:
        det = detections[i]
        key = (det.frame, det.class_name)
        best, best_iou = -1, 0.0
        for j, truth in enumerate(pools.get(key, ())):
            if used[key][j]:
                continue
            overlap = iou(det.bbox, truth.bbox)
            if overlap > best_iou:
                best, best_iou = j, overlap
        if best >= 0 and best_iou >= iou_threshold:
            used[key][best] = True
            hits.append(True)
        else:
            hits.append(False)
    return hits


def ap_from_hits(hits: Sequence[bool], n_truths: int) -> float:
    """All-points interpolated area under the precision / recall steps."""
    if n_truths == 0 or not hits:
        return 0.0
    flags = np.asarray(hits, dtype=np.float64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    rec = tp / float(n_truths)
    prec = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)

    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def ap50(detections: Sequence[Detection], truths: Sequence[GroundTruthBox],
         iou_threshold: float = 0.5) -> APResult:
    """AP of one class; a class with no truths reports AP 0 with the flag set."""
    hits = match_detections(detections, truths, iou_threshold)
    n_tp = int(sum(hits))
    return APResult(
        ap=ap_from_hits(hits, len(truths)),
        n_truths=len(truths),
        n_detections=len(detections),
        tp=n_tp,
        fp=len(hits) - n_tp,
        no_ground_truth=len(truths) == 0,
    )


def map50(detections: Sequence[Detection], truths: Sequence[GroundTruthBox],
          iou_threshold: float = 0.5) -> Tuple[float, Dict[str, APResult]]:
    """Mean of per-class AP over the classes that have ground truth."""
    classes = sorted({d.class_name for d in detections} | {t.class_name for t in truths})
    per_class = {}
    for name in classes:
        per_class[name] = ap50([d for d in detections if d.class_name == name],
                               [t for t in truths if t.class_name == name], iou_threshold)
        if per_class[name].no_ground_truth:
            logger.warning(f"Class {name!r} has detections but no ground truth; excluded from mAP50")
    scored = [r.ap for r in per_class.values() if not r.no_ground_truth]
    return (float(np.mean(scored)) if scored else 0.0), per_class


@dataclass(frozen=True)
class DetMetrics:
    precision: float
    recall: float
    f1: float
    map50: float
    mean_inference_s: Optional[float]
    tp: int
    fp: int
    fn: int
    frames: int
    per_class: Dict[str, APResult] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "map50": self.map50,
            "mean_inference_s": self.mean_inference_s,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "frames": self.frames,
            "per_class": {name: r.to_dict() for name, r in sorted(self.per_class.items())},
            "interpolation": "all-points",
        }


def _tag(frame: FrameRecord) -> Tuple[List[Detection], List[GroundTruthBox]]:
    dets = [d if d.frame == frame.frame else Detection(d.class_name, d.bbox, d.confidence, frame.frame, d.fallen)
            for d in frame.detections]
    truths = [t if t.frame == frame.frame else GroundTruthBox(t.class_name, t.bbox, frame.frame)
              for t in frame.truths]
    return dets, truths


def eval_detection_set(frames: Sequence[FrameRecord], iou_threshold: float = 0.5,
                       classes: Optional[Iterable[str]] = None) -> DetMetrics:
    """Scores the detections of ``classes`` (default: every class with ground truth).

    Scene objects the truths never label (chairs, beds) are left out of the counts.
    """
    if not frames:
        raise EmptyTestSet("no frames to evaluate")
    detections: List[Detection] = []
    truths: List[GroundTruthBox] = []
    for frame in frames:
        dets, gts = _tag(frame)
        detections += dets
        truths += gts
    scored = set(classes) if classes is not None else {t.class_name for t in truths}
    detections = [d for d in detections if d.class_name in scored]
    truths = [t for t in truths if t.class_name in scored]
    hits = match_detections(detections, truths, iou_threshold)
    tp = int(sum(hits))
    fp = len(hits) - tp
    fn = len(truths) - tp
    counts = ClassificationMetrics.from_counts(tp, 0, fp, fn)
    mean_ap, per_class = map50(detections, truths, iou_threshold)
    times = [f.inference_s for f in frames if f.inference_s is not None]
    metrics = DetMetrics(
        precision=counts.pr,
        recall=counts.re,
        f1=counts.f1,
        map50=mean_ap,
        mean_inference_s=float(np.mean(times)) if times else None,
        tp=tp,
        fp=fp,
        fn=fn,
        frames=len(frames),
        per_class=per_class,
    )
    logger.info(
        f"Detection set: {len(frames)} frames, P={metrics.precision:.4f} R={metrics.recall:.4f} "
        f"mAP50={metrics.map50:.4f}"
    )
    return metrics


# ---------------------------------------------------------------------------
# Scene features
# ---------------------------------------------------------------------------

def extract_features(detections: Sequence[Detection], config: Optional[VisionConfig] = None) -> np.ndarray:
    """13-value scene vector of one frame; see ``FEATURE_NAMES`` for the order."""
    config = config or VisionConfig()
    relevant = sorted(
        (d for d in detections
         if d.class_name in config.relevant_classes and d.confidence >= config.min_confidence),
        key=lambda d: d.sort_key,
    )
    persons = [d for d in relevant if d.class_name == "person"]
    supports = [d for d in relevant if d.class_name in config.support_classes]

    out = np.zeros(N_FEATURES)
    for k, name in enumerate(COUNT_CLASSES):
        out[k] = sum(1 for d in relevant if d.class_name == name)
    out[4] = len(relevant)
    if relevant:
        out[5] = np.mean([d.bbox[2] for d in relevant])
        out[6] = np.mean([d.bbox[3] for d in relevant])
    out[12] = NO_SUPPORT_DISTANCE
    if persons:
        ys = np.array([d.bbox[1] for d in persons])
        out[7:11] = [ys.mean(), ys.std(), ys.max(), ys.min()]
        out[11] = np.mean([d.bbox[2] / d.bbox[3] for d in persons])
        if supports:
            out[12] = min(
                float(np.hypot(p.bbox[0] - s.bbox[0], p.bbox[1] - s.bbox[1]))
                for p in persons for s in supports
            )
    return out


def feature_table(frames: Sequence[FrameRecord], config: Optional[VisionConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    X = np.array([extract_features(f.detections, config) for f in frames]).reshape(len(frames), N_FEATURES)
    y = np.array([f.label for f in frames], dtype=np.int64)
    return X, y


def write_features_csv(frames: Sequence[str], X: np.ndarray, y: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["frame", *FEATURE_NAMES, "label"])
        for name, row, label in zip(frames, X, y):
            writer.writerow([name, *[repr(float(v)) for v in row], int(label)])
    return path


def read_features_csv(path) -> Tuple[List[str], np.ndarray, np.ndarray]:
    path = Path(path)
    frames, rows, labels = [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["frame", *FEATURE_NAMES, "label"]:
            raise MalformedRow("unexpected feature table header", line=1, source=str(path))
        for line, record in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in record[1:-1]])
                labels.append(int(record[-1]))
            except (ValueError, IndexError):
                raise MalformedRow(f"bad feature row {record!r}", line=line, source=str(path))
            if len(rows[-1]) != N_FEATURES:
                raise MalformedRow(f"expected {N_FEATURES} features", line=line, source=str(path))
            frames.append(record[0])
    return frames, np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES), np.array(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# Fall classifiers
# ---------------------------------------------------------------------------

def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size == 0:
        raise EmptyTrainSet("no labeled feature rows")
    if not set(np.unique(y)) <= {0, 1}:
        raise ParameterValidationError("fall labels must be 0 (not_fallen) or 1 (fallen)")
    if np.unique(y).size < 2:
        raise SingleClassDataset("fall classifier needs both fallen and not_fallen rows")
    return y


class LogisticFallClassifier:
    """Sigmoid linear model, full-batch gradient descent on the mean log-loss."""

    kind = "logistic"

    def __init__(self, learning_rate: float = 0.5, epochs: int = 2000, seed: int = 0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.w: Optional[np.ndarray] = None
        self.b = 0.0
        self.mu: Optional[np.ndarray] = None
        self.sigma: Optional[np.ndarray] = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LogisticFallClassifier":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = _check_labels(y)
        self.mu = X.mean(axis=0)
        spread = X.std(axis=0)
        self.sigma = np.where(spread > 0, spread, 1.0)
        Z = (X - self.mu) / self.sigma
        w = stream(self.seed, "logistic").normal(0.0, 0.01, size=Z.shape[1])
        b = 0.0
        n = float(Z.shape[0])
        for _ in range(self.epochs):
            p = 1.0 / (1.0 + np.exp(-(Z @ w + b)))
            err = p - y
            w = w - self.learning_rate * (Z.T @ err) / n
            b = b - self.learning_rate * float(err.sum()) / n
        self.w, self.b = w, b
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self.w is None:
            raise NotFitted("logistic classifier is not fitted")
        Z = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mu) / self.sigma
        return 1.0 / (1.0 + np.exp(-(Z @ self.w + self.b)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def to_dict(self) -> Dict:
        if self.w is None:
            raise NotFitted("logistic classifier is not fitted")
        return {"kind": self.kind, "learning_rate": self.learning_rate, "epochs": self.epochs, "seed": self.seed,
                "w": self.w.tolist(), "b": self.b, "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "LogisticFallClassifier":
        model = cls(data["learning_rate"], data["epochs"], data["seed"])
        model.w = np.asarray(data["w"], dtype=np.float64)
        model.b = float(data["b"])
        model.mu = np.asarray(data["mu"], dtype=np.float64)
        model.sigma = np.asarray(data["sigma"], dtype=np.float64)
        return model


class ForestFallClassifier:
    kind = "random_forest"

    def __init__(self, n_trees: int = 50, max_depth: int = 8, leaf_min: int = 1, seed: int = 0, jobs: int = 1):
        self.forest = RandomForest("gini", n_trees, max_depth, leaf_min, "sqrt", 1.0, seed, jobs, n_classes=2)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ForestFallClassifier":
        self.forest.fit(np.atleast_2d(np.asarray(X, dtype=np.float64)), _check_labels(y))
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.forest.predict_proba(X)[:, 1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.forest.predict(X), dtype=np.int64)

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "forest": self.forest.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ForestFallClassifier":
        model = cls()
        model.forest = RandomForest.from_dict(data["forest"])
        return model


FALL_CLASSIFIERS = {cls.kind: cls for cls in (LogisticFallClassifier, ForestFallClassifier)}


def train_fall_classifier(kind: str, X: np.ndarray, y: np.ndarray, config: Optional[VisionConfig] = None,
                          seed: int = 0, jobs: int = 1):
    config = config or VisionConfig()
    if kind == "logistic":
        model = LogisticFallClassifier(config.logistic_learning_rate, config.logistic_epochs, seed)
    elif kind == "random_forest":
        model = ForestFallClassifier(config.forest_trees, config.forest_max_depth, config.forest_leaf_min, seed, jobs)
    else:
        raise ParameterValidationError(f"unknown fall classifier {kind!r}; available {sorted(FALL_CLASSIFIERS)}")
    model.fit(X, y)
    train_acc = float(np.mean(model.predict(X) == np.asarray(y)))
    logger.info(f"Trained {kind} fall classifier on {len(y)} frames, training accuracy {train_acc:.4f}")
    return model


def fall_classifier_from_dict(data: Mapping):
    try:
        return FALL_CLASSIFIERS[data["kind"]].from_dict(data)
    except KeyError as e:
        raise ArtifactError(f"unreadable fall classifier block: {e}")


def evaluate_fall_classifier(model, X: np.ndarray, y: np.ndarray) -> ClassificationMetrics:
    """fallen is the positive class."""
    if len(y) == 0:
        raise EmptyTestSet("no feature rows to evaluate")
    return ClassificationMetrics.from_predictions(y, model.predict(X))


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def read_class_map(path) -> Dict[int, str]:
    """``id name`` per line."""
    path = Path(path)
    mapping: Dict[int, str] = {}
    for line, text in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        parts = text.split()
        try:
            mapping[int(parts[0])] = parts[1]
        except (ValueError, IndexError):
            raise MalformedRow(f"bad class map entry {text!r}", line=line, source=str(path))
    return mapping


def _class_name(class_id: int, class_map: Mapping[int, str], line: int, source: str) -> str:
    if class_id == -1:
        return NOT_FALLEN
    try:
        return class_map[class_id]
    except KeyError:
        raise MalformedRow(f"class id {class_id} not in class map", line=line, source=source)


def _box_lines(path: Path, n_fields: int):
    for line, text in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not text.strip():
            continue
        parts = text.split()
        if len(parts) != n_fields:
            raise MalformedRow(f"expected {n_fields} fields, got {len(parts)}", line=line, source=str(path))
        try:
            yield line, int(parts[0]), [float(v) for v in parts[1:]]
        except ValueError:
            raise MalformedRow(f"non-numeric field in {text!r}", line=line, source=str(path))


def read_detections(path, class_map: Mapping[int, str], frame: Optional[str] = None) -> List[Detection]:
    """``class_id cx cy w h conf`` per line."""
    path = Path(path)
    frame = path.stem if frame is None else frame
    out = []
    for line, class_id, values in _box_lines(path, 6):
        try:
            out.append(Detection(_class_name(class_id, class_map, line, str(path)), tuple(values[:4]),
                                 values[4], frame))
        except MalformedRow:
            raise
        except ParameterValidationError as e:
            raise MalformedRow(str(e), line=line, source=str(path))
    return out


def read_truths(path, class_map: Mapping[int, str], frame: Optional[str] = None) -> List[GroundTruthBox]:
    """``class_id cx cy w h`` per line; class id -1 reads as not_fallen."""
    path = Path(path)
    frame = path.stem if frame is None else frame
    out = []
    for line, class_id, values in _box_lines(path, 5):
        try:
            out.append(GroundTruthBox(_class_name(class_id, class_map, line, str(path)), tuple(values), frame))
        except MalformedRow:
            raise
        except ParameterValidationError as e:
            raise MalformedRow(str(e), line=line, source=str(path))
    return out


def read_times(path) -> Dict[str, float]:
    """``frame,seconds`` CSV of per-frame inference latency."""
    path = Path(path)
    times = {}
    with open(path, newline="", encoding="utf-8") as f:
        for line, record in enumerate(csv.reader(f), start=1):
            if line == 1 and record and record[0] == "frame":
                continue
            try:
                times[record[0]] = float(record[1])
            except (ValueError, IndexError):
                raise MalformedRow(f"bad timing row {record!r}", line=line, source=str(path))
    return times


def load_detection_set(det_dir, class_map_path, truth_dir=None, times_path=None) -> List[FrameRecord]:
    """Frames are the union of detection and truth file stems, in sorted order.

    A frame with no truth file is a no-person frame (no boxes, label not_fallen).
    """
    det_dir = Path(det_dir)
    class_map = read_class_map(class_map_path)
    det_files = {p.stem: p for p in det_dir.glob("*.txt")}
    truth_files = {p.stem: p for p in Path(truth_dir).glob("*.txt")} if truth_dir else {}
    times = read_times(times_path) if times_path else {}
    frames = []
    for name in sorted(set(det_files) | set(truth_files)):
        dets = read_detections(det_files[name], class_map, name) if name in det_files else []
        truths = read_truths(truth_files[name], class_map, name) if name in truth_files else []
        frames.append(FrameRecord(name, dets, truths, times.get(name)))
    logger.info(f"Loaded {len(frames)} frames from {det_dir} ({len(truth_files)} with truth files)")
    return frames


def write_frame_files(frames: Sequence[FrameRecord], det_dir, truth_dir, class_map_path, times_path=None) -> None:
    """Inverse of :func:`load_detection_set`; class ids follow sorted class names."""
    names = sorted({d.class_name for f in frames for d in f.detections} | {t.class_name for f in frames for t in f.truths}
                   | {FALLEN, NOT_FALLEN})
    ids = {name: k for k, name in enumerate(names)}
    det_dir, truth_dir = Path(det_dir), Path(truth_dir)
    det_dir.mkdir(parents=True, exist_ok=True)
    truth_dir.mkdir(parents=True, exist_ok=True)
    Path(class_map_path).write_text("".join(f"{k} {name}\n" for name, k in ids.items()), encoding="utf-8")
    for frame in frames:
        (det_dir / f"{frame.frame}.txt").write_text(
            "".join(f"{ids[d.class_name]} {d.bbox[0]!r} {d.bbox[1]!r} {d.bbox[2]!r} {d.bbox[3]!r} {d.confidence!r}\n"
                    for d in frame.detections), encoding="utf-8")
        if frame.truths:
            (truth_dir / f"{frame.frame}.txt").write_text(
                "".join(f"{ids[t.class_name]} {t.bbox[0]!r} {t.bbox[1]!r} {t.bbox[2]!r} {t.bbox[3]!r}\n"
                        for t in frame.truths), encoding="utf-8")
    if times_path is not None:
        with open(times_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["frame", "seconds"])
            for frame in frames:
                if frame.inference_s is not None:
                    writer.writerow([frame.frame, repr(frame.inference_s)])


def synth_scene_frame(name: str, fallen: bool, rng: np.random.Generator) -> FrameRecord:
    """One synthetic frame: a person (lying low and wide when fallen), its posture box and a support object."""
    if fallen:
        box = (float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.75, 0.9)),
               float(rng.uniform(0.3, 0.45)), float(rng.uniform(0.1, 0.18)))
    else:
        box = (float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.4, 0.6)),
               float(rng.uniform(0.1, 0.18)), float(rng.uniform(0.4, 0.6)))
    posture = FALLEN if fallen else NOT_FALLEN
    dets = [Detection("person", box, float(rng.uniform(0.6, 0.99)), name, fallen)]
    jitter = rng.normal(0.0, 0.01, size=2)
    posture_box = (float(np.clip(box[0] + jitter[0], 0.0, 1.0)), float(np.clip(box[1] + jitter[1], 0.0, 1.0)),
                   box[2], box[3])
    dets.append(Detection(posture, posture_box, float(rng.uniform(0.5, 0.99)), name))
    support = ("bed", "couch", "chair")[int(rng.integers(0, 3))]
    support_box = (float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.6, 0.85)),
                   float(rng.uniform(0.2, 0.4)), float(rng.uniform(0.15, 0.3)))
    dets.append(Detection(support, support_box, float(rng.uniform(0.5, 0.95)), name))
    return FrameRecord(name, dets, [GroundTruthBox(posture, box, name)], float(rng.uniform(0.015, 0.045)))


def synth_frames(n_frames: int, seed: int, fall_fraction: float = 0.5) -> List[FrameRecord]:
    rng = stream(seed, "synth", 2)
    return [synth_scene_frame(f"frame_{k:05d}", bool(rng.random() < fall_fraction), rng) for k in range(n_frames)]
