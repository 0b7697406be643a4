"""
End-to-end fall-response simulation.

A* planning on the occupancy raster, a per-attempt navigation success model,
the fall-event state machine with its alert / feedback outputs, the combined
reliability figure and seeded scenario runs that wire every stage together.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from fallchain.config import MissionConfig, RunConfig
from fallchain.fingerprint import (
    FREE,
    OCCUPIED,
    DriftSample,
    FingerprintTable,
    OccupancyRaster,
    PoseSample,
    RssiSample,
    normalize_mac,
    read_raster,
)
from fallchain.preproc import PreprocPipeline, TimeSeries, make_windows
from fallchain.signal_io import samples_to_arrays, synth_trace
from fallchain.utils.exceptions import (
    BlockedEndpoint,
    IllegalTransition,
    MalformedRow,
    MissingArtifact,
    NoPath,
    OutOfBounds,
    ParameterValidationError,
)
from fallchain.utils.seeding import derive_seed, stream
from fallchain.visionstage import extract_features, synth_scene_frame

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]
Point = Tuple[float, float]

SQRT2 = math.sqrt(2.0)
NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
NAV_FAILURES = ("localization_drift", "obstacle")
STAGE_SOURCES = ("model", "truth")


# ---------------------------------------------------------------------------
# Path planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathPlan:
    cells: Tuple[Cell, ...]
    cost: float

    @property
    def moves(self) -> int:
        return len(self.cells) - 1


def _check_endpoint(raster: OccupancyRaster, cell: Cell, what: str) -> Cell:
    row, col = int(cell[0]), int(cell[1])
    if not (0 <= row < raster.height and 0 <= col < raster.width):
        raise OutOfBounds(f"{what} {cell} lies outside the {raster.height}x{raster.width} raster")
    if raster.cells[row, col] != FREE:
        raise BlockedEndpoint(f"{what} {cell} is not a free cell")
    return row, col


def plan_path(raster: OccupancyRaster, start: Cell, goal: Cell) -> PathPlan:
    """8-connected A* with unit / sqrt(2) moves and a Euclidean heuristic.

    Occupied and unknown cells are impassable. The frontier pops the lowest f
    first and, among equal f, the earliest pushed entry.
    """
    start = _check_endpoint(raster, start, "start")
    goal = _check_endpoint(raster, goal, "goal")

    def heuristic(cell: Cell) -> float:
        return math.hypot(cell[0] - goal[0], cell[1] - goal[1])

    counter = 0
    frontier = [(heuristic(start), counter, start)]
    g_cost = {start: 0.0}
    came_from: Dict[Cell, Optional[Cell]] = {start: None}
    closed = set()
    while frontier:
        _, _, current = heapq.heappop(frontier)
        if current in closed:
            continue
        if current == goal:
            path = [goal]
            while came_from[path[-1]] is not None:
                path.append(came_from[path[-1]])
            path.reverse()
            return PathPlan(tuple(path), g_cost[goal])
        closed.add(current)
        for dr, dc in NEIGHBORS:
            nxt = (current[0] + dr, current[1] + dc)
            if nxt in closed or not raster.is_free(*nxt):
                continue
            new_cost = g_cost[current] + (SQRT2 if dr and dc else 1.0)
            if new_cost < g_cost.get(nxt, math.inf):
                g_cost[nxt] = new_cost
                came_from[nxt] = current
                counter += 1
                heapq.heappush(frontier, (new_cost + heuristic(nxt), counter, nxt))
    raise NoPath(f"no path from {start} to {goal}")


def cell_of(raster: OccupancyRaster, point: Point) -> Cell:
    cell = raster.world_to_cell(point[0], point[1])
    if cell is None:
        raise OutOfBounds(f"point {point} lies outside the map")
    return cell


def nearest_free_cell(raster: OccupancyRaster, point: Point) -> Cell:
    """Free cell whose centre is closest to ``point`` (ties: lowest row, then column)."""
    free = np.argwhere(raster.cells == FREE)
    if free.size == 0:
        raise NoPath("the map has no free cell")
    x0, y0 = raster.origin
    xs = x0 + (free[:, 1] + 0.5) * raster.resolution
    ys = y0 + (raster.height - 1 - free[:, 0] + 0.5) * raster.resolution
    d2 = (xs - point[0]) ** 2 + (ys - point[1]) ** 2
    best = free[int(np.argmin(d2))]
    return int(best[0]), int(best[1])


# ---------------------------------------------------------------------------
# Navigation model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NavRequest:
    target: Point
    start: Point


@dataclass(frozen=True)
class NavResult:
    reached: bool
    reason: Optional[str]
    path: Tuple[Cell, ...]
    ticks: int

    def to_dict(self) -> Dict:
        return {"reached": self.reached, "reason": self.reason, "ticks": self.ticks,
                "path": [list(c) for c in self.path]}


def simulate_navigation(plan: PathPlan, success_p: float = 0.95, seed: int = 0,
                        rng: Optional[np.random.Generator] = None) -> NavResult:
    """One Bernoulli(success_p) attempt over the whole plan; ticks = moves either way."""
    if not (0.0 <= success_p <= 1.0):
        raise ParameterValidationError(f"success_p must be in [0, 1], got {success_p}")
    rng = rng if rng is not None else stream(seed, "nav")
    reached = bool(rng.random() < success_p)
    reason = None if reached else NAV_FAILURES[int(rng.random() < 0.5)]
    return NavResult(reached, reason, plan.cells, plan.moves)


# ---------------------------------------------------------------------------
# Radio model and survey synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Anchor:
    mac: str
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "mac", normalize_mac(self.mac))

    def to_dict(self) -> Dict:
        return {"mac": self.mac, "x": self.x, "y": self.y}


@dataclass(frozen=True)
class RadioModel:
    """Log-distance path loss: rssi0 at 1 m, exponent n, Gaussian shadowing sigma (dB)."""

    rssi0: float = -40.0
    exponent: float = 2.0
    sigma: float = 2.0
    floor_dbm: float = -100.0

    def __post_init__(self):
        errors = []
        if not self.exponent > 0:
            errors.append("exponent must be positive")
        if self.sigma < 0:
            errors.append("sigma must be non-negative")
        if self.rssi0 > 0 or self.floor_dbm > self.rssi0:
            errors.append("need floor_dbm <= rssi0 <= 0")
        if errors:
            raise ParameterValidationError("Radio model: " + "; ".join(errors))

    def to_dict(self) -> Dict:
        return {"rssi0": self.rssi0, "exponent": self.exponent, "sigma": self.sigma, "floor_dbm": self.floor_dbm}


def synth_rssi(anchors: Sequence[Anchor], position: Point, model: RadioModel = RadioModel(),
               rng: Optional[np.random.Generator] = None) -> np.ndarray:
    positions = np.array([[a.x, a.y] for a in anchors], dtype=np.float64).reshape(-1, 2)
    d = np.hypot(positions[:, 0] - position[0], positions[:, 1] - position[1])
    rssi = model.rssi0 - 10.0 * model.exponent * np.log10(np.maximum(d, 0.1))
    if model.sigma > 0:
        rng = rng if rng is not None else stream(0, "radio")
        rssi = rssi + rng.normal(0.0, model.sigma, size=rssi.shape)
    return np.clip(rssi, model.floor_dbm, 0.0)


def synth_room(width_m: float = 10.0, height_m: float = 10.0, resolution: float = 0.25,
               walls: Iterable[Sequence[float]] = ()) -> OccupancyRaster:
    """Free room with a one-cell border; ``walls`` are (x0, y0, x1, y1) rectangles in meters."""
    width = int(round(width_m / resolution))
    height = int(round(height_m / resolution))
    if width < 3 or height < 3:
        raise ParameterValidationError("room must be at least 3 cells wide and high")
    raster = OccupancyRaster.empty(width, height, resolution)
    cells = raster.cells
    cells[0, :] = cells[-1, :] = OCCUPIED
    cells[:, 0] = cells[:, -1] = OCCUPIED
    cols = np.arange(width)
    rows = np.arange(height)
    xs = (cols + 0.5) * resolution
    ys = (height - 1 - rows + 0.5) * resolution
    for wall in walls:
        x0, y0, x1, y1 = (float(v) for v in wall)
        in_x = (xs >= min(x0, x1)) & (xs <= max(x0, x1))
        in_y = (ys >= min(y0, y1)) & (ys <= max(y0, y1))
        cells[np.ix_(in_y, in_x)] = OCCUPIED
    return raster


def default_anchors(width_m: float = 10.0, height_m: float = 10.0) -> List[Anchor]:
    spots = [(0.5, 0.5), (width_m - 0.5, 0.5), (0.5, height_m - 0.5), (width_m - 0.5, height_m - 0.5),
             (width_m / 2.0, height_m / 2.0)]
    return [Anchor(f"AA:BB:CC:00:00:{k + 1:02X}", x, y) for k, (x, y) in enumerate(spots)]


@dataclass
class SurveyLog:
    odom: List[PoseSample]
    drift: List[DriftSample]
    rssi: List[RssiSample]


def synth_survey(raster: OccupancyRaster, anchors: Sequence[Anchor], radio: RadioModel = RadioModel(),
                 seed: int = 0, stride_m: float = 0.5, dwell_s: float = 1.0, drift_rate: float = 0.01) -> SurveyLog:
    """Lawnmower survey over free cells.

    Odometry lags the true pose by a slowly growing drift whose samples are
    published shortly after each pose; every anchor is read once per stop at
    a distinct offset below half the dwell time.
    """
    rng = stream(seed, "synth", 3)
    x_min, y_min, x_max, y_max = raster.extent
    xs = np.arange(x_min + stride_m / 2.0, x_max, stride_m)
    ys = np.arange(y_min + stride_m / 2.0, y_max, stride_m)
    stops: List[Point] = []
    for r, y in enumerate(ys):
        row = xs if r % 2 == 0 else xs[::-1]
        for x in row:
            cell = raster.world_to_cell(float(x), float(y))
            if cell is not None and raster.is_free(*cell):
                stops.append((float(x), float(y)))
    if not stops:
        raise ParameterValidationError("survey stride leaves no free stop on this map")

    odom, drift, rssi = [], [], []
    n_anchors = len(anchors)
    for k, (x, y) in enumerate(stops):
        t = k * dwell_s
        t_drift = t + 0.2 * dwell_s
        dx, dy = drift_rate * t_drift, -0.5 * drift_rate * t_drift
        drift.append(DriftSample(t_drift, dx, dy))
        odom.append(PoseSample(t, x - dx, y - dy))
        values = synth_rssi(anchors, (x, y), radio, rng)
        for a, anchor in enumerate(anchors):
            offset = dwell_s * (a + 1) / (2.0 * (n_anchors + 1))
            rssi.append(RssiSample(t + offset, anchor.mac, float(values[a])))
    logger.info(f"Synthetic survey: {len(stops)} stops, {len(rssi)} RSSI readings")
    return SurveyLog(odom, drift, rssi)


def synth_fingerprint_table(raster: OccupancyRaster, anchors: Sequence[Anchor], radio: RadioModel = RadioModel(),
                            n: int = 1500, seed: int = 0) -> FingerprintTable:
    """Complete table of ``n`` readings at uniform random free positions."""
    rng = stream(seed, "synth", 4)
    free = np.argwhere(raster.cells == FREE)
    if free.size == 0:
        raise ParameterValidationError("map has no free cell")
    picks = free[rng.integers(0, len(free), size=n)]
    offsets = rng.random((n, 2))
    xs = raster.origin[0] + (picks[:, 1] + offsets[:, 0]) * raster.resolution
    ys = raster.origin[1] + (raster.height - 1 - picks[:, 0] + offsets[:, 1]) * raster.resolution
    rssi = np.stack([synth_rssi(anchors, (float(x), float(y)), radio, rng) for x, y in zip(xs, ys)])
    return FingerprintTable(np.arange(n, dtype=np.float64), xs, ys, [a.mac for a in anchors], rssi)


# ---------------------------------------------------------------------------
# Event state machine
# ---------------------------------------------------------------------------

class EventState(str, Enum):
    IDLE = "Idle"
    FALL_SUSPECTED = "FallSuspected"
    LOCALIZING = "Localizing"
    NAVIGATING = "Navigating"
    INSPECTING = "Inspecting"
    CONFIRMED = "Confirmed"
    FALSE_ALARM = "FalseAlarm"
    ABORTED = "Aborted"


TERMINAL = frozenset({EventState.CONFIRMED, EventState.FALSE_ALARM, EventState.ABORTED})
# Navigating -> Navigating is a retry after a failed attempt
TRANSITIONS = {
    EventState.IDLE: {EventState.FALL_SUSPECTED},
    EventState.FALL_SUSPECTED: {EventState.LOCALIZING},
    EventState.LOCALIZING: {EventState.NAVIGATING},
    EventState.NAVIGATING: {EventState.NAVIGATING, EventState.INSPECTING},
    EventState.INSPECTING: {EventState.CONFIRMED, EventState.FALSE_ALARM},
}


def is_legal(src: EventState, dst: EventState) -> bool:
    if dst == EventState.ABORTED:
        return src not in TERMINAL
    return dst in TRANSITIONS.get(src, ())


@dataclass(frozen=True)
class FallVerdict:
    fall: bool = True
    window: Optional[np.ndarray] = field(default=None, compare=False)


@dataclass(frozen=True)
class RssiReport:
    readings: Mapping[str, float]


@dataclass(frozen=True)
class LocalizationFix:
    x: float
    y: float


@dataclass(frozen=True)
class InspectionVerdict:
    fallen: bool
    score: float = 1.0


@dataclass(frozen=True)
class Abort:
    reason: str


Stimulus = Union[FallVerdict, RssiReport, LocalizationFix, NavResult, InspectionVerdict, Abort]


@dataclass(frozen=True)
class Transition:
    event_id: int
    seq: int
    t: float
    src: EventState
    dst: EventState
    note: str = ""

    def to_dict(self) -> Dict:
        return {"event_id": self.event_id, "seq": self.seq, "t": self.t, "from": self.src.value,
                "to": self.dst.value, "note": self.note}


@dataclass(frozen=True)
class AlertMessage:
    event_id: int
    t: float
    x: float
    y: float
    score: float

    def to_dict(self) -> Dict:
        return {"type": "alert", "event_id": self.event_id, "t": self.t, "x": self.x, "y": self.y,
                "score": self.score}


@dataclass(frozen=True)
class FeedbackRecord:
    """A false alarm's triggering window, kept as a class-0 example for retraining."""

    event_id: int
    t: float
    window: Tuple[Tuple[float, ...], ...]
    label: int = 0

    def to_dict(self) -> Dict:
        return {"type": "feedback", "event_id": self.event_id, "t": self.t, "label": self.label,
                "window": [list(row) for row in self.window]}


@dataclass(frozen=True)
class PipelineEvent:
    event_id: int
    state: EventState = EventState.IDLE
    transitions: Tuple[Transition, ...] = ()
    location: Optional[Point] = None
    verdict: Optional[bool] = None
    nav_attempts: int = 0
    reason: Optional[str] = None
    window: Optional[np.ndarray] = field(default=None, compare=False)
    alert: Optional[AlertMessage] = None
    feedback: Optional[FeedbackRecord] = None

    def advance(self, dst: EventState, t: float, note: str = "", **changes) -> "PipelineEvent":
        if not is_legal(self.state, dst):
            raise IllegalTransition(f"event {self.event_id}: {self.state.value} -> {dst.value} is not allowed")
        step = Transition(self.event_id, len(self.transitions), float(t), self.state, dst, note)
        return replace(self, state=dst, transitions=self.transitions + (step,), **changes)


def step_event(event: PipelineEvent, stimulus: Stimulus, t: float, max_retries: int = 1) -> PipelineEvent:
    """Apply one stimulus; anything the current state does not accept raises IllegalTransition."""
    state = event.state
    if isinstance(stimulus, Abort):
        return event.advance(EventState.ABORTED, t, stimulus.reason, reason=stimulus.reason)
    if state == EventState.IDLE and isinstance(stimulus, FallVerdict):
        if not stimulus.fall:
            raise IllegalTransition(f"event {event.event_id}: a non-fall verdict does not start an event")
        return event.advance(EventState.FALL_SUSPECTED, t, "fall verdict", window=stimulus.window)
    if state == EventState.FALL_SUSPECTED and isinstance(stimulus, RssiReport):
        return event.advance(EventState.LOCALIZING, t, f"{len(stimulus.readings)} anchors reported")
    if state == EventState.LOCALIZING and isinstance(stimulus, LocalizationFix):
        return event.advance(EventState.NAVIGATING, t, f"fix {stimulus.x:.3f},{stimulus.y:.3f}",
                             location=(float(stimulus.x), float(stimulus.y)))
    if state == EventState.NAVIGATING and isinstance(stimulus, NavResult):
        attempts = event.nav_attempts + 1
        if stimulus.reached:
            return event.advance(EventState.INSPECTING, t, f"reached after {stimulus.ticks} ticks",
                                 nav_attempts=attempts)
        if attempts <= max_retries:
            return event.advance(EventState.NAVIGATING, t, f"retry after {stimulus.reason}", nav_attempts=attempts)
        return event.advance(EventState.ABORTED, t, f"navigation failed: {stimulus.reason}",
                             nav_attempts=attempts, reason=stimulus.reason)
    if state == EventState.INSPECTING and isinstance(stimulus, InspectionVerdict):
        x, y = event.location if event.location is not None else (math.nan, math.nan)
        if stimulus.fallen:
            alert = AlertMessage(event.event_id, float(t), x, y, float(stimulus.score))
            return event.advance(EventState.CONFIRMED, t, "fallen person confirmed", verdict=True, alert=alert)
        rows = () if event.window is None else tuple(tuple(float(v) for v in row) for row in event.window)
        feedback = FeedbackRecord(event.event_id, float(t), rows)
        return event.advance(EventState.FALSE_ALARM, t, "no fallen person found", verdict=False, feedback=feedback)
    raise IllegalTransition(
        f"event {event.event_id}: {type(stimulus).__name__} is not accepted in state {state.value}"
    )


def validate_log(lines: Iterable[str], source: Optional[str] = None) -> int:
    """Replay JSON-lines transitions; returns the number of events seen."""
    last: Dict[int, Tuple[int, EventState]] = {}
    for line_no, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            record = json.loads(text)
            event_id, seq = int(record["event_id"]), int(record["seq"])
            src, dst = EventState(record["from"]), EventState(record["to"])
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedRow(f"unreadable transition record: {e}", line=line_no, source=source)
        expected_seq, expected_src = last.get(event_id, (0, EventState.IDLE))
        if seq != expected_seq or src != expected_src or not is_legal(src, dst):
            where = f"{source}:{line_no}" if source else f"line {line_no}"
            raise IllegalTransition(f"{where}: event {event_id} step {seq} {src.value} -> {dst.value} is not legal")
        last[event_id] = (seq + 1, dst)
    return len(last)


# ---------------------------------------------------------------------------
# Reliability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReliabilityModel:
    detect_fail: float = 0.0081
    nav_fail: float = 0.05
    vision_fail: float = 0.0367

    def __post_init__(self):
        bad = [name for name in ("detect_fail", "nav_fail", "vision_fail") if not 0.0 <= getattr(self, name) <= 1.0]
        if bad:
            raise ParameterValidationError(f"failure rates must be in [0, 1]: {', '.join(bad)}")

    @property
    def rates(self) -> Tuple[float, float, float]:
        return self.detect_fail, self.nav_fail, self.vision_fail

    @classmethod
    def from_config(cls, config: MissionConfig) -> "ReliabilityModel":
        return cls(config.detect_fail, config.nav_fail, config.vision_fail)


@dataclass(frozen=True)
class Reliability:
    failure: float
    accuracy_percent: float
    serial_failure: float
    serial_accuracy_percent: float

    @property
    def accuracy_text(self) -> str:
        return f"{self.accuracy_percent:.5f}"

    def to_dict(self) -> Dict:
        return {
            "model": "product of failure rates (every stage must fail)",
            "failure": self.failure,
            "accuracy_percent": self.accuracy_percent,
            "accuracy_text": self.accuracy_text,
            "alternative": {
                "model": "serial success (every stage must succeed)",
                "failure": self.serial_failure,
                "accuracy_percent": self.serial_accuracy_percent,
            },
        }


def combined_reliability(model: Union[ReliabilityModel, Sequence[float]] = ReliabilityModel()) -> Reliability:
    """failure = product of stage failure rates; accuracy = 1 - failure (percent)."""
    rates = model.rates if isinstance(model, ReliabilityModel) else tuple(float(r) for r in model)
    if not rates:
        raise ParameterValidationError("need at least one failure rate")
    if any(not 0.0 <= r <= 1.0 for r in rates):
        raise ParameterValidationError(f"failure rates must be in [0, 1], got {rates}")
    failure = math.prod(sorted(rates))
    serial_failure = 1.0 - math.prod(sorted(1.0 - r for r in rates))
    return Reliability(failure, 100.0 * (1.0 - failure), serial_failure, 100.0 * (1.0 - serial_failure))


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass
class SimScenario:
    """World, user trajectory and event schedule of one simulated run."""

    name: str = "scenario"
    map_path: Optional[str] = None
    room: Dict = field(default_factory=lambda: {"width_m": 10.0, "height_m": 10.0, "resolution": 0.25, "walls": []})
    anchors: List[Anchor] = field(default_factory=default_anchors)
    waypoints: List[Point] = field(default_factory=lambda: [(2.0, 2.0), (8.0, 2.0), (8.0, 8.0)])
    robot_start: Point = (1.0, 1.0)
    duration_s: float = 20.0
    fall_at: Optional[float] = 10.0
    false_trigger_at: Optional[float] = None
    walk_speed: float = 0.8
    robot_speed: float = 0.5
    radio: RadioModel = field(default_factory=RadioModel)
    stage_source: str = "truth"
    inject_failures: bool = False
    rates: Optional[Dict[str, float]] = None
    seed: int = 0

    def __post_init__(self):
        self.anchors = [a if isinstance(a, Anchor) else Anchor(**a) for a in self.anchors]
        self.waypoints = [(float(p[0]), float(p[1])) for p in self.waypoints]
        self.robot_start = (float(self.robot_start[0]), float(self.robot_start[1]))
        if isinstance(self.radio, Mapping):
            self.radio = RadioModel(**self.radio)
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.stage_source not in STAGE_SOURCES:
            errors.append(f"stage_source must be one of {list(STAGE_SOURCES)}")
        if not self.anchors:
            errors.append("at least one anchor is required")
        if not self.waypoints:
            errors.append("at least one waypoint is required")
        if not self.duration_s > 0:
            errors.append("duration_s must be positive")
        for name in ("fall_at", "false_trigger_at"):
            value = getattr(self, name)
            if value is not None and not 0 <= value < self.duration_s:
                errors.append(f"{name} must lie in [0, duration_s)")
        if not (self.walk_speed > 0 and self.robot_speed > 0):
            errors.append("speeds must be positive")
        if self.stage_source == "model" and self.inject_failures:
            errors.append("failure injection applies to truth-sourced stages only")
        if errors:
            raise ParameterValidationError("Scenario validation failed: " + "; ".join(errors))

    def build_raster(self, base_dir: Optional[Path] = None) -> OccupancyRaster:
        if self.map_path:
            path = Path(self.map_path)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return read_raster(path)
        room = dict(self.room)
        return synth_room(room.get("width_m", 10.0), room.get("height_m", 10.0),
                          room.get("resolution", 0.25), room.get("walls", ()))

    def check_world(self, raster: OccupancyRaster) -> None:
        x0, y0, x1, y1 = raster.extent
        errors = []
        for anchor in self.anchors:
            if not (x0 <= anchor.x <= x1 and y0 <= anchor.y <= y1):
                errors.append(f"anchor {anchor.mac} lies outside the map")
        for point in [*self.waypoints, self.robot_start]:
            cell = raster.world_to_cell(*point)
            if cell is None or not raster.is_free(*cell):
                errors.append(f"point {point} is not in free space")
        if errors:
            raise ParameterValidationError("Scenario world check failed: " + "; ".join(errors))

    def reliability(self, config: MissionConfig) -> ReliabilityModel:
        base = ReliabilityModel.from_config(config)
        return replace(base, **self.rates) if self.rates else base

    def user_position(self, t: float) -> Point:
        """Piecewise-linear walk along the waypoints; the user stays put after a fall."""
        if self.fall_at is not None:
            t = min(t, self.fall_at)
        remaining = max(t, 0.0) * self.walk_speed
        points = self.waypoints
        for a, b in zip(points, points[1:]):
            length = math.hypot(b[0] - a[0], b[1] - a[1])
            if remaining <= length:
                u = remaining / length if length > 0 else 0.0
                return a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])
            remaining -= length
        return points[-1]

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "map_path": self.map_path,
            "room": self.room,
            "anchors": [a.to_dict() for a in self.anchors],
            "waypoints": [list(p) for p in self.waypoints],
            "robot_start": list(self.robot_start),
            "duration_s": self.duration_s,
            "fall_at": self.fall_at,
            "false_trigger_at": self.false_trigger_at,
            "walk_speed": self.walk_speed,
            "robot_speed": self.robot_speed,
            "radio": self.radio.to_dict(),
            "stage_source": self.stage_source,
            "inject_failures": self.inject_failures,
            "rates": self.rates,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimScenario":
        data = dict(data or {})
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterValidationError(f"Unknown scenario key(s): {', '.join(unknown)}")
        return cls(**data)


def load_scenario(path: Union[str, Path]) -> SimScenario:
    """YAML (or JSON) scenario file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as e:
        raise MissingArtifact(f"scenario file not readable: {path} ({e})")
    except yaml.YAMLError as e:
        raise ParameterValidationError(f"{path}: invalid scenario file: {e}")
    if not isinstance(data, Mapping):
        raise ParameterValidationError(f"{path}: scenario must be a mapping")
    return SimScenario.from_dict(data)


def save_scenario(scenario: SimScenario, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(scenario.to_dict(), f, default_flow_style=False, indent=2, sort_keys=True)
    return path


@dataclass
class ScenarioArtifacts:
    """Trained stages for model-sourced runs; truth-sourced runs need none."""

    fall_model: object = None
    loc_model: object = None
    vision_model: object = None

    def require(self) -> None:
        missing = [name for name in ("fall_model", "loc_model", "vision_model") if getattr(self, name) is None]
        if missing:
            raise MissingArtifact(f"model-sourced scenario needs trained artifacts: {', '.join(missing)}")


@dataclass
class ScenarioResult:
    index: int
    events: List[PipelineEvent]
    counts: Dict[str, Dict[str, int]]
    real_fall: bool
    missed: bool
    suppressed: int = 0

    @property
    def transitions(self) -> List[Transition]:
        return [step for event in self.events for step in event.transitions]

    @property
    def alerts(self) -> List[AlertMessage]:
        return [e.alert for e in self.events if e.alert is not None]

    @property
    def feedback(self) -> List[FeedbackRecord]:
        return [e.feedback for e in self.events if e.feedback is not None]

    def log_lines(self) -> List[str]:
        return [json.dumps(step.to_dict(), sort_keys=True) for step in self.transitions]

    def record_lines(self) -> List[str]:
        records = [a.to_dict() for a in self.alerts] + [f.to_dict() for f in self.feedback]
        records.sort(key=lambda r: (r["event_id"], r["type"]))
        return [json.dumps(r, sort_keys=True) for r in records]

    def summary(self) -> Dict:
        states = [e.state.value for e in self.events]
        return {
            "index": self.index,
            "events": len(self.events),
            "confirmed": states.count(EventState.CONFIRMED.value),
            "false_alarms": states.count(EventState.FALSE_ALARM.value),
            "aborted": states.count(EventState.ABORTED.value),
            "real_fall": self.real_fall,
            "missed": self.missed,
            "suppressed": self.suppressed,
            "counts": self.counts,
        }


@dataclass(frozen=True)
class _Trigger:
    t: float
    real: bool
    forced: bool = False
    window: Optional[np.ndarray] = field(default=None, compare=False)
    recovery: bool = False


@dataclass(frozen=True)
class StageFaults:
    """Injected failures of the three stages for the real fall of one run."""

    detect: bool = False
    nav: bool = False
    vision: bool = False

    @property
    def any(self) -> bool:
        return self.detect or self.nav or self.vision

    @property
    def every(self) -> bool:
        return self.detect and self.nav and self.vision


class _ScenarioRun:
    """State of one seeded run; not shared between threads."""

    def __init__(self, scenario: SimScenario, artifacts: ScenarioArtifacts, config: RunConfig, index: int,
                 base_dir: Optional[Path]):
        self.scenario = scenario
        self.artifacts = artifacts
        self.config = config
        self.index = index
        self.raster = scenario.build_raster(base_dir)
        scenario.check_world(self.raster)
        self.tick = config.signal.packet_interval_s
        self.model_mode = scenario.stage_source == "model"
        key = (scenario.seed, index)
        self.rng_nav = stream(config.seed, "nav", *key)
        self.rng_radio = stream(config.seed, "radio", *key)
        self.rng_inject = stream(config.seed, "inject", *key)
        self.rng_scene = stream(config.seed, f"scenario/{index}", scenario.seed)
        self.trace_seed = derive_seed(config.seed, "scenario", scenario.seed, index)
        self.rates = scenario.reliability(config.mission)
        self.counts = {
            "detect": {"tp": 0, "fp": 0, "fn": 0},
            "nav": {"reached": 0, "failed": 0},
            "vision": {"tp": 0, "tn": 0, "fp": 0, "fn": 0},
        }
        self._cleaned: Optional[TimeSeries] = None

    def snap(self, t: float) -> float:
        """Next tick at or after ``t``."""
        return math.ceil(t / self.tick - 1e-9) * self.tick

    def cleaned_trace(self) -> TimeSeries:
        if self._cleaned is None:
            sc = self.scenario
            kind = "fall" if sc.fall_at is not None else "adl"
            samples = synth_trace(kind, self.trace_seed, sc.duration_s, self.config.signal.source_rate_hz,
                                  impact_at=sc.fall_at)
            t, values = samples_to_arrays(samples)
            preproc = self.artifacts.fall_model.preproc if self.model_mode else self.config.preproc
            self._cleaned = PreprocPipeline(preproc).clean(TimeSeries(t, values), is_fall=False)
        return self._cleaned

    def _windows(self) -> Tuple[np.ndarray, np.ndarray]:
        cleaned = self.cleaned_trace()
        preproc = self.artifacts.fall_model.preproc if self.model_mode else self.config.preproc
        windows = make_windows(cleaned, preproc.window_len, preproc.step)
        values = np.stack([w.values for w in windows])
        ends = np.array([cleaned.t[w.start_index + preproc.window_len - 1] for w in windows])
        return values, ends

    def window_at(self, t: float) -> Optional[np.ndarray]:
        """Earliest window ending at or after ``t`` (the last one if none does)."""
        values, ends = self._windows()
        later = np.flatnonzero(ends >= t)
        return values[later[0] if later.size else -1]

    def triggers(self) -> List[_Trigger]:
        sc = self.scenario
        out: List[_Trigger] = []
        if sc.false_trigger_at is not None:
            out.append(_Trigger(self.snap(sc.false_trigger_at), False, forced=True))
        if self.model_mode:
            values, ends = self._windows()
            verdicts = self.artifacts.fall_model.predict_windows(values)
            for k in np.flatnonzero(verdicts == 1):
                real = sc.fall_at is not None and ends[k] >= sc.fall_at
                out.append(_Trigger(self.snap(float(ends[k])), bool(real), window=values[k]))
        elif sc.fall_at is not None:
            out.append(_Trigger(self.snap(sc.fall_at), True))
        out.sort(key=lambda tr: (tr.t, not tr.real))
        return out

    def injected_failures(self) -> StageFaults:
        u = self.rng_inject.random(3)
        detect, nav, vision = (bool(u[k] < rate) for k, rate in enumerate(self.rates.rates))
        return StageFaults(detect, nav, vision)

    def run_event(self, event_id: int, trigger: _Trigger,
                  faults: Optional[StageFaults]) -> Tuple[PipelineEvent, float]:
        """Drive one event through the state machine.

        ``faults`` is None for model-sourced stages; otherwise the stages follow
        ground truth except where a fault is injected.
        """
        sc = self.scenario
        mission = self.config.mission
        t = trigger.t
        window = trigger.window
        if window is None:
            window = self.window_at(t)
        event = step_event(PipelineEvent(event_id), FallVerdict(True, window), t)

        t += self.tick
        position = sc.user_position(t)
        values = synth_rssi(sc.anchors, position, sc.radio, self.rng_radio)
        readings = {a.mac: float(v) for a, v in zip(sc.anchors, values)}
        event = step_event(event, RssiReport(readings), t)

        t += self.tick
        x, y = self.artifacts.loc_model.locate(readings) if self.model_mode else position
        event = step_event(event, LocalizationFix(x, y), t)

        try:
            plan = plan_path(self.raster, cell_of(self.raster, sc.robot_start), nearest_free_cell(self.raster, (x, y)))
        except NoPath:
            return step_event(event, Abort("no_path"), t), t
        cell_time = self.raster.resolution / sc.robot_speed
        while event.state == EventState.NAVIGATING:
            if faults is None:
                result = simulate_navigation(plan, mission.nav_success_p, rng=self.rng_nav)
            elif faults.nav:
                result = NavResult(False, "obstacle", plan.cells, plan.moves)
            else:
                result = NavResult(True, None, plan.cells, plan.moves)
            self.counts["nav"]["reached" if result.reached else "failed"] += 1
            t += max(result.ticks, 1) * cell_time
            event = step_event(event, result, t, mission.nav_max_retries)
        if event.state == EventState.ABORTED:
            return event, t

        t += self.tick
        fallen = sc.fall_at is not None and t >= sc.fall_at
        if self.model_mode:
            frame = synth_scene_frame(f"event_{event_id}", fallen, self.rng_scene)
            features = extract_features(frame.detections, self.config.vision)[None, :]
            verdict = bool(self.artifacts.vision_model.predict(features)[0] == 1)
            score = float(self.artifacts.vision_model.predict_proba(features)[0])
        else:
            verdict, score = fallen != faults.vision, 1.0
        vision = self.counts["vision"]
        vision[("tp" if verdict else "fn") if fallen else ("fp" if verdict else "tn")] += 1
        return step_event(event, InspectionVerdict(verdict, score), t), t

    def run(self) -> ScenarioResult:
        """Serve triggers in time order until a fall is confirmed.

        Injected faults act on the first event of the real fall: a detect fault
        drops the wearable trigger, a nav fault aborts the mission once its
        retries are spent and a vision fault flips the inspection verdict. While
        any stage stayed healthy the fall is picked up again by a recovery event
        one cooldown later; it goes unnoticed only when every stage failed.
        """
        sc = self.scenario
        cooldown = self.config.mission.cooldown_s
        real_fall = sc.fall_at is not None
        faults: Optional[StageFaults] = None
        if not self.model_mode:
            faults = StageFaults()
            if sc.inject_failures and real_fall:
                faults = self.injected_failures()
                if faults.any:
                    logger.debug(f"Run {self.index}: injected {faults}")
        pending = self.triggers()
        if faults is not None and faults.detect:
            pending = [tr for tr in pending if not tr.real]
        detected = any(tr.real for tr in pending)
        recoverable = faults is not None and faults.any and not faults.every
        if recoverable and faults.detect:
            pending.append(_Trigger(self.snap(sc.fall_at + cooldown), True, recovery=True))

        events: List[PipelineEvent] = []
        busy_until = -math.inf
        suppressed = 0
        while pending:
            pending.sort(key=lambda tr: (tr.t, not tr.real))
            trigger = pending.pop(0)
            if trigger.t < busy_until:
                suppressed += 1
                continue
            first_real = trigger.real and not trigger.recovery
            if not trigger.recovery:
                self.counts["detect"]["tp" if trigger.real else "fp"] += 1
            event_faults = faults if faults is None or first_real else StageFaults()
            event, t_end = self.run_event(len(events), trigger, event_faults)
            events.append(event)
            busy_until = t_end + cooldown
            if event.state == EventState.CONFIRMED:
                break
            if first_real and recoverable:
                pending.append(_Trigger(self.snap(busy_until), True, recovery=True))
        confirmed = any(e.state == EventState.CONFIRMED for e in events)
        if real_fall and not detected:
            self.counts["detect"]["fn"] += 1
        missed = real_fall and not confirmed
        return ScenarioResult(self.index, events, self.counts, real_fall, missed, suppressed)


def run_scenario(scenario: SimScenario, artifacts: Optional[ScenarioArtifacts] = None,
                 config: Optional[RunConfig] = None, index: int = 0,
                 base_dir: Optional[Union[str, Path]] = None) -> ScenarioResult:
    """Tick one seeded world from the first trigger to the end of its events."""
    config = config or RunConfig()
    artifacts = artifacts or ScenarioArtifacts()
    if scenario.stage_source == "model":
        artifacts.require()
    result = _ScenarioRun(scenario, artifacts, config, index, Path(base_dir) if base_dir else None).run()
    logger.debug(f"Scenario {scenario.name} run {index}: {result.summary()}")
    return result


@dataclass
class BatchSummary:
    runs: int
    real_falls: int
    confirmed: int
    missed: int
    false_alarms: int
    aborted: int
    alerts: int
    feedback: int

    @property
    def miss_rate(self) -> float:
        return self.missed / self.real_falls if self.real_falls else 0.0

    def to_dict(self) -> Dict:
        return {"runs": self.runs, "real_falls": self.real_falls, "confirmed": self.confirmed,
                "missed": self.missed, "miss_rate": self.miss_rate, "false_alarms": self.false_alarms,
                "aborted": self.aborted, "alerts": self.alerts, "feedback": self.feedback}


def run_batch(scenario: SimScenario, n: int, artifacts: Optional[ScenarioArtifacts] = None,
              config: Optional[RunConfig] = None, jobs: int = 1,
              base_dir: Optional[Union[str, Path]] = None) -> Tuple[BatchSummary, List[ScenarioResult]]:
    """``n`` seeded runs of one scenario, one world per worker."""
    if n < 1:
        raise ParameterValidationError("batch size must be >= 1")
    config = config or RunConfig()
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda k: run_scenario(scenario, artifacts, config, k, base_dir), range(n)))
    summaries = [r.summary() for r in results]
    batch = BatchSummary(
        runs=n,
        real_falls=sum(r.real_fall for r in results),
        confirmed=sum(s["confirmed"] for s in summaries),
        missed=sum(r.missed for r in results),
        false_alarms=sum(s["false_alarms"] for s in summaries),
        aborted=sum(s["aborted"] for s in summaries),
        alerts=sum(len(r.alerts) for r in results),
        feedback=sum(len(r.feedback) for r in results),
    )
    logger.info(f"Batch of {n} runs: {batch.missed} missed falls, {batch.false_alarms} false alarms")
    return batch, results


def write_jsonl(lines: Sequence[str], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path
