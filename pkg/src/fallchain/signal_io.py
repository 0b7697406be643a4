"""
IMU signal input/output.

Parses SisFall-format trial files, converts raw integer readings to physical
units, generates labeled synthetic IMU traces and groups samples into the
packets a wearable transmits.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from fallchain.utils.exceptions import (
    EmptyFile,
    InvalidDuration,
    InvalidK,
    MalformedRow,
    ParameterValidationError,
    UnknownCode,
)

logger = logging.getLogger(__name__)

RAW_COLUMNS = 9
TRACE_HEADER = ["t", "ax", "ay", "az", "wx", "wy", "wz"]
ACTIVITY_RE = re.compile(r"^(?P<kind>[FD])(?P<num>\d{2})$")
TRIAL_NAME_RE = re.compile(r"^(?P<code>[FD]\d{2})_(?P<subject>S[AE]\d{2})_R(?P<trial>\d{2})\.txt$")
FALL_CODE_COUNT = 15
ADL_CODE_COUNT = 19

Vec3 = Tuple[float, float, float]


def is_valid_activity(code: str) -> bool:
    """F01-F15 are falls and D01-D19 are activities of daily living."""
    match = ACTIVITY_RE.match(code)
    if match is None:
        return False
    num = int(match.group("num"))
    limit = FALL_CODE_COUNT if match.group("kind") == "F" else ADL_CODE_COUNT
    return 1 <= num <= limit


@dataclass(frozen=True)
class SensorScale:
    """Full-scale range (g or deg/s) and ADC resolution in bits."""

    range: float
    resolution: int

    def __post_init__(self):
        if not self.range > 0:
            raise ParameterValidationError(f"SensorScale range must be positive, got {self.range}")
        if not (1 <= self.resolution <= 32):
            raise ParameterValidationError(
                f"SensorScale resolution must be between 1 and 32 bits, got {self.resolution}"
            )

    @property
    def factor(self) -> float:
        return (2.0 * self.range) / (2 ** self.resolution)


# Sensor defaults for the SisFall recording device; override per dataset
ACCEL_SCALE = SensorScale(16.0, 13)
GYRO_SCALE = SensorScale(2000.0, 16)


@dataclass(frozen=True)
class TrialMeta:
    subject_id: str
    activity_code: str
    trial_index: int


@dataclass(frozen=True)
class RawTrial:
    """One SisFall recording: 9 raw integer readings per timestamp."""

    subject_id: str
    activity_code: str
    trial_index: int
    rows: np.ndarray

    def __post_init__(self):
        errors = []
        if not is_valid_activity(self.activity_code):
            errors.append(f"activity_code {self.activity_code!r} is not F01-F15 or D01-D19")
        if self.trial_index < 1:
            errors.append("trial_index must be >= 1")
        if self.rows.ndim != 2 or self.rows.shape[1] != RAW_COLUMNS:
            errors.append(f"rows must have exactly {RAW_COLUMNS} columns")
        elif self.rows.shape[0] == 0:
            errors.append("rows must be nonempty")
        if errors:
            raise ParameterValidationError("; ".join(errors))

    @property
    def meta(self) -> TrialMeta:
        return TrialMeta(self.subject_id, self.activity_code, self.trial_index)

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.subject_id, self.activity_code, self.trial_index)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RawTrial):
            return NotImplemented
        return self.key == other.key and np.array_equal(self.rows, other.rows)

    def __hash__(self) -> int:
        return hash(self.key)


@dataclass(frozen=True)
class SensorSample:
    """x(t) = [a(t), w(t)]: acceleration in g, angular rate in deg/s."""

    t: float
    a: Vec3
    w: Vec3

    def as_row(self) -> List[float]:
        return [self.t, *self.a, *self.w]


@dataclass(frozen=True)
class Packet:
    """k consecutive samples; stored oldest -> newest, t_j is the newest instant."""

    t_j: float
    samples: Tuple[SensorSample, ...]

    @property
    def k(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# SisFall parsing
# ---------------------------------------------------------------------------

def _iter_rows(text: str, source: Optional[str]) -> Iterator[Tuple[int, List[int]]]:
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip().rstrip(";").strip()
        if not line:
            continue
        tokens = [tok.strip() for tok in line.split(",")]
        if len(tokens) != RAW_COLUMNS:
            raise MalformedRow(
                f"expected {RAW_COLUMNS} columns, got {len(tokens)}", line=line_no, source=source
            )
        try:
            yield line_no, [int(tok) for tok in tokens]
        except ValueError:
            bad = next(tok for tok in tokens if not re.fullmatch(r"[+-]?\d+", tok))
            raise MalformedRow(f"non-integer token {bad!r}", line=line_no, source=source)


def parse_trial(text: str, meta: TrialMeta, source: Optional[str] = None) -> RawTrial:
    """Parse comma-separated integer rows (optionally ';'-terminated)."""
    rows = [row for _, row in _iter_rows(text, source)]
    if not rows:
        raise EmptyFile(f"{source or 'trial'}: no sensor rows")
    if not is_valid_activity(meta.activity_code):
        raise UnknownCode(f"activity code {meta.activity_code!r} is not F01-F15 or D01-D19")
    return RawTrial(
        subject_id=meta.subject_id,
        activity_code=meta.activity_code,
        trial_index=meta.trial_index,
        rows=np.asarray(rows, dtype=np.int64),
    )


def serialize_trial(trial: RawTrial) -> str:
    """Inverse of :func:`parse_trial`: one ``a,b,...;`` line per row."""
    return "".join(",".join(str(int(v)) for v in row) + ";\n" for row in trial.rows)


def parse_trial_name(name: str) -> Optional[TrialMeta]:
    """``F01_SA01_R01.txt`` -> TrialMeta('SA01', 'F01', 1); None if it does not match."""
    match = TRIAL_NAME_RE.match(name)
    if match is None:
        return None
    return TrialMeta(match.group("subject"), match.group("code"), int(match.group("trial")))


def load_trial(path: Union[str, Path]) -> RawTrial:
    path = Path(path)
    meta = parse_trial_name(path.name)
    if meta is None:
        raise ParameterValidationError(f"{path}: name does not follow <CODE>_<SUBJECT>_R<NN>.txt")
    return parse_trial(path.read_text(encoding="utf-8", errors="replace"), meta, source=str(path))


def discover_trials(root: Union[str, Path]) -> List[Path]:
    """All SisFall trial files below ``root`` sorted by (subject, activity, trial)."""
    root = Path(root)
    found = []
    skipped = 0
    for path in root.rglob("*.txt"):
        meta = parse_trial_name(path.name)
        if meta is None or not is_valid_activity(meta.activity_code):
            skipped += 1
            continue
        found.append((meta.subject_id, meta.activity_code, meta.trial_index, path))
    if skipped:
        logger.warning(f"Skipped {skipped} files under {root} that are not SisFall trials")
    found.sort(key=lambda item: item[:3])
    return [item[3] for item in found]


# ---------------------------------------------------------------------------
# Unit conversion
# ---------------------------------------------------------------------------

def convert_raw(raw, scale: SensorScale):
    """value = raw * (2 * range / 2**resolution); works on scalars and arrays."""
    if isinstance(raw, np.ndarray):
        return raw.astype(np.float64) * scale.factor
    return float(raw) * scale.factor


def trial_to_series(trial: RawTrial, signal=None) -> Tuple[np.ndarray, np.ndarray]:
    """Select one accelerometer and the gyroscope and convert to physical units.

    ``signal`` is a SignalConfig (scales, column selector, source rate); the
    SisFall defaults apply when it is omitted. Returns ``(t, values)`` with
    ``values`` shaped (n, 6): ax, ay, az in g and wx, wy, wz in deg/s.
    """
    accel_scale = signal.accel_scale if signal is not None else ACCEL_SCALE
    gyro_scale = signal.gyro_scale if signal is not None else GYRO_SCALE
    columns = signal.columns if signal is not None else (0, 1, 2, 3, 4, 5)
    rate_hz = signal.source_rate_hz if signal is not None else 200.0
    if rate_hz <= 0:
        raise ParameterValidationError("rate_hz must be positive")
    cols = list(columns)
    accel = convert_raw(trial.rows[:, cols[:3]], accel_scale)
    gyro = convert_raw(trial.rows[:, cols[3:]], gyro_scale)
    t = np.arange(trial.rows.shape[0], dtype=np.float64) / rate_hz
    return t, np.hstack([accel, gyro])


# ---------------------------------------------------------------------------
# Synthetic traces
# ---------------------------------------------------------------------------

def _rotation_y(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    # gravity (0, 0, 1) rotated about the y axis
    return np.stack([s, np.zeros_like(theta), c], axis=-1)


def _adl_motion(rng: np.random.Generator, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # walking-like periodic motion around an upright posture
    cadence = rng.uniform(0.8, 1.8)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=6)
    amp_a = rng.uniform([0.10, 0.05, 0.10], [0.30, 0.20, 0.30])
    amp_w = rng.uniform(10.0, 30.0, size=3)
    omega = 2.0 * math.pi * cadence
    a = np.empty((t.size, 3))
    w = np.empty((t.size, 3))
    for axis in range(3):
        a[:, axis] = amp_a[axis] * np.sin(omega * t + phase[axis])
        w[:, axis] = amp_w[axis] * np.sin(omega * t + phase[3 + axis])
    a[:, 2] += 1.0
    a += np.clip(rng.normal(0.0, 0.02, size=a.shape), -0.06, 0.06)
    w += np.clip(rng.normal(0.0, 1.0, size=w.shape), -3.0, 3.0)
    return a, w


def synth_trace(
    kind: str,
    seed: int,
    duration: float,
    rate: float,
    impact_at: Optional[float] = None,
) -> List[SensorSample]:
    """Deterministic synthetic IMU trace.

    ``adl`` traces are bounded periodic motion plus noise. ``fall`` traces walk,
    then rotate towards the floor (~1.5 s, with a free-fall dip just before
    impact), hit the ground with a single ~8 g transient and lie still.
    """
    if kind not in ("fall", "adl"):
        raise ParameterValidationError(f"kind must be 'fall' or 'adl', got {kind!r}")
    if not duration > 0 or not rate > 0:
        raise InvalidDuration(f"duration and rate must be positive (got {duration} s, {rate} Hz)")
    n = int(round(duration * rate))
    if n < 1:
        raise InvalidDuration(f"{duration} s at {rate} Hz yields no samples")

    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64) / rate
    a, w = _adl_motion(rng, t)

    if kind == "fall":
        fall_rng = np.random.default_rng([seed, 1])
        t_impact = impact_at if impact_at is not None else fall_rng.uniform(0.45, 0.6) * duration
        # the impact lands on a sample so the transient peak is never missed
        t_impact = min(max(round(t_impact * rate), 0), n - 1) / rate
        descent = 1.5
        lying_angle = fall_rng.choice([-1.0, 1.0]) * fall_rng.uniform(1.3, 1.6)
        direction = np.array([fall_rng.uniform(0.3, 0.6), fall_rng.uniform(-0.3, 0.3), 1.0])
        direction /= np.linalg.norm(direction)

        theta = lying_angle * np.clip((t - (t_impact - descent)) / descent, 0.0, 1.0)
        tilting = (t >= t_impact - descent) & (t < t_impact)
        after = t >= t_impact

        gravity = _rotation_y(theta)
        a[tilting] = gravity[tilting] + 0.3 * (a[tilting] - np.array([0.0, 0.0, 1.0]))
        # free fall: measured acceleration drops towards zero
        dip = np.clip((t - (t_impact - 0.3)) / 0.3, 0.0, 1.0) * (t < t_impact)
        a *= (1.0 - 0.8 * dip)[:, None]
        w[tilting, 1] += np.sign(lying_angle) * math.degrees(abs(lying_angle)) / descent

        a[after] = gravity[after] + np.clip(rng.normal(0.0, 0.01, size=(int(after.sum()), 3)), -0.03, 0.03)
        w[after] = np.clip(rng.normal(0.0, 0.5, size=(int(after.sum()), 3)), -1.5, 1.5)

        pulse = 8.0 * np.exp(-0.5 * ((t - t_impact) / 0.03) ** 2)
        a += pulse[:, None] * direction[None, :]

    return [
        SensorSample(float(t[i]), tuple(float(v) for v in a[i]), tuple(float(v) for v in w[i]))
        for i in range(n)
    ]


def samples_to_arrays(samples: Sequence[SensorSample]) -> Tuple[np.ndarray, np.ndarray]:
    """(t, values) arrays from a sample sequence; values shaped (n, 6)."""
    if not samples:
        return np.zeros(0), np.zeros((0, 6))
    t = np.array([s.t for s in samples], dtype=np.float64)
    values = np.array([[*s.a, *s.w] for s in samples], dtype=np.float64)
    return t, values


def arrays_to_samples(t: np.ndarray, values: np.ndarray) -> List[SensorSample]:
    return [
        SensorSample(float(t[i]), tuple(float(v) for v in values[i, :3]), tuple(float(v) for v in values[i, 3:]))
        for i in range(len(t))
    ]


# ---------------------------------------------------------------------------
# Packets
# ---------------------------------------------------------------------------

def packet_size(interval_s: float, rate_hz: float) -> int:
    """Sample count k covering ``interval_s`` at ``rate_hz`` (at least one sample)."""
    if interval_s <= 0 or rate_hz <= 0:
        raise InvalidK("packet interval and rate must be positive")
    return max(1, int(round(interval_s * rate_hz)))


def packetize(stream: Sequence[SensorSample], k: int) -> List[Packet]:
    """Group consecutive samples into non-overlapping packets of ``k``; the tail is dropped."""
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    full = len(stream) // k
    packets = []
    for j in range(full):
        chunk = tuple(stream[j * k:(j + 1) * k])
        packets.append(Packet(t_j=chunk[-1].t, samples=chunk))
    dropped = len(stream) - full * k
    if dropped:
        logger.debug(f"packetize dropped {dropped} trailing samples (k={k})")
    return packets


def flatten_packets(packets: Sequence[Packet]) -> List[SensorSample]:
    return [sample for packet in packets for sample in packet.samples]


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_trace_csv(samples: Sequence[SensorSample], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        for sample in samples:
            writer.writerow([repr(v) for v in sample.as_row()])


def read_trace_csv(path: Union[str, Path]) -> List[SensorSample]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise MalformedRow(f"expected header {','.join(TRACE_HEADER)}", line=1, source=str(path))
        samples = []
        for line_no, row in enumerate(reader, start=2):
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise MalformedRow("non-numeric value", line=line_no, source=str(path))
            if len(values) != len(TRACE_HEADER):
                raise MalformedRow(f"expected {len(TRACE_HEADER)} columns", line=line_no, source=str(path))
            samples.append(SensorSample(values[0], tuple(values[1:4]), tuple(values[4:7])))
    return samples
