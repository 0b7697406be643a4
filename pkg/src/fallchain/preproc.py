"""
IMU preprocessing.

Resampling, EWMA and Savitzky-Golay smoothing, impact-centred trimming of fall
trials, sliding windows and frozen min-max normalization to [-1, 1].
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import lfilter, savgol_filter

from fallchain.config import PreprocConfig
from fallchain.signal_io import ACTIVITY_RE, is_valid_activity
from fallchain.utils.exceptions import (
    ArtifactError,
    DegenerateChannelWarning,
    DivisionByZero,
    EmptyDataset,
    InvalidAlpha,
    ParameterValidationError,
    ShapeMismatch,
    TooShort,
    UnknownCode,
)

logger = logging.getLogger(__name__)

CHANNELS = ("ax", "ay", "az", "wx", "wy", "wz")
TrialKey = Tuple[str, str, int]


@dataclass(frozen=True)
class TimeSeries:
    """Timestamps ``t`` (n,) and parallel channel values (n, c)."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", values)
        if t.ndim != 1 or values.shape[0] != t.shape[0]:
            raise ShapeMismatch(
                f"TimeSeries channels must match t: t{t.shape} vs values{values.shape}"
            )
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ParameterValidationError("TimeSeries timestamps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.t[start:stop], self.values[start:stop])


@dataclass(frozen=True)
class Window:
    """l x 6 training matrix cut from one trial."""

    values: np.ndarray
    source_trial: Optional[TrialKey] = None
    start_index: int = 0

    @property
    def length(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class LabeledWindow:
    window: Window
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ParameterValidationError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class NormBounds:
    """Per-channel min/max learned on training windows; frozen afterwards."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ShapeMismatch("NormBounds lo/hi must be 1-D and equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ParameterValidationError("NormBounds must be finite")
        if np.any(lo > hi):
            raise ParameterValidationError("NormBounds require min <= max per channel")

    @property
    def degenerate(self) -> np.ndarray:
        return self.lo == self.hi

    def to_dict(self) -> Dict[str, List[float]]:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "NormBounds":
        try:
            return cls(np.asarray(data["lo"]), np.asarray(data["hi"]))
        except KeyError as e:
            raise ArtifactError(f"norm bounds missing key {e}")


# ---------------------------------------------------------------------------
# Resampling and filters
# ---------------------------------------------------------------------------

def resample(ts: TimeSeries, f: float) -> TimeSeries:
    """Linear interpolation onto the uniform grid t0 + k/f covering [t0, t_end]."""
    if len(ts) < 2:
        raise TooShort(f"resample needs at least 2 samples, got {len(ts)}")
    if f <= 0:
        raise ParameterValidationError(f"resample rate must be positive, got {f}")
    t0, t_end = float(ts.t[0]), float(ts.t[-1])
    # the epsilon keeps t_end on the grid when (t_end - t0) * f is integral
    n = int(np.floor((t_end - t0) * f + 1e-9)) + 1
    grid = t0 + np.arange(n, dtype=np.float64) / f
    values = np.column_stack([np.interp(grid, ts.t, ts.values[:, c]) for c in range(ts.values.shape[1])])
    return TimeSeries(grid, values)


def ewma(ts: TimeSeries, alpha: float) -> TimeSeries:
    """y0 = x0, y_t = alpha * x_t + (1 - alpha) * y_{t-1} per channel."""
    if not (0 < alpha <= 1):
        raise InvalidAlpha(f"alpha must be in (0, 1], got {alpha}")
    if len(ts) == 0:
        return ts
    zi = ((1.0 - alpha) * ts.values[0])[None, :]
    values, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], ts.values, axis=0, zi=zi)
    return TimeSeries(ts.t, values)


def savgol(ts: TimeSeries, window: int = 5, order: int = 2) -> TimeSeries:
    """Savitzky-Golay smoothing; edges use the polynomial fitted to the terminal window."""
    if window < 1 or window % 2 == 0:
        raise ParameterValidationError(f"savgol window must be a positive odd count, got {window}")
    if order >= window:
        raise ParameterValidationError("savgol order must be < window")
    if len(ts) < window:
        raise TooShort(f"savgol needs at least {window} samples, got {len(ts)}")
    values = savgol_filter(ts.values, window, order, mode="interp", axis=0)
    return TimeSeries(ts.t, values)


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

def window_count(n: int, l: int, step: int) -> int:
    return (n - l) // step + 1 if n >= l else 0


def make_windows(
    ts: TimeSeries,
    l: int = 40,
    step: int = 10,
    source_trial: Optional[TrialKey] = None,
) -> List[Window]:
    if l < 2 or step < 1:
        raise ParameterValidationError("window length must be >= 2 and step >= 1")
    n = len(ts)
    if n < l:
        raise TooShort(f"series of {n} samples is shorter than window length {l}")
    return [
        Window(ts.values[start:start + l].copy(), source_trial, start)
        for start in range(0, n - l + 1, step)
    ]


def _stack(windows: Union[np.ndarray, Sequence[Window]]) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows
    return np.stack([w.values for w in windows]) if len(windows) else np.zeros((0, 0, 0))


def fit_normalizer(windows: Union[np.ndarray, Sequence[Window]]) -> NormBounds:
    """Per-channel min/max over every training window."""
    data = _stack(windows)
    if data.size == 0:
        raise EmptyDataset("cannot fit normalization bounds on an empty training set")
    flat = data.reshape(-1, data.shape[-1])
    bounds = NormBounds(flat.min(axis=0), flat.max(axis=0))
    for channel in np.flatnonzero(bounds.degenerate):
        name = CHANNELS[channel] if channel < len(CHANNELS) else str(channel)
        message = f"channel {name} is constant ({bounds.lo[channel]}); it will normalize to 0"
        logger.warning(message)
        warnings.warn(message, DegenerateChannelWarning, stacklevel=2)
    return bounds


def merge_bounds(parts: Iterable[NormBounds]) -> NormBounds:
    """Elementwise min/max merge of bounds fitted on disjoint subsets."""
    parts = list(parts)
    if not parts:
        raise EmptyDataset("no bounds to merge")
    lo = np.min(np.stack([p.lo for p in parts]), axis=0)
    hi = np.max(np.stack([p.hi for p in parts]), axis=0)
    return NormBounds(lo, hi)


def normalize_array(values: np.ndarray, bounds: NormBounds) -> np.ndarray:
    """x -> 2 (x - min) / (max - min) - 1, no clamping; degenerate channels -> 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != bounds.lo.shape[0]:
        raise ShapeMismatch(
            f"expected {bounds.lo.shape[0]} channels, got {values.shape[-1]}"
        )
    span = bounds.hi - bounds.lo
    safe = np.where(bounds.degenerate, 1.0, span)
    out = 2.0 * (values - bounds.lo) / safe - 1.0
    return np.where(bounds.degenerate, 0.0, out)


def apply_normalizer(window: Window, bounds: NormBounds) -> Window:
    return Window(normalize_array(window.values, bounds), window.source_trial, window.start_index)


# ---------------------------------------------------------------------------
# Labels, trimming, sample count
# ---------------------------------------------------------------------------

def label_activity(code: str) -> int:
    """F* (fall) -> 1, D* (ADL) -> 0."""
    if not is_valid_activity(code):
        raise UnknownCode(f"unknown activity code {code!r}")
    return 1 if ACTIVITY_RE.match(code).group("kind") == "F" else 0


def impact_index(ts: TimeSeries) -> int:
    """argmax of the acceleration magnitude; ties resolve to the lowest index."""
    magnitude = np.linalg.norm(ts.values[:, :3], axis=1)
    return int(np.argmax(magnitude))


def trim_fall(ts: TimeSeries, margin: int = 80) -> TimeSeries:
    """Keep samples [peak - margin, peak + margin] (inclusive, clipped)."""
    if len(ts) == 0:
        raise TooShort("cannot trim an empty series")
    if margin < 0:
        raise ParameterValidationError("trim margin must be non-negative")
    peak = impact_index(ts)
    start = max(0, peak - margin)
    stop = min(len(ts), peak + margin + 1)
    return ts.slice(start, stop)


def sample_count(k: float, J: float, f: float, l: float) -> float:
    """r = (k * J) / (f * l), the training-sample count of the packet formula."""
    if f == 0 or l == 0:
        raise DivisionByZero("sample_count: f and l must be non-zero")
    if min(k, J, f, l) <= 0:
        raise ParameterValidationError("sample_count arguments must be positive")
    return (k * J) / (f * l)


# ---------------------------------------------------------------------------
# Pipeline and window sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialSeries:
    """A trial already in physical units, ready for the cleaning pipeline."""

    subject_id: str
    activity_code: str
    trial_index: int
    series: TimeSeries

    @property
    def key(self) -> TrialKey:
        return (self.subject_id, self.activity_code, self.trial_index)

    @property
    def label(self) -> int:
        return label_activity(self.activity_code)


class PreprocPipeline:
    """resample -> filters in configured order -> optional fall trim -> windows."""

    def __init__(self, config: Optional[PreprocConfig] = None):
        self.config = config or PreprocConfig()
        self.logger = logging.getLogger(__name__)

    def clean(self, ts: TimeSeries, is_fall: bool = False) -> TimeSeries:
        cfg = self.config
        out = resample(ts, cfg.resample_hz)
        for name in cfg.enabled_filters():
            if name == "ewma":
                out = ewma(out, cfg.ewma_alpha)
            else:
                out = savgol(out, cfg.savgol_window, cfg.savgol_order)
        if is_fall and cfg.trim_falls:
            out = trim_fall(out, cfg.effective_trim_margin)
        return out

    def windows(self, trial: TrialSeries) -> List[Window]:
        cleaned = self.clean(trial.series, is_fall=trial.label == 1)
        if len(cleaned) < self.config.window_len:
            self.logger.warning(
                f"Trial {trial.key} yields {len(cleaned)} samples, shorter than "
                f"window_len={self.config.window_len}; skipped"
            )
            return []
        return make_windows(cleaned, self.config.window_len, self.config.step, trial.key)


@dataclass
class WindowSet:
    """Labeled windows of many trials: values (N, l, 6), labels (N,), per-window subject."""

    values: np.ndarray
    labels: np.ndarray
    subjects: List[str]
    sources: List[TrialKey] = field(default_factory=list)
    starts: List[int] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.values.shape[0]
        if self.labels.shape != (n,) or len(self.subjects) != n:
            raise ShapeMismatch("WindowSet values, labels and subjects must have equal length")
        if not self.sources:
            self.sources = [("", "", 0)] * n
        if not self.starts:
            self.starts = [0] * n

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def subject_ids(self) -> List[str]:
        return sorted(set(self.subjects))

    def select(self, mask: np.ndarray) -> "WindowSet":
        idx = np.flatnonzero(mask)
        return WindowSet(
            self.values[idx],
            self.labels[idx],
            [self.subjects[i] for i in idx],
            [self.sources[i] for i in idx],
            [self.starts[i] for i in idx],
        )

    def for_subjects(self, subjects: Iterable[str]) -> "WindowSet":
        wanted = set(subjects)
        return self.select(np.array([s in wanted for s in self.subjects], dtype=bool))

    def windows(self) -> List[LabeledWindow]:
        return [
            LabeledWindow(Window(self.values[i], self.sources[i], self.starts[i]), int(self.labels[i]))
            for i in range(len(self))
        ]

    def save(self, directory: Union[str, Path], extra: Optional[Dict] = None) -> Path:
        """``windows.npy`` + ``labels.npy`` + ``index.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.save(directory / "windows.npy", self.values)
        np.save(directory / "labels.npy", self.labels)
        index = {
            "format": "fallchain-windows",
            "version": 1,
            "subjects": self.subjects,
            "sources": [list(s) for s in self.sources],
            "starts": self.starts,
        }
        if extra:
            index.update(extra)
        (directory / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "WindowSet":
        directory = Path(directory)
        try:
            index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
            values = np.load(directory / "windows.npy")
            labels = np.load(directory / "labels.npy")
        except FileNotFoundError as e:
            raise ArtifactError(f"{directory} is not a window dataset: {e.filename} missing")
        if index.get("format") != "fallchain-windows" or index.get("version") != 1:
            raise ArtifactError(f"{directory}/index.json has an unsupported format or version")
        return cls(
            values,
            labels,
            list(index["subjects"]),
            [tuple(s) for s in index["sources"]],
            list(index["starts"]),
        )


def build_window_set(trials: Iterable[TrialSeries], config: Optional[PreprocConfig] = None) -> WindowSet:
    """Windows of every trial in (subject, activity, trial) order; not normalized."""
    pipeline = PreprocPipeline(config)
    ordered = sorted(trials, key=lambda tr: tr.key)
    values, labels, subjects, sources, starts = [], [], [], [], []
    for trial in ordered:
        for window in pipeline.windows(trial):
            values.append(window.values)
            labels.append(trial.label)
            subjects.append(trial.subject_id)
            sources.append(trial.key)
            starts.append(window.start_index)
    if not values:
        raise EmptyDataset("no trial produced a window")
    l = pipeline.config.window_len
    logger.info(
        f"Built {len(values)} windows ({int(np.sum(labels))} fall) from {len(ordered)} trials"
    )
    return WindowSet(np.stack(values).reshape(-1, l, len(CHANNELS)), np.asarray(labels), subjects, sources, starts)


def write_windows_csv(windows: WindowSet, path: Union[str, Path]) -> None:
    """One line per window row: window,label,subject,row,ax..wz."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["window", "label", "subject", "row", *CHANNELS])
        for i in range(len(windows)):
            for r, row in enumerate(windows.values[i]):
                writer.writerow([i, int(windows.labels[i]), windows.subjects[i], r, *[repr(float(v)) for v in row]])
