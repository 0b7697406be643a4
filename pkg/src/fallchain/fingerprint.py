"""
RSSI fingerprint map construction.

Aligns the robot's odometry, map-drift and beacon streams with dynamic time
warping over timestamps, builds the fingerprint table (Timestamp, X_Pos,
Y_Pos, one RSSI column per anchor MAC), fills unheard cells with the RSSI floor
and renders block-averaged heatmaps over an occupancy raster.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from scipy.spatial.distance import cdist

from fallchain.utils.exceptions import (
    EmptySequence,
    MalformedRow,
    ParameterValidationError,
    UnknownAnchor,
)

logger = logging.getLogger(__name__)

MAC_RE = re.compile(r"^([0-9A-F]{2}:){5}[0-9A-F]{2}$")
TABLE_PREFIX = ["Timestamp", "X_Pos", "Y_Pos"]

FREE, OCCUPIED, UNKNOWN = 0, 1, 2

PathLike = Union[str, Path]


def normalize_mac(mac: str) -> str:
    value = str(mac).strip().upper().replace("-", ":")
    if not MAC_RE.match(value):
        raise ParameterValidationError(f"malformed anchor MAC {mac!r}")
    return value


@dataclass(frozen=True)
class PoseSample:
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class DriftSample:
    t: float
    dx: float
    dy: float


@dataclass(frozen=True)
class RssiSample:
    t: float
    anchor_mac: str
    rssi: float

    def __post_init__(self):
        object.__setattr__(self, "anchor_mac", normalize_mac(self.anchor_mac))
        if self.rssi > 0 or not math.isfinite(self.rssi):
            raise ParameterValidationError(f"rssi must be finite and <= 0 dBm, got {self.rssi}")


# ---------------------------------------------------------------------------
# Dynamic time warping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DtwAlignment:
    """Warping path over (index in ta, index in tb) with per-step costs."""

    path: Tuple[Tuple[int, int], ...]
    cost: float
    step_costs: Tuple[float, ...]

    def partners(self, of_first: bool = True) -> Dict[int, int]:
        """For each index of one side, its lowest-cost partner on the path (ties -> lowest index)."""
        best: Dict[int, Tuple[float, int]] = {}
        for (i, j), c in zip(self.path, self.step_costs):
            key, other = (i, j) if of_first else (j, i)
            current = best.get(key)
            if current is None or (c, other) < current:
                best[key] = (c, other)
        return {key: other for key, (_, other) in sorted(best.items())}


def _as_times(seq: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise EmptySequence(f"{name} is empty")
    if np.any(np.diff(arr) < 0):
        raise ParameterValidationError(f"{name} timestamps must be non-decreasing")
    return arr


def dtw(ta: Sequence[float], tb: Sequence[float]) -> DtwAlignment:
    """Classic DTW with |dt| cost and match/insert/delete unit steps."""
    a = _as_times(ta, "ta")
    b = _as_times(tb, "tb")
    n, m = a.size, b.size
    local = cdist(a[:, None], b[:, None], metric="cityblock")
    # plain lists keep the O(nm) recurrence loop fast
    inf = math.inf
    rows = [[0.0] + [inf] * m] + [[inf] * (m + 1) for _ in range(n)]
    cost = local.tolist()
    for i in range(1, n + 1):
        row_prev, row, cost_row = rows[i - 1], rows[i], cost[i - 1]
        for j in range(1, m + 1):
            row[j] = cost_row[j - 1] + min(row_prev[j - 1], row_prev[j], row[j - 1])
    D = np.array(rows)

    # traceback, preferring the diagonal, then the step in ta, on ties
    i, j = n, m
    path = [(n - 1, m - 1)]
    while (i, j) != (1, 1):
        candidates = [(D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j), (D[i, j - 1], i, j - 1)]
        _, i, j = min(candidates, key=lambda c: c[0])
        path.append((i - 1, j - 1))
    path.reverse()
    steps = tuple(float(local[p, q]) for p, q in path)
    return DtwAlignment(tuple(path), float(D[n, m]), steps)


def dtw_align(ta: Sequence[float], tb: Sequence[float]) -> List[Tuple[int, int]]:
    """Index pairs (i in ta, j in tb): each element of the shorter sequence keeps its best partner.

    With equal lengths ``ta`` counts as the shorter one.
    """
    alignment = dtw(ta, tb)
    of_first = len(ta) <= len(tb)
    partners = alignment.partners(of_first=of_first)
    if of_first:
        return [(i, j) for i, j in partners.items()]
    return sorted((i, j) for j, i in partners.items())


def correct_pose(odom: Sequence[PoseSample], drift: Sequence[DriftSample]) -> List[PoseSample]:
    """Odometry shifted by its DTW-matched map drift; one output per odometry sample."""
    if not odom or not drift:
        raise EmptySequence("correct_pose needs odometry and drift samples")
    alignment = dtw([p.t for p in odom], [d.t for d in drift])
    partners = alignment.partners(of_first=True)
    corrected = []
    for i, pose in enumerate(odom):
        d = drift[partners[i]]
        corrected.append(PoseSample(pose.t, pose.x + d.dx, pose.y + d.dy))
    return corrected


# ---------------------------------------------------------------------------
# Fingerprint table
# ---------------------------------------------------------------------------

@dataclass
class FingerprintTable:
    """Rows of (timestamp, x, y, rssi per anchor); NaN marks a missing cell."""

    timestamps: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    macs: List[str]
    rssi: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        self.macs = [normalize_mac(m) for m in self.macs]
        self.rssi = np.asarray(self.rssi, dtype=np.float64).reshape(len(self.timestamps), len(self.macs))
        if not (self.timestamps.shape == self.xs.shape == self.ys.shape):
            raise ParameterValidationError("table columns must have equal length")
        if len(set(self.macs)) != len(self.macs):
            raise ParameterValidationError("anchor MACs must be unique")

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    @property
    def anchor_index(self) -> Dict[str, int]:
        return {mac: k for k, mac in enumerate(self.macs)}

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.xs, self.ys])

    def missing_count(self) -> int:
        return int(np.isnan(self.rssi).sum())

    def column(self, anchor: Union[str, int]) -> np.ndarray:
        if isinstance(anchor, (int, np.integer)):
            if not 0 <= anchor < len(self.macs):
                raise UnknownAnchor(f"anchor index {anchor} out of range (0..{len(self.macs) - 1})")
            return self.rssi[:, int(anchor)]
        try:
            return self.rssi[:, self.anchor_index[normalize_mac(anchor)]]
        except (KeyError, ParameterValidationError):
            raise UnknownAnchor(f"anchor {anchor!r} is not a column of this table")

    def take(self, rows: np.ndarray) -> "FingerprintTable":
        return FingerprintTable(self.timestamps[rows], self.xs[rows], self.ys[rows], list(self.macs),
                                self.rssi[rows])


def build_table(poses: Sequence[PoseSample], rssi: Sequence[RssiSample]) -> FingerprintTable:
    """One row per pose; each RSSI sample lands on its DTW-matched pose.

    Within a row the latest reading per anchor wins; anchor columns are ordered
    by first appearance in the RSSI stream.
    """
    if not poses or not rssi:
        raise EmptySequence("build_table needs poses and RSSI samples")
    macs: List[str] = []
    for sample in rssi:
        if sample.anchor_mac not in macs:
            macs.append(sample.anchor_mac)
    index = {mac: k for k, mac in enumerate(macs)}

    alignment = dtw([p.t for p in poses], [s.t for s in rssi])
    pose_of = alignment.partners(of_first=False)

    values = np.full((len(poses), len(macs)), np.nan)
    latest = np.full((len(poses), len(macs)), -np.inf)
    for j, sample in enumerate(rssi):
        i = pose_of[j]
        k = index[sample.anchor_mac]
        if sample.t >= latest[i, k]:
            latest[i, k] = sample.t
            values[i, k] = sample.rssi
    table = FingerprintTable(
        np.array([p.t for p in poses]), np.array([p.x for p in poses]), np.array([p.y for p in poses]),
        macs, values,
    )
    logger.info(f"Fingerprint table: {len(table)} rows, {len(macs)} anchors, {table.missing_count()} missing cells")
    return table


def fill_missing(table: FingerprintTable, floor_dbm: float = -100.0) -> FingerprintTable:
    """Every missing cell becomes ``floor_dbm``; present values are untouched."""
    filled = np.where(np.isnan(table.rssi), floor_dbm, table.rssi)
    return FingerprintTable(table.timestamps.copy(), table.xs.copy(), table.ys.copy(), list(table.macs), filled)


# ---------------------------------------------------------------------------
# Occupancy raster and heatmaps
# ---------------------------------------------------------------------------

@dataclass
class OccupancyRaster:
    """cells[row, col] in {FREE, OCCUPIED, UNKNOWN}; row 0 is the top of the image."""

    cells: np.ndarray
    resolution: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 2:
            raise ParameterValidationError("raster cells must be a 2-D grid")
        if not self.resolution > 0:
            raise ParameterValidationError(f"raster resolution must be positive, got {self.resolution}")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @classmethod
    def empty(cls, width: int, height: int, resolution: float, origin=(0.0, 0.0)) -> "OccupancyRaster":
        return cls(np.full((height, width), FREE, dtype=np.int8), resolution, origin)

    def world_to_cell(self, x: float, y: float) -> Optional[Tuple[int, int]]:
        """(row, col) of a world point, or None outside the raster."""
        col = math.floor((x - self.origin[0]) / self.resolution)
        from_bottom = math.floor((y - self.origin[1]) / self.resolution)
        row = self.height - 1 - from_bottom
        if 0 <= row < self.height and 0 <= col < self.width:
            return row, col
        return None

    def cell_to_world(self, row: int, col: int) -> Tuple[float, float]:
        """Centre of a cell in world coordinates."""
        x = self.origin[0] + (col + 0.5) * self.resolution
        y = self.origin[1] + (self.height - 1 - row + 0.5) * self.resolution
        return x, y

    def is_free(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width and self.cells[row, col] == FREE

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) in meters."""
        x0, y0 = self.origin
        return x0, y0, x0 + self.width * self.resolution, y0 + self.height * self.resolution


@dataclass
class HeatRaster:
    """Block means of one anchor; NaN (mask False) marks no-data blocks."""

    values: np.ndarray
    counts: np.ndarray
    block_size: int
    anchor: str
    skipped: int = 0

    @property
    def mask(self) -> np.ndarray:
        return self.counts > 0


def render_heatmap(table: FingerprintTable, raster: OccupancyRaster, anchor: Union[str, int],
                   block_size: int = 8) -> HeatRaster:
    """Mean RSSI of ``anchor`` per block_size x block_size pixel block."""
    if block_size < 1:
        raise ParameterValidationError("block_size must be >= 1")
    column = table.column(anchor)
    mac = table.macs[anchor] if isinstance(anchor, (int, np.integer)) else normalize_mac(anchor)
    rows = -(-raster.height // block_size)
    cols = -(-raster.width // block_size)
    sums = np.zeros((rows, cols))
    counts = np.zeros((rows, cols), dtype=np.int64)
    skipped = 0
    for x, y, value in zip(table.xs, table.ys, column):
        if np.isnan(value):
            continue
        cell = raster.world_to_cell(float(x), float(y))
        if cell is None:
            skipped += 1
            continue
        br, bc = cell[0] // block_size, cell[1] // block_size
        sums[br, bc] += value
        counts[br, bc] += 1
    if skipped:
        logger.warning(f"Heatmap {mac}: skipped {skipped} rows outside the raster")
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return HeatRaster(values, counts, block_size, mac, skipped)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _read_rows(path: PathLike, header: List[str]) -> List[Tuple[int, List[str]]]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None or [h.strip().lower() for h in first] != header:
            raise MalformedRow(f"expected header {','.join(header)}", line=1, source=str(path))
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(f"expected {len(header)} columns, got {len(row)}", line=line_no, source=str(path))
            rows.append((line_no, [cell.strip() for cell in row]))
    return rows


def _floats(values: List[str], line: int, source: str) -> List[float]:
    try:
        return [float(v) for v in values]
    except ValueError:
        raise MalformedRow("non-numeric value", line=line, source=source)


def read_pose_csv(path: PathLike) -> List[PoseSample]:
    return [PoseSample(*_floats(row, line, str(path))) for line, row in _read_rows(path, ["t", "x", "y"])]


def read_drift_csv(path: PathLike) -> List[DriftSample]:
    return [DriftSample(*_floats(row, line, str(path))) for line, row in _read_rows(path, ["t", "dx", "dy"])]


def read_rssi_csv(path: PathLike) -> List[RssiSample]:
    samples = []
    for line, (t, mac, rssi) in _read_rows(path, ["t", "mac", "rssi"]):
        t_value, rssi_value = _floats([t, rssi], line, str(path))
        try:
            samples.append(RssiSample(t_value, mac, rssi_value))
        except ParameterValidationError as e:
            raise MalformedRow(str(e), line=line, source=str(path))
    return samples


def write_log_csv(rows: Sequence, header: List[str], path: PathLike) -> None:
    """Write pose/drift/rssi samples (dataclasses in header order)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            values = [getattr(row, _attr(column)) for column in header]
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in values])


def _attr(column: str) -> str:
    return "anchor_mac" if column == "mac" else column


def write_table_csv(table: FingerprintTable, path: PathLike) -> None:
    """``Timestamp,X_Pos,Y_Pos,<MAC_1>,...``; missing cells are empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TABLE_PREFIX + table.macs)
        for i in range(len(table)):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in table.rssi[i]]
            writer.writerow([repr(float(table.timestamps[i])), repr(float(table.xs[i])), repr(float(table.ys[i])), *cells])


def read_table_csv(path: PathLike) -> FingerprintTable:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:3] != TABLE_PREFIX:
            raise MalformedRow(f"expected header starting {','.join(TABLE_PREFIX)}", line=1, source=str(path))
        macs = header[3:]
        ts, xs, ys, values = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(f"expected {len(header)} columns", line=line_no, source=str(path))
            t, x, y = _floats(row[:3], line_no, str(path))
            cells = [np.nan if cell.strip() == "" else cell for cell in row[3:]]
            try:
                cells = [float(c) for c in cells]
            except ValueError:
                raise MalformedRow("non-numeric RSSI cell", line=line_no, source=str(path))
            ts.append(t)
            xs.append(x)
            ys.append(y)
            values.append(cells)
    return FingerprintTable(np.array(ts), np.array(xs), np.array(ys), macs,
                            np.array(values).reshape(len(ts), len(macs)))


def write_raster(raster: OccupancyRaster, pgm_path: PathLike,
                 occupied_threshold: float = 0.2, free_threshold: float = 0.8) -> Path:
    """P5 PGM (free 254, occupied 0, unknown 128) plus a ``.yaml`` sidecar."""
    pgm_path = Path(pgm_path)
    pgm_path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.full(raster.cells.shape, 128, dtype=np.uint8)
    pixels[raster.cells == FREE] = 254
    pixels[raster.cells == OCCUPIED] = 0
    with open(pgm_path, "wb") as f:
        f.write(f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    sidecar = pgm_path.with_suffix(".yaml")
    meta = {
        "image": pgm_path.name,
        "resolution": float(raster.resolution),
        "origin_x": raster.origin[0],
        "origin_y": raster.origin[1],
        "occupied_thresh": occupied_threshold,
        "free_thresh": free_threshold,
    }
    sidecar.write_text(yaml.safe_dump(meta, sort_keys=True), encoding="utf-8")
    return sidecar


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ParameterValidationError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval > 255:
        raise ParameterValidationError(f"{path}: 16-bit PGM is not supported")
    pixels = np.frombuffer(data[pos:pos + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ParameterValidationError(f"{path}: truncated image data")
    return pixels.reshape(height, width).astype(np.float64) / maxval


def read_raster(pgm_path: PathLike, sidecar: Optional[PathLike] = None) -> OccupancyRaster:
    """Normalized intensity < occupied_thresh -> occupied, > free_thresh -> free, else unknown."""
    pgm_path = Path(pgm_path)
    sidecar = Path(sidecar) if sidecar is not None else pgm_path.with_suffix(".yaml")
    try:
        meta = yaml.safe_load(sidecar.read_text(encoding="utf-8")) or {}
    except OSError as e:
        raise ParameterValidationError(f"cannot read raster sidecar {sidecar}: {e}")
    missing = [k for k in ("resolution", "origin_x", "origin_y") if k not in meta]
    if missing:
        raise ParameterValidationError(f"{sidecar}: missing {', '.join(missing)}")
    intensity = _read_pgm(pgm_path)
    occupied = float(meta.get("occupied_thresh", 0.2))
    free = float(meta.get("free_thresh", 0.8))
    cells = np.full(intensity.shape, UNKNOWN, dtype=np.int8)
    cells[intensity < occupied] = OCCUPIED
    cells[intensity > free] = FREE
    return OccupancyRaster(cells, float(meta["resolution"]), (float(meta["origin_x"]), float(meta["origin_y"])))


def write_heat_csv(heat: HeatRaster, path: PathLike) -> None:
    """Grid of block means, one CSV row per block row; no-data blocks are empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for row in heat.values:
            writer.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])


def write_heat_pgm(heat: HeatRaster, path: PathLike, floor_dbm: float = -100.0) -> Tuple[Path, Path]:
    """Intensity 1..255 over [floor_dbm, 0] dBm, 0 for no-data; plus a ``_mask.pgm``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scaled = np.clip((np.nan_to_num(heat.values, nan=floor_dbm) - floor_dbm) / -floor_dbm, 0.0, 1.0)
    pixels = np.where(heat.mask, 1 + np.round(scaled * 254), 0).astype(np.uint8)
    mask = np.where(heat.mask, 255, 0).astype(np.uint8)
    mask_path = path.with_name(path.stem + "_mask.pgm")
    for target, image in ((path, pixels), (mask_path, mask)):
        with open(target, "wb") as f:
            f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
            f.write(image.tobytes())
    return path, mask_path
