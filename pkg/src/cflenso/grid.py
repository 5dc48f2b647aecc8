"""Gridded field series: loading, smoothing, cropping, climatology and anomalies.

Two on-disk encodings are supported.

CSV
    First line holds ``lat_count,lon_count,lat_start,lat_step,lon_start,lon_step``
    (a preceding line with those literal names is tolerated).  Every following
    line is ``day_index,v_0,...,v_{lat_count*lon_count-1}`` in row-major
    (lat-major) order.

Binary
    A payload of 32-bit little-endian floats, step-major and row-major within a
    step, plus a JSON sidecar named ``<payload>.json`` holding the same header
    fields, ``n_steps``, ``day_index`` and ``dtype: "f32le"``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError

HEADER_FIELDS = ("lat_count", "lon_count", "lat_start", "lat_step", "lon_start", "lon_step")
BINARY_DTYPE = "f32le"
WEEKS_PER_YEAR = 52
_COORD_EPS = 1e-9


@dataclass(frozen=True)
class RegionSpec:
    """Closed lat/lon box.  Longitudes live in ``[0, 360)``; ``lon_min > lon_max``
    denotes a box crossing the 0 meridian."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if self.lat_min > self.lat_max:
            raise DataError(f"region lat_min {self.lat_min} exceeds lat_max {self.lat_max}")

    def lat_mask(self, lats: np.ndarray) -> np.ndarray:
        return (lats >= self.lat_min - _COORD_EPS) & (lats <= self.lat_max + _COORD_EPS)

    def lon_offsets(self, lons: np.ndarray) -> np.ndarray:
        return np.mod(np.asarray(lons) - self.lon_min, 360.0)

    def lon_mask(self, lons: np.ndarray) -> np.ndarray:
        span = math.fmod(self.lon_max - self.lon_min, 360.0) % 360.0
        off = self.lon_offsets(lons)
        return (off <= span + _COORD_EPS) | (off >= 360.0 - _COORD_EPS)

    def cell_mask(self, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
        return self.lat_mask(lats)[:, None] & self.lon_mask(lons)[None, :]


# Niño 3.4: 5S-5N, 170W-120W.
NINO34 = RegionSpec(-5.0, 5.0, 190.0, 240.0)
# Equatorial Pacific band at 2.5 deg; latitude endpoints on-grid, longitude
# endpoints one cell inside (140, 280)E, which yields the 9 x 55 grid.
PACIFIC_BAND = RegionSpec(-10.0, 10.0, 142.5, 277.5)


@dataclass
class FieldSeries:
    values: np.ndarray
    day_index: np.ndarray
    lat_start: float
    lat_step: float
    lon_start: float
    lon_step: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.day_index = np.asarray(self.day_index, dtype=np.int64)
        if self.values.ndim != 3:
            raise DataError(f"values must be 3-D (steps, lat, lon), got shape {self.values.shape}")
        n, nlat, nlon = self.values.shape
        if nlat * nlon == 0:
            raise DataError("grid has no cells")
        if self.day_index.shape != (n,):
            raise DataError(f"day_index has {self.day_index.size} entries for {n} steps")
        if n > 1 and np.any(np.diff(self.day_index) <= 0):
            bad = int(np.argmax(np.diff(self.day_index) <= 0)) + 1
            raise DataError(f"day_index not strictly increasing at step {bad}")
        _check_finite(self.values)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def lat_count(self) -> int:
        return self.values.shape[1]

    @property
    def lon_count(self) -> int:
        return self.values.shape[2]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    @property
    def lats(self) -> np.ndarray:
        return self.lat_start + self.lat_step * np.arange(self.lat_count)

    @property
    def lons(self) -> np.ndarray:
        return np.mod(self.lon_start + self.lon_step * np.arange(self.lon_count), 360.0)

    def header(self) -> dict:
        return {
            "lat_count": self.lat_count,
            "lon_count": self.lon_count,
            "lat_start": float(self.lat_start),
            "lat_step": float(self.lat_step),
            "lon_start": float(self.lon_start),
            "lon_step": float(self.lon_step),
        }

    def same_grid(self, other: "FieldSeries") -> bool:
        return self.grid_shape == other.grid_shape and np.allclose(
            [self.lat_start, self.lat_step, self.lon_start, self.lon_step],
            [other.lat_start, other.lat_step, other.lon_start, other.lon_step],
        )


@dataclass
class Climatology:
    """Week-of-year mean fields.  Unpopulated weeks hold NaN and ``counts == 0``."""

    week_means: np.ndarray
    counts: np.ndarray
    lats: np.ndarray
    lons: np.ndarray

    def populated(self, week: int) -> bool:
        return bool(self.counts[week] > 0)


@dataclass
class PairedDataset:
    """Aligned input/output micro-state pairs.

    ``X[i]`` is the flattened input field at ``time[i]`` and ``Y[i]`` the
    flattened output field ``lag_steps`` steps later.  ``x_grid``/``y_grid`` keep
    the field shapes so flattened vectors can be mapped back onto the grid.
    """

    X: np.ndarray
    Y: np.ndarray
    time: np.ndarray
    x_grid: tuple[int, ...] | None = None
    y_grid: tuple[int, ...] | None = None
    truth_w: np.ndarray | None = None
    truth_t: np.ndarray | None = None
    lag_steps: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        self.time = np.asarray(self.time, dtype=np.int64)
        n = self.X.shape[0]
        if self.Y.shape[0] != n or self.time.shape != (n,):
            raise DataError(
                f"misaligned dataset: X has {n} rows, Y {self.Y.shape[0]}, time {self.time.size}"
            )
        for name in ("truth_w", "truth_t"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.int64)
                if v.shape != (n,):
                    raise DataError(f"{name} has {v.size} entries for {n} samples")
                setattr(self, name, v)
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise DataError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.X.shape[0]

    def permuted_outputs(self, perm: np.ndarray) -> "PairedDataset":
        """Pair every input with the output at ``perm[i]`` (destroys the pairing)."""
        return replace(
            self,
            Y=self.Y[perm],
            truth_t=None if self.truth_t is None else self.truth_t[perm],
        )


def _check_finite(values: np.ndarray) -> None:
    if np.all(np.isfinite(values)):
        return
    step, i, j = (int(v) for v in np.argwhere(~np.isfinite(values))[0])
    raise DataError(f"non-finite value at (step={step}, lat={i}, lon={j})")


def _parse_header(row: list[str], path: Path) -> dict:
    if len(row) != len(HEADER_FIELDS):
        raise DataError(f"{path}: header must have {len(HEADER_FIELDS)} fields, got {len(row)}")
    try:
        hdr = {
            "lat_count": int(row[0]),
            "lon_count": int(row[1]),
            "lat_start": float(row[2]),
            "lat_step": float(row[3]),
            "lon_start": float(row[4]),
            "lon_step": float(row[5]),
        }
    except ValueError as exc:
        raise DataError(f"{path}: malformed header {row!r}") from exc
    if hdr["lat_count"] < 1 or hdr["lon_count"] < 1:
        raise DataError(f"{path}: grid dimensions must be positive")
    return hdr


def _read_csv(path: Path) -> FieldSeries:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    rows = [[c.strip() for c in r] for r in rows]
    if rows[0] == list(HEADER_FIELDS):
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: missing header values")
    hdr = _parse_header(rows[0], path)
    ncell = hdr["lat_count"] * hdr["lon_count"]
    days, vals = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != ncell + 1:
            raise DataError(f"{path}: line {lineno} has {len(r) - 1} values, expected {ncell}")
        try:
            days.append(int(r[0]))
            vals.append([float(v) for v in r[1:]])
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
    values = np.asarray(vals, dtype=np.float64).reshape(len(vals), hdr["lat_count"], hdr["lon_count"])
    return FieldSeries(values, np.asarray(days, dtype=np.int64), hdr["lat_start"], hdr["lat_step"],
                       hdr["lon_start"], hdr["lon_step"])


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _read_binary(path: Path) -> FieldSeries:
    side = _sidecar(path)
    if not side.exists():
        raise DataError(f"{path}: missing JSON sidecar {side.name}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{side}: invalid JSON ({exc})") from exc
    missing = [k for k in (*HEADER_FIELDS, "n_steps", "day_index", "dtype") if k not in meta]
    if missing:
        raise DataError(f"{side}: missing header fields {missing}")
    if meta["dtype"] != BINARY_DTYPE:
        raise DataError(f"{side}: unsupported dtype {meta['dtype']!r}")
    hdr = _parse_header([str(meta[k]) for k in HEADER_FIELDS], side)
    n = int(meta["n_steps"])
    raw = np.fromfile(path, dtype="<f4")
    expected = n * hdr["lat_count"] * hdr["lon_count"]
    if raw.size != expected:
        raise DataError(f"{path}: payload has {raw.size} floats, header implies {expected}")
    values = raw.astype(np.float64).reshape(n, hdr["lat_count"], hdr["lon_count"])
    return FieldSeries(values, np.asarray(meta["day_index"], dtype=np.int64), hdr["lat_start"],
                       hdr["lat_step"], hdr["lon_start"], hdr["lon_step"])


def load_grid_series(path, format_spec: str = "auto") -> FieldSeries:
    """Load and validate a field series from ``path``.

    ``format_spec`` is ``"csv"``, ``"bin"`` or ``"auto"`` (decided by suffix,
    ``.csv`` meaning CSV and anything else binary).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    fmt = format_spec
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "bin"
    if fmt == "csv":
        return _read_csv(path)
    if fmt == "bin":
        return _read_binary(path)
    raise DataError(f"unknown grid format {format_spec!r}")


def write_grid_series(series: FieldSeries, path, format_spec: str = "auto") -> Path:
    path = Path(path)
    fmt = format_spec
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "bin"
    hdr = series.header()
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([hdr[k] for k in HEADER_FIELDS])
            flat = series.values.reshape(series.n_steps, -1)
            for d, row in zip(series.day_index, flat):
                w.writerow([int(d), *(repr(float(v)) for v in row)])
    elif fmt == "bin":
        series.values.astype("<f4").tofile(path)
        meta = {**hdr, "n_steps": series.n_steps, "day_index": [int(d) for d in series.day_index],
                "dtype": BINARY_DTYPE}
        _sidecar(path).write_text(json.dumps(meta, indent=1) + "\n")
    else:
        raise DataError(f"unknown grid format {format_spec!r}")
    return path


def running_weekly_average(series: FieldSeries, window_days: int = 7) -> FieldSeries:
    """Forward running mean: step ``t`` of the result averages days ``[t, t + window_days)``."""
    if window_days < 1:
        raise DataError(f"window_days must be >= 1, got {window_days}")
    n = series.n_steps
    if window_days > n:
        raise DataError(f"window of {window_days} days is longer than the series ({n} steps)")
    if n > 1 and np.any(np.diff(series.day_index) != 1):
        raise DataError("running average requires a daily-sampled series without gaps")
    windows = np.lib.stride_tricks.sliding_window_view(series.values, window_days, axis=0)
    means = windows.mean(axis=-1)
    return replace(series, values=means, day_index=series.day_index[: n - window_days + 1].copy())


def region_indices(lats: np.ndarray, lons: np.ndarray, region: RegionSpec) -> tuple[np.ndarray, np.ndarray]:
    lat_idx = np.flatnonzero(region.lat_mask(lats))
    lon_sel = np.flatnonzero(region.lon_mask(lons))
    # order longitudes eastward from lon_min so wrapped boxes stay contiguous
    off = region.lon_offsets(lons[lon_sel])
    off[off >= 360.0 - _COORD_EPS] = 0.0
    lon_idx = lon_sel[np.argsort(off, kind="stable")]
    return lat_idx, lon_idx


def extract_region(series: FieldSeries, region: RegionSpec) -> FieldSeries:
    """Sub-grid of cells whose centres lie inside the closed ``region``."""
    lat_idx, lon_idx = region_indices(series.lats, series.lons, region)
    if lat_idx.size == 0 or lon_idx.size == 0:
        raise DataError(f"region {region} does not intersect the grid")
    values = series.values[:, lat_idx][:, :, lon_idx]
    return replace(
        series,
        values=values,
        lat_start=float(series.lats[lat_idx[0]]),
        lon_start=float(series.lons[lon_idx[0]]),
    )


def week_of_year(day_index) -> np.ndarray:
    """``floor((day mod 365) / 7)`` with the trailing day folded into week 51."""
    w = (np.mod(np.asarray(day_index, dtype=np.int64), 365)) // 7
    return np.minimum(w, WEEKS_PER_YEAR - 1)


def climatology(series: FieldSeries) -> Climatology:
    weeks = week_of_year(series.day_index)
    counts = np.bincount(weeks, minlength=WEEKS_PER_YEAR)
    sums = np.zeros((WEEKS_PER_YEAR, *series.grid_shape))
    np.add.at(sums, weeks, series.values)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None, None]
    means[counts == 0] = np.nan
    return Climatology(means, counts, series.lats, series.lons)


def _region_mask(clim: Climatology, region: RegionSpec) -> np.ndarray:
    mask = region.cell_mask(clim.lats, clim.lons)
    if not mask.any():
        raise DataError(f"region {region} does not intersect the climatology grid")
    return mask


def nino34_anomaly(field_values: np.ndarray, step_week: int, clim: Climatology,
                   region: RegionSpec = NINO34) -> float:
    """Spatial mean over ``region`` of the deviation from the week's climatology."""
    if not clim.populated(step_week):
        raise DataError(f"climatology week {step_week} has no samples")
    mask = _region_mask(clim, region)
    dev = np.asarray(field_values, dtype=np.float64) - clim.week_means[step_week]
    return float(dev[mask].mean())


def anomaly_series(series: FieldSeries, clim: Climatology, region: RegionSpec = NINO34) -> np.ndarray:
    weeks = week_of_year(series.day_index)
    empty = np.flatnonzero(clim.counts[weeks] == 0)
    if empty.size:
        raise DataError(f"climatology week {int(weeks[empty[0]])} has no samples (step {int(empty[0])})")
    mask = _region_mask(clim, region)
    dev = series.values[:, mask] - clim.week_means[weeks][:, mask]
    return dev.mean(axis=1)


def flatten_pairs(zw: FieldSeries, sst: FieldSeries, lag_steps: int = 0) -> PairedDataset:
    """Pair the input field at step ``t`` with the output field at ``t + lag_steps``."""
    if lag_steps < 0:
        raise DataError(f"lag_steps must be >= 0, got {lag_steps}")
    if zw.n_steps != sst.n_steps or not np.array_equal(zw.day_index, sst.day_index):
        raise DataError("input and output series are not aligned in time")
    if lag_steps >= zw.n_steps:
        raise DataError(f"lag of {lag_steps} steps leaves no pairs")
    n = zw.n_steps - lag_steps
    return PairedDataset(
        X=zw.values[:n].reshape(n, -1),
        Y=sst.values[lag_steps:].reshape(n, -1),
        time=zw.day_index[:n],
        x_grid=zw.grid_shape,
        y_grid=sst.grid_shape,
        lag_steps=lag_steps,
    )
