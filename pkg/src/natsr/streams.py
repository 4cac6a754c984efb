"""Stream generation, CSV ingestion, windowing and the warm-up/validation/online split.

Synthetic generators cover the two toy settings used throughout the tests and
scripts: a noisy sinusoid with sparse large displacements, and a piecewise
sinusoid whose amplitude/frequency switch between segments (phase accumulates
continuously across a switch, so the switch is a regime change rather than a
jump artifact).

Splitting is by target position: a window belongs to the slice containing the
first row of its forecast horizon, inputs may reach back across the boundary
(streaming reality: at online time the past is available). Normalization
statistics come from the warm-up rows only and are applied everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import IngestionError, InputError, NumericError
from .seeding import as_generator

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TimeSeriesFrame:
    values: np.ndarray  # (T, d)
    feature_names: list[str]
    origin: str  # "synthetic" | "csv"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise InputError("frame values must be T x d")
        if not np.all(np.isfinite(v)):
            raise NumericError("frame values must be finite")
        if len(self.feature_names) != v.shape[1]:
            raise InputError("feature_names length must match the column count")
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowedSample:
    """One (lookback window, forecast horizon) pair; t is the horizon's first row."""

    t: int
    x: np.ndarray  # flattened (L * s,)
    y: np.ndarray  # flattened (H * d,)


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,), floored

    @classmethod
    def fit(cls, rows: np.ndarray) -> "NormalizationStats":
        mean = rows.mean(axis=0)
        std = np.maximum(rows.std(axis=0), STD_FLOOR)
        return cls(mean=mean, std=std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert_flat(self, flat: np.ndarray, horizon: int) -> np.ndarray:
        """Map a flattened normalized horizon back to original units."""
        block = np.asarray(flat, dtype=float).reshape(horizon, self.mean.size)
        return (block * self.std + self.mean).reshape(-1)


# -- synthetic generators --------------------------------------------------------


def gen_outlier_sinusoid(
    length: int,
    period: float = 50.0,
    noise_sd: float = 0.1,
    outlier_prob: float = 0.0,
    outlier_magnitude: float = 5.0,
    seed=0,
) -> TimeSeriesFrame:
    """Sinusoid + Gaussian noise; each point displaced by +-magnitude w.p. outlier_prob."""
    if not 0.0 <= outlier_prob <= 1.0:
        raise InputError("outlier_prob must be in [0, 1]")
    rng = as_generator(seed)
    t = np.arange(length, dtype=float)
    values = np.sin(2.0 * np.pi * t / period)
    if noise_sd > 0:
        values = values + rng.normal(0.0, noise_sd, size=length)
    if outlier_prob > 0:
        mask = rng.random(length) < outlier_prob
        signs = rng.choice([-1.0, 1.0], size=length)
        values = values + mask * signs * outlier_magnitude
    return TimeSeriesFrame(values=values.reshape(-1, 1), feature_names=["f0"], origin="synthetic")


@dataclass(frozen=True)
class RegimeSegment:
    amplitude: float
    frequency: float  # cycles per step


def _as_segment(seg) -> RegimeSegment:
    if isinstance(seg, RegimeSegment):
        return seg
    if isinstance(seg, dict):
        return RegimeSegment(float(seg["amplitude"]), float(seg["frequency"]))
    amp, freq = seg
    return RegimeSegment(float(amp), float(freq))


def gen_regime_switch(length: int, segments, noise_sd: float = 0.0, seed=0) -> TimeSeriesFrame:
    """Piecewise sinusoid; `length` is split equally across the segments."""
    segs = [_as_segment(s) for s in segments]
    if not segs:
        raise InputError("at least one segment is required")
    bounds = np.linspace(0, length, len(segs) + 1).astype(int)
    rng = as_generator(seed)
    values = np.empty(length)
    phase = 0.0
    for seg, lo, hi in zip(segs, bounds[:-1], bounds[1:]):
        for i in range(lo, hi):
            values[i] = seg.amplitude * np.sin(phase)
            phase += 2.0 * np.pi * seg.frequency
    if noise_sd > 0:
        values = values + rng.normal(0.0, noise_sd, size=length)
    return TimeSeriesFrame(values=values.reshape(-1, 1), feature_names=["f0"], origin="synthetic")


# -- CSV ingestion ----------------------------------------------------------------


def _parse_timestamps(cells: list[str]) -> list[datetime] | None:
    out = []
    for c in cells:
        try:
            out.append(datetime.fromisoformat(c.strip()))
        except ValueError:
            return None
    return out


def ingest_csv(path, has_header: bool = True, timestamp_col: int | None = None) -> TimeSeriesFrame:
    """Strict rectangular numeric CSV reader; errors carry 1-based line numbers."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header: list[str] | None = None
    if has_header:
        header = [c.strip() for c in rows[0]]
        data_rows = rows[1:]
        first_line = 2
    else:
        data_rows = rows
        first_line = 1
    if not data_rows:
        raise IngestionError(f"{path}: no data rows")
    width = len(data_rows[0])
    ts_cells: list[str] = []
    values = []
    for offset, row in enumerate(data_rows):
        line = first_line + offset
        if len(row) != width:
            raise IngestionError(f"{path}: line {line}: ragged row ({len(row)} cells, expected {width})")
        cells = row
        if timestamp_col is not None:
            if timestamp_col >= len(row):
                raise IngestionError(f"{path}: line {line}: no column {timestamp_col}")
            ts_cells.append(row[timestamp_col])
            cells = [c for i, c in enumerate(row) if i != timestamp_col]
        parsed = []
        for c in cells:
            try:
                parsed.append(float(c))
            except ValueError:
                raise IngestionError(f"{path}: line {line}: non-numeric cell {c.strip()!r}") from None
        if not all(np.isfinite(parsed)):
            raise IngestionError(f"{path}: line {line}: non-finite value")
        values.append(parsed)
    if timestamp_col is not None:
        stamps = _parse_timestamps(ts_cells)
        if stamps is not None and any(b <= a for a, b in zip(stamps, stamps[1:])):
            bad = next(i for i, (a, b) in enumerate(zip(stamps, stamps[1:])) if b <= a)
            raise IngestionError(f"{path}: line {first_line + bad + 1}: timestamps not strictly increasing")
    arr = np.asarray(values, dtype=float)
    if header is not None:
        names = [h for i, h in enumerate(header) if timestamp_col is None or i != timestamp_col]
    else:
        names = [f"f{i}" for i in range(arr.shape[1])]
    return TimeSeriesFrame(values=arr, feature_names=names, origin="csv")


def export_csv(frame: TimeSeriesFrame, path) -> None:
    """Write with 17 significant digits so ingestion round-trips bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(frame.feature_names)
        for row in frame.values:
            writer.writerow([format(v, ".17g") for v in row])


# -- split and window ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitWindows:
    frame: TimeSeriesFrame
    stats: NormalizationStats
    lookback: int
    horizon: int
    warm_end: int
    val_end: int
    warmup: list[WindowedSample]
    validation: list[WindowedSample]
    online: list[WindowedSample]
    naive_abs_errors: np.ndarray  # (n_online, d): |y_t - y_{t-1}| at online target rows

    def original_target(self, t: int) -> np.ndarray:
        return self.frame.values[t : t + self.horizon].reshape(-1)


def split_and_window(
    frame: TimeSeriesFrame,
    lookback: int,
    horizon: int,
    warmup_frac: float = 0.20,
    val_frac: float = 0.05,
) -> SplitWindows:
    t_len = frame.length
    if t_len < lookback + horizon + 10:
        raise InputError(f"stream too short: {t_len} rows for lookback {lookback}, horizon {horizon}")
    warm_end = int(t_len * warmup_frac)
    val_end = int(t_len * (warmup_frac + val_frac))
    if not (lookback < warm_end < val_end <= t_len - horizon):
        raise InputError(
            f"stream too short for the {warmup_frac:.0%}/{val_frac:.0%} split "
            f"at lookback {lookback}, horizon {horizon} (T={t_len})"
        )
    stats = NormalizationStats.fit(frame.values[:warm_end])
    norm = stats.apply(frame.values)
    warmup: list[WindowedSample] = []
    validation: list[WindowedSample] = []
    online: list[WindowedSample] = []
    for t in range(lookback, t_len - horizon + 1):
        sample = WindowedSample(t=t, x=norm[t - lookback : t].reshape(-1), y=norm[t : t + horizon].reshape(-1))
        if t < warm_end:
            warmup.append(sample)
        elif t < val_end:
            validation.append(sample)
        else:
            online.append(sample)
    if not warmup or not validation or not online:
        raise InputError("split produced an empty slice; stream too short")
    naive = np.stack([np.abs(frame.values[s.t] - frame.values[s.t - 1]) for s in online])
    return SplitWindows(
        frame=frame,
        stats=stats,
        lookback=lookback,
        horizon=horizon,
        warm_end=warm_end,
        val_end=val_end,
        warmup=warmup,
        validation=validation,
        online=online,
        naive_abs_errors=naive,
    )
