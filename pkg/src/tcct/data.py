"""CSV ingestion, z-scoring, time splits, rolling windows and synthetic series."""
from __future__ import annotations

import calendar
import csv
import math
import warnings
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

STD_EPS = 1e-8


class IngestionError(ValueError):
    pass


class SplitError(ValueError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SeriesFrame:
    timestamps: np.ndarray  # datetime64[s], strictly increasing, uniform step
    values: np.ndarray  # (length, N)
    columns: tuple[str, ...]
    target: str

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise IngestionError("values must be (length, N) with one column name per series")
        if len(self.timestamps) != len(self.values):
            raise IngestionError("timestamps and values disagree in length")
        if self.target not in self.columns:
            raise IngestionError(f"target column {self.target!r} not in {list(self.columns)}")
        _check_timeline(self.timestamps)
        self.values.setflags(write=False)

    def __len__(self):
        return len(self.values)

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> SeriesFrame:
        return replace(self, timestamps=self.timestamps[start:stop], values=self.values[start:stop].copy())

    def with_values(self, values: np.ndarray) -> SeriesFrame:
        return replace(self, values=np.asarray(values, dtype=float))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", *self.columns])
            for ts, row in zip(self.timestamps, self.values):
                stamp = str(ts.astype("datetime64[s]")).replace("T", " ")
                w.writerow([stamp, *(repr(float(v)) for v in row)])


def _check_timeline(ts: np.ndarray) -> None:
    if len(ts) < 2:
        return
    step = np.diff(ts.astype("datetime64[s]").astype(np.int64))
    if np.any(step <= 0):
        bad = int(np.argmax(step <= 0)) + 2
        raise IngestionError(f"timestamps not strictly increasing at row {bad}")
    if np.any(step != step[0]):
        bad = int(np.argmax(step != step[0])) + 2
        raise IngestionError(f"timestamps not uniformly spaced at row {bad}")


def _parse_time(text: str) -> np.datetime64:
    return np.datetime64(datetime.fromisoformat(text.strip()), "s")


def load_csv(path, target: str = "OT") -> SeriesFrame:
    """Read a ``date,<col>,<col>...`` file. Row numbers in errors count data rows from 1."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        if len(header) < 2:
            raise IngestionError(f"{path}: need a date column and at least one value column")
        stamps, rows = [], []
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise IngestionError(f"{path}: row {r} has {len(rec)} cells, expected {len(header)}")
            try:
                stamps.append(_parse_time(rec[0]))
            except ValueError as err:
                raise IngestionError(f"{path}: row {r}: bad timestamp {rec[0]!r}") from err
            try:
                vals = [float(c) for c in rec[1:]]
            except ValueError as err:
                raise IngestionError(f"{path}: row {r}: non-numeric cell") from err
            if not all(math.isfinite(v) for v in vals):
                raise IngestionError(f"{path}: row {r}: missing or non-finite cell")
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    columns = tuple(h.strip() for h in header[1:])
    if target not in columns:
        target = columns[-1] if target == "OT" else target
    return SeriesFrame(np.array(stamps, dtype="datetime64[s]"), np.array(rows, dtype=float), columns, target)


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True, eq=False)
class NormalizationState:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def fit_normalization(values: np.ndarray) -> NormalizationState:
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population std
    if np.any(std < STD_EPS):
        warnings.warn("zero-variance column; std clamped to 1e-8", RuntimeWarning, stacklevel=3)
    return NormalizationState(mean, np.maximum(std, STD_EPS))


def zscore(frame: SeriesFrame, state: NormalizationState | None = None) -> tuple[SeriesFrame, NormalizationState]:
    if state is None:
        state = fit_normalization(frame.values)
    return frame.with_values(state.transform(frame.values)), state


# ---------------------------------------------------------------------------
# splits

ETT_FRACTIONS = (12 / 20, 4 / 20, 4 / 20)
ECL_FRACTIONS = (21 / 35, 7 / 35, 7 / 35)


def split_by_time(frame: SeriesFrame, fractions: Sequence[float] = ETT_FRACTIONS) -> tuple[SeriesFrame, ...]:
    """Consecutive segments with boundaries at floor(len * cumulative fraction)."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise SplitError(f"fractions {tuple(fractions)} must be non-negative and sum to 1")
    n = len(frame)
    cum = np.cumsum(fractions)
    bounds = [0] + [int(math.floor(n * c + 1e-9)) for c in cum[:-1]] + [n]
    parts = []
    for name, lo, hi in zip(("train", "val", "test", "extra"), bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise SplitError(f"{name} segment is empty")
        parts.append(frame.rows(lo, hi))
    return tuple(parts)


def _add_months(t: datetime, months: int) -> datetime:
    y, m = divmod(t.month - 1 + months, 12)
    year, month = t.year + y, m + 1
    return t.replace(year=year, month=month, day=min(t.day, calendar.monthrange(year, month)[1]))


def split_by_months(frame: SeriesFrame, months: Sequence[int] = (12, 4, 4)) -> tuple[SeriesFrame, ...]:
    """Calendar-month segments measured from the first timestamp."""
    start = frame.timestamps[0].astype(datetime)
    ts = frame.timestamps
    bounds, acc = [0], 0
    for m in months:
        acc += m
        edge = np.datetime64(_add_months(start, acc), "s")
        bounds.append(int(np.searchsorted(ts, edge, side="left")))
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise SplitError("a month segment is empty")
        parts.append(frame.rows(lo, hi))
    return tuple(parts)


# ---------------------------------------------------------------------------
# time marks and windows


def time_marks(timestamps: np.ndarray) -> np.ndarray:
    """hour/23, weekday/6, (day-1)/30, (month-1)/11, each shifted to [-0.5, 0.5]."""
    ts = timestamps.astype("datetime64[s]")
    days = ts.astype("datetime64[D]")
    hour = (ts - days).astype("timedelta64[h]").astype(int)
    weekday = (days.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday
    months = days.astype("datetime64[M]")
    dom = (days - months).astype(int) + 1
    month = months.astype(int) % 12 + 1
    return np.stack([hour / 23.0, weekday / 6.0, (dom - 1) / 30.0, (month - 1) / 11.0], axis=-1) - 0.5


@dataclass(frozen=True)
class WindowSpec:
    input_len: int
    pred_len: int
    stride: int = 1
    mode: str = "multivariate"

    def __post_init__(self):
        if self.input_len < 1 or self.pred_len < 1 or self.stride < 1:
            raise WindowError("input_len, pred_len and stride must be >= 1")
        if self.mode not in ("univariate", "multivariate"):
            raise WindowError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class Window:
    input: np.ndarray  # (input_len, N)
    target: np.ndarray  # (pred_len, N)
    input_marks: np.ndarray
    target_marks: np.ndarray
    start: int


class WindowSet:
    """Index-addressable rolling windows over one segment."""

    def __init__(self, frame: SeriesFrame, spec: WindowSpec):
        need = spec.input_len + spec.pred_len
        if len(frame) < need:
            raise WindowError(f"segment has {len(frame)} rows; need at least {need}")
        if spec.mode == "univariate":
            col = frame.columns.index(frame.target)
            self.values = frame.values[:, col : col + 1]
        else:
            self.values = frame.values
        self.marks = time_marks(frame.timestamps)
        self.spec = spec
        self.n = (len(frame) - need) // spec.stride + 1

    def __len__(self):
        return self.n

    def __getitem__(self, i: int) -> Window:
        if not -self.n <= i < self.n:
            raise IndexError(i)
        i %= self.n
        s = i * self.spec.stride
        mid, end = s + self.spec.input_len, s + self.spec.input_len + self.spec.pred_len
        return Window(self.values[s:mid], self.values[mid:end], self.marks[s:mid], self.marks[mid:end], s)

    def __iter__(self) -> Iterator[Window]:
        return (self[i] for i in range(self.n))

    def arrays(self, indices=None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (inputs, targets, input_marks, target_marks) for ``indices``."""
        idx = np.arange(self.n) if indices is None else np.asarray(indices)
        starts = idx * self.spec.stride
        a = starts[:, None] + np.arange(self.spec.input_len)
        b = starts[:, None] + self.spec.input_len + np.arange(self.spec.pred_len)
        return self.values[a], self.values[b], self.marks[a], self.marks[b]

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        order = np.arange(self.n) if rng is None else rng.permutation(self.n)
        for lo in range(0, self.n, batch_size):
            yield self.arrays(order[lo : lo + batch_size])


def make_windows(frame: SeriesFrame, spec: WindowSpec) -> WindowSet:
    return WindowSet(frame, spec)


# ---------------------------------------------------------------------------
# synthetic data

# hours per cycle: daily, ~weekly (24*sqrt(53)) and ~lunar-monthly; mutually incommensurate
SINE_PERIODS = (24.0, 24.0 * math.sqrt(53.0), 24.0 * 29.530589)
SINE_AMPLITUDES = (1.0, 0.5, 0.25)


def synth_series(kind: str = "sine_mix", length: int = 2000, n_series: int = 1, seed: int = 0,
                 noise: float = 0.05, start: str = "2016-07-01T00:00:00", step_hours: int = 1,
                 target: str | None = None) -> SeriesFrame:
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=float)
    cols = []
    for _ in range(n_series):
        if kind == "sine_mix":
            phases = rng.uniform(0, 2 * np.pi, size=len(SINE_PERIODS))
            scale = rng.uniform(0.75, 1.25)
            x = sum(scale * a * np.sin(2 * np.pi * t / p + ph)
                    for a, p, ph in zip(SINE_AMPLITUDES, SINE_PERIODS, phases))
            x = x + noise * rng.standard_normal(length)
        elif kind == "ar_noise":
            phi = rng.uniform(0.8, 0.95)
            eps = rng.standard_normal(length)
            x = np.empty(length)
            x[0] = eps[0]
            for i in range(1, length):
                x[i] = phi * x[i - 1] + eps[i]
            x = x + noise * rng.standard_normal(length)
        else:
            raise ValueError(f"unknown synthetic kind {kind!r}")
        cols.append(x)
    names = tuple(f"s{i}" for i in range(n_series - 1)) + ("OT",)
    stamps = np.datetime64(start, "s") + np.arange(length) * np.timedelta64(step_hours * 3600, "s")
    return SeriesFrame(stamps, np.stack(cols, axis=1), names, target or "OT")


def autocorrelation(x: np.ndarray, lag: int) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x)) if lag else 1.0
