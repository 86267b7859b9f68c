"""OHLCV minute bars: CSV ingestion, chronological splits and synthetic data.

Bars are stored column-wise in numpy arrays; :class:`Bar` is a light view
used where a single row is needed (fill checks, tests).
"""
from __future__ import annotations

import datetime as dt
import logging
import os
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np
import pandas as pd
from scipy.signal import lfilter

log = logging.getLogger(__name__)

COLUMNS = ("timestamp", "open", "high", "low", "close", "volume")
SPLIT_NAMES = ("train", "validation", "test")


class DataError(ValueError):
    """Raised for unreadable or invalid market data."""


@dataclass(frozen=True)
class Bar:
    timestamp: int  # UTC epoch minutes
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        problem = _bar_problem(self.open, self.high, self.low, self.close, self.volume)
        if problem:
            raise DataError(f"invalid bar at {self.timestamp}: {problem}")


def _bar_problem(o, h, l, c, v) -> str | None:
    if not (o > 0 and h > 0 and l > 0 and c > 0):
        return "prices must be strictly positive"
    if l > h:
        return f"high {h} < low {l}"
    if l > min(o, c) or h < max(o, c):
        return "open/close outside [low, high]"
    if not v >= 0:
        return "negative volume"
    return None


@dataclass
class BarSeries:
    timestamp: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        for name in COLUMNS[1:]:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.timestamp)
        if any(len(getattr(self, name)) != n for name in COLUMNS[1:]):
            raise DataError("column lengths differ")
        if n > 1 and not np.all(np.diff(self.timestamp) > 0):
            bad = int(np.argmin(np.diff(self.timestamp) > 0)) + 1
            raise DataError(f"non-monotone timestamps at row {bad}")
        bad_rows = invalid_rows(self.open, self.high, self.low, self.close, self.volume)
        if len(bad_rows):
            i = int(bad_rows[0])
            problem = _bar_problem(self.open[i], self.high[i], self.low[i], self.close[i], self.volume[i])
            raise DataError(f"row {i}: {problem}")

    def __len__(self) -> int:
        return len(self.timestamp)

    def __getitem__(self, i: int) -> Bar:
        return Bar(int(self.timestamp[i]), float(self.open[i]), float(self.high[i]),
                   float(self.low[i]), float(self.close[i]), float(self.volume[i]))

    def __iter__(self) -> Iterator[Bar]:
        return (self[i] for i in range(len(self)))

    @property
    def bars(self) -> list[Bar]:
        return list(self)

    @property
    def gap_count(self) -> int:
        """Number of places where consecutive bars are more than one minute apart."""
        if len(self) < 2:
            return 0
        return int(np.sum(np.diff(self.timestamp) > 1))

    def take(self, mask_or_index, label: str | None = None) -> "BarSeries":
        return BarSeries(*(getattr(self, c)[mask_or_index] for c in COLUMNS),
                         label=self.label if label is None else label)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({c: getattr(self, c) for c in COLUMNS})

    def to_csv(self, path) -> None:
        frame = self.to_frame()
        frame["timestamp"] = frame["timestamp"] * 60
        frame.to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_bars(cls, bars, label: str = "") -> "BarSeries":
        rows = [(b.timestamp, b.open, b.high, b.low, b.close, b.volume) for b in bars]
        cols = list(zip(*rows)) if rows else [[]] * 6
        return cls(*cols, label=label)


def invalid_rows(o, h, l, c, v) -> np.ndarray:
    ok = (o > 0) & (h > 0) & (l > 0) & (c > 0) & (l <= h)
    ok &= (l <= np.minimum(o, c)) & (h >= np.maximum(o, c)) & (v >= 0)
    return np.flatnonzero(~ok)


# ---------------------------------------------------------------------------
# CSV

def _parse_timestamps(raw: pd.Series) -> np.ndarray:
    """ISO-8601 strings or epoch seconds -> epoch minutes."""
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().all():
        secs = numeric.to_numpy(dtype=float)
        return np.floor(secs / 60.0).astype(np.int64)
    try:
        parsed = pd.to_datetime(raw, utc=True, format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"unparseable timestamp: {exc}") from exc
    ns = parsed.astype("int64").to_numpy()
    return ns // 60_000_000_000


def load_csv(path, schema: Mapping[str, str] | None = None, label: str = "") -> BarSeries:
    """Read a bar file.

    ``schema`` maps the canonical column names (timestamp, open, ...) to the
    header names found in the file, for files that use e.g. ``Close``.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such data file: {path}")
    schema = dict(schema or {})
    frame = pd.read_csv(path, dtype=str, encoding="utf-8")
    cols = {}
    for name in COLUMNS:
        src = schema.get(name, name)
        if src not in frame.columns:
            lower = {c.lower(): c for c in frame.columns}
            if src.lower() not in lower:
                raise DataError(f"column {src!r} not found in {path}")
            src = lower[src.lower()]
        cols[name] = frame[src]

    ts = _parse_timestamps(cols["timestamp"])
    values = {}
    for name in COLUMNS[1:]:
        try:
            # correctly rounded, unlike the pandas fast path
            values[name] = cols[name].to_numpy(dtype=str).astype(float)
        except ValueError:
            bad = pd.to_numeric(cols[name], errors="coerce").isna().to_numpy()
            row = int(np.flatnonzero(bad)[0])
            raise DataError(f"row {row}: unparseable {name} value {cols[name].iloc[row]!r}") from None

    bad = invalid_rows(values["open"], values["high"], values["low"], values["close"], values["volume"])
    if len(bad):
        i = int(bad[0])
        problem = _bar_problem(*(values[c][i] for c in COLUMNS[1:]))
        raise DataError(f"row {i}: {problem}")
    if len(ts) > 1 and not np.all(np.diff(ts) > 0):
        i = int(np.argmin(np.diff(ts) > 0)) + 1
        raise DataError(f"row {i}: non-monotone timestamp")
    return BarSeries(ts, **values, label=label)


# ---------------------------------------------------------------------------
# Splits

def _to_minutes(d) -> int:
    if isinstance(d, (int, np.integer)):
        return int(d)
    if isinstance(d, str):
        d = dt.date.fromisoformat(d) if len(d) <= 10 else dt.datetime.fromisoformat(d)
    if isinstance(d, dt.datetime):
        if d.tzinfo is None:
            d = d.replace(tzinfo=dt.timezone.utc)
        return int(d.timestamp() // 60)
    if isinstance(d, dt.date):
        return int(dt.datetime(d.year, d.month, d.day, tzinfo=dt.timezone.utc).timestamp() // 60)
    raise TypeError(f"cannot interpret {d!r} as a date")


@dataclass(frozen=True)
class SplitSpec:
    """Half-open ``[start, end)`` windows; dates are UTC midnights.

    The default windows are the 2022-2023 / 2024 / 2025-01-01..2025-10-10
    arrangement with the end dates made exclusive (so the last listed day
    is included).
    """
    train_start: object = "2022-01-01"
    train_end: object = "2024-01-01"
    val_start: object = "2024-01-01"
    val_end: object = "2025-01-01"
    test_start: object = "2025-01-01"
    test_end: object = "2025-10-11"

    def __post_init__(self):
        b = self.bounds()
        if not (b["train"][0] < b["train"][1] <= b["validation"][0] < b["validation"][1]
                <= b["test"][0] < b["test"][1]):
            raise ValueError("split windows must be chronological and non-overlapping")

    def bounds(self) -> dict[str, tuple[int, int]]:
        return {
            "train": (_to_minutes(self.train_start), _to_minutes(self.train_end)),
            "validation": (_to_minutes(self.val_start), _to_minutes(self.val_end)),
            "test": (_to_minutes(self.test_start), _to_minutes(self.test_end)),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitSpec":
        return cls(**{k: d[k] for k in d})


def split(series: BarSeries, spec: SplitSpec) -> tuple[BarSeries, BarSeries, BarSeries]:
    """Assign bars to train/validation/test; bars outside every window are dropped."""
    parts = []
    for name, (lo, hi) in spec.bounds().items():
        mask = (series.timestamp >= lo) & (series.timestamp < hi)
        part = series.take(mask, label=name)
        if len(part) == 0:
            log.warning("split %r is empty", name)
        parts.append(part)
    return tuple(parts)


# ---------------------------------------------------------------------------
# Synthetic data

DEFAULT_START = _to_minutes("2024-01-01")


def synthesize(seed: int, n_minutes: int, base_price: float = 50_000.0,
               vol_per_min: float = 5e-4, signal_coef: float = 0.0,
               signal_halflife: float = 20.0, start: int = DEFAULT_START,
               label: str = "synthetic") -> BarSeries:
    """Geometric random walk with a hidden AR(1) drift.

    The per-minute log return is ``signal_coef * z[t-1] + vol_per_min * eps[t]``
    where ``z`` is a unit-variance AR(1) process whose autocorrelation halves
    every ``signal_halflife`` minutes. Open is the previous close; high and
    low extend the body by ``exp(|N(0,1)| * vol_per_min)``.
    """
    if n_minutes < 1:
        raise ValueError("n_minutes must be >= 1")
    if not vol_per_min > 0:
        raise ValueError("vol_per_min must be positive")
    if signal_coef < 0:
        raise ValueError("signal_coef must be non-negative")
    if not signal_halflife > 0:
        raise ValueError("signal_halflife must be positive")

    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n_minutes)
    innov = rng.standard_normal(n_minutes)
    u = np.abs(rng.standard_normal(n_minutes))
    v = np.abs(rng.standard_normal(n_minutes))
    vol = rng.lognormal(mean=0.0, sigma=0.5, size=n_minutes)

    phi = 0.5 ** (1.0 / signal_halflife)
    z = lfilter([np.sqrt(1.0 - phi * phi)], [1.0, -phi], innov)
    drift = np.concatenate([[0.0], z[:-1]])
    logret = signal_coef * drift + vol_per_min * eps

    close = base_price * np.exp(np.cumsum(logret))
    open_ = np.concatenate([[base_price], close[:-1]])
    high = np.maximum(open_, close) * np.exp(u * vol_per_min)
    low = np.minimum(open_, close) * np.exp(-v * vol_per_min)
    ts = start + np.arange(n_minutes, dtype=np.int64)
    return BarSeries(ts, open_, high, low, close, vol, label=label)
