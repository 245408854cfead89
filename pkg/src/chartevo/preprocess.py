"""Turn raw daily price series into fixed-size chart windows.

The pipeline per instrument:

1. smooth the closes with a trailing moving average,
2. slide a fixed window over the smoothed series (stride one day),
3. per window, build a two-channel image: day-over-day log changes and
   log changes relative to the window's last day, block-averaged down to
   32 steps, with the second channel rescaled after downsampling,
4. label each chart with forward log returns of the *raw* closes,
   measured from the entry day (the first trading day after the window),
5. flag charts whose entry day cannot be traded because the raw price
   jumped past the daily limit.

Windows are dropped when they lack a preceding smoothed value (the very
first window) or when no entry day exists (the very last window).  A
missing forward return at some horizon leaves that horizon absent rather
than dropping the chart.
"""
from __future__ import annotations

import datetime
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .types import Chart, ConfigError, Dataset, PriceSeries, SPLIT_NAMES

log = logging.getLogger(__name__)

PRICES_MAGIC = "chartevo-prices"
PRICES_VERSION = 1


@dataclass(frozen=True)
class SplitRange:
    """Inclusive date range assigning charts (by entry date) to a split."""

    start: datetime.date
    end: datetime.date

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ConfigError(f"split range ends before it starts: {self}")

    def __contains__(self, day: datetime.date) -> bool:
        return self.start <= day <= self.end


@dataclass(frozen=True)
class PreprocessConfig:
    smoothing_window: int = 24
    slice_window: int = 128
    downsample_factor: int = 4
    channel2_scale: float = 1.0 / 32.0
    horizons: tuple[int, ...] = (20, 50, 100)
    limit_threshold: float = 0.295
    split_ranges: Mapping[str, SplitRange] = field(default_factory=lambda: default_split_ranges())

    def __post_init__(self) -> None:
        if self.smoothing_window < 1:
            raise ConfigError("smoothing_window must be >= 1")
        if self.slice_window < 1:
            raise ConfigError("slice_window must be >= 1")
        if self.downsample_factor < 1 or self.slice_window % self.downsample_factor:
            raise ConfigError("slice_window must be a positive multiple of downsample_factor")
        if not self.horizons or any(k <= 0 for k in self.horizons):
            raise ConfigError("horizons must be positive")
        if len(set(self.horizons)) != len(self.horizons):
            raise ConfigError("horizons must be distinct")
        if self.limit_threshold <= 0:
            raise ConfigError("limit_threshold must be positive")
        object.__setattr__(self, "horizons", tuple(int(k) for k in self.horizons))
        ranges = dict(self.split_ranges)
        for name in ranges:
            if name not in SPLIT_NAMES:
                raise ConfigError(f"unknown split {name!r}")
        spans = sorted(ranges.values(), key=lambda r: r.start)
        for a, b in zip(spans, spans[1:]):
            if b.start <= a.end:
                raise ConfigError(f"split ranges overlap: {a} and {b}")
        object.__setattr__(self, "split_ranges", ranges)

    @property
    def chart_steps(self) -> int:
        return self.slice_window // self.downsample_factor


def default_split_ranges() -> dict[str, SplitRange]:
    """Three-year training block, then one held-out year each."""
    return {
        "training": SplitRange(datetime.date(2012, 1, 1), datetime.date(2014, 12, 31)),
        "validation": SplitRange(datetime.date(2015, 1, 1), datetime.date(2015, 12, 31)),
        "test": SplitRange(datetime.date(2016, 1, 1), datetime.date(2016, 12, 31)),
    }


def smooth(series: PriceSeries, window: int) -> PriceSeries:
    """Trailing moving average; day t averages the ``window`` closes ending at t.

    The first ``window - 1`` days have no full history and are consumed:
    the result is shorter by that amount and keeps the dates of the days
    that do have full history.  A series shorter than the window yields
    an empty series (with a log warning) rather than an error.
    """
    if window < 1:
        raise ConfigError("smoothing window must be >= 1")
    if len(series) < window:
        log.warning(
            "%s: series of length %d shorter than smoothing window %d, no output",
            series.instrument_id, len(series), window,
        )
        return PriceSeries(series.instrument_id, (), np.empty(0))
    if window == 1:
        return series
    smoothed = sliding_window_view(series.closes, window).mean(axis=-1)
    return PriceSeries(series.instrument_id, series.dates[window - 1:], smoothed)


def slice_series(series: PriceSeries, window: int) -> np.ndarray:
    """All stride-1 windows of length ``window``, shape (n_windows, window)."""
    if window < 1:
        raise ConfigError("slice window must be >= 1")
    if len(series) < window:
        return np.empty((0, window))
    return sliding_window_view(series.closes, window)


def chart_values(window: np.ndarray, preceding: float, config: PreprocessConfig) -> np.ndarray:
    """Build the (steps, 2) channel image for one smoothed window.

    Channel 0 holds day-over-day log changes (the day before the window
    supplies the first delta); channel 1 holds log changes relative to
    the window's final value.  Both are block-averaged by the downsample
    factor, then channel 1 is rescaled.
    """
    window = np.asarray(window, dtype=np.float64)
    s = config.slice_window
    if window.shape != (s,):
        raise ValueError(f"window must have shape ({s},), got {window.shape}")
    if preceding <= 0 or not np.all(window > 0):
        raise ValueError("smoothed prices must be strictly positive")
    # ratios first, logs second: rescaling the whole series then cancels
    # exactly in the division, so charts are invariant to price units
    shifted = np.concatenate(([preceding], window[:-1]))
    daily = np.log(window / shifted)
    to_last = np.log(window / window[-1])
    f = config.downsample_factor
    daily = daily.reshape(-1, f).mean(axis=1)
    to_last = to_last.reshape(-1, f).mean(axis=1) * config.channel2_scale
    return np.stack([daily, to_last], axis=1)


def forward_returns(series: PriceSeries, entry_index: int, horizons: Sequence[int]) -> dict[int, float]:
    """k-day forward log returns of raw closes, measured from ``entry_index``.

    Horizons that run past the end of the series are left out.
    """
    closes = series.closes
    out: dict[int, float] = {}
    for k in horizons:
        j = entry_index + k
        if j < len(closes):
            out[k] = float(np.log(closes[j] / closes[entry_index]))
    return out


def limit_hit(series: PriceSeries, entry_index: int, threshold: float) -> bool:
    """True when the raw change into the entry day reaches the daily limit."""
    if entry_index < 1:
        raise ValueError("entry day needs a preceding raw close")
    change = series.closes[entry_index] / series.closes[entry_index - 1] - 1.0
    return bool(change >= threshold)


def charts_from_series(series: PriceSeries, config: PreprocessConfig) -> list[Chart]:
    """All tradeable charts for one instrument, in entry-date order."""
    w = config.smoothing_window
    s = config.slice_window
    smoothed = smooth(series, w)
    windows = slice_series(smoothed, s)
    charts: list[Chart] = []
    dropped = 0
    # window start j in the smoothed series maps to raw entry index
    # e = j + s + w - 1; j = 0 lacks a preceding smoothed value and the
    # last start lacks an entry day, so both ends shrink by one.
    for j in range(1, len(windows)):
        entry_index = j + s + w - 1
        if entry_index >= len(series):
            dropped += 1
            continue
        values = chart_values(windows[j], float(smoothed.closes[j - 1]), config)
        charts.append(
            Chart(
                values=values,
                entry_date=series.dates[entry_index],
                returns=forward_returns(series, entry_index, config.horizons),
                limit_hit=limit_hit(series, entry_index, config.limit_threshold),
                source_id=series.instrument_id,
            )
        )
    if dropped:
        log.debug("%s: dropped %d windows without an entry day", series.instrument_id, dropped)
    return charts


def build_corpus(series_set: Sequence[PriceSeries], config: PreprocessConfig) -> dict[str, Dataset]:
    """Preprocess every series and bucket charts into splits by entry date.

    Charts whose entry date falls outside every configured range are
    discarded.  Instruments are processed in id order so the result is
    independent of input ordering.
    """
    if not config.split_ranges:
        raise ConfigError("no split ranges configured")
    ids = [s.instrument_id for s in series_set]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate instrument ids in input")
    buckets: dict[str, list[Chart]] = {name: [] for name in config.split_ranges}
    total = 0
    unassigned = 0
    for series in sorted(series_set, key=lambda s: s.instrument_id):
        for chart in charts_from_series(series, config):
            total += 1
            for name, span in config.split_ranges.items():
                if chart.entry_date in span:
                    buckets[name].append(chart)
                    break
            else:
                unassigned += 1
    log.info(
        "corpus: %d charts from %d instruments (%d outside split ranges)",
        total, len(series_set), unassigned,
    )
    for name, charts in buckets.items():
        log.info("corpus: split %s has %d charts", name, len(charts))
    return {name: Dataset(tuple(charts), name) for name, charts in buckets.items()}


INSTRUMENT_INDEX = "instruments.json"


def write_price_directory(directory, series_set: Sequence[PriceSeries]) -> None:
    """Write one CSV per instrument plus an index naming them."""
    from .types import write_price_csv

    os.makedirs(directory, exist_ok=True)
    entries = []
    for series in sorted(series_set, key=lambda s: s.instrument_id):
        filename = f"{series.instrument_id}.csv"
        write_price_csv(os.path.join(directory, filename), series)
        entries.append({"id": series.instrument_id, "file": filename})
    index = {"format": PRICES_MAGIC, "version": PRICES_VERSION, "instruments": entries}
    with open(os.path.join(directory, INSTRUMENT_INDEX), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_price_directory(directory) -> list[PriceSeries]:
    from .types import read_price_csv

    index_path = os.path.join(directory, INSTRUMENT_INDEX)
    try:
        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{directory}: missing instrument index ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{index_path}: corrupt instrument index ({exc})") from exc
    if index.get("format") != PRICES_MAGIC:
        raise ConfigError(f"{index_path}: not a {PRICES_MAGIC} index")
    series_set = []
    for entry in index.get("instruments", []):
        path = os.path.join(directory, entry["file"])
        series_set.append(read_price_csv(path, entry["id"]))
    return series_set
