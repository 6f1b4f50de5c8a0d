"""Minute-level ingestion, wear detection, quarter-hour aggregation and day
filtering."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import QUARTER, PatientSeries, compute_segment_starts, hour_of

@dataclass(frozen=True, eq=False)
class MinuteSeries:
    timestamps: np.ndarray
    hr: np.ndarray
    steps: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        hr = np.asarray(self.hr, dtype=float)
        steps = np.asarray(self.steps, dtype=float)
        if not (ts.size == hr.size == steps.size):
            raise ValueError("timestamps, hr and steps must have equal length")
        if ts.size > 1 and not np.all(np.diff(ts) > np.timedelta64(0, "m")):
            raise ValueError("minute timestamps must be strictly increasing")
        if np.any(steps[~np.isnan(steps)] < 0):
            raise ValueError("negative step counts")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "hr", hr)
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return self.timestamps.size


def read_minutes_csv(path) -> MinuteSeries:
    ts, hr, st = [], [], []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            ts.append(np.datetime64(rec["timestamp"], "m"))
            hr.append(float(rec["hr"]) if rec["hr"] not in ("", None) else np.nan)
            st.append(float(rec["steps"]) if rec["steps"] not in ("", None) else np.nan)
    return MinuteSeries(np.asarray(ts, dtype="datetime64[m]"), np.asarray(hr), np.asarray(st))


def write_minutes_csv(minutes: MinuteSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,hr,steps\n")
        for t, h, s in zip(minutes.timestamps, minutes.hr, minutes.steps):
            hs = "" if np.isnan(h) else f"{h:g}"
            ss = "" if np.isnan(s) else f"{s:g}"
            fh.write(f"{t.astype('datetime64[s]')},{hs},{ss}\n")


def _runs(flags: np.ndarray):
    """(start, stop) pairs of maximal True runs."""
    f = np.concatenate([[False], flags, [False]]).astype(np.int8)
    d = np.diff(f)
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1)


def detect_nonwear(minutes: MinuteSeries, window_len: int = 90, spike_tolerance: int = 2,
                   stream_window: int = 30, hr_indicates_wear: bool = False) -> np.ndarray:
    """Choi-style nonwear flags, one per minute (True = not worn).

    A minute is inactive when its step count is zero or absent. Runs of at
    least ``window_len`` inactive minutes are nonwear; an active spell of at
    most ``spike_tolerance`` minutes is absorbed when the ``stream_window``
    minutes on both sides are inactive. Minutes are assumed contiguous; gaps in
    the record count as absent.
    """
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    steps = minutes.steps
    inactive = np.isnan(steps) | (steps == 0)
    if hr_indicates_wear:
        inactive &= np.isnan(minutes.hr)
    n = inactive.size
    filled = inactive.copy()
    starts, stops = _runs(~inactive)
    for a, b in zip(starts, stops):
        if b - a > spike_tolerance:
            continue
        up = inactive[max(a - stream_window, 0):a]
        down = inactive[b:min(b + stream_window, n)]
        if up.size == stream_window and down.size == stream_window and up.all() and down.all():
            filled[a:b] = True
    nonwear = np.zeros(n, dtype=bool)
    starts, stops = _runs(filled)
    for a, b in zip(starts, stops):
        if b - a >= window_len:
            nonwear[a:b] = True
    return nonwear


def aggregate_15min(minutes: MinuteSeries, wear: np.ndarray, min_missing: int = 10,
                    day_aligned: bool = True, hr_mode: str = "sum") -> PatientSeries:
    """Quarter-hour sums, rescaled by 15 / observed minutes.

    ``wear`` is True where the device was worn. A quarter hour with at least
    ``min_missing`` missing or nonwear minutes (absent records included) is
    masked. With ``day_aligned`` the grid spans whole calendar days.
    ``hr_mode="mean"`` computes heart rate as the per-minute mean times 15,
    the same quantity up to rounding.
    """
    if hr_mode not in ("sum", "mean"):
        raise ValueError("hr_mode must be 'sum' or 'mean'")
    wear = np.asarray(wear, dtype=bool)
    ts = minutes.timestamps
    if ts.size == 0:
        return PatientSeries(np.zeros(0, "datetime64[m]"), np.zeros((0, 2)), np.zeros(0, bool))
    first = ts[0].astype("datetime64[D]") if day_aligned else _floor_quarter(ts[0])
    last = (ts[-1].astype("datetime64[D]") + np.timedelta64(1, "D")).astype("datetime64[m]") \
        if day_aligned else _floor_quarter(ts[-1]) + QUARTER
    first = first.astype("datetime64[m]")
    n_bins = int((last - first) // QUARTER)
    grid = first + np.arange(n_bins) * QUARTER
    b = ((ts - first) // QUARTER).astype(np.int64)
    good = wear & ~np.isnan(minutes.hr) & ~np.isnan(minutes.steps)
    n_obs = np.bincount(b[good], minlength=n_bins)
    hr_sum = np.bincount(b[good], weights=minutes.hr[good], minlength=n_bins)
    st_sum = np.bincount(b[good], weights=minutes.steps[good], minlength=n_bins)
    missing = (15 - n_obs) >= min_missing
    scale = np.where(n_obs > 0, 15.0 / np.maximum(n_obs, 1), 0.0)
    if hr_mode == "sum":
        hr = hr_sum * scale
    else:
        hr = np.where(n_obs > 0, hr_sum / np.maximum(n_obs, 1), 0.0) * 15.0
    y = np.column_stack([hr, st_sum * scale])
    return PatientSeries(grid, y, missing)


def _floor_quarter(t):
    t = np.datetime64(t, "m")
    day = t.astype("datetime64[D]").astype("datetime64[m]")
    return day + ((t - day) // QUARTER) * QUARTER


def filter_days(series: PatientSeries, min_hours: float = 5.0, window: tuple[int, int] = (8, 20)):
    """Drop calendar days with fewer than ``min_hours`` observed inside the window.

    Returns (filtered series, retained day labels). Segment starts are
    recomputed so removed days break the chain.
    """
    ts = series.timestamps
    day = ts.astype("datetime64[D]")
    days, idx = np.unique(day, return_inverse=True)
    hours = hour_of(ts)
    in_win = (hours >= window[0]) & (hours < window[1])
    obs_hours = np.bincount(idx, weights=(in_win & ~series.mask).astype(float),
                            minlength=days.size) * 0.25
    keep_day = obs_hours >= min_hours
    keep = keep_day[idx]
    kept_ts = ts[keep]
    out = PatientSeries(kept_ts, series.y[keep], series.mask[keep],
                        compute_segment_starts(kept_ts), channels=series.channels)
    return out, days[keep_day]


def check_eligibility(retained_days: int, min_days: int = 30) -> bool:
    return retained_days >= min_days


@dataclass(frozen=True)
class PreprocessReport:
    minutes: int
    nonwear_minutes: int
    quarter_hours: int
    masked_quarter_hours: int
    days_total: int
    days_retained: int
    eligible: bool

    @property
    def empty(self) -> bool:
        return self.days_retained == 0

    def lines(self) -> list[str]:
        return [f"{k} = {v}" for k, v in self.__dict__.items()]


def preprocess(minutes: MinuteSeries, window_len: int = 90, spike_tolerance: int = 2,
               min_hours: float = 5.0, min_days: int = 30, hr_indicates_wear: bool = False,
               hr_mode: str = "sum"):
    """Full pipeline; returns (quarter-hour series, report)."""
    nonwear = detect_nonwear(minutes, window_len, spike_tolerance,
                             hr_indicates_wear=hr_indicates_wear)
    quarter = aggregate_15min(minutes, ~nonwear, hr_mode=hr_mode)
    kept, days = filter_days(quarter, min_hours)
    n_days_total = np.unique(quarter.timestamps.astype("datetime64[D]")).size
    report = PreprocessReport(
        minutes=len(minutes),
        nonwear_minutes=int(nonwear.sum()),
        quarter_hours=quarter.T,
        masked_quarter_hours=int(quarter.mask.sum()),
        days_total=int(n_days_total),
        days_retained=int(days.size),
        eligible=check_eligibility(days.size, min_days),
    )
    return kept, report
