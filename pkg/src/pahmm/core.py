"""Shared domain types, design-matrix construction and series validation."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

QUARTER = np.timedelta64(15, "m")
N_HOURS = 24


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class SeriesError(ValueError):
    """Fatal structural problem with a patient series."""


class NumericalError(RuntimeError):
    """A numerical sub-step of the sampler failed."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def compute_segment_starts(timestamps: np.ndarray) -> np.ndarray:
    """Indices where the quarter-hour grid breaks (gap larger than 15 minutes)."""
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    if ts.size == 0:
        return np.zeros(0, dtype=np.int64)
    gaps = np.diff(ts) > QUARTER
    return np.concatenate([[0], np.flatnonzero(gaps) + 1]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class PatientSeries:
    """Quarter-hour multivariate series with a row-level missingness mask.

    ``y`` holds NaN in every masked row. Columns are heart rate (beats per
    interval) and steps when d == 2.
    """

    timestamps: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    segment_starts: Optional[np.ndarray] = None
    channels: tuple[str, ...] = ("hr", "steps")

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        mask = np.asarray(self.mask).astype(bool)
        if not (len(ts) == y.shape[0] == mask.shape[0]):
            raise SeriesError(
                f"length mismatch: timestamps={len(ts)}, y={y.shape[0]}, mask={mask.shape[0]}"
            )
        y = y.copy()
        y[mask] = np.nan
        seg = self.segment_starts
        seg = compute_segment_starts(ts) if seg is None else np.asarray(seg, dtype=np.int64)
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "mask", _readonly(mask))
        object.__setattr__(self, "segment_starts", _readonly(seg))
        if len(self.channels) != y.shape[1]:
            object.__setattr__(self, "channels", tuple(f"y{i}" for i in range(y.shape[1])))

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def hours(self) -> np.ndarray:
        return hour_of(self.timestamps)

    @property
    def missing_rate(self) -> float:
        return float(self.mask.mean()) if self.T else 0.0

    def segment_start_flags(self) -> np.ndarray:
        flags = np.zeros(self.T, dtype=bool)
        flags[self.segment_starts] = True
        return flags


def hour_of(timestamps) -> np.ndarray:
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    minutes = (ts - ts.astype("datetime64[D]")).astype(np.int64)
    return (minutes // 60).astype(np.int64)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Covariate rows entering the transition model.

    ``X`` is usually the 23 hour-of-day dummies; any T x p binary or real matrix
    is accepted by the transition math.
    """

    X: np.ndarray
    baseline_hour: int
    hour_of: np.ndarray

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def is_hourly(self) -> bool:
        return self.p == N_HOURS - 1

    def hour_row(self, hour: int) -> np.ndarray:
        return hour_dummy_row(hour, self.baseline_hour)


def hour_dummy_row(hour: int, baseline_hour: int) -> np.ndarray:
    full = np.zeros(N_HOURS)
    full[hour] = 1.0
    return np.delete(full, baseline_hour)


def build_design_matrix(timestamps, baseline_hour: int) -> DesignMatrix:
    if not isinstance(baseline_hour, (int, np.integer)) or not 0 <= baseline_hour < N_HOURS:
        raise ConfigError(f"baseline_hour must be an integer in [0, 23], got {baseline_hour!r}")
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    if ts.size == 0:
        raise ConfigError("cannot build a design matrix from zero timestamps")
    hours = hour_of(ts)
    full = np.zeros((ts.size, N_HOURS))
    full[np.arange(ts.size), hours] = 1.0
    X = np.delete(full, int(baseline_hour), axis=1)
    return DesignMatrix(X=_readonly(X), baseline_hour=int(baseline_hour), hour_of=_readonly(hours))


def generic_design(X: np.ndarray, hours: Optional[np.ndarray] = None) -> DesignMatrix:
    """Wrap an arbitrary covariate matrix (no hour structure assumed)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if hours is None:
        hours = np.zeros(X.shape[0], dtype=np.int64)
    return DesignMatrix(X=_readonly(X), baseline_hour=-1, hour_of=_readonly(np.asarray(hours)))


def validate_series(series: PatientSeries):
    """Return ``series`` if well formed, else a list of violation strings.

    Length mismatches are fatal and raise :class:`SeriesError` (already
    enforced at construction for PatientSeries instances).
    """
    ts = np.asarray(series.timestamps)
    y = np.asarray(series.y)
    mask = np.asarray(series.mask)
    if not (len(ts) == len(y) == len(mask)):
        raise SeriesError(f"length mismatch: timestamps={len(ts)}, y={len(y)}, mask={len(mask)}")
    problems = []
    if len(ts) == 0:
        problems.append("empty series")
    if len(ts) > 1 and not np.all(np.diff(ts.astype("datetime64[m]")) > np.timedelta64(0, "m")):
        bad = int(np.argmax(~(np.diff(ts.astype("datetime64[m]")) > np.timedelta64(0, "m")))) + 1
        problems.append(f"timestamps not strictly increasing at index {bad}")
    obs = ~mask.astype(bool)
    bad_rows = np.flatnonzero(obs & ~np.all(np.isfinite(y), axis=1))
    if bad_rows.size:
        problems.append(f"non-finite values in observed rows: {bad_rows[:10].tolist()}")
    if y.ndim != 2 or y.shape[1] < 1:
        problems.append("y must have at least one channel")
    return problems if problems else series


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class NiwHyper:
    mu0: np.ndarray
    kappa0: float
    nu0: float
    lambda0: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.mu0).size
        if self.kappa0 <= 0:
            raise ConfigError("kappa0 must be positive")
        if self.nu0 <= d - 1:
            raise ConfigError(f"nu0 must exceed d - 1 = {d - 1}")
        lam = np.asarray(self.lambda0, dtype=float)
        if lam.shape != (d, d) or not np.allclose(lam, lam.T):
            raise ConfigError("lambda0 must be a symmetric d x d matrix")
        try:
            np.linalg.cholesky(lam)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("lambda0 must be positive definite") from exc


@dataclass(frozen=True)
class ModelConfig:
    K: int = 3
    baseline_hour: Optional[int] = None
    prior_mean: float = 0.0
    prior_var: float = 0.1
    kappa0: float = 0.01
    nu0: Optional[float] = None
    mu0: Optional[tuple] = None
    lambda0_diag: Optional[tuple] = None
    aug_strength: int = 0
    day_len: int = 96
    n_init: int = 2000
    n_burn: int = 15000
    n_iter: int = 5000
    hmm_alpha: float = 1.0
    pi: Optional[tuple] = None
    literal_mu_cov: bool = False
    marginalize_missing: bool = True
    relabel: bool = True
    seed: int = 0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 2:
            raise ConfigError(f"K must be an integer >= 2, got {self.K}")
        if self.prior_var <= 0:
            raise ConfigError("prior_var must be positive")
        if self.kappa0 <= 0:
            raise ConfigError("kappa0 must be positive")
        for name in ("n_init", "n_burn", "n_iter", "aug_strength"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.baseline_hour is not None and not 0 <= self.baseline_hour < N_HOURS:
            raise ConfigError("baseline_hour must be in [0, 23]")
        if self.pi is not None:
            pi = np.asarray(self.pi, dtype=float)
            if pi.size != self.K or np.any(pi < 0) or not np.isclose(pi.sum(), 1.0):
                raise ConfigError("pi must be a length-K probability vector")
        if self.hmm_alpha <= 0:
            raise ConfigError("hmm_alpha must be positive")

    def initial_dist(self) -> np.ndarray:
        if self.pi is None:
            return np.full(self.K, 1.0 / self.K)
        return np.asarray(self.pi, dtype=float)

    def niw(self, y_observed: np.ndarray) -> NiwHyper:
        """Weak data-centred NIW prior unless overridden."""
        d = y_observed.shape[1]
        mu0 = np.nanmean(y_observed, axis=0) if self.mu0 is None else np.asarray(self.mu0, float)
        if self.lambda0_diag is None:
            var = np.nanvar(y_observed, axis=0)
            var = np.where(var > 0, var, 1.0)
        else:
            var = np.asarray(self.lambda0_diag, dtype=float)
        nu0 = d + 2.0 if self.nu0 is None else float(self.nu0)
        return NiwHyper(mu0=mu0, kappa0=float(self.kappa0), nu0=nu0, lambda0=np.diag(var))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


CONFIG_KEYS = {f.name for f in fields(ModelConfig)}


# ---------------------------------------------------------------- csv io


def _fmt(v: float, decimals: int) -> str:
    return f"{v:.{decimals}f}"


def read_series_csv(path) -> PatientSeries:
    """Read ``timestamp,hr,steps[,missing]``; empty cells are missing."""
    ts, rows, miss = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c for c in reader.fieldnames or [] if c not in ("timestamp", "missing")]
        if "timestamp" not in (reader.fieldnames or []):
            raise SeriesError(f"{path}: no 'timestamp' column")
        for rec in reader:
            ts.append(np.datetime64(rec["timestamp"], "m"))
            vals = [float(rec[c]) if rec[c] not in ("", None) else np.nan for c in cols]
            rows.append(vals)
            flag = rec.get("missing")
            if flag not in (None, ""):
                miss.append(bool(int(flag)))
            else:
                miss.append(any(np.isnan(v) for v in vals))
    y = np.asarray(rows, dtype=float).reshape(len(rows), len(cols))
    return PatientSeries(np.asarray(ts, dtype="datetime64[m]"), y, np.asarray(miss, bool),
                         channels=tuple(cols))


def write_series_csv(series: PatientSeries, path, decimals: int = 4) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("timestamp," + ",".join(series.channels) + ",missing\n")
        for t in range(series.T):
            stamp = str(series.timestamps[t].astype("datetime64[s]"))
            if series.mask[t]:
                vals = [""] * series.d
            else:
                vals = [_fmt(v, decimals) for v in series.y[t]]
            fh.write(f"{stamp},{','.join(vals)},{int(series.mask[t])}\n")


def quarter_grid(start, n: int) -> np.ndarray:
    return np.datetime64(start, "m") + np.arange(n) * QUARTER


__all__ = [
    "ConfigError", "SeriesError", "NumericalError", "PatientSeries", "DesignMatrix",
    "NiwHyper", "ModelConfig", "CONFIG_KEYS", "build_design_matrix", "generic_design",
    "validate_series", "compute_segment_starts", "hour_of", "hour_dummy_row",
    "read_series_csv", "write_series_csv", "quarter_grid",
]
