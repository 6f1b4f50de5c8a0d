"""Synthetic and hybrid datasets with hour-dependent dynamics and missingness.

Transition rows mix an hour-independent matrix with hour-specific entries,
``q = q0 + nu * qh`` renormalized per row. Missingness is Bernoulli per row
with hour-level probability ``(1 - gamma) * p0 + gamma * ph``; it reads only
the hour label, never the values or the states.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import N_HOURS, ConfigError, PatientSeries, hour_of, quarter_grid, write_series_csv
from .emissions import EmissionParams

NIGHT = (22, 23, 0, 1, 2, 3, 4, 5, 6)
SHOULDER = (7, 8, 21)


@dataclass(frozen=True, eq=False)
class MissingnessSpec:
    gamma: float
    p0: np.ndarray
    ph: np.ndarray

    def __post_init__(self):
        p0 = np.broadcast_to(np.asarray(self.p0, float), (N_HOURS,)).copy()
        ph = np.broadcast_to(np.asarray(self.ph, float), (N_HOURS,)).copy()
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        for name, p in (("p0", p0), ("ph", ph)):
            if np.any(p < 0) or np.any(p > 1):
                raise ConfigError(f"{name} probabilities must lie in [0, 1]")
        if not np.allclose(p0, p0[0]):
            raise ConfigError("p0 must be constant across hours")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "ph", ph)

    def hourly(self) -> np.ndarray:
        return (1.0 - self.gamma) * self.p0 + self.gamma * self.ph


def _hour_profile(target: float, night: float, shoulder: float) -> np.ndarray:
    """Night/shoulder rates given; daytime rate solved so the mean equals target."""
    n_day = N_HOURS - len(NIGHT) - len(SHOULDER)
    day = (N_HOURS * target - len(NIGHT) * night - len(SHOULDER) * shoulder) / n_day
    p = np.full(N_HOURS, day)
    p[list(NIGHT)] = night
    p[list(SHOULDER)] = shoulder
    return p


# Named missingness presets. Each hour-dependent vector averages to the
# matching constant rate, so gamma moves the pattern, not the overall level.
MISSINGNESS_PROFILES = {
    "mcar": {"p0": 0.10, "ph": np.full(N_HOURS, 0.10)},
    "medium": {"p0": 0.20, "ph": _hour_profile(0.20, 0.40, 0.20)},
    "high": {"p0": 0.40, "ph": _hour_profile(0.40, 0.80, 0.40)},
}


def missingness_profile(name: str, gamma: float) -> MissingnessSpec:
    try:
        prof = MISSINGNESS_PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown missingness profile {name!r}") from None
    return MissingnessSpec(gamma, prof["p0"], prof["ph"])


def default_emissions() -> EmissionParams:
    """Heart beats and steps per quarter hour for sedentary/intermediate/high."""
    mu = np.array([[975.0, 5.0], [1275.0, 250.0], [1650.0, 900.0]])
    sd = np.array([[60.0, 10.0], [80.0, 100.0], [100.0, 250.0]])
    rho = np.array([0.2, 0.3, 0.3])
    sigma = np.empty((3, 2, 2))
    for k in range(3):
        sigma[k] = [[sd[k, 0] ** 2, rho[k] * sd[k, 0] * sd[k, 1]],
                    [rho[k] * sd[k, 0] * sd[k, 1], sd[k, 1] ** 2]]
    return EmissionParams(mu, sigma)


def default_q0() -> np.ndarray:
    return np.array([[0.90, 0.08, 0.02], [0.15, 0.75, 0.10], [0.05, 0.25, 0.70]])


def default_qh(weight: float = 3.0) -> np.ndarray:
    """Hour-specific entries: pulled to sedentary at night, to activity by day."""
    qh = np.empty((N_HOURS, 3, 3))
    for h in range(N_HOURS):
        if h in NIGHT:
            row = [1.0, 0.0, 0.0]
        elif h in SHOULDER:
            row = [0.4, 0.4, 0.2]
        else:
            row = [0.1, 0.5, 0.4]
        qh[h] = weight * np.asarray(row)[None, :]
    return qh


@dataclass(frozen=True, eq=False)
class DynamicsSpec:
    nu: float = 0.0
    q0: np.ndarray = field(default_factory=default_q0)
    qh: np.ndarray = field(default_factory=default_qh)
    psi_true: EmissionParams = field(default_factory=default_emissions)
    K: int = 3
    T: int = 8000
    start: str = "2024-01-01T00:00"

    def hourly_Q(self) -> np.ndarray:
        """(24, K, K) mixed and renormalized transition matrices."""
        if self.nu < 0:
            raise ConfigError("nu must be >= 0")
        q0 = np.asarray(self.q0, float)
        qh = np.broadcast_to(np.asarray(self.qh, float), (N_HOURS, self.K, self.K))
        mixed = q0[None] + self.nu * qh
        sums = mixed.sum(axis=2, keepdims=True)
        if np.any(mixed < 0) or np.any(sums <= 0):
            raise ConfigError("mixed transition entries cannot be renormalized to the simplex")
        return mixed / sums


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Values hidden by simulated missingness; never passed to a fit."""

    rows: np.ndarray
    y: np.ndarray


def gen_synthetic(spec: DynamicsSpec, rng: np.random.Generator, timestamps=None):
    """Returns (complete series, 0-based path of length T+1, hourly Q truth)."""
    ts = quarter_grid(spec.start, spec.T) if timestamps is None else np.asarray(
        timestamps, dtype="datetime64[m]")
    series, z = gen_from_hourly_Q(spec.hourly_Q(), spec.psi_true, ts, rng)
    return series, z, spec.hourly_Q()


def gen_from_hourly_Q(Qh: np.ndarray, psi: EmissionParams, timestamps,
                      rng: np.random.Generator):
    """Simulate a path and Gaussian emissions from explicit (24, K, K) matrices.

    The transition into row t uses the hour of row t; z[0] is uniform.
    """
    Qh = np.asarray(Qh, dtype=float)
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    T = ts.size
    hours = hour_of(ts)
    K = Qh.shape[-1]
    cum = np.cumsum(Qh, axis=2)
    u = rng.random(T + 1)
    z = np.empty(T + 1, dtype=np.int64)
    z[0] = min(int(u[0] * K), K - 1)
    for t in range(T):
        row = cum[hours[t], z[t]]
        z[t + 1] = min(int(np.searchsorted(row, u[t + 1] * row[-1], side="right")), K - 1)
    chol = np.linalg.cholesky(psi.sigma)
    eps = rng.standard_normal((T, psi.d))
    states = z[1:]
    y = psi.mu[states] + np.einsum("nij,nj->ni", chol[states], eps)
    return PatientSeries(ts, y, np.zeros(T, dtype=bool)), z


def impose_missingness(series: PatientSeries, spec: MissingnessSpec, rng: np.random.Generator):
    """Bernoulli row deletion by hour; returns (masked series, ground truth)."""
    if series.mask.any():
        raise ConfigError("impose_missingness expects a complete series")
    return _mask_rows(series, spec, rng)


def _mask_rows(series: PatientSeries, spec: MissingnessSpec, rng):
    p = spec.hourly()[series.hours]
    drop = rng.random(series.T) < p
    new = drop & ~series.mask
    mask = series.mask | drop
    truth = GroundTruth(rows=np.flatnonzero(new), y=np.array(series.y[new]))
    masked = PatientSeries(series.timestamps, series.y, mask, series.segment_starts,
                           channels=series.channels)
    return masked, truth


def hybrid_from_complete(series: PatientSeries, spec: MissingnessSpec,
                         rng: np.random.Generator, ceiling: float = 0.05):
    """Impose artificial missingness on a real, nearly complete series.

    Rows that were already missing stay missing and never enter the ground truth.
    """
    rate = series.missing_rate
    if rate > ceiling:
        raise ConfigError(f"input missing rate {rate:.3f} exceeds ceiling {ceiling:.3f}")
    return _mask_rows(series, spec, rng)


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Scenario:
    gamma: float
    nu: float
    profile: str = "high"
    seed: int = 0
    T: int = 8000

    @classmethod
    def from_record(cls, rec: dict) -> "Scenario":
        unknown = set(rec) - {"gamma", "nu", "profile", "seed", "T"}
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(float(rec["gamma"]), float(rec["nu"]), str(rec.get("profile", "high")),
                   int(rec.get("seed", 0)), int(rec.get("T", 8000)))

    @property
    def name(self) -> str:
        return f"g{self.gamma:g}_n{self.nu:g}_{self.profile}_s{self.seed}"


def read_scenarios(path) -> list[Scenario]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Scenario.from_record(json.loads(line)))
    return out


@dataclass(frozen=True, eq=False)
class SimDataset:
    scenario: Scenario
    series: PatientSeries
    truth: GroundTruth
    y_complete: np.ndarray
    z_true: np.ndarray
    Q_true: np.ndarray


def make_dataset(sc: Scenario, rng: Optional[np.random.Generator] = None) -> SimDataset:
    rng = np.random.default_rng(sc.seed) if rng is None else rng
    dyn = DynamicsSpec(nu=sc.nu, T=sc.T)
    complete, z, Qh = gen_synthetic(dyn, rng)
    masked, truth = impose_missingness(complete, missingness_profile(sc.profile, sc.gamma), rng)
    return SimDataset(sc, masked, truth, np.array(complete.y), z, Qh)


def write_dataset(ds: SimDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_series_csv(ds.series, out / "data.csv")
    with open(out / "truth.csv", "w") as fh:
        fh.write("timestamp,hr_true,steps_true,z_true,artificial\n")
        art = np.zeros(ds.series.T, dtype=int)
        art[ds.truth.rows] = 1
        for t in range(ds.series.T):
            stamp = str(ds.series.timestamps[t].astype("datetime64[s]"))
            hr, st = ds.y_complete[t]
            fh.write(f"{stamp},{hr:.6f},{st:.6f},{ds.z_true[t + 1]},{art[t]}\n")
    meta = {
        "scenario": ds.scenario.__dict__,
        "z0_true": int(ds.z_true[0]),
        "Q_true": ds.Q_true.tolist(),
        "missing_rate": ds.series.missing_rate,
    }
    (out / "truth.json").write_text(json.dumps(meta, indent=1))
    return out


def read_truth(dir_path):
    """Load (z_true with z0, y_complete, artificial rows, hourly Q) from a dataset dir."""
    d = Path(dir_path)
    meta = json.loads((d / "truth.json").read_text())
    rows = np.genfromtxt(d / "truth.csv", delimiter=",", skip_header=1, usecols=(1, 2, 3, 4))
    rows = rows.reshape(-1, 4)
    z = np.concatenate([[meta["z0_true"]], rows[:, 2].astype(np.int64)])
    return {
        "z_true": z,
        "y_complete": rows[:, :2],
        "artificial_rows": np.flatnonzero(rows[:, 3] == 1),
        "Q_true": np.asarray(meta["Q_true"]),
        "scenario": meta["scenario"],
    }
