"""Model-comparison metrics, activity summaries and chain diagnostics."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import N_HOURS, hour_of


def interval_summary(values, level: float = 0.90) -> dict:
    v = np.asarray(values, dtype=float)
    lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
    return {
        "median": float(np.median(v)),
        "lower": float(np.quantile(v, lo)),
        "upper": float(np.quantile(v, hi)),
    }


# ---------------------------------------------------------------- imputation


def rmse_imputation(truth: np.ndarray, imputed: np.ndarray) -> np.ndarray:
    """Per-draw, per-channel RMSE over masked rows.

    ``truth`` is (M, d) at the masked rows, ``imputed`` is (S, M, d) in the
    same row order. Returns (S, d).
    """
    truth = np.asarray(truth, dtype=float)
    imputed = np.asarray(imputed, dtype=float)
    if imputed.ndim == 2:
        imputed = imputed[None]
    if imputed.shape[1:] != truth.shape:
        raise ValueError(f"imputed rows {imputed.shape[1:]} do not match truth {truth.shape}")
    return np.sqrt(np.mean((imputed - truth[None]) ** 2, axis=1))


def align_truth(draws, truth_rows: np.ndarray, truth_y: np.ndarray):
    """Restrict a fit's imputations to the rows carrying ground truth."""
    pos = {int(r): i for i, r in enumerate(draws.masked_rows)}
    try:
        idx = np.array([pos[int(r)] for r in truth_rows], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"ground-truth row {exc.args[0]} was not masked in the fit") from None
    return np.asarray(truth_y, dtype=float), draws.imputed[:, idx]


# ---------------------------------------------------------------- transitions


def frobenius_avg(Q_true: np.ndarray, Q_est: np.ndarray) -> float:
    """Mean over hours of the Frobenius norm of the difference."""
    a = np.asarray(Q_true, dtype=float)
    b = np.asarray(Q_est, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.sqrt(np.sum((a - b) ** 2, axis=(-2, -1)))))


# ---------------------------------------------------------------- marginals


@dataclass(frozen=True, eq=False)
class HourlyMarginals:
    probs: np.ndarray  # (K, 24), NaN columns where an hour has no rows

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.probs).any(axis=0)


def hourly_marginals(z_draws: np.ndarray, timestamps, K: Optional[int] = None) -> HourlyMarginals:
    """Share of (draw, row) pairs in each state by clock hour.

    ``z_draws`` is (S, T) with one label per row (drop the initial state
    before calling) or a single path of length T.
    """
    z = np.atleast_2d(np.asarray(z_draws, dtype=np.int64))
    if z.size == 0:
        raise ValueError("no draws")
    hours = hour_of(timestamps)
    if z.shape[1] != hours.size:
        raise ValueError("state draws and timestamps differ in length")
    K = int(z.max()) + 1 if K is None else K
    counts = np.zeros((K, N_HOURS))
    for k in range(K):
        counts[k] = np.bincount(hours, weights=(z == k).sum(axis=0), minlength=N_HOURS)
    tot = counts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(tot > 0, counts / tot, np.nan)
    return HourlyMarginals(probs)


def marginal_distance(a: HourlyMarginals, b: HourlyMarginals) -> float:
    """Mean absolute difference over states and hours defined in both."""
    ok = a.defined & b.defined
    return float(np.mean(np.abs(a.probs[:, ok] - b.probs[:, ok])))


def routine_strength(marginals: HourlyMarginals, cyclic: bool = True) -> float:
    """Count of hour-to-hour changes of the modal state times the product of
    per-state ranges across hours.

    Ties are handled through the set of modal states, so the count does not
    depend on how states are numbered.
    """
    p = marginals.probs
    if not marginals.defined.all():
        raise ValueError("marginals must be defined at every hour")
    ranges = p.max(axis=1) - p.min(axis=1)
    top = p >= p.max(axis=0) - 1e-12  # (K, 24) modal-set indicator
    nxt = np.roll(top, -1, axis=1) if cyclic else top[:, 1:]
    cur = top if cyclic else top[:, :-1]
    changes = int(np.sum((cur != nxt).any(axis=0)))
    return float(changes * np.prod(ranges))


# ---------------------------------------------------------------- allocation


def state_accuracy(z_true: np.ndarray, z_draws: np.ndarray, rows: Optional[np.ndarray] = None,
                   K: Optional[int] = None) -> np.ndarray:
    """Per-draw share of correctly allocated rows, maximized over relabelings.

    ``rows`` restricts the comparison (e.g. to masked rows).
    """
    zt = np.asarray(z_true, dtype=np.int64)
    zd = np.atleast_2d(np.asarray(z_draws, dtype=np.int64))
    if rows is not None:
        zt = zt[rows]
        zd = zd[:, rows]
    if zd.shape[1] != zt.size:
        raise ValueError("length mismatch between truth and draws")
    if zt.size == 0:
        return np.full(zd.shape[0], np.nan)
    K = int(max(zt.max(), zd.max())) + 1 if K is None else K
    if K > 6:
        raise ValueError("permutation search limited to K <= 6")
    out = np.empty(zd.shape[0])
    perms = np.array(list(itertools.permutations(range(K))))
    for s in range(zd.shape[0]):
        conf = np.bincount(zt * K + zd[s], minlength=K * K).reshape(K, K)
        # perm maps true label k to drawn label perm[k]
        hits = conf[np.arange(K)[None, :], perms].sum(axis=1)
        out[s] = hits.max() / zt.size
    return out


# ---------------------------------------------------------------- summaries


def _night_flags(hours: np.ndarray, night: tuple[int, int]) -> np.ndarray:
    start, end = night
    if start > end:
        return (hours >= start) | (hours < end)
    return (hours >= start) & (hours < end)


def mean_bout_length(z: np.ndarray, in_window: np.ndarray, breaks: np.ndarray,
                     state: int = 0) -> float:
    """Mean length of maximal runs of ``state`` inside the window.

    ``breaks[t]`` marks rows that cannot continue a run from row t-1.
    """
    hit = (np.asarray(z) == state) & in_window
    if not hit.any():
        return float("nan")
    starts = hit & np.concatenate([[True], ~hit[:-1] | breaks[1:]])
    return float(hit.sum() / starts.sum())


def activity_summaries(series, draws, night: tuple[int, int] = (22, 8),
                       sedentary_state: int = 0, steps_channel: int = 1,
                       hr_channel: int = 0) -> dict:
    """Per-draw PA summaries plus no-imputation comparators.

    Returns a dict of arrays (one value per draw) and scalars for the raw
    comparators. States must already be ordered so ``sedentary_state`` is the
    least active.
    """
    ts = np.asarray(series.timestamps, dtype="datetime64[m]")
    if series.T == 0:
        return {"undefined": True}
    day = ts.astype("datetime64[D]")
    days, day_idx = np.unique(day, return_inverse=True)
    n_days = days.size
    rows_per_day = np.bincount(day_idx, minlength=n_days)
    hours = hour_of(ts)
    in_night = _night_flags(hours, night)
    breaks = np.zeros(series.T, dtype=bool)
    breaks[series.segment_starts] = True
    obs = ~series.mask

    y_raw = np.where(obs[:, None], series.y, 0.0)
    raw_steps = np.bincount(day_idx, weights=y_raw[:, steps_channel], minlength=n_days)
    raw_hr = np.bincount(day_idx, weights=y_raw[:, hr_channel], minlength=n_days)
    obs_per_day = np.bincount(day_idx, weights=obs.astype(float), minlength=n_days)
    with np.errstate(invalid="ignore", divide="ignore"):
        raw_hr_day = raw_hr / (obs_per_day * 15.0)

    S = len(draws)
    steps_day = np.empty(S)
    hr_min_daily = np.empty(S)
    hr_min_pooled = np.empty(S)
    p_sed = np.empty(S)
    bout = np.empty(S)
    for s in range(S):
        y = draws.completed(series, s)
        steps_day[s] = np.mean(np.bincount(day_idx, weights=y[:, steps_channel], minlength=n_days))
        hr_d = np.bincount(day_idx, weights=y[:, hr_channel], minlength=n_days)
        hr_min_daily[s] = np.mean(hr_d / (rows_per_day * 15.0))
        hr_min_pooled[s] = hr_d.sum() / (series.T * 15.0)
        zs = draws.z[s, 1:]
        p_sed[s] = np.mean(zs == sedentary_state)
        bout[s] = mean_bout_length(zs, in_night, breaks, sedentary_state)
    return {
        "avg_daily_steps": steps_day,
        "hr_per_minute_daily": hr_min_daily,
        "hr_per_minute_pooled": hr_min_pooled,
        "prob_sedentary": p_sed,
        "night_sedentary_bout": bout,
        "raw_avg_daily_steps": float(np.mean(raw_steps)),
        "raw_hr_per_minute_daily": float(np.nanmean(raw_hr_day)),
        "raw_hr_per_minute_pooled": float(raw_hr.sum() / max(obs.sum() * 15.0, 1.0)),
        "n_days": int(n_days),
    }


# ---------------------------------------------------------------- diagnostics


def batch_means_ess(x: np.ndarray, batch_size: Optional[int] = None) -> float:
    """Effective sample size from non-overlapping batch means.

    Returns NaN for a constant chain.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float("nan")
    var = x.var(ddof=1)
    if not np.isfinite(var) or var <= 1e-300 * max(1.0, np.abs(x).max() ** 2):
        return float("nan")
    b = int(np.floor(np.sqrt(n))) if batch_size is None else int(batch_size)
    a = n // b
    if a < 2:
        return float("nan")
    means = x[: a * b].reshape(a, b).mean(axis=1)
    sigma2 = b * means.var(ddof=1)
    if sigma2 <= 0:
        return float("nan")
    return float(n * var / sigma2)


def trace_table(draws) -> dict[str, np.ndarray]:
    """Scalar traces keyed by parameter name."""
    out: dict[str, np.ndarray] = {}
    K, d = draws.mu.shape[1:]
    for k in range(K):
        for c in range(d):
            out[f"mu[{k},{c}]"] = draws.mu[:, k, c]
            for c2 in range(c, d):
                out[f"sigma[{k},{c},{c2}]"] = draws.sigma[:, k, c, c2]
    if draws.zeta is not None:
        for j in range(K - 1):
            for i in range(K):
                out[f"xi[{i},{j}]"] = draws.zeta[:, j, i]
            for h in range(draws.zeta.shape[2] - K):
                out[f"beta[{j},{h}]"] = draws.zeta[:, j, K + h]
    if draws.Q is not None:
        for i in range(K):
            for j in range(K):
                out[f"Q[{i},{j}]"] = draws.Q[:, i, j]
    return out


def chain_diagnostics(draws, min_draws: int = 100) -> dict:
    """Traces plus batch-means ESS for every scalar parameter."""
    if len(draws) < min_draws:
        raise ValueError(f"need at least {min_draws} saved draws, got {len(draws)}")
    traces = trace_table(draws)
    ess = {}
    degenerate = []
    for name, tr in traces.items():
        e = batch_means_ess(tr)
        ess[name] = e
        if np.isnan(e):
            degenerate.append(name)
    return {"iterations": draws.iterations, "traces": traces, "ess": ess, "degenerate": degenerate}


# ---------------------------------------------------------------- comparisons

# metrics where smaller is better; the rest (accuracies) are larger-is-better
LOWER_IS_BETTER = {"rmse_hr", "rmse_steps", "frobenius", "marginal_distance"}


def simulation_metrics(draws, timestamps, z_true, Q_true, truth_rows, truth_y,
                       channels=("hr", "steps")) -> dict[str, np.ndarray]:
    """Per-draw comparison metrics against a simulated ground truth."""
    ty, imp = align_truth(draws, truth_rows, truth_y)
    rmse = rmse_imputation(ty, imp)
    out = {f"rmse_{c}": rmse[:, i] for i, c in enumerate(channels)}
    Qd = draws.hourly_Q()
    out["frobenius"] = np.array([frobenius_avg(Q_true, q) for q in Qd])
    K = draws.K
    truth_marg = hourly_marginals(np.asarray(z_true)[1:], timestamps, K)
    zr = draws.z[:, 1:]
    out["marginal_distance"] = np.array(
        [marginal_distance(hourly_marginals(zr[s], timestamps, K), truth_marg)
         for s in range(zr.shape[0])])
    out["accuracy_all"] = state_accuracy(np.asarray(z_true)[1:], zr, K=K)
    out["accuracy_masked"] = state_accuracy(np.asarray(z_true)[1:], zr, rows=truth_rows, K=K)
    return out


def improvement(hmm: np.ndarray, nhmm: np.ndarray, metric: str) -> np.ndarray:
    """Draw-paired advantage of the covariate-dependent model (positive = better)."""
    n = min(len(hmm), len(nhmm))
    a, b = np.asarray(hmm[:n]), np.asarray(nhmm[:n])
    return a - b if metric in LOWER_IS_BETTER else b - a
