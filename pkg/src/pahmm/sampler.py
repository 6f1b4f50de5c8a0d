"""Gibbs sampler orchestration for the covariate-dependent HMM and the
homogeneous baseline.

A sweep draws, in order: emission parameters, imputations of masked rows,
transition parameters, then the latent path. The covariate-dependent fit runs
an exploratory phase on the data alone, appends pseudo-days built from the
exploratory emission estimates (when ``aug_strength > 0``), then runs burn-in
and the saved iterations on the augmented data.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    N_HOURS,
    ConfigError,
    DesignMatrix,
    ModelConfig,
    NumericalError,
    PatientSeries,
    build_design_matrix,
    hour_dummy_row,
    validate_series,
)
from .emissions import EmissionParams, SuffStats, loglik_matrix, order_states, sample_from_stats
from .latent import impute_missing, init_states, sample_states
from .transitions import (
    dirichlet_rows,
    extended_rows,
    log_transition_tensor,
    sample_zeta,
    transition_counts,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AugmentedData:
    """Pseudo-days: replicate r, state j occupies one whole day of slots."""

    pseudo_y: np.ndarray  # (m * K * day_len, d)
    pseudo_z: np.ndarray  # (m * K * day_len,)
    pseudo_slot: np.ndarray  # slot within the synthetic day
    day_len: int

    @property
    def size(self) -> int:
        return self.pseudo_z.size

    @property
    def hours(self) -> np.ndarray:
        return (self.pseudo_slot * N_HOURS) // self.day_len


def build_augmentation(psi_hat: EmissionParams, aug_strength: int, K: int,
                       day_len: int = 96, rng: Optional[np.random.Generator] = None) -> AugmentedData:
    if aug_strength < 0:
        raise ConfigError("aug_strength must be >= 0")
    if day_len % N_HOURS:
        raise ConfigError("day_len must be a multiple of 24")
    d = psi_hat.d
    z = np.repeat(np.tile(np.arange(K), aug_strength), day_len)
    slot = np.tile(np.arange(day_len), aug_strength * K)
    y = np.empty((z.size, d))
    if z.size:
        chol = np.linalg.cholesky(psi_hat.sigma)
        eps = rng.standard_normal((z.size, d))
        y = psi_hat.mu[z] + np.einsum("nij,nj->ni", chol[z], eps)
    return AugmentedData(y, z.astype(np.int64), slot.astype(np.int64), day_len)


@dataclass(eq=False)
class PosteriorDraws:
    model: str
    iterations: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    imputed: np.ndarray
    masked_rows: np.ndarray
    zeta: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.iterations.size

    @property
    def K(self) -> int:
        return self.mu.shape[1]

    def hourly_Q(self, baseline_hour: Optional[int] = None) -> np.ndarray:
        """Per-draw, per-hour transition matrices: (S, 24, K, K)."""
        if self.model == "hmm":
            return np.repeat(self.Q[:, None], N_HOURS, axis=1)
        base = self.meta.get("baseline_hour") if baseline_hour is None else baseline_hour
        patterns = np.array([hour_dummy_row(h, base) for h in range(N_HOURS)])
        return np.stack([np.exp(log_transition_tensor(zt, patterns)) for zt in self.zeta])

    def completed(self, series: PatientSeries, s: int) -> np.ndarray:
        y = np.array(series.y, dtype=float)
        y[self.masked_rows] = self.imputed[s]
        return y

    def relabeled(self, perm) -> "PosteriorDraws":
        return relabel_draws(self, perm)


def rereference_zeta(zeta: np.ndarray, perm) -> np.ndarray:
    """Express coefficients under new labels ``perm[new] = old``.

    Rows and origin columns are permuted and the new last row is subtracted
    from every row, which leaves every transition probability unchanged.
    """
    perm = np.asarray(perm)
    K = zeta.shape[-2]
    out = zeta[..., perm, :].copy()
    out[..., :K] = out[..., :K][..., perm]
    # subtracting a destination-independent quantity per origin keeps softmax
    return out - out[..., K - 1:K, :]


def relabel_draws(draws: PosteriorDraws, perm) -> PosteriorDraws:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    zeta = None if draws.zeta is None else rereference_zeta(draws.zeta, perm)
    Q = None if draws.Q is None else draws.Q[:, perm][:, :, perm]
    return PosteriorDraws(
        model=draws.model,
        iterations=draws.iterations,
        mu=draws.mu[:, perm],
        sigma=draws.sigma[:, perm],
        z=inv[draws.z].astype(draws.z.dtype),
        imputed=draws.imputed,
        masked_rows=draws.masked_rows,
        zeta=zeta,
        Q=Q,
        meta=dict(draws.meta, relabel=perm.tolist()),
    )


def choose_baseline_hour(series: PatientSeries, K: int, rng: np.random.Generator) -> int:
    """Hour with the most observed state changes under the k-means start."""
    z = init_states(series.y, series.mask, K, rng)[1:]
    obs = ~series.mask
    ok = obs[1:] & obs[:-1] & ~series.segment_start_flags()[1:]
    changes = ok & (z[1:] != z[:-1])
    per_hour = np.bincount(series.hours[1:][changes], minlength=N_HOURS)
    return int(np.argmax(per_hour))


class _Chain:
    """Mutable state of one sampler run."""

    def __init__(self, series: PatientSeries, config: ModelConfig, model: str,
                 design: Optional[DesignMatrix], rng: np.random.Generator):
        self.series = series
        self.config = config
        self.model = model
        self.rng = rng
        K = config.K
        self.K = K
        T = series.T
        self.mask = np.asarray(series.mask, dtype=bool)
        self.masked_rows = np.flatnonzero(self.mask)
        obs_y = series.y[~self.mask]
        if obs_y.shape[0] == 0:
            raise ConfigError("series has no observed rows")
        self.hyper = config.niw(obs_y)
        self.pi = config.initial_dist()
        self.seg_start = series.segment_start_flags()
        self.has_prev = ~self.seg_start
        self.has_prev[0] = True  # row 0 follows z0

        if model == "nhmm":
            if design is None:
                raise ConfigError("nhmm requires a design matrix")
            if design.X.shape[0] != T:
                raise ConfigError("design matrix rows do not match the series length")
            self.design = design
            if design.is_hourly and design.baseline_hour >= 0:
                self.patterns = np.array([hour_dummy_row(h, design.baseline_hour)
                                          for h in range(N_HOURS)])
                self.xidx = np.asarray(design.hour_of, dtype=np.int64)
            else:
                self.patterns, self.xidx = np.unique(design.X, axis=0, return_inverse=True)
                self.xidx = self.xidx.ravel().astype(np.int64)
            U = self.patterns.shape[0]
            prev = np.repeat(np.arange(K), U)
            self.W_cells = extended_rows(prev, np.tile(self.patterns, (K, 1)), K)
            self.zeta = np.zeros((K, K + design.p))
            self.zeta[: K - 1] = config.prior_mean
        else:
            self.design = design
            self.patterns = np.zeros((1, 0))
            self.xidx = np.zeros(T, dtype=np.int64)
            self.Q = None

        self.aug: Optional[AugmentedData] = None
        self.aug_stats: Optional[SuffStats] = None
        self.aug_cell_counts = None
        self.aug_cell_succ = None
        self.aug_trans = np.zeros((K, K))

        # initial path, parameters from observed rows, initial imputations
        self.z = init_states(series.y, self.mask, K, rng)
        y0 = np.nan_to_num(np.asarray(series.y, dtype=float))
        obs_stats = SuffStats.from_data(y0[~self.mask], self.z[1:][~self.mask], K)
        self.params = sample_from_stats(obs_stats, self.hyper, rng, config.literal_mu_cov)
        self.y = impute_missing(y0, self.mask, self.z, self.params, rng)
        if model == "hmm":
            counts = transition_counts(self.z, K, self.has_prev)
            self.Q = (counts + 1.0) / (counts + 1.0).sum(axis=1, keepdims=True)

    # ----------------------------------------------------------- augmentation
    def attach_augmentation(self, aug: AugmentedData) -> None:
        if aug.size == 0:
            return
        K = self.K
        self.aug = aug
        self.aug_stats = SuffStats.from_data(aug.pseudo_y, aug.pseudo_z, K)
        # each pseudo row is a j -> j move at its slot's hour
        if self.model == "nhmm":
            if not (self.design.is_hourly and self.design.baseline_hour >= 0):
                raise ConfigError("augmentation requires an hour-of-day design")
            U = self.patterns.shape[0]
            cell = aug.pseudo_z * U + aug.hours
            ncell = K * U
            self.aug_cell_counts = np.bincount(cell, minlength=ncell)
            self.aug_cell_succ = np.bincount(cell * K + aug.pseudo_z,
                                             minlength=ncell * K).reshape(ncell, K)
        else:
            self.aug_trans = np.bincount(aug.pseudo_z * K + aug.pseudo_z,
                                         minlength=K * K).reshape(K, K).astype(float)

    # ----------------------------------------------------------- sweep parts
    def _stage(self, name, fn, sweep):
        try:
            return fn()
        except NumericalError as exc:
            raise NumericalError(f"sweep {sweep}, step '{name}': {exc}") from exc

    def update_emissions(self):
        stats = SuffStats.from_data(self.y, self.z[1:], self.K)
        if self.aug_stats is not None:
            stats = stats + self.aug_stats
        self.params = sample_from_stats(stats, self.hyper, self.rng, self.config.literal_mu_cov)

    def update_imputations(self):
        self.y = impute_missing(self.y, self.mask, self.z, self.params, self.rng)

    def update_transitions(self):
        K = self.K
        z = self.z
        if self.model == "nhmm":
            U = self.patterns.shape[0]
            ncell = K * U
            rows = np.flatnonzero(self.has_prev)
            cell = z[rows] * U + self.xidx[rows]
            counts = np.bincount(cell, minlength=ncell)
            succ = np.bincount(cell * K + z[rows + 1], minlength=ncell * K).reshape(ncell, K)
            if self.aug_cell_counts is not None:
                counts = counts + self.aug_cell_counts
                succ = succ + self.aug_cell_succ
            self.zeta = sample_zeta(self.zeta, self.W_cells, succ, self.config.prior_mean,
                                    self.config.prior_var, self.rng, counts=counts)
        else:
            counts = transition_counts(z, K, self.has_prev) + self.aug_trans
            self.Q = dirichlet_rows(counts, self.config.hmm_alpha, self.rng)

    def log_q(self) -> np.ndarray:
        if self.model == "nhmm":
            return log_transition_tensor(self.zeta, self.patterns)
        with np.errstate(divide="ignore"):
            return np.log(self.Q)[None]

    def update_states(self):
        logf = loglik_matrix(self.y, self.params)
        if self.config.marginalize_missing:
            # masked rows contribute no emission factor: y_m is integrated out
            logf[self.masked_rows] = 0.0
        self.z = sample_states(self.z, logf, self.log_q(), self.xidx, self.seg_start,
                               self.pi, self.rng)

    def sweep(self, index: int):
        self._stage("emissions", self.update_emissions, index)
        if self.config.marginalize_missing:
            # block update of (z, y_m): z given observed rows, then y_m given z
            self._stage("transitions", self.update_transitions, index)
            self._stage("states", self.update_states, index)
            self._stage("impute", self.update_imputations, index)
        else:
            self._stage("impute", self.update_imputations, index)
            self._stage("transitions", self.update_transitions, index)
            self._stage("states", self.update_states, index)


def _run(series: PatientSeries, config: ModelConfig, model: str, design, rng,
         augment: bool, progress: Optional[Callable[[int, int, float], None]]) -> PosteriorDraws:
    checked = validate_series(series)
    if isinstance(checked, list):
        raise ConfigError("invalid series: " + "; ".join(checked))
    chain = _Chain(series, config, model, design, rng)
    total = config.n_init + config.n_burn + config.n_iter
    S = config.n_iter
    K, d = config.K, series.d
    M = chain.masked_rows.size
    out_mu = np.empty((S, K, d))
    out_sigma = np.empty((S, K, d, d))
    out_z = np.empty((S, series.T + 1), dtype=np.int8 if K < 127 else np.int32)
    out_imp = np.empty((S, M, d))
    out_zeta = np.empty((S,) + chain.zeta.shape) if model == "nhmm" else None
    out_Q = np.empty((S, K, K)) if model == "hmm" else None

    explore_mu = np.zeros((K, d))
    explore_sigma = np.zeros((K, d, d))
    n_explore = 0
    start = time.perf_counter()
    it = 0
    for it in range(1, total + 1):
        chain.sweep(it)
        if it <= config.n_init and it > config.n_init // 2:
            explore_mu += chain.params.mu
            explore_sigma += chain.params.sigma
            n_explore += 1
        if it == config.n_init and augment and config.aug_strength > 0:
            psi_hat = EmissionParams(explore_mu / n_explore, explore_sigma / n_explore)
            chain.attach_augmentation(build_augmentation(
                psi_hat, config.aug_strength, K, config.day_len, rng))
        s = it - config.n_init - config.n_burn - 1
        if s >= 0:
            out_mu[s] = chain.params.mu
            out_sigma[s] = chain.params.sigma
            out_z[s] = chain.z
            out_imp[s] = chain.y[chain.masked_rows]
            if out_zeta is not None:
                out_zeta[s] = chain.zeta
            if out_Q is not None:
                out_Q[s] = chain.Q
        if progress is not None and (it % 500 == 0 or it == total):
            progress(it, total, time.perf_counter() - start)
    if augment and config.aug_strength > 0 and config.n_init == 0:
        log.warning("aug_strength > 0 with n_init = 0: no exploratory phase, augmentation skipped")

    meta = {
        "model": model,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "T": series.T,
        "d": d,
        "K": K,
        "first_saved_iteration": config.n_init + config.n_burn + 1,
        "aug_rows": 0 if chain.aug is None else chain.aug.size,
        "channels": list(series.channels),
    }
    if model == "nhmm":
        meta["baseline_hour"] = chain.design.baseline_hour
    draws = PosteriorDraws(
        model=model,
        iterations=np.arange(config.n_init + config.n_burn + 1, total + 1),
        mu=out_mu, sigma=out_sigma, z=out_z, imputed=out_imp,
        masked_rows=chain.masked_rows, zeta=out_zeta, Q=out_Q, meta=meta,
    )
    if config.relabel and S > 0:
        perm = order_states(EmissionParams(out_mu.mean(axis=0), out_sigma.mean(axis=0)))
        if not np.array_equal(perm, np.arange(K)):
            draws = relabel_draws(draws, perm)
    return draws


def run_nhmm(series: PatientSeries, design: DesignMatrix, config: ModelConfig,
             rng: np.random.Generator, progress=None) -> PosteriorDraws:
    """Covariate-dependent HMM fit with optional pseudo-day augmentation."""
    return _run(series, config, "nhmm", design, rng, augment=True, progress=progress)


def run_hmm(series: PatientSeries, config: ModelConfig, rng: np.random.Generator,
            augment: bool = False, progress=None) -> PosteriorDraws:
    """Homogeneous-HMM baseline with Dirichlet transition rows."""
    return _run(series, config, "hmm", None, rng, augment=augment, progress=progress)


def fit(series: PatientSeries, config: ModelConfig, model: str = "nhmm",
        rng: Optional[np.random.Generator] = None, progress=None) -> PosteriorDraws:
    """Convenience entry: picks the baseline hour when unset and builds the design."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if model == "hmm":
        return run_hmm(series, config, rng, progress=progress)
    if model != "nhmm":
        raise ConfigError(f"unknown model {model!r}")
    base = config.baseline_hour
    if base is None:
        base = choose_baseline_hour(series, config.K, np.random.default_rng([config.seed, 7]))
    design = build_design_matrix(series.timestamps, base)
    return run_nhmm(series, design, config, rng, progress=progress)
