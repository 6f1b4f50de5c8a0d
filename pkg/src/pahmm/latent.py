"""Single-site Gibbs updates of the latent path and imputation of masked rows.

Paths are stored 0-based with length T + 1: ``z[0]`` is the initial state and
``z[t + 1]`` labels data row t.
"""
from __future__ import annotations

import math

import numba
import numpy as np
from scipy.cluster.vq import kmeans2

from .core import NumericalError
from .emissions import EmissionParams, loglik_matrix


@numba.njit(cache=True)
def _draw_log_categorical(lw, rng):
    m = -np.inf
    for k in range(lw.shape[0]):
        if lw[k] > m:
            m = lw[k]
    if not math.isfinite(m):
        return -1
    total = 0.0
    w = np.empty(lw.shape[0])
    for k in range(lw.shape[0]):
        w[k] = math.exp(lw[k] - m)
        total += w[k]
    u = rng.random() * total
    acc = 0.0
    for k in range(lw.shape[0]):
        acc += w[k]
        if u < acc:
            return k
    return lw.shape[0] - 1


@numba.njit(cache=True)
def _sweep(z, logf, logQ, xidx, seg_start, logpi, rng):
    T, K = logf.shape
    lw = np.empty(K)
    # initial state: prior times the first transition
    for k in range(K):
        lw[k] = logpi[k] + (logQ[xidx[0], k, z[1]] if T > 0 else 0.0)
    k0 = _draw_log_categorical(lw, rng)
    if k0 < 0:
        return 0
    z[0] = k0
    for t in range(T):
        for k in range(K):
            if t == 0:
                left = logQ[xidx[0], z[0], k]
            elif seg_start[t]:
                left = logpi[k]
            else:
                left = logQ[xidx[t], z[t], k]
            right = 0.0
            if t + 1 < T and not seg_start[t + 1]:
                right = logQ[xidx[t + 1], k, z[t + 2]]
            lw[k] = left + logf[t, k] + right
        k = _draw_log_categorical(lw, rng)
        if k < 0:
            return t + 1
        z[t + 1] = k
    return -1


def sample_states(z, logf, logQ, xidx, seg_start, pi, rng) -> np.ndarray:
    """One left-to-right single-site sweep; returns the updated path.

    ``logQ[u, i, j]`` is the log probability of i -> j under covariate pattern
    u, and ``xidx[t]`` is the pattern of the transition into row t. Rows
    flagged in ``seg_start`` restart from ``pi``; the row before a restart has
    no right-hand transition factor.
    """
    z = np.array(z, dtype=np.int64)
    logf = np.ascontiguousarray(logf, dtype=float)
    logQ = np.ascontiguousarray(logQ, dtype=float)
    xidx = np.ascontiguousarray(xidx, dtype=np.int64)
    seg_start = np.ascontiguousarray(seg_start, dtype=np.bool_)
    with np.errstate(divide="ignore"):
        logpi = np.log(np.asarray(pi, dtype=float))
    bad = _sweep(z, logf, logQ, xidx, seg_start, logpi, rng)
    if bad >= 0:
        raise NumericalError(f"state weights degenerate at path index {bad}")
    return z


def state_conditional(t, z, logf, logQ, xidx, seg_start, pi) -> np.ndarray:
    """Normalized single-site conditional of path index ``t`` (t >= 1)."""
    T, K = logf.shape
    r = t - 1
    logpi = np.log(np.asarray(pi, dtype=float))
    if r == 0:
        left = logQ[xidx[0], z[0], :]
    elif seg_start[r]:
        left = logpi
    else:
        left = logQ[xidx[r], z[r], :]
    right = np.zeros(K)
    if r + 1 < T and not seg_start[r + 1]:
        right = logQ[xidx[r + 1], :, z[r + 2]]
    lw = left + logf[r] + right
    w = np.exp(lw - lw.max())
    return w / w.sum()


def impute_missing(y, mask, z, params: EmissionParams, rng) -> np.ndarray:
    """Replace every masked row by a fresh draw from its state's emission law."""
    y = np.array(y, dtype=float)
    rows = np.flatnonzero(np.asarray(mask, dtype=bool))
    if rows.size == 0:
        return y
    states = np.asarray(z, dtype=np.int64)[rows + 1]
    chol = np.linalg.cholesky(params.sigma)
    eps = rng.standard_normal((rows.size, params.d))
    y[rows] = params.mu[states] + np.einsum("nij,nj->ni", chol[states], eps)
    return y


def init_states(y, mask, K: int, rng, steps_channel: int = 1) -> np.ndarray:
    """k-means start: clusters ordered by step mean, masked rows carry labels forward."""
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    T = y.shape[0]
    obs = np.flatnonzero(~mask)
    labels_obs = None
    if obs.size >= K and np.unique(y[obs], axis=0).shape[0] >= K:
        data = y[obs]
        scale = data.std(axis=0)
        scale[scale == 0] = 1.0
        std = (data - data.mean(axis=0)) / scale
        centroids, labels = kmeans2(std, K, minit="++", seed=rng)
        if np.unique(labels).size == K:
            ch = min(steps_channel, y.shape[1] - 1)
            means = np.array([data[labels == k, ch].mean() for k in range(K)])
            rank = np.empty(K, dtype=np.int64)
            rank[np.argsort(means, kind="stable")] = np.arange(K)
            labels_obs = rank[labels]
    z = np.empty(T + 1, dtype=np.int64)
    if labels_obs is None:
        z[:] = rng.integers(0, K, size=T + 1)
        return z
    rows = np.full(T, -1, dtype=np.int64)
    rows[obs] = labels_obs
    # forward fill, then back fill the masked prefix
    idx = np.where(rows >= 0, np.arange(T), -1)
    idx = np.maximum.accumulate(idx)
    filled = np.where(idx >= 0, rows[np.maximum(idx, 0)], rows[obs[0]])
    z[1:] = filled
    z[0] = z[1]
    return z


def log_emissions(y, params: EmissionParams) -> np.ndarray:
    return loglik_matrix(np.asarray(y, dtype=float), params)
