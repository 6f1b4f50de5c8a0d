"""Covariate-dependent transition probabilities and their Gibbs updates.

The coefficient matrix ``zeta`` has shape (K, K + p). Row j holds the
intercepts for entering state j from each origin state (columns 0..K-1)
followed by the covariate slopes for entering j (columns K..). Row K-1 is the
reference category and stays at zero.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import NumericalError
from .pg import sample_pg_sum


def check_zeta(zeta: np.ndarray) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim != 2 or zeta.shape[1] < zeta.shape[0]:
        raise ValueError(f"zeta must be K x (K + p), got shape {zeta.shape}")
    if not np.all(np.isfinite(zeta)):
        raise ValueError("zeta contains non-finite entries")
    return zeta


def transition_logits(zeta: np.ndarray, prev_state: int, x_row: np.ndarray) -> np.ndarray:
    K = zeta.shape[0]
    return zeta[:, prev_state] + zeta[:, K:] @ np.asarray(x_row, dtype=float)


def transition_probs(zeta: np.ndarray, prev_state: int, x_row) -> np.ndarray:
    """Probabilities of moving from ``prev_state`` (0-based) to each state."""
    zeta = check_zeta(zeta)
    K = zeta.shape[0]
    if not 0 <= prev_state < K:
        raise ValueError(f"prev_state must be in [0, {K})")
    eta = transition_logits(zeta, prev_state, x_row)
    eta = eta - eta.max()
    w = np.exp(eta)
    return w / w.sum()


def log_transition_tensor(zeta: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    """log Q for each covariate pattern: shape (U, K, K) indexed [u, prev, next]."""
    zeta = check_zeta(zeta)
    K = zeta.shape[0]
    slope = np.asarray(patterns, dtype=float) @ zeta[:, K:].T  # (U, K) over next
    logits = zeta[:, :K].T[None, :, :] + slope[:, None, :]
    return logits - logsumexp(logits, axis=2, keepdims=True)


def transition_tensor(zeta: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    return np.exp(log_transition_tensor(zeta, patterns))


def extended_rows(prev_states: np.ndarray, X: np.ndarray, K: int) -> np.ndarray:
    """W_t = (one-hot previous state, covariate row)."""
    prev_states = np.asarray(prev_states, dtype=np.int64)
    Z = np.zeros((prev_states.size, K))
    Z[np.arange(prev_states.size), prev_states] = 1.0
    return np.hstack([Z, np.asarray(X, dtype=float).reshape(prev_states.size, -1)])


def _row_offsets(W: np.ndarray, zeta: np.ndarray, j: int) -> np.ndarray:
    """C_tj = log sum_{k != j} exp(W_t zeta_k)."""
    eta = W @ zeta.T
    others = np.delete(eta, j, axis=1)
    return logsumexp(others, axis=1)


def sample_zeta_row(
    j: int,
    W: np.ndarray,
    successes: np.ndarray,
    zeta: np.ndarray,
    prior_mean,
    prior_var: float,
    rng: np.random.Generator,
    counts: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Polya-Gamma Gibbs draw of coefficient row ``j`` given the other rows.

    Each row of ``W`` is an extended design row. With ``counts`` omitted every
    row is one transition and ``successes`` is the 0/1 indicator that it
    entered state j. With ``counts`` given, row r stands for ``counts[r]``
    transitions sharing that design row, ``successes[r]`` of which entered j;
    the aggregate PG precision of the group is a sum of ``counts[r]`` PG(1)
    draws, so the result has the same law as the ungrouped update.
    """
    zeta = check_zeta(zeta)
    K, dim = zeta.shape
    if not 0 <= j < K - 1:
        raise ValueError(f"row {j} is not free (reference row is {K - 1})")
    W = np.asarray(W, dtype=float).reshape(-1, dim)
    s = np.asarray(successes, dtype=float).ravel()
    n = np.ones(W.shape[0], dtype=np.int64) if counts is None else np.asarray(counts, np.int64)
    prior_mean = np.broadcast_to(np.asarray(prior_mean, dtype=float), (dim,))
    prior_prec = 1.0 / prior_var

    keep = n > 0
    W, s, n = W[keep], s[keep], n[keep]
    if W.shape[0]:
        C = _row_offsets(W, zeta, j)
        psi = W @ zeta[j] - C
        omega = sample_pg_sum(n, psi, rng)
        prec = (W.T * omega) @ W
        lin = W.T @ (s - 0.5 * n + omega * C)
    else:
        prec = np.zeros((dim, dim))
        lin = np.zeros(dim)
    prec[np.diag_indices(dim)] += prior_prec
    lin = lin + prior_prec * prior_mean
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        jitter = 1e-8 * np.trace(prec) / dim
        try:
            L = np.linalg.cholesky(prec + jitter * np.eye(dim))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"zeta row {j}: posterior precision not positive definite "
                f"(min eig {np.linalg.eigvalsh(prec).min():.3g})"
            ) from exc
    mean = np.linalg.solve(L.T, np.linalg.solve(L, lin))
    noise = np.linalg.solve(L.T, rng.standard_normal(dim))
    return mean + noise


def sample_zeta(zeta, W, outcomes, prior_mean, prior_var, rng, counts=None):
    """One sweep over the free rows. ``outcomes`` is (rows, K) success counts."""
    zeta = np.array(zeta, dtype=float)
    K = zeta.shape[0]
    for j in range(K - 1):
        zeta[j] = sample_zeta_row(j, W, outcomes[:, j], zeta, prior_mean, prior_var, rng, counts)
    return zeta


def transition_counts(z: np.ndarray, K: int, has_prev: Optional[np.ndarray] = None) -> np.ndarray:
    """n[i, j] = number of i -> j moves in a 0-based state path.

    ``has_prev[t]`` (length len(z) - 1) says whether step t -> t+1 is a real
    transition; segment restarts are excluded.
    """
    z = np.asarray(z, dtype=np.int64)
    a, b = z[:-1], z[1:]
    if has_prev is not None:
        a, b = a[has_prev], b[has_prev]
    return np.bincount(a * K + b, minlength=K * K).reshape(K, K).astype(float)


def dirichlet_rows(counts: np.ndarray, alpha, rng: np.random.Generator) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    K = counts.shape[0]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (K, K))
    if np.any(alpha <= 0):
        raise ValueError("Dirichlet concentration must be positive")
    g = rng.standard_gamma(alpha + counts)
    return g / g.sum(axis=1, keepdims=True)


def sample_Q_homogeneous(z, K: int, alpha, rng: np.random.Generator, has_prev=None) -> np.ndarray:
    """Conjugate Dirichlet draw of a constant transition matrix from a 0-based path."""
    return dirichlet_rows(transition_counts(z, K, has_prev), alpha, rng)
