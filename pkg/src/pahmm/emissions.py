"""Gaussian emissions with a conjugate normal-inverse-Wishart update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import invwishart

from .core import NiwHyper, NumericalError

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class EmissionParams:
    mu: np.ndarray  # (K, d)
    sigma: np.ndarray  # (K, d, d)

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    def permuted(self, perm) -> "EmissionParams":
        perm = np.asarray(perm)
        return EmissionParams(self.mu[perm].copy(), self.sigma[perm].copy())


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance matrix is not symmetric positive definite") from exc


def emission_loglik(y, mu, sigma) -> float | np.ndarray:
    """Multivariate normal log density; ``y`` may be one row or a (n, d) block."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    L = _cholesky(np.asarray(sigma, dtype=float))
    d = mu.size
    resid = np.atleast_2d(y) - mu
    sol = np.linalg.solve(L, resid.T)
    quad = np.sum(sol**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * (d * _LOG_2PI + logdet + quad)
    return float(out[0]) if y.ndim == 1 else out


def loglik_matrix(y: np.ndarray, params: EmissionParams) -> np.ndarray:
    """(T, K) table of log f_j(y_t)."""
    T = y.shape[0]
    out = np.empty((T, params.K))
    for j in range(params.K):
        out[:, j] = emission_loglik(y, params.mu[j], params.sigma[j]) if T else 0.0
    return out


@dataclass
class SuffStats:
    """Per-state count, sum and sum of outer products."""

    n: np.ndarray  # (K,)
    s1: np.ndarray  # (K, d)
    s2: np.ndarray  # (K, d, d)

    @classmethod
    def from_data(cls, y: np.ndarray, z: np.ndarray, K: int) -> "SuffStats":
        onehot = np.zeros((y.shape[0], K))
        onehot[np.arange(y.shape[0]), z] = 1.0
        n = onehot.sum(axis=0)
        s1 = onehot.T @ y
        s2 = np.einsum("tk,ti,tj->kij", onehot, y, y, optimize=True)
        return cls(n, s1, s2)

    def __add__(self, other: "SuffStats") -> "SuffStats":
        return SuffStats(self.n + other.n, self.s1 + other.s1, self.s2 + other.s2)


def niw_posterior(n: float, s1: np.ndarray, s2: np.ndarray, hyper: NiwHyper):
    """Standard conjugate update; returns (mu_n, kappa_n, nu_n, lambda_n)."""
    mu0 = np.asarray(hyper.mu0, dtype=float)
    kappa_n = hyper.kappa0 + n
    nu_n = hyper.nu0 + n
    if n > 0:
        ybar = s1 / n
        scatter = s2 - n * np.outer(ybar, ybar)
        dev = ybar - mu0
        mu_n = (hyper.kappa0 * mu0 + s1) / kappa_n
        lam_n = hyper.lambda0 + scatter + (hyper.kappa0 * n / kappa_n) * np.outer(dev, dev)
    else:
        mu_n = mu0.copy()
        lam_n = np.array(hyper.lambda0, dtype=float)
    lam_n = 0.5 * (lam_n + lam_n.T)
    return mu_n, kappa_n, nu_n, lam_n


def _draw_invwishart(nu, lam, rng):
    try:
        np.linalg.cholesky(lam)
    except np.linalg.LinAlgError:
        lam = lam + 1e-8 * np.trace(lam) / lam.shape[0] * np.eye(lam.shape[0])
        try:
            np.linalg.cholesky(lam)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"inverse-Wishart scale not positive definite after jitter "
                f"(eigs {np.linalg.eigvalsh(lam)})"
            ) from exc
    draw = invwishart.rvs(df=nu, scale=lam, random_state=rng)
    draw = np.atleast_2d(draw)
    return 0.5 * (draw + draw.T)


def sample_from_stats(
    stats: SuffStats, hyper: NiwHyper, rng: np.random.Generator, literal_mu_cov: bool = False
) -> EmissionParams:
    """Draw (Sigma_j, mu_j) for every state from the NIW full conditional.

    ``literal_mu_cov`` draws mu_j with covariance Sigma_j instead of
    Sigma_j / kappa_n.
    """
    K, d = stats.s1.shape
    mu = np.empty((K, d))
    sigma = np.empty((K, d, d))
    for j in range(K):
        mu_n, kappa_n, nu_n, lam_n = niw_posterior(stats.n[j], stats.s1[j], stats.s2[j], hyper)
        sigma[j] = _draw_invwishart(nu_n, lam_n, rng)
        cov = sigma[j] if literal_mu_cov else sigma[j] / kappa_n
        mu[j] = mu_n + _cholesky(cov) @ rng.standard_normal(d)
    return EmissionParams(mu, sigma)


def sample_emission_params(y, z, K: int, hyper: NiwHyper, rng, literal_mu_cov=False):
    """NIW full-conditional draw from a completed data matrix and 0-based labels."""
    stats = SuffStats.from_data(np.asarray(y, float), np.asarray(z, np.int64), K)
    return sample_from_stats(stats, hyper, rng, literal_mu_cov)


def order_states(params: EmissionParams, steps_channel: int = 1) -> np.ndarray:
    """Permutation putting states in ascending step mean (ties: heart rate, index).

    ``perm[new] = old``; state 0 becomes the most sedentary.
    """
    mu = np.asarray(params.mu)
    ch = min(steps_channel, mu.shape[1] - 1)
    keys = [np.arange(mu.shape[0])]
    if mu.shape[1] > 1:
        other = 0 if ch != 0 else 1
        keys.append(mu[:, other])
    keys.append(mu[:, ch])
    return np.lexsort(keys)

