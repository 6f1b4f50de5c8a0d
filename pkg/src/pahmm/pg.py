"""Exact Polya-Gamma PG(1, c) sampling.

Alternating-series rejection sampler for J*(1, z) with z = |c| / 2, returned
as PG(1, c) = J*(1, |c|/2) / 4. The density of PG(1, c) depends on c only
through c**2, so every routine works with |c|.

The jitted kernels take a ``numpy.random.Generator`` and advance its state in
place, which keeps whole Gibbs runs reproducible from a single seed.
"""
from __future__ import annotations

import math

import numba
import numpy as np

_TRUNC = 0.64
_TRUNC_RECIP = 1.0 / _TRUNC
_PI = math.pi
_LOG_HALF_PI = math.log(0.5 * math.pi)


@numba.njit(cache=True)
def _log_ndtr(x):
    if x > -30.0:
        return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))
    # asymptotic tail, erfc underflows here
    return -0.5 * x * x - math.log(-x) - 0.5 * math.log(2.0 * math.pi)


@numba.njit(cache=True)
def _series_coef(n, x):
    k = (n + 0.5) * _PI
    if x > _TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x > 0.0:
        return math.exp(-1.5 * (_LOG_HALF_PI + math.log(x)) + math.log(k)
                        - 2.0 * (n + 0.5) * (n + 0.5) / x)
    return 0.0


@numba.njit(cache=True)
def _mass_texpon(z):
    t = _TRUNC
    fz = 0.125 * _PI * _PI + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_ndtr(b)
    xa = x0 + z + _log_ndtr(a)
    qdivp = 4.0 / _PI * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@numba.njit(cache=True)
def _rtigauss(z, rng):
    """Inverse Gaussian IG(1/z, 1) truncated to (0, TRUNC)."""
    t = _TRUNC
    x = t + 1.0
    if _TRUNC_RECIP > z:
        alpha = 0.0
        while rng.random() > alpha:
            e1 = rng.standard_exponential()
            e2 = rng.standard_exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = rng.standard_normal()
            y *= y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@numba.njit(cache=True)
def _draw_pg1(c, rng):
    z = 0.5 * abs(c)
    fz = 0.125 * _PI * _PI + 0.5 * z * z
    p_exp = _mass_texpon(z)
    while True:
        if rng.random() < p_exp:
            x = _TRUNC + rng.standard_exponential() / fz
        else:
            x = _rtigauss(z, rng)
        s = _series_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _series_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _series_coef(n, x)
                if y > s:
                    break


@numba.njit(cache=True)
def _draw_pg1_array(c, rng):
    out = np.empty(c.shape[0])
    for i in range(c.shape[0]):
        out[i] = _draw_pg1(c[i], rng)
    return out


@numba.njit(cache=True)
def _draw_pg_sum(counts, c, rng):
    # sum of counts[i] independent PG(1, c[i]) draws, i.e. PG(counts[i], c[i])
    out = np.zeros(c.shape[0])
    for i in range(c.shape[0]):
        acc = 0.0
        for _ in range(counts[i]):
            acc += _draw_pg1(c[i], rng)
        out[i] = acc
    return out


def sample_pg1(c, rng: np.random.Generator):
    """Draw from PG(1, c). Accepts a scalar or an array of tilts."""
    arr = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("Polya-Gamma tilt must be finite")
    if arr.ndim == 0:
        return float(_draw_pg1(float(arr), rng))
    return _draw_pg1_array(arr.ravel(), rng).reshape(arr.shape)


def sample_pg_sum(counts, c, rng: np.random.Generator) -> np.ndarray:
    """Sum of ``counts[i]`` independent PG(1, c[i]) draws for each i.

    Used to draw the aggregate precision of rows sharing one design pattern.
    """
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    c = np.ascontiguousarray(c, dtype=float)
    if counts.shape != c.shape:
        raise ValueError("counts and c must have the same shape")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    return _draw_pg_sum(counts, c, rng)


def pg1_mean(c) -> float | np.ndarray:
    """E[PG(1, c)] = tanh(c/2) / (2c), with limit 1/4 at c = 0."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    out = np.where(small, 0.25 - c**2 / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))
    return float(out) if out.ndim == 0 else out


def pg1_var(c) -> float | np.ndarray:
    """Var[PG(1, c)] from the closed form (limit 1/24 at c = 0)."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-3
    safe = np.where(small, 1.0, c)
    closed = (np.sinh(safe) - safe) / (4.0 * safe**3 * np.cosh(safe / 2.0) ** 2)
    out = np.where(small, 1.0 / 24.0 - c**2 / 60.0, closed)
    return float(out) if out.ndim == 0 else out
