import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pahmm.pg import pg1_mean, pg1_var, sample_pg1, sample_pg_sum


def log_laplace(t, c):
    """log E[exp(-t w)] for w ~ PG(1, c): cosh(c/2) / cosh(sqrt(c^2/4 + t/2))."""
    r = np.sqrt(complex(c * c / 4.0 + t / 2.0))
    return np.log(np.cosh(c / 2.0)) - np.log(np.cosh(r).real)


def oracle_moments(c, h=1e-3):
    """Mean and variance by central differences of the log-Laplace transform."""
    f0, fp, fm = log_laplace(0.0, c), log_laplace(h, c), log_laplace(-h, c)
    mean = -(fp - fm) / (2 * h)
    var = (fp - 2 * f0 + fm) / (h * h)
    return mean, var


GRID = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0]


@pytest.mark.parametrize("c", GRID)
def test_closed_forms_match_oracle(c):
    m, v = oracle_moments(c)
    assert pg1_mean(c) == pytest.approx(m, rel=1e-5)
    assert pg1_var(c) == pytest.approx(v, rel=1e-4)


def test_mean_examples():
    assert pg1_mean(0.0) == 0.25
    assert pg1_mean(2.0) == pytest.approx(np.tanh(1.0) / 4)
    assert pg1_mean(2.0) == pytest.approx(0.1904, abs=1e-4)
    assert pg1_mean(-2.0) == pg1_mean(2.0)


@given(st.floats(-50, 50, allow_nan=False))
def test_mean_even_and_bounded(c):
    m = pg1_mean(c)
    assert m == pg1_mean(-c)
    assert 0 < m <= 0.25


@pytest.mark.parametrize("c", GRID)
def test_monte_carlo_moments(c):
    rng = np.random.default_rng(101 + int(10 * c))
    n = 100_000
    w = sample_pg1(np.full(n, c), rng)
    m_true, v_true = oracle_moments(c)
    se_mean = w.std(ddof=1) / np.sqrt(n)
    assert abs(w.mean() - m_true) < 3 * se_mean
    d = w - w.mean()
    se_var = np.sqrt((np.mean(d ** 4) - np.mean(d ** 2) ** 2) / n)
    assert abs(w.var(ddof=1) - v_true) < 3 * se_var


@pytest.mark.parametrize("c,target", [(0.0, 0.25), (3.0, np.tanh(1.5) / 6)])
def test_example_means(c, target):
    w = sample_pg1(np.full(100_000, c), np.random.default_rng(5))
    assert abs(w.mean() - target) < 0.005


@pytest.mark.parametrize("t", [0.5, 4.0])
def test_laplace_transform_distribution_check(t):
    c = 1.5
    w = sample_pg1(np.full(100_000, c), np.random.default_rng(17))
    e = np.exp(-t * w)
    assert abs(e.mean() - np.exp(log_laplace(t, c))) < 3 * e.std() / np.sqrt(e.size)


def test_symmetric_in_sign():
    rng = np.random.default_rng(3)
    a = sample_pg1(np.full(20_000, 2.5), rng)
    b = sample_pg1(np.full(20_000, -2.5), rng)
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_positive_and_sane_at_zero():
    w = sample_pg1(np.zeros(1_000_000), np.random.default_rng(11))
    assert np.all(w > 0) and np.all(np.isfinite(w))
    assert w.max() < 1e3


def test_scalar_and_reproducible():
    a = sample_pg1(1.0, np.random.default_rng(0))
    b = sample_pg1(1.0, np.random.default_rng(0))
    assert isinstance(a, float) and a == b


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        sample_pg1(np.inf, np.random.default_rng(0))


@settings(max_examples=10, deadline=None)
@given(n=st.integers(1, 6), c=st.floats(-4, 4))
def test_sum_of_draws_moments(n, c):
    rng = np.random.default_rng(n)
    w = sample_pg_sum(np.full(20_000, n), np.full(20_000, c), rng)
    se = w.std() / np.sqrt(w.size)
    assert abs(w.mean() - n * pg1_mean(c)) < 4 * se


def test_sum_with_zero_count_is_zero():
    w = sample_pg_sum(np.array([0, 3]), np.array([1.0, 1.0]), np.random.default_rng(0))
    assert w[0] == 0.0 and w[1] > 0
