import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import digamma, polygamma

from hgtsme.errors import DomainError, NumericalError
from hgtsme.stochastics import (RngStream, cholesky_precision, draw_beta, draw_gamma, draw_inverse_gamma,
                                draw_log_gamma, draw_logit_beta, draw_mvn_precision, draw_normal, draw_poisson)

from conftest import ks_distance

N6 = 10**6


# -- streams ----------------------------------------------------------------

def test_equal_seed_equal_sequence():
    a = RngStream(11, (3, 4)).generator.standard_normal(50)
    b = RngStream(11, (3, 4)).generator.standard_normal(50)
    assert np.array_equal(a, b)


def test_distinct_stream_ids_differ():
    a = RngStream(11, (0,)).generator.standard_normal(50)
    b = RngStream(11, (1,)).generator.standard_normal(50)
    assert not np.allclose(a, b)
    assert abs(np.corrcoef(RngStream(5, 0).generator.standard_normal(20000),
                           RngStream(5, 1).generator.standard_normal(20000))[0, 1]) < 0.03


def test_spawn_matches_explicit_stream():
    child = RngStream(9).spawn(2)
    assert child.stream_id == (2,)
    assert np.array_equal(child.generator.random(5), RngStream(9, (2,)).generator.random(5))


# -- normal -------------------------------------------------------------------

def test_normal_degenerate(rng):
    assert draw_normal(rng, 5.0, 0.0) == 5.0


def test_normal_moments(rng):
    x = draw_normal(rng, 0.0, 1.0, size=N6)
    assert abs(x.mean()) < 0.004
    y = draw_normal(rng, 0.0, 4.0, size=N6)
    assert abs(y.var() - 4.0) < 0.02


def test_normal_negative_variance(rng):
    with pytest.raises(DomainError):
        draw_normal(rng, 0.0, -1.0)


# -- gamma family -------------------------------------------------------------

def test_gamma_moments(rng):
    x = draw_gamma(rng, 4.0, 2.0, size=N6)
    assert abs(x.mean() - 2.0) < 0.01
    assert abs(x.var() - 1.0) < 0.02


def test_gamma_shape_one_is_exponential(rng):
    lam = 3.0
    x = draw_gamma(rng, 1.0, lam, size=10**5)
    assert ks_distance(x, stats.expon(scale=1 / lam).cdf) < 0.005


@pytest.mark.parametrize("shape,rate", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
def test_gamma_bad_parameters(rng, shape, rate):
    with pytest.raises(DomainError):
        draw_gamma(rng, shape, rate)


def test_log_gamma_small_shape_is_finite_and_correct(rng):
    # E[log G] = digamma(a) - log(rate) holds for tiny shapes too
    a, rate = 0.05, 2.0
    x = draw_log_gamma(rng, a, rate, size=2 * 10**5)
    assert np.all(np.isfinite(x))
    assert abs(x.mean() - (digamma(a) - np.log(rate))) < 4 * np.sqrt(polygamma(1, a) / x.size)


def test_beta_moments_and_support(rng):
    x = draw_beta(rng, 2.0, 2.0, size=N6)
    assert abs(x.mean() - 0.5) < 0.002
    y = draw_beta(rng, 1.0, 3.0, size=N6)
    assert abs(y.mean() - 0.25) < 0.002
    assert np.all((x > 0) & (x < 1)) and np.all((y > 0) & (y < 1))


def test_beta_bad_parameters(rng):
    with pytest.raises(DomainError):
        draw_beta(rng, 0.0, 1.0)


def test_logit_beta_matches_beta(rng):
    h = draw_logit_beta(rng, 4.0, 8.0, size=10**5)
    w = 1 / (1 + np.exp(-h))
    assert ks_distance(w, stats.beta(4, 8).cdf) < 0.006


def test_inverse_gamma_moments(rng):
    x = draw_inverse_gamma(rng, 3.0, 2.0, size=N6)
    assert abs(x.mean() - 1.0) < 0.01
    assert np.all(x > 0)


def test_inverse_gamma_reciprocal_is_gamma(rng):
    a, b = 2.5, 1.5
    x = draw_inverse_gamma(rng, a, b, size=10**5)
    assert ks_distance(1 / x, stats.gamma(a, scale=1 / b).cdf) < 0.005


def test_inverse_gamma_bad_parameters(rng):
    with pytest.raises(DomainError):
        draw_inverse_gamma(rng, 1.0, 0.0)


# -- poisson ----------------------------------------------------------------

def test_poisson(rng):
    assert draw_poisson(rng, 0.0) == 0
    x = draw_poisson(rng, 7.3, size=N6)
    assert abs(x.mean() - 7.3) < 0.01
    assert abs(x.var() - 7.3) < 0.03


@pytest.mark.parametrize("mean", [-1.0, np.inf, np.nan])
def test_poisson_bad_mean(rng, mean):
    with pytest.raises(DomainError):
        draw_poisson(rng, mean)


# -- multivariate normal in precision form ------------------------------------

def test_mvn_identity(rng):
    draws = np.array([draw_mvn_precision(rng, np.array([3.0, -1.0]), np.eye(2)) for _ in range(20000)])
    assert np.allclose(draws.mean(0), [3, -1], atol=4 / np.sqrt(20000))
    assert np.allclose(np.cov(draws.T), np.eye(2), atol=0.05)


def test_mvn_diagonal(rng):
    Q = np.diag([2.0, 4.0])
    draws = np.array([draw_mvn_precision(rng, np.array([2.0, 4.0]), Q) for _ in range(10**5)])
    assert np.allclose(draws.mean(0), [1, 1], atol=0.01)
    assert np.allclose(draws.var(0), [0.5, 0.25], rtol=0.02)


def test_mvn_tridiagonal_mean(rng):
    Q = np.array([[2.0, -1.0], [-1.0, 2.0]])
    draws = np.array([draw_mvn_precision(rng, np.array([1.0, 1.0]), Q) for _ in range(20000)])
    assert np.allclose(draws.mean(0), [1, 1], atol=4 * np.sqrt(np.diag(np.linalg.inv(Q)).max() / 20000))


@pytest.mark.parametrize("dim", [2, 5])
def test_mvn_covariance_within_standard_errors(dim):
    r = np.random.default_rng(dim)
    A = r.standard_normal((dim, dim))
    Q = A @ A.T + dim * np.eye(dim)
    Sigma = np.linalg.inv(Q)
    rng = RngStream(dim)
    n = 10**5
    draws = np.array([draw_mvn_precision(rng, np.zeros(dim), Q) for _ in range(n)])
    emp = np.cov(draws.T)
    # se of a sample covariance entry: sqrt((S_ii S_jj + S_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(Sigma), np.diag(Sigma)) + Sigma**2) / n)
    assert np.all(np.abs(emp - Sigma) < 5 * se)


def test_mvn_not_spd_names_matrix(rng):
    with pytest.raises(NumericalError, match="my-matrix"):
        draw_mvn_precision(rng, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), name="my-matrix")


def test_cholesky_jitter_rescues_semidefinite(caplog):
    Q = np.array([[1.0, 1.0], [1.0, 1.0]])  # PSD, singular
    L = cholesky_precision(Q, "singular")
    assert np.allclose(L @ L.T, Q + 1e-10 * np.eye(2), atol=1e-12)
    assert "jitter" in caplog.text.lower()


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=0, max_value=1000))
def test_determinism_property(seed, stream):
    a = RngStream(seed, (stream,))
    b = RngStream(seed, (stream,))
    assert draw_gamma(a, 2.0, 1.0) == draw_gamma(b, 2.0, 1.0)
    assert draw_normal(a, 0.0, 1.0) == draw_normal(b, 0.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.01, max_value=50), st.floats(min_value=0.01, max_value=50))
def test_inverse_gamma_positive_property(shape, scale):
    x = draw_inverse_gamma(RngStream(1), shape, scale, size=100)
    assert np.all(x > 0) and np.all(np.isfinite(x))
