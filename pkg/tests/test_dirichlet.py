import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mcfusion.dirichlet import (ALPHA_MIN, DirichletParams, fit_mle, log_pdf, log_pdf_grad_alpha,
                                mean_weights, sample)
from mcfusion.errors import ValidationError

alphas = st.lists(st.floats(min_value=0.05, max_value=50.0), min_size=2, max_size=6)


def rng(seed=0):
    return np.random.default_rng(seed)


# -- params -----------------------------------------------------------------

def test_params_reject_non_positive_and_non_finite():
    for bad in ([1.0, 0.0], [1.0, -1.0], [1.0, np.inf], [np.nan, 1.0], []):
        with pytest.raises(ValidationError):
            DirichletParams(bad)


def test_params_json_round_trip():
    p = DirichletParams([0.25, 3.5, 7.0])
    assert DirichletParams.from_json(p.to_json()) == p
    assert json.loads(p.to_json()) == [0.25, 3.5, 7.0]


def test_clamped_respects_floor():
    assert DirichletParams([1e-6, 2.0]).clamped().alpha[0] == ALPHA_MIN


# -- sampling ---------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(alphas, st.integers(0, 2**32 - 1))
def test_samples_lie_on_simplex(alpha, seed):
    w = sample(DirichletParams(alpha), rng(seed), size=20)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)


def test_tiny_concentrations_still_sample_the_simplex():
    w = sample(DirichletParams([1e-6, 1e-6, 5.0]), rng(1), size=200)
    assert np.all(np.isfinite(w)) and np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_concentrated_draw_is_near_center():
    w = sample(DirichletParams([1000.0, 1000.0]), rng(3))
    assert np.all(np.abs(w - 0.5) < 0.05)


def test_sampling_is_deterministic_given_seed():
    p = DirichletParams([0.3, 2.0, 4.0])
    np.testing.assert_array_equal(sample(p, rng(9), 5), sample(p, rng(9), 5))


def test_sample_mean_within_three_standard_errors():
    alpha = np.array([0.5, 2.0, 3.5])
    n = 100_000
    w = sample(DirichletParams(alpha), rng(11), size=n)
    m = alpha / alpha.sum()
    a0 = alpha.sum()
    se = np.sqrt(m * (1 - m) / (a0 + 1) / n)
    assert np.all(np.abs(w.mean(axis=0) - m) < 3 * se)


def test_small_shape_marginal_matches_beta_distribution():
    # the alpha < 1 branch must produce Beta(a, A - a) marginals
    alpha = np.array([0.3, 0.7, 1.5])
    w = sample(DirichletParams(alpha), rng(5), size=40_000)
    res = stats.kstest(w[:, 0], stats.beta(alpha[0], alpha.sum() - alpha[0]).cdf)
    assert res.pvalue > 1e-3


# -- density ----------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1 - 1e-6))
def test_uniform_alpha_has_zero_log_density(x):
    assert log_pdf(DirichletParams([1.0, 1.0]), [x, 1 - x]) == pytest.approx(0.0, abs=1e-12)


def test_log_pdf_closed_forms():
    assert log_pdf(DirichletParams([2.0, 2.0]), [0.5, 0.5]) == pytest.approx(np.log(1.5), abs=1e-12)
    assert log_pdf(DirichletParams([2.0, 1.0, 1.0]), [0.5, 0.25, 0.25]) == pytest.approx(np.log(3.0), abs=1e-12)


def test_log_pdf_matches_scipy():
    g = rng(2)
    for _ in range(50):
        a = g.uniform(0.2, 8, size=4)
        w = g.dirichlet(np.ones(4))
        assert log_pdf(DirichletParams(a), w) == pytest.approx(stats.dirichlet.logpdf(w, a), rel=1e-10)


def test_log_pdf_batch_matches_loop():
    p = DirichletParams([1.5, 0.5, 3.0])
    W = rng(4).dirichlet(np.ones(3), size=7)
    np.testing.assert_allclose(log_pdf(p, W), [log_pdf(p, w) for w in W], rtol=1e-13)


def test_density_integrates_to_one_for_two_components():
    x = np.linspace(0, 1, 10_001)[1:-1]
    for a in ([1.0, 1.0], [2.0, 5.0], [3.0, 3.0], [1.5, 4.0]):
        f = np.exp(log_pdf(DirichletParams(a), np.stack([x, 1 - x], axis=1)))
        assert np.trapezoid(f, x) == pytest.approx(1.0, abs=1e-3)


# -- gradient ---------------------------------------------------------------

def test_grad_digamma_table_example():
    g = log_pdf_grad_alpha(DirichletParams([1.0, 1.0]), [0.5, 0.5])
    np.testing.assert_allclose(g, 1.0 - np.log(2.0), atol=1e-12)


def test_grad_symmetric_at_mean():
    g = log_pdf_grad_alpha(DirichletParams([3.0, 3.0, 3.0]), [1 / 3, 1 / 3, 1 / 3])
    assert np.ptp(g) < 1e-12


def test_grad_matches_finite_differences():
    g = rng(8)
    h = 1e-5
    worst = 0.0
    for _ in range(1000):
        K = int(g.integers(2, 6))
        a = g.uniform(0.1, 20, size=K)
        w = g.dirichlet(np.ones(K))
        an = log_pdf_grad_alpha(DirichletParams(a), w)
        for i in range(K):
            e = np.zeros(K)
            e[i] = h
            fd = (log_pdf(DirichletParams(a + e), w) - log_pdf(DirichletParams(a - e), w)) / (2 * h)
            worst = max(worst, abs(fd - an[i]) / max(abs(fd), 1e-3))
    assert worst < 1e-4


# -- mean -------------------------------------------------------------------

def test_mean_weights_examples():
    np.testing.assert_allclose(mean_weights(DirichletParams([2.0, 1.0, 1.0])), [0.5, 0.25, 0.25])
    np.testing.assert_allclose(mean_weights(DirichletParams([4.0] * 5)), 0.2)


@settings(max_examples=50, deadline=None)
@given(alphas, st.floats(min_value=1e-3, max_value=1e3))
def test_mean_weights_scale_invariant(alpha, c):
    a = np.array(alpha)
    np.testing.assert_allclose(mean_weights(DirichletParams(c * a)), mean_weights(DirichletParams(a)),
                               rtol=1e-12)


# -- fitting ----------------------------------------------------------------

def test_fit_recovers_parameters():
    alpha = np.array([5.0, 2.0, 3.0])
    W = sample(DirichletParams(alpha), rng(21), size=50_000)
    fit = fit_mle(W)
    assert fit.converged
    assert np.all(np.abs(fit.params.alpha - alpha) / alpha < 0.05)


def test_fit_small_concentrations():
    alpha = np.array([0.4, 0.8, 1.6])
    fit = fit_mle(sample(DirichletParams(alpha), rng(22), size=50_000))
    assert np.all(np.abs(fit.params.alpha - alpha) / alpha < 0.05)


def test_fit_symmetric_cloud_is_symmetric():
    W = sample(DirichletParams([4.0, 4.0, 4.0]), rng(23), size=30_000)
    a = fit_mle(W).params.alpha
    assert np.ptp(a) / a.mean() < 0.02


def test_fit_degenerate_cloud_flags_non_convergence():
    fit = fit_mle(np.tile([0.5, 0.5], (10, 1)))
    assert not fit.converged
    assert np.all(fit.params.alpha > 100)
    np.testing.assert_allclose(mean_weights(fit.params), [0.5, 0.5])


def test_fit_requires_two_samples():
    with pytest.raises(ValidationError):
        fit_mle(np.array([[0.3, 0.7]]))


def test_fit_output_respects_clamp():
    W = sample(DirichletParams([0.01, 0.01, 0.01]), rng(24), size=200)
    assert np.all(fit_mle(W).params.alpha >= ALPHA_MIN)


def test_fit_is_likelihood_stationary():
    W = sample(DirichletParams([1.5, 2.5, 0.7]), rng(25), size=5000)
    a = fit_mle(W).params
    grad = log_pdf_grad_alpha(a, W).mean(axis=0)
    assert np.abs(grad).max() < 1e-6
