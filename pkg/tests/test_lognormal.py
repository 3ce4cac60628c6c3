import numpy as np
import pytest
from scipy.stats import norm

from deduct import lognormal
from deduct.errors import NonConvergence, ZeroVariance
from deduct.lognormal import fit_lognormal

TIMES = np.array([0.4, 0.7, 0.9, 1.1, 1.3, 1.6, 2.0, 2.4, 3.1, 4.0])
EVENTS = np.array([1, 1, 0, 1, 1, 0, 1, 0, 1, 0], dtype=float)


def censored_loglik(mu, sigma, times, events):
    r = (np.log(times) - mu) / sigma
    ev = events == 1
    return np.sum(norm.logpdf(r[ev]) - np.log(sigma)) + np.sum(norm.logsf(r[~ev]))


def test_matches_grid_search():
    fit = fit_lognormal(TIMES, EVENTS, np.zeros((TIMES.size, 0)))
    mus = np.linspace(-1.0, 2.0, 151)
    sigmas = np.linspace(0.2, 2.0, 91)
    values = np.array([[censored_loglik(m, s, TIMES, EVENTS) for s in sigmas] for m in mus])
    i, j = np.unravel_index(np.argmax(values), values.shape)
    assert censored_loglik(fit.intercept, fit.sigma, TIMES, EVENTS) >= values.max() - 1e-9
    assert abs(fit.intercept - mus[i]) <= 0.05
    assert abs(fit.sigma - sigmas[j]) <= 0.05
    assert fit.log_likelihood == pytest.approx(censored_loglik(fit.intercept, fit.sigma, TIMES, EVENTS), abs=1e-8)


def test_uncensored_is_normal_mle():
    fit = fit_lognormal(TIMES, np.ones_like(EVENTS), np.zeros((TIMES.size, 0)))
    y = np.log(TIMES)
    assert fit.intercept == pytest.approx(y.mean(), abs=1e-6)
    assert fit.sigma == pytest.approx(y.std(), abs=1e-6)


def test_uncensored_regression_is_least_squares():
    x = np.array([0.3, -0.2, 0.8, 0.1, -0.5, 0.6, 0.0, 0.9, -0.7, 0.4])
    fit = fit_lognormal(TIMES, np.ones_like(EVENTS), x[:, None])
    slope, intercept = np.polyfit(x, np.log(TIMES), 1)
    assert fit.slopes[0] == pytest.approx(slope, abs=1e-6)
    assert fit.intercept == pytest.approx(intercept, abs=1e-6)


def test_exact_fit_has_zero_variance():
    x = np.linspace(-1, 1, 6)
    with pytest.raises(ZeroVariance):
        fit_lognormal(np.exp(0.5 + 2.0 * x), np.ones(6), x[:, None])


def test_no_events_is_degenerate():
    fit = fit_lognormal(TIMES, np.zeros_like(EVENTS), np.zeros((TIMES.size, 0)))
    assert fit.degenerate
    assert np.all(fit.survival(TIMES, np.zeros((2, 0))) == 1.0)


def test_survival_edges_and_shift():
    fit = fit_lognormal(TIMES, EVENTS, np.zeros((TIMES.size, 0)))
    surv = fit.survival([0.0, np.exp(fit.intercept), np.inf], np.zeros((1, 0)))
    assert surv[0].tolist() == pytest.approx([1.0, 0.5, 0.0])
    later = fit.shifted(0.5)
    assert later.intercept == pytest.approx(fit.intercept + 0.5)
    assert later.sigma == fit.sigma
    assert later.survival([1.0], np.zeros((1, 0)))[0, 0] > fit.survival([1.0], np.zeros((1, 0)))[0, 0]


def test_stalled_line_search_is_not_convergence(monkeypatch):
    monkeypatch.setattr(lognormal, "_newton_direction", lambda grad, hess: np.full_like(grad, np.nan))
    with pytest.raises(NonConvergence, match="stalled"):
        fit_lognormal(TIMES, EVENTS, np.zeros((TIMES.size, 0)), stratum="T1")
