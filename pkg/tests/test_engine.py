import math

import numpy as np
import pytest

from deduct.engine import (
    DeductiveEstimator,
    GateauxEvaluator,
    _sign_changes,
    estimate,
    gateaux,
    gateaux_values,
    numerical_gateaux,
    perturb,
    record_indices,
    solve_alpha,
    sum_gateaux,
)
from deduct.estimand import DiscreteDistribution, tau_of_distribution
from deduct.support import build_support
from deduct.working_models import Variant, assemble_distribution, fit_working_models

T = 0.7


@pytest.fixture(scope="module")
def cox_fit(gm1_data):
    return fit_working_models(gm1_data, variant=Variant.COX)


def _sample_records(data, k=6):
    """A few records from each of the three canonical blocks."""
    m1, m = data.m1, data.m
    return list(range(min(k, m1))) + list(range(m1, min(m1 + k, m))) + list(range(m, min(m + k, data.n)))


def test_record_indices_match_support(gm1_data, cox_fit):
    assert np.array_equal(record_indices(cox_fit.support, gm1_data), cox_fit.support.record_index)


@pytest.mark.parametrize("alpha", [0.0, 0.4])
def test_fast_path_matches_generic_perturbation(gm1_data, cox_fit, alpha):
    eps = 1e-4
    values, tau = gateaux_values(cox_fit, alpha, gm1_data, eps, T)
    g = assemble_distribution(cox_fit, alpha)
    assert tau == pytest.approx(tau_of_distribution(g, T), abs=1e-12)
    for i in _sample_records(gm1_data):
        expected = gateaux(cox_fit, alpha, gm1_data.record(i), eps, T)
        assert values[i] == pytest.approx(expected, abs=1e-9)


def test_sum_gateaux_is_sum_of_record_values(gm1_data, cox_fit):
    values, _ = gateaux_values(cox_fit, 0.2, gm1_data, 1e-4, T)
    assert sum_gateaux(cox_fit, 0.2, gm1_data, 1e-4, T) == pytest.approx(values.sum(), abs=1e-12)


def test_fast_path_nelson_aalen(gm1_data, cox_fit):
    eps = 1e-4
    values, _ = gateaux_values(cox_fit, 0.0, gm1_data, eps, T, method="na")
    for i in _sample_records(gm1_data, 3):
        expected = gateaux(cox_fit, 0.0, int(cox_fit.support.record_index[i]), eps, T, method="na")
        assert values[i] == pytest.approx(expected, abs=1e-9)


def test_linear_functional_oracle(small_data):
    support = build_support(small_data)
    rng = np.random.default_rng(5)
    probs = rng.dirichlet(np.ones(support.size))
    g = DiscreteDistribution(support, probs / probs.sum())
    f = rng.normal(size=support.size)
    linear = lambda d: float(d.probs @ f)
    for j in range(support.size):
        assert numerical_gateaux(g, j, 1e-4, linear) == pytest.approx(f[j] - linear(g), abs=1e-9)


def _error_ratios(errors):
    return [a / b for a, b in zip(errors, errors[1:])]


def test_conditional_mean_gateaux_error_is_first_order(small_data):
    support = build_support(small_data)
    x = np.array([math.nan if p.x is None else p.x for p in support.points()])
    observed = ~np.isnan(x)
    probs = np.random.default_rng(8).dirichlet(np.ones(support.size))
    g = DiscreteDistribution(support, probs / probs.sum())

    def mean_x(d):
        return float(d.probs[observed] @ x[observed] / d.probs[observed].sum())

    mu, p_obs = mean_x(g), g.probs[observed].sum()
    exact = np.where(observed, np.nan_to_num(x) - mu, 0.0) / p_obs
    errors = []
    for eps in (1e-3, 1e-4, 1e-5):
        numeric = np.array([numerical_gateaux(g, j, eps, mean_x) for j in range(support.size)])
        errors.append(float(np.max(np.abs(numeric - exact))))
        assert errors[-1] <= 20 * eps
    assert all(9.0 < r < 11.0 for r in _error_ratios(errors))


def test_tau_gateaux_error_shrinks_with_epsilon(small_data):
    support = build_support(small_data)
    probs = np.random.default_rng(9).dirichlet(np.ones(support.size))
    g = DiscreteDistribution(support, probs / probs.sum())
    tau = lambda d: tau_of_distribution(d, 1.2)

    def derivatives(eps):
        return np.array([numerical_gateaux(g, j, eps, tau) for j in range(support.size)])

    reference = derivatives(1e-8)
    errors = [float(np.linalg.norm(derivatives(eps) - reference)) for eps in (1e-3, 1e-4, 1e-5)]
    assert all(5.0 < r < 20.0 for r in _error_ratios(errors))


def test_perturb_fixed_point_and_validation(small_data):
    support = build_support(small_data)
    point = DiscreteDistribution.point_mass(support, 3)
    again = perturb(point, 3, 0.25)
    assert np.array_equal(again.probs, point.probs)
    with pytest.raises(ValueError):
        perturb(point, 3, 0.0)
    with pytest.raises(ValueError):
        GateauxEvaluator(point, T).values([3], 1.0)


def test_sign_changes():
    points = {-1.0: -2.0, 0.0: 0.0, 1.0: 3.0, 2.0: -1.0, 3.0: math.nan}
    assert _sign_changes(points) == [(0.0, 0.0), (1.0, 2.0)]


def test_solve_alpha_reaches_root(gm1_data, cox_fit):
    sol = solve_alpha(cox_fit, gm1_data, 1e-4, T)
    assert sol.root_found
    assert sol.bracket[0] <= sol.alpha <= sol.bracket[1]
    assert abs(sol.residual) < 1e-3
    assert sol.diagnostics().sign_changes


def test_estimate_cox(gm1_data):
    est = DeductiveEstimator(gm1_data, variant=Variant.COX)
    res = est.estimate(T)
    assert res.estimator == "DE.Cox"
    assert 0.0 <= res.tau_hat <= 1.0
    assert res.se > 0
    assert res.ci_lo < res.tau_hat < res.ci_hi
    assert res.ci_hi - res.ci_lo == pytest.approx(2 * 1.959963984540054 * res.se)
    assert abs(res.tau_hat - 0.771) < 0.12
    assert len(res.gateaux_values) == gm1_data.n
    assert res.se == pytest.approx(math.sqrt(np.sum(np.square(res.gateaux_values))) / gm1_data.n)
    assert res.support["omega_size"] > 0
    assert res.mortality == pytest.approx(1.0 - res.tau_hat)


def test_alpha_zero_reports_working_tau(gm1_data):
    est = DeductiveEstimator(gm1_data, variant=Variant.COX, alpha_zero=True)
    res = est.estimate(T)
    assert est.name == "DE.Cox(alpha=0)"
    assert res.alpha_hat == 0.0
    assert res.tau_hat == pytest.approx(tau_of_distribution(assemble_distribution(est.fit, 0.0), T), abs=1e-12)


def test_epsilon_insensitivity(gm1_data):
    est = DeductiveEstimator(gm1_data, variant=Variant.COX)
    results = est.compare_epsilon(T, (1e-4, 1e-6))
    assert abs(results[1e-4].tau_hat - results[1e-6].tau_hat) <= 1e-3


def test_curve_is_monotone(gm1_data):
    est = DeductiveEstimator(gm1_data, variant=Variant.COX, alpha_zero=True)
    taus = [r.tau_hat for r in est.estimate_curve([0.2, 0.5, 0.8, 1.1])]
    assert all(a >= b - 1e-12 for a, b in zip(taus, taus[1:]))


def test_lognormal_and_wrong_selection(gm2_data):
    res = estimate(gm2_data, variant=Variant.LOGNORMAL, t=T, wrong_s=True)
    assert res.estimator == "DE.LN.WrongS"
    assert res.variant == "lognormal"
    assert abs(res.tau_hat - 0.588) < 0.15


def test_bad_epsilon(gm1_data):
    with pytest.raises(ValueError):
        DeductiveEstimator(gm1_data, epsilon=1.5)


def test_estimates_stay_in_unit_interval(gm1_data):
    for res in DeductiveEstimator(gm1_data, variant=Variant.COX).estimate_curve([0.05, 0.2]):
        assert 0.0 <= res.tau_hat <= 1.0
        assert res.mortality >= 0.0
