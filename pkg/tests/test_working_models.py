import numpy as np
import pytest

from deduct.data_model import Dataset
from deduct.errors import DegenerateExtension, EmptyStratum, InvariantViolation
from deduct.support import build_support
from deduct.working_models import (
    FIT_KEYS,
    Variant,
    WorkingModelFit,
    assemble_distribution,
    extend_with_alpha,
    fit_cox_quadruple,
    fit_empirical_marginals,
    fit_working_models,
    normalize_cells,
)

NA = np.nan


@pytest.fixture(scope="module")
def cox_fit(gm1_data):
    return fit_working_models(gm1_data, variant=Variant.COX)


@pytest.fixture(scope="module")
def ln_fit(gm1_data):
    return fit_working_models(gm1_data, variant=Variant.LOGNORMAL)


def test_empirical_marginals(small_data):
    p_robs, p_zw = fit_empirical_marginals(small_data)
    assert p_robs.tolist() == [0.5, 0.5]
    assert p_zw[0].tolist() == [0.25] * 4
    assert p_zw[1].tolist() == [0.5, 0.5]


def test_normalize_cells():
    raw = np.array([[1.0, 3.0], [0.0, 0.0], [2.0, 2.0]])
    weights = np.array([0.5, 0.25, 0.25])
    out = normalize_cells(raw, weights, None, "test")
    assert out[0].tolist() == [0.25, 0.75]
    assert out[2].tolist() == [0.5, 0.5]
    pooled = weights @ raw
    assert out[1] == pytest.approx(pooled / pooled.sum())

    zeros = np.zeros((2, 2))
    fallback = np.array([0.4, 0.6])
    assert normalize_cells(zeros, np.array([0.5, 0.5]), fallback, "test").tolist() == [[0.4, 0.6], [0.4, 0.6]]
    with pytest.raises(DegenerateExtension):
        normalize_cells(zeros, np.array([0.5, 0.5]), None, "test")


def _hand_fit():
    """Cox-variant fit on a two-point r_obs=1 stratum with equal base mass."""
    data = Dataset.from_arrays(
        c=[2.0, 2.0, 2.0, 2.0],
        r_obs=[1, 1, 0, 0],
        z=[[0.0], [0.0], [0.0], [0.0]],
        w=[[NA], [NA], [0.5], [0.3]],
        s=[0, 0, 1, 0],
        x=[1.0, 2.0, 1.0, NA],
        delta=[1, 1, 1, NA],
    )
    support = build_support(data)
    st0 = support.omega0
    table0 = np.zeros((st0.n_cells, st0.n_outcomes))
    table0[:, st0.observed_outcomes] = 1.0
    p_robs, p_zw = fit_empirical_marginals(data, support)
    return WorkingModelFit(
        variant=Variant.COX,
        support=support,
        p_robs=p_robs,
        p_zw_given_robs=p_zw,
        selection=None,
        selection_probs=np.full(st0.n_cells, 0.5),
        fits={key: None for key in FIT_KEYS},
        c_max=(2.0, 2.0),
        base_tables=[table0, np.array([[0.5, 0.5]])],
        empirical_outcomes=[table0[0], np.array([0.5, 0.5])],
    )


def test_cox_extension_hand_example():
    fit = _hand_fit()
    assert extend_with_alpha(fit, 0.0) is fit.base_tables
    tables = extend_with_alpha(fit, 1.0)
    assert tables[1][0] == pytest.approx([3 / 7, 4 / 7], abs=1e-15)
    np.testing.assert_array_equal(tables[0], fit.base_tables[0])
    assert extend_with_alpha(fit, -1.0)[1][0].tolist() == [1.0, 0.0]
    with pytest.raises(DegenerateExtension):
        extend_with_alpha(fit, -2.0)


def test_hand_fit_assembles_to_factor_products():
    fit = _hand_fit()
    g = assemble_distribution(fit, 1.0)
    assert g.block(1)[0] == pytest.approx([0.5 * 3 / 7, 0.5 * 4 / 7])
    st0 = fit.support.omega0
    na = st0.unobserved_outcome
    assert g.block(0)[:, na] == pytest.approx([0.125, 0.125])


@pytest.mark.parametrize("which", ["cox_fit", "ln_fit"])
def test_base_tables_are_normalized(which, request):
    fit = request.getfixturevalue(which)
    for r, table in enumerate(fit.base_tables):
        st = fit.support.strata[r]
        assert table.shape == (st.n_cells, st.n_outcomes)
        assert np.all(table >= 0)
        np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=1e-12)
        if st.unobserved_outcome is not None:
            assert np.all(table[:, st.unobserved_outcome] == 0)
    assert fit.xdelta_tables(0.0) is fit.base_tables


@pytest.mark.parametrize("which", ["cox_fit", "ln_fit"])
@pytest.mark.parametrize("alpha", [-0.5, 0.0, 0.5])
def test_assembled_distribution_recovers_factors(which, alpha, request):
    fit = request.getfixturevalue(which)
    g = assemble_distribution(fit, alpha)
    assert g.probs.sum() == pytest.approx(1.0, abs=1e-12)
    for r in (0, 1):
        np.testing.assert_allclose(g.block(r).sum(axis=1), fit.p_robs[r] * fit.p_zw_given_robs[r], atol=1e-12)
    st0 = fit.support.omega0
    s_col = st0.sxd[:, 0] == 1
    block0 = g.block(0)
    np.testing.assert_allclose(block0[:, s_col].sum(axis=1) / block0.sum(axis=1), fit.selection_probs, atol=1e-10)


def test_cox_alpha_moves_mass_to_larger_x(cox_fit):
    st1 = cox_fit.support.omega1
    x = st1.sxd[:, 1]
    base = cox_fit.base_tables[1] @ x
    tilted = cox_fit.xdelta_tables(0.5)[1] @ x
    assert np.all(tilted >= base - 1e-12)


def test_lognormal_alpha_keeps_censoring_fits(ln_fit):
    before = {key: fit for key, fit in ln_fit.fits.items()}
    shifted = ln_fit.xdelta_tables(0.3)
    assert ln_fit.fits == before
    assert not np.allclose(shifted[1], ln_fit.base_tables[1])


def test_censoring_fit_uses_flipped_indicator(gm1_data):
    fits = fit_cox_quadruple(gm1_data)
    assert set(fits) == set(FIT_KEYS)
    rows = gm1_data.r_obs == 1
    censored = np.unique(gm1_data.x[rows][gm1_data.delta[rows] == 0])
    assert fits["C1"].event_times.tolist() == censored.tolist()


def test_needs_both_strata():
    data = Dataset.from_arrays(c=[1.0, 1.0], r_obs=[1, 1], z=[[0.0], [1.0]], w=[[NA], [NA]],
                               s=[0, 0], x=[0.5, 0.7], delta=[1, 0])
    with pytest.raises(EmptyStratum):
        fit_working_models(data)


def test_w_cannot_enter_observed_fits_when_missing(gm1_data):
    with pytest.raises(InvariantViolation):
        fit_working_models(gm1_data, use_w_in_observed=True)


def test_summary_is_serializable(cox_fit):
    summary = cox_fit.summary()
    assert summary["variant"] == "cox"
    assert set(summary["fits"]) == set(FIT_KEYS)
