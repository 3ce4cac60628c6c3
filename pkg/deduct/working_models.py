"""Working distribution on the support and its alpha-extension.

F(alpha)(r, z, w, s, x, delta) = P(r) * P(z, w | r) * P(s | r, z, w) * P(x, delta | r, z, w, s; alpha)

P(r) and P(z, w | r) are empirical, P(s | r=0, z, w) is logistic and the
(x, delta) factor comes from four Cox or four log-normal fits (T and C, per
stratum) under working independence of T and C.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from deduct.cox import CoxFit, fit_cox
from deduct.data_model import Dataset
from deduct.errors import DegenerateExtension, EmptyStratum, InvariantViolation
from deduct.estimand import DiscreteDistribution
from deduct.lognormal import LogNormalFit, fit_lognormal
from deduct.selection import SelectionModel, fit_selection
from deduct.support import DiscretizedSupport, Stratum, build_support

logger = logging.getLogger(__name__)

FIT_KEYS = ("T0", "C0", "T1", "C1")


class Variant(str, Enum):
    COX = "cox"
    LOGNORMAL = "lognormal"


# ---------- empirical factors ----------

def _cell_of_records(support: DiscretizedSupport, data: Dataset, r_obs: int) -> np.ndarray:
    st = support.strata[r_obs]
    idx = support.record_index[data.r_obs == r_obs]
    return (idx - st.offset) // st.n_outcomes


def fit_empirical_marginals(
    data: Dataset, support: Optional[DiscretizedSupport] = None
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """P(R_obs = r) and P(z, w | R_obs = r) over the support's cells."""
    support = support or build_support(data)
    counts = np.array([data.m, data.n - data.m], dtype=float)
    p_robs = counts / data.n
    p_zw = []
    for r in (0, 1):
        st = support.strata[r]
        cells = _cell_of_records(support, data, r)
        freq = np.bincount(cells, minlength=st.n_cells).astype(float)
        p_zw.append(freq / counts[r] if counts[r] else freq)
    return p_robs, p_zw


# ---------- (x, delta) working models ----------

def _stratum_rows(data: Dataset, r_obs: int) -> np.ndarray:
    if r_obs == 0:
        return (data.r_obs == 0) & (data.s == 1)
    return data.r_obs == 1


def _fit_covariates(data: Dataset, r_obs: int, use_w_in_observed: bool) -> np.ndarray:
    rows = _stratum_rows(data, r_obs)
    if r_obs == 1 and not use_w_in_observed:
        return data.z[rows]
    cov = np.hstack([data.z[rows], data.w[rows]])
    if np.isnan(cov).any():
        raise InvariantViolation(
            "w has NA values in the r_obs=1 stratum; it cannot enter the r_obs=1 fits", stage="fit"
        )
    return cov


def _cell_covariates(support: DiscretizedSupport, r_obs: int, use_w_in_observed: bool) -> np.ndarray:
    zw = support.strata[r_obs].zw
    if r_obs == 1 and not use_w_in_observed:
        return zw[:, : support.z_dim]
    return zw


def _fit_quadruple(data: Dataset, fitter: Callable, use_w_in_observed: bool) -> Dict[str, object]:
    fits = {}
    for r in (0, 1):
        rows = _stratum_rows(data, r)
        if not rows.any():
            logger.warning("No complete cases in stratum r_obs=%d; skipping its (x, delta) fits", r)
            continue
        cov = _fit_covariates(data, r, use_w_in_observed)
        x, delta = data.x[rows], data.delta[rows]
        fits[f"T{r}"] = fitter(x, delta, cov, stratum=f"T{r}")
        fits[f"C{r}"] = fitter(x, 1.0 - delta, cov, stratum=f"C{r}")
    return fits


def fit_cox_quadruple(data: Dataset, use_w_in_observed: bool = False) -> Dict[str, CoxFit]:
    """T and C Cox fits for (r_obs=0, s=1) and for r_obs=1; no shared parameters."""
    return _fit_quadruple(data, fit_cox, use_w_in_observed)


def fit_lognormal_quadruple(data: Dataset, use_w_in_observed: bool = False) -> Dict[str, LogNormalFit]:
    """T and C log-normal fits for (r_obs=0, s=1) and for r_obs=1."""
    return _fit_quadruple(data, fit_lognormal, use_w_in_observed)


def stratum_times(stratum: Stratum) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted distinct observed x of a stratum and each outcome's position in it (-1 for NA)."""
    obs = stratum.observed_outcomes
    xs = np.unique(stratum.sxd[obs, 1])
    pos = np.full(stratum.n_outcomes, -1, dtype=int)
    pos[obs] = np.searchsorted(xs, stratum.sxd[obs, 1])
    return xs, pos


def _mass_and_survival(fit, xs: np.ndarray, cov: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(p, S) on the stratum times for every cell: S(x_i) = P(T > x_i), p(x_i) = S(x_{i-1}) - S(x_i)."""
    if isinstance(fit, CoxFit):
        surv = fit.survival(xs, cov)
        before = np.hstack([np.ones((surv.shape[0], 1)), surv[:, :-1]])
        return np.clip(before - surv, 0.0, None), surv
    # log-normal: midpoint bins, first from 0, last to infinity
    edges = np.concatenate([[0.0], 0.5 * (xs[:-1] + xs[1:]), [np.inf]])
    at_edges = fit.survival(edges, cov)
    return np.clip(at_edges[:, :-1] - at_edges[:, 1:], 0.0, None), at_edges[:, 1:]


def raw_xdelta_table(
    fit_t, fit_c, stratum: Stratum, cov: np.ndarray
) -> np.ndarray:
    """Unnormalized {p_T S_C}^delta {S_T p_C}^(1-delta) per (cell, outcome); 0 on the NA outcome."""
    xs, pos = stratum_times(stratum)
    table = np.zeros((stratum.n_cells, stratum.n_outcomes))
    if xs.size == 0:
        return table
    p_t, s_t = _mass_and_survival(fit_t, xs, cov)
    p_c, s_c = _mass_and_survival(fit_c, xs, cov)
    obs = stratum.observed_outcomes
    event = stratum.sxd[obs, 2] == 1
    at = pos[obs]
    table[:, obs] = np.where(event, p_t[:, at] * s_c[:, at], s_t[:, at] * p_c[:, at])
    return table


def _empirical_outcomes(data: Dataset, support: DiscretizedSupport, r_obs: int) -> np.ndarray:
    st = support.strata[r_obs]
    idx = support.record_index[data.r_obs == r_obs]
    outcomes = (idx - st.offset) % st.n_outcomes
    freq = np.bincount(outcomes, minlength=st.n_outcomes).astype(float)
    freq[st.outcome_col < 0] = 0.0
    total = freq.sum()
    return freq / total if total else freq


def normalize_cells(
    raw: np.ndarray,
    cell_weights: np.ndarray,
    fallback: Optional[np.ndarray],
    label: str,
) -> np.ndarray:
    """Per-cell normalization with 0/0 cells replaced by the pooled table.

    The pooled table is the cell-weighted sum of `raw`, normalized. When it is
    also all zero `fallback` is used, or DegenerateExtension is raised if none.
    """
    totals = raw.sum(axis=1)
    out = np.zeros_like(raw)
    ok = totals > 0
    out[ok] = raw[ok] / totals[ok, None]
    if ok.all():
        return out

    pooled = cell_weights @ raw
    pooled_total = pooled.sum()
    if pooled_total > 0:
        pooled = pooled / pooled_total
    elif fallback is not None:
        logger.warning("All (x, delta) mass is zero in %s; using empirical outcome frequencies", label)
        pooled = fallback
    else:
        raise DegenerateExtension(f"every (x, delta) mass is clamped to 0 in {label}")
    logger.info("%d zero-mass cells in %s fall back to the pooled table", int(np.sum(~ok)), label)
    out[~ok] = pooled
    return out


# ---------- fitted working distribution ----------

@dataclass(eq=False)
class WorkingModelFit:
    variant: Variant
    support: DiscretizedSupport
    p_robs: np.ndarray
    p_zw_given_robs: List[np.ndarray]
    selection: SelectionModel
    selection_probs: np.ndarray          # P(S=1 | r_obs=0, cell) for the cells of Omega_0
    fits: Dict[str, object]
    c_max: Tuple[float, float]
    base_tables: List[np.ndarray]        # normalized (cells, outcomes) per stratum at alpha=0
    empirical_outcomes: List[np.ndarray]
    use_w_in_observed: bool = False
    n_zero_cells: int = 0
    _cache: Dict[float, List[np.ndarray]] = field(default_factory=dict, repr=False)

    def xdelta_tables(self, alpha: float) -> List[np.ndarray]:
        alpha = float(alpha)
        if alpha == 0.0:
            return self.base_tables
        if alpha not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[alpha] = extend_with_alpha(self, alpha)
        return self._cache[alpha]

    def summary(self) -> dict:
        return {
            "variant": self.variant.value,
            "p_robs": self.p_robs.tolist(),
            "c_max": list(self.c_max),
            "selection": self.selection.summary(),
            "fits": {key: fit.summary() for key, fit in self.fits.items()},
            "zero_mass_cells": self.n_zero_cells,
        }


def build_xdelta_table(
    fits: Dict[str, object],
    support: DiscretizedSupport,
    p_zw_given_robs: List[np.ndarray],
    empirical_outcomes: List[np.ndarray],
    use_w_in_observed: bool = False,
) -> List[np.ndarray]:
    """Base (alpha = 0) normalized (x, delta) tables for both strata."""
    tables = []
    for r in (0, 1):
        st = support.strata[r]
        if f"T{r}" not in fits:
            tables.append(np.zeros((st.n_cells, st.n_outcomes)))
            continue
        cov = _cell_covariates(support, r, use_w_in_observed)
        raw = raw_xdelta_table(fits[f"T{r}"], fits[f"C{r}"], st, cov)
        tables.append(normalize_cells(raw, p_zw_given_robs[r], empirical_outcomes[r], f"stratum r_obs={r}"))
    return tables


def extend_with_alpha(fit: WorkingModelFit, alpha: float) -> List[np.ndarray]:
    """(x, delta) tables at alpha.

    Cox: base masses times max(0, 1 + alpha * x / c_max) per stratum, renormalized.
    Log-normal: alpha shifts both T-fit intercepts; the C fits are unchanged.
    """
    if alpha == 0.0:
        return fit.base_tables
    support = fit.support
    tables = []
    for r in (0, 1):
        st = support.strata[r]
        if f"T{r}" not in fit.fits:
            tables.append(fit.base_tables[r])
            continue
        label = f"stratum r_obs={r} at alpha={alpha:g}"
        if fit.variant == Variant.COX:
            x = np.nan_to_num(st.sxd[:, 1], nan=0.0)
            tilt = 1.0 + alpha * x / fit.c_max[r]
            raw = np.maximum(0.0, fit.base_tables[r] * tilt[None, :])
            tables.append(normalize_cells(raw, fit.p_zw_given_robs[r], None, label))
        else:
            cov = _cell_covariates(support, r, fit.use_w_in_observed)
            shifted = fit.fits[f"T{r}"].shifted(alpha)
            raw = raw_xdelta_table(shifted, fit.fits[f"C{r}"], st, cov)
            tables.append(normalize_cells(raw, fit.p_zw_given_robs[r], fit.empirical_outcomes[r], label))
    return tables


def assemble_distribution(
    fit: WorkingModelFit, alpha: float = 0.0, support: Optional[DiscretizedSupport] = None
) -> DiscreteDistribution:
    """Product of the four factors at every support point, renormalized exactly."""
    support = support or fit.support
    st0, st1 = support.strata
    tables = fit.xdelta_tables(alpha)

    block0 = np.zeros((st0.n_cells, st0.n_outcomes))
    if st0.size:
        pi = fit.selection_probs
        s_col = st0.sxd[:, 0] == 1
        block0[:, s_col] = pi[:, None] * tables[0][:, s_col]
        block0[:, ~s_col] = (1.0 - pi)[:, None]
        block0 *= (fit.p_robs[0] * fit.p_zw_given_robs[0])[:, None]
    block1 = (fit.p_robs[1] * fit.p_zw_given_robs[1])[:, None] * tables[1]

    probs = np.concatenate([block0.reshape(-1), block1.reshape(-1)])
    total = probs.sum()
    if abs(total - 1.0) > 1e-10:
        logger.warning("Working distribution sums to %.12f before renormalization", total)
    return DiscreteDistribution(support, probs / total)


def fit_working_models(
    data: Dataset,
    support: Optional[DiscretizedSupport] = None,
    variant: Variant = Variant.COX,
    intercept_only_selection: bool = False,
    use_w_in_observed: bool = False,
    strict: bool = True,
) -> WorkingModelFit:
    """Fit every factor once; nothing is refit during the alpha search."""
    variant = Variant(variant)
    if data.m == 0 or data.n - data.m == 0:
        which = "r_obs=0" if data.m == 0 else "r_obs=1"
        raise EmptyStratum(f"stratum {which} has no records; the estimator needs both strata")
    support = support or build_support(data)

    p_robs, p_zw = fit_empirical_marginals(data, support)
    selection = fit_selection(data, intercept_only=intercept_only_selection, strict=strict)
    st0 = support.omega0
    selection_probs = selection.predict(st0.zw)

    if variant == Variant.COX:
        fits = fit_cox_quadruple(data, use_w_in_observed)
    else:
        fits = fit_lognormal_quadruple(data, use_w_in_observed)

    empirical = [_empirical_outcomes(data, support, r) for r in (0, 1)]
    base = build_xdelta_table(fits, support, p_zw, empirical, use_w_in_observed)
    c_max = (float(data.c[data.r_obs == 0].max()), float(data.c[data.r_obs == 1].max()))
    n_zero = 0
    for r in (0, 1):
        if f"T{r}" in fits:
            cov = _cell_covariates(support, r, use_w_in_observed)
            raw = raw_xdelta_table(fits[f"T{r}"], fits[f"C{r}"], support.strata[r], cov)
            n_zero += int(np.sum(raw.sum(axis=1) <= 0))

    logger.info(
        "Fitted %s working models: P(r_obs=0)=%.4f, selection converged=%s, zero-mass cells=%d",
        variant.value, p_robs[0], selection.converged, n_zero,
    )
    return WorkingModelFit(
        variant=variant,
        support=support,
        p_robs=p_robs,
        p_zw_given_robs=p_zw,
        selection=selection,
        selection_probs=selection_probs,
        fits=fits,
        c_max=c_max,
        base_tables=base,
        empirical_outcomes=empirical,
        use_w_in_observed=use_w_in_observed,
        n_zero_cells=n_zero,
    )
