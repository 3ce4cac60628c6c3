"""Kaplan-Meier comparators: complete-case (KM.C) and stratified by R_obs (KM.S)."""
import logging
from typing import Optional, Tuple

import numpy as np

from common.result_schema import BaselineResult
from deduct.data_model import Dataset
from deduct.errors import EmptyStratum, NoCompleteCases

logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054
DEFAULT_N_BOOT = 1000


def kaplan_meier(x: np.ndarray, delta: np.ndarray, t: float) -> Tuple[float, float]:
    """Product-limit S(t) and its Greenwood variance from unweighted (x, delta)."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    times, inverse = np.unique(x, return_inverse=True)
    deaths = np.bincount(inverse.reshape(-1), weights=delta, minlength=times.size)
    at_risk = x.size - np.concatenate([[0], np.cumsum(np.bincount(inverse.reshape(-1), minlength=times.size))[:-1]])
    use = (times <= t) & (deaths > 0)
    d, y = deaths[use], at_risk[use].astype(float)
    surv = float(np.prod(1.0 - d / y))
    if surv == 0.0:
        return 0.0, 0.0
    live = y > d
    var = surv ** 2 * float(np.sum(d[live] / (y[live] * (y[live] - d[live]))))
    return surv, var


def _complete(data: Dataset) -> np.ndarray:
    return ~np.isnan(data.x)


def km_complete_case(data: Dataset, t: float) -> BaselineResult:
    """Unweighted KM over records with observed (x, delta), Greenwood SE, normal CI."""
    rows = _complete(data)
    if not rows.any():
        raise NoCompleteCases("no record has observed (x, delta)")
    surv, var = kaplan_meier(data.x[rows], data.delta[rows], t)
    se = float(np.sqrt(var))
    return BaselineResult(
        estimator="KM.C",
        t=t,
        tau_hat=surv,
        se=se,
        ci_lo=surv - Z_95 * se,
        ci_hi=surv + Z_95 * se,
        n=data.n,
    )


def _stratified(r_obs, x, delta, t) -> float:
    n = r_obs.size
    est = 0.0
    for r in (0, 1):
        in_r = r_obs == r
        if not in_r.any():
            continue
        rows = in_r & ~np.isnan(x)
        if not rows.any():
            raise EmptyStratum(f"stratum r_obs={r} has records but no complete cases", stage="baseline")
        est += in_r.sum() / n * kaplan_meier(x[rows], delta[rows], t)[0]
    return est


def km_stratified(
    data: Dataset,
    t: float,
    n_boot: int = DEFAULT_N_BOOT,
    seed: Optional[int] = None,
) -> BaselineResult:
    """P(R_obs=1) KM_1(t) + P(R_obs=0) KM_0^s(t) with a percentile bootstrap CI.

    Resamples the whole dataset; each replicate draws from its own Philox
    substream of `seed`. Resamples missing complete cases in a present
    stratum are skipped and counted.
    """
    estimate = _stratified(data.r_obs, data.x, data.delta, t)
    boots = []
    skipped = 0
    root = np.random.SeedSequence(seed)
    for b in range(n_boot):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(root.entropy, spawn_key=(b,))))
        idx = rng.integers(0, data.n, size=data.n)
        try:
            boots.append(_stratified(data.r_obs[idx], data.x[idx], data.delta[idx], t))
        except EmptyStratum:
            skipped += 1
    if skipped:
        logger.warning("KM.S bootstrap: skipped %d of %d degenerate resamples", skipped, n_boot)

    if boots:
        boots = np.asarray(boots)
        ci_lo, ci_hi = (float(v) for v in np.percentile(boots, [2.5, 97.5]))
        se = float(np.std(boots, ddof=1)) if boots.size > 1 else 0.0
    else:
        ci_lo = ci_hi = se = None
    return BaselineResult(
        estimator="KM.S",
        t=t,
        tau_hat=estimate,
        se=se,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        n=data.n,
        n_boot=n_boot,
        n_boot_skipped=skipped,
    )
