"""Generative models GM-1 / GM-2, their descriptive statistics, the gamma
restriction of double-samples and a synthetic PEPFAR-shaped cohort.

GM-1: Z ~ U[-2, 2], R ~ Bern((Z + 3) / 6), T Weibull with cumulative hazard
exp(Z) * t**5, C ~ U[0.5, 2], L ~ U[T/3, T] when R = 0,
S ~ Bern(expit((L + Z + 1) / 2)) among observed dropouts.
GM-2: as GM-1 but log T, log C ~ N(Z, 0.5**2) and S ~ Bern(expit((L - Z + 1) / 2)).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import quad
from scipy.special import expit, ndtr

from common.result_schema import Table1Row
from deduct.data_model import Dataset
from deduct.errors import MissingDropoutTime

logger = logging.getLogger(__name__)

WEIBULL_SHAPE = 5.0
LN_SIGMA = 0.5


class GenerativeModel(str, Enum):
    GM1 = "GM1"
    GM2 = "GM2"


class GenerativeConfig(BaseModel):
    model: GenerativeModel = GenerativeModel.GM1
    n: int = Field(ge=2)
    seed: int = 0
    t_eval: float = Field(default=0.7, gt=0)


def make_rng(seed: Optional[int], *substream: int) -> np.random.Generator:
    """Philox generator for `seed`; `substream` keys select independent child streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(substream))))


@dataclass(frozen=True)
class Population:
    """Unmasked draws; l is NaN where R = 1."""

    z: np.ndarray
    r: np.ndarray
    t: np.ndarray
    c: np.ndarray
    l: np.ndarray
    r_obs: np.ndarray
    s: np.ndarray
    select_prob: np.ndarray  # NaN unless r_obs = 0

    @property
    def observed(self) -> np.ndarray:
        return (self.r_obs == 1) | (self.s == 1)


def draw_population(model: GenerativeModel, n: int, rng: np.random.Generator) -> Population:
    model = GenerativeModel(model)
    z = rng.uniform(-2.0, 2.0, n)
    r = (rng.uniform(size=n) < (z + 3.0) / 6.0).astype(np.int8)
    if model == GenerativeModel.GM1:
        t = (rng.standard_exponential(n) * np.exp(-z)) ** (1.0 / WEIBULL_SHAPE)
        c = rng.uniform(0.5, 2.0, n)
    else:
        t = np.exp(z + LN_SIGMA * rng.standard_normal(n))
        c = np.exp(z + LN_SIGMA * rng.standard_normal(n))
    u = rng.uniform(size=n)
    l = np.where(r == 0, t / 3.0 + u * (2.0 * t / 3.0), np.nan)

    with np.errstate(invalid="ignore"):
        dropped_first = np.minimum(t, c) < l
    r_obs = np.where(r == 1, 1, dropped_first.astype(np.int8)).astype(np.int8)

    sign = 1.0 if model == GenerativeModel.GM1 else -1.0
    with np.errstate(invalid="ignore"):
        prob = np.where(r_obs == 0, expit((l + sign * z + 1.0) / 2.0), np.nan)
    v = rng.uniform(size=n)
    s = np.where(r_obs == 0, v < prob, False).astype(np.int8)
    return Population(z=z, r=r, t=t, c=c, l=l, r_obs=r_obs, s=s, select_prob=prob)


def _mask(pop: Population) -> Dataset:
    observed = pop.observed
    x = np.where(observed, np.minimum(pop.t, pop.c), np.nan)
    delta = np.where(observed, (pop.t <= pop.c).astype(float), np.nan)
    w = np.where(pop.r_obs == 0, pop.l, np.nan)
    return Dataset.from_arrays(
        c=pop.c, r_obs=pop.r_obs, z=pop.z[:, None], w=w[:, None], s=pop.s, x=x, delta=delta,
        z_names=("Z",), w_names=("L",),
    )


def generate(config: GenerativeConfig) -> Dataset:
    """One observed dataset; deterministic in (model, n, seed)."""
    pop = draw_population(config.model, config.n, make_rng(config.seed))
    return _mask(pop)


def generate_replicate(model: GenerativeModel, n: int, seed: int, replicate: int) -> Dataset:
    return _mask(draw_population(model, n, make_rng(seed, replicate)))


def true_tau(model: GenerativeModel, t: float, n_mc: int = 1_000_000, seed: int = 0) -> float:
    """Monte Carlo P(T > t) from unmasked draws."""
    pop = draw_population(model, n_mc, make_rng(seed))
    return float(np.mean(pop.t > t))


def exact_tau(model: GenerativeModel, t: float) -> float:
    """P(T > t) by quadrature over Z ~ U[-2, 2]."""
    if t <= 0:
        return 1.0
    model = GenerativeModel(model)
    if model == GenerativeModel.GM1:
        integrand = lambda z: math.exp(-math.exp(z) * t ** WEIBULL_SHAPE)
    else:
        integrand = lambda z: float(ndtr((z - math.log(t)) / LN_SIGMA))
    value, _ = quad(integrand, -2.0, 2.0, epsabs=1e-12, epsrel=1e-12)
    return value / 4.0


def partial_corr(a: np.ndarray, b: np.ndarray, given: np.ndarray) -> float:
    """Pearson correlation of a and b after regressing both on [1, given]."""
    X = np.column_stack([np.ones(a.size), given])
    coef, *_ = np.linalg.lstsq(X, np.column_stack([a, b]), rcond=None)
    resid = np.column_stack([a, b]) - X @ coef
    return float(np.corrcoef(resid[:, 0], resid[:, 1])[0, 1])


def descriptive_stats(model: GenerativeModel, n_mc: int = 1_000_000, seed: int = 0, t: float = 0.7) -> Table1Row:
    model = GenerativeModel(model)
    pop = draw_population(model, n_mc, make_rng(seed))
    dropouts = pop.r_obs == 0
    observed = pop.observed
    x = np.minimum(pop.t, pop.c)[observed]
    sel_p10, sel_p90 = np.percentile(pop.select_prob[dropouts], [10, 90])
    x_p10, x_p90 = np.percentile(x, [10, 90])
    return Table1Row(
        gm=model.value,
        n_mc=n_mc,
        tau=float(np.mean(pop.t > t)),
        p_robs0=float(np.mean(dropouts)),
        p_s1_given_robs0=float(np.mean(pop.s[dropouts])),
        selection_prob_p10=float(sel_p10),
        selection_prob_p90=float(sel_p90),
        p_delta1_given_observed=float(np.mean(pop.t[observed] <= pop.c[observed])),
        x_p10=float(x_p10),
        x_p90=float(x_p90),
        corr_tc_given_z_robs=partial_corr(pop.t, pop.c, np.column_stack([pop.z, pop.r_obs])),
        corr_tc_given_z_l_robs0=partial_corr(
            pop.t[dropouts], pop.c[dropouts], np.column_stack([pop.z[dropouts], pop.l[dropouts]])
        ),
    )


def apply_gamma_restriction(data: Dataset, gamma: float, dropout_col: str = "L") -> Dataset:
    """Mask double-samples whose recency c - L exceeds gamma (set s=0, (x, delta)=NA)."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if dropout_col not in data.w_names:
        raise MissingDropoutTime(f"dropout time column {dropout_col!r} is not among w columns {list(data.w_names)}")
    if math.isinf(gamma):
        return data
    dropout = data.w[:, data.w_names.index(dropout_col)]
    with np.errstate(invalid="ignore"):
        mask = (data.r_obs == 0) & (data.s == 1) & (data.c - dropout > gamma)
    if not mask.any():
        return data
    logger.info("gamma=%g masks %d of %d double-samples", gamma, int(mask.sum()), data.m1)
    return data.replace(
        s=np.where(mask, 0, data.s),
        x=np.where(mask, np.nan, data.x),
        delta=np.where(mask, np.nan, data.delta),
    )


# ---------- synthetic PEPFAR-shaped cohort ----------

PEPFAR_N = 1773
PEPFAR_DROPOUTS = 673
PEPFAR_DOUBLE_SAMPLED = 91
DAY = 1.0 / 365.25


def _days(values: np.ndarray) -> np.ndarray:
    return np.maximum(np.round(values / DAY), 1.0) * DAY


def generate_pepfar_like(seed: int = 2016) -> Dataset:
    """Synthetic cohort with the shape of the clinic data: n=1773, 673 dropouts,
    91 double-sampled; z = (age, cd4), w = (L, cd4_last), times in days/365.25.

    Double-sampling favours recent dropouts and dropouts die faster than
    retained patients.
    """
    rng = make_rng(seed)
    n = PEPFAR_N
    age = np.clip(np.round(rng.normal(36.0, 9.0, n)), 18, 75)
    cd4 = np.clip(np.round(np.exp(rng.normal(5.2, 0.7, n))), 1, 1500)
    c = _days(rng.uniform(0.3, 3.5, n))

    r_obs = np.ones(n, dtype=np.int8)
    r_obs[rng.permutation(n)[:PEPFAR_DROPOUTS]] = 0
    dropouts = np.flatnonzero(r_obs == 0)

    risk = 0.03 * (age - 36.0) - 0.6 * (np.log(cd4) - 5.2)
    t = rng.weibull(0.9, n) * 9.0 * np.exp(-risk)

    l = np.full(n, np.nan)
    cd4_last = np.full(n, np.nan)
    l[dropouts] = np.minimum(_days(c[dropouts] * rng.beta(1.2, 1.5, dropouts.size)), c[dropouts])
    cd4_last[dropouts] = np.clip(np.round(cd4[dropouts] * np.exp(rng.normal(-0.1, 0.3, dropouts.size))), 1, 1500)

    recency = c[dropouts] - l[dropouts]
    weight = expit(2.0 - 1.8 * recency)
    picked = rng.choice(dropouts, size=PEPFAR_DOUBLE_SAMPLED, replace=False, p=weight / weight.sum())
    s = np.zeros(n, dtype=np.int8)
    s[picked] = 1

    # dropouts are alive at L and at higher risk afterwards
    t[dropouts] = l[dropouts] + rng.weibull(0.8, dropouts.size) * 4.0 * np.exp(-risk[dropouts])
    observed = (r_obs == 1) | (s == 1)
    t = _days(t)
    x = np.where(observed, np.minimum(t, c), np.nan)
    delta = np.where(observed, (t <= c).astype(float), np.nan)

    return Dataset.from_arrays(
        c=c,
        r_obs=r_obs,
        z=np.column_stack([age, cd4]),
        w=np.column_stack([l, cd4_last]),
        s=s,
        x=x,
        delta=delta,
        z_names=("age", "cd4"),
        w_names=("L", "cd4_last"),
    )
