"""The survival functional tau(G) = sum_z pr(z) * surv_t[pr(X, Delta | z)] for a
probability table G on the discretized support.

(x, delta) tables live on the support's x grid: column 2*u + delta holds the
mass at (x_grid[u], delta). Ratios use the 0/0 = 0 convention throughout.
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from deduct.errors import ZeroMarginal
from deduct.support import DiscretizedSupport, Stratum

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12
SURV_METHODS = ("km", "na")


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    support: DiscretizedSupport
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.support.size,):
            raise ValueError(f"probs has shape {probs.shape}, support has {self.support.size} points")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and nonnegative")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def block(self, r_obs: int) -> np.ndarray:
        """The stratum's probabilities as a (cells, outcomes) array."""
        st = self.support.strata[r_obs]
        return self.probs[st.offset: st.offset + st.size].reshape(st.n_cells, st.n_outcomes)

    @classmethod
    def point_mass(cls, support: DiscretizedSupport, flat_index: int) -> "DiscreteDistribution":
        probs = np.zeros(support.size)
        probs[flat_index] = 1.0
        return cls(support, probs)


@dataclass(frozen=True, eq=False)
class ComponentSet:
    """The six identifying components, on the support's index lists."""

    support: DiscretizedSupport
    p_robs1: float
    p_z_given_1: np.ndarray      # (n_z,)
    p_xd_given_z1: np.ndarray    # (n_z, 2U)
    p_robs0: float
    p_zw_given_0: np.ndarray     # (cells of Omega_0,)
    p_xd_given_zw0: np.ndarray   # (cells of Omega_0, 2U), observed (s=1) outcomes only


def safe_divide(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return out


def cell_grid(stratum: Stratum, block: np.ndarray, n_cols: int) -> np.ndarray:
    """Observed-outcome masses of a (cells, outcomes) block placed on the x grid."""
    out = np.zeros((block.shape[0], n_cols))
    obs = stratum.observed_outcomes
    out[:, stratum.outcome_col[obs]] = block[:, obs]
    return out


def components_from_distribution(g: DiscreteDistribution) -> ComponentSet:
    support = g.support
    n_cols = 2 * support.n_grid
    st0, st1 = support.strata
    g0, g1 = g.block(0), g.block(1)

    p_robs1 = float(g1.sum())
    p_robs0 = float(g0.sum())

    grid1 = cell_grid(st1, g1, n_cols)
    z_mass1 = np.bincount(st1.cell_z, weights=g1.sum(axis=1), minlength=support.n_z)
    z_grid1 = np.zeros((support.n_z, n_cols))
    np.add.at(z_grid1, st1.cell_z, grid1)

    cell_mass0 = g0.sum(axis=1)
    grid0 = cell_grid(st0, g0, n_cols)

    return ComponentSet(
        support=support,
        p_robs1=p_robs1,
        p_z_given_1=safe_divide(z_mass1, p_robs1),
        p_xd_given_z1=safe_divide(z_grid1, z_mass1[:, None]),
        p_robs0=p_robs0,
        p_zw_given_0=safe_divide(cell_mass0, p_robs0),
        p_xd_given_zw0=safe_divide(grid0, grid0.sum(axis=1, keepdims=True)),
    )


def mixture_tables(components: ComponentSet) -> Tuple[np.ndarray, np.ndarray]:
    """Unnormalized pr(x, delta, z) rows over the x grid and the z marginal pr(z)."""
    support = components.support
    st0 = support.omega0
    weight1 = components.p_robs1 * components.p_z_given_1
    weight0 = components.p_robs0 * components.p_zw_given_0

    mix = weight1[:, None] * components.p_xd_given_z1
    np.add.at(mix, st0.cell_z, weight0[:, None] * components.p_xd_given_zw0)
    prz = weight1 + np.bincount(st0.cell_z, weights=weight0, minlength=support.n_z)
    return mix, prz


def _z_index(support: DiscretizedSupport, z: Sequence[float]) -> int:
    z = np.asarray(z, dtype=float).reshape(-1)
    hits = np.flatnonzero(np.all(support.unique_z == z, axis=1))
    if hits.size == 0:
        raise ZeroMarginal(f"z={tuple(z)} is not a support value")
    return int(hits[0])


def marginal_xdelta_given_z(components: ComponentSet, z: Sequence[float]) -> np.ndarray:
    """pr(X, Delta | Z=z) on the x grid, renormalized with 0/0 = 0."""
    k = _z_index(components.support, z)
    mix, prz = mixture_tables(components)
    if prz[k] <= 0:
        raise ZeroMarginal(f"pr(z={tuple(np.atleast_1d(z))}) is zero")
    return safe_divide(mix[k], mix[k].sum())


def grid_survival(table: np.ndarray, x_grid: np.ndarray, t: float, method: str = "km") -> np.ndarray:
    """Product-limit survival at t for (x, delta) tables on `x_grid`.

    `table` has trailing dimension 2U (censoring, event pairs per grid point)
    and need not be normalized. At equal x events come before censorings;
    once nothing is at risk the curve stays at its last value.
    """
    if method not in SURV_METHODS:
        raise ValueError(f"unknown survival method {method!r}")
    table = np.asarray(table, dtype=float)
    n_grid = x_grid.shape[0]
    pairs = table.reshape(table.shape[:-1] + (n_grid, 2))
    total = pairs.sum(axis=-1)
    upto = int(np.searchsorted(x_grid, t, side="right"))
    if upto == 0:
        return np.ones(table.shape[:-1])

    head = total[..., :upto]
    tail = total[..., upto:].sum(axis=-1)
    at_risk = np.cumsum(head[..., ::-1], axis=-1)[..., ::-1] + tail[..., None]
    hazard = np.clip(safe_divide(pairs[..., :upto, 1], at_risk), 0.0, 1.0)
    if method == "na":
        return np.exp(-hazard.sum(axis=-1))
    return np.prod(1.0 - hazard, axis=-1)


def survt_product_limit(x, delta, mass, t: float, method: str = "km") -> float:
    """surv_t of a weighted (x, delta) table given as atoms."""
    x = np.asarray(x, dtype=float).reshape(-1)
    delta = np.asarray(delta, dtype=int).reshape(-1)
    mass = np.asarray(mass, dtype=float).reshape(-1)
    grid, pos = np.unique(x, return_inverse=True)
    table = np.zeros(2 * grid.size)
    np.add.at(table, 2 * pos.reshape(-1) + delta, mass)
    return float(grid_survival(table, grid, t, method))


def tau_of_distribution(g: DiscreteDistribution, t: float, method: str = "km") -> float:
    """sum over support z of pr(z) * surv_t[pr(X, Delta | z)]; zero-marginal z are skipped."""
    if not (np.isfinite(t) and t >= 0):
        raise ValueError(f"t must be a nonnegative time, got {t}")
    mix, prz = mixture_tables(components_from_distribution(g))
    keep = prz > 0
    if not np.all(keep):
        logger.debug("Skipping %d z values with zero marginal", int(np.sum(~keep)))
    surv = grid_survival(mix[keep], g.support.x_grid, t, method)
    return float(np.clip(np.dot(prz[keep], surv), 0.0, 1.0))
