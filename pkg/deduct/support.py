"""Discretized support: per-stratum Cartesian products of unique (z, w) pairs
and unique (s, x, delta) triples.

Flat index layout: the r_obs=0 block first, then r_obs=1; inside a block the
order is row-major over (zw_index, sxd_index). Unique lists are sorted
lexicographically with NA last, so the layout does not depend on record order.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from deduct.data_model import Dataset, ObservedRecord
from deduct.errors import EmptyStratum, NotInSupport

logger = logging.getLogger(__name__)


def _unique_rows(arr: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Exact-equality row dedup with NA == NA. Returns (unique rows, inverse)."""
    if arr.shape[0] == 0:
        return arr.reshape(0, arr.shape[1]), np.zeros(0, dtype=int)
    if arr.shape[1] == 0:
        return np.empty((1, 0)), np.zeros(arr.shape[0], dtype=int)
    # observed values are finite, so +inf is a safe stand-in for NA
    keyed = np.where(np.isnan(arr), np.inf, arr)
    uniq, inverse = np.unique(keyed, axis=0, return_inverse=True)
    uniq = np.where(np.isinf(uniq), np.nan, uniq)
    return uniq, inverse.reshape(-1)


def _key(values) -> tuple:
    return tuple(None if (v is None or (isinstance(v, float) and math.isnan(v))) else float(v) for v in values)


@dataclass(frozen=True)
class SupportPoint:
    flat_index: int
    r_obs: int
    zw_index: int
    sxd_index: int
    z: Tuple[float, ...]
    w: Tuple[Optional[float], ...]
    s: int
    x: Optional[float]
    delta: Optional[int]


@dataclass
class Stratum:
    """One block of the support (Omega_0 or Omega_1)."""

    r_obs: int
    zw: np.ndarray          # (K, dz + dw), NaN for NA
    sxd: np.ndarray         # (J, 3) rows (s, x, delta)
    cell_z: np.ndarray      # (K,) index into DiscretizedSupport.unique_z
    outcome_col: np.ndarray  # (J,) column 2*u + delta on the x grid, -1 for (NA, NA)
    offset: int
    zw_lookup: Dict[tuple, int] = field(default_factory=dict)
    sxd_lookup: Dict[tuple, int] = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return int(self.zw.shape[0])

    @property
    def n_outcomes(self) -> int:
        return int(self.sxd.shape[0])

    @property
    def size(self) -> int:
        return self.n_cells * self.n_outcomes

    @property
    def observed_outcomes(self) -> np.ndarray:
        """Indices of triples with observed (x, delta): s=1 (r_obs=0) or all (r_obs=1)."""
        return np.flatnonzero(self.outcome_col >= 0)

    @property
    def unobserved_outcome(self) -> Optional[int]:
        idx = np.flatnonzero(self.outcome_col < 0)
        return int(idx[0]) if idx.size else None


@dataclass
class DiscretizedSupport:
    strata: Tuple[Stratum, Stratum]
    unique_z: np.ndarray    # (Z, dz) over both strata
    x_grid: np.ndarray      # (U,) sorted unique observed x over both strata
    z_dim: int
    w_dim: int
    record_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def omega0(self) -> Stratum:
        return self.strata[0]

    @property
    def omega1(self) -> Stratum:
        return self.strata[1]

    @property
    def unique_zw_0(self) -> np.ndarray:
        return self.strata[0].zw

    @property
    def unique_zw_1(self) -> np.ndarray:
        return self.strata[1].zw

    @property
    def unique_sxd_0(self) -> np.ndarray:
        return self.strata[0].sxd

    @property
    def unique_sxd_1(self) -> np.ndarray:
        return self.strata[1].sxd

    @property
    def size(self) -> int:
        return self.strata[0].size + self.strata[1].size

    @property
    def n_z(self) -> int:
        return int(self.unique_z.shape[0])

    @property
    def n_grid(self) -> int:
        return int(self.x_grid.shape[0])

    def lookup(self, key: tuple) -> int:
        """Flat index of a materialized (r_obs, z, w, s, x, delta) tuple."""
        r_obs, z, w, s, x, delta = key
        if r_obs not in (0, 1):
            raise NotInSupport(f"r_obs={r_obs} is not a stratum")
        stratum = self.strata[r_obs]
        k = stratum.zw_lookup.get(_key(tuple(z) + tuple(w)))
        j = stratum.sxd_lookup.get(_key((s, x, delta)))
        if k is None or j is None:
            raise NotInSupport(f"{key} is not a point of Omega_{r_obs}")
        return stratum.offset + k * stratum.n_outcomes + j

    def point(self, flat_index: int) -> SupportPoint:
        if not 0 <= flat_index < self.size:
            raise NotInSupport(f"flat index {flat_index} out of range [0, {self.size})")
        stratum = self.strata[0] if flat_index < self.strata[1].offset else self.strata[1]
        k, j = divmod(flat_index - stratum.offset, stratum.n_outcomes)
        zw = _key(stratum.zw[k])
        s, x, d = _key(stratum.sxd[j])
        return SupportPoint(
            flat_index=flat_index,
            r_obs=stratum.r_obs,
            zw_index=k,
            sxd_index=j,
            z=tuple(zw[: self.z_dim]),
            w=tuple(zw[self.z_dim:]),
            s=int(s),
            x=x,
            delta=None if d is None else int(d),
        )

    def points(self):
        for i in range(self.size):
            yield self.point(i)

    def diagnostics(self, n: int) -> dict:
        return {
            "omega_size": self.size,
            "omega0_size": self.strata[0].size,
            "omega1_size": self.strata[1].size,
            "n_cells_0": self.strata[0].n_cells,
            "n_cells_1": self.strata[1].n_cells,
            "n_x_grid": self.n_grid,
            "size_per_subject": self.size / max(n, 1),
        }

    def to_frame(self) -> pd.DataFrame:
        """Debug dump of Omega: flat index, stratum and materialized tuple."""
        rows = []
        for p in self.points():
            row = {"flat_index": p.flat_index, "stratum": f"omega{p.r_obs}", "r_obs": p.r_obs}
            row.update({f"z{i + 1}": v for i, v in enumerate(p.z)})
            row.update({f"w{i + 1}": v for i, v in enumerate(p.w)})
            row.update({"s": p.s, "x": p.x, "delta": p.delta})
            rows.append(row)
        return pd.DataFrame(rows)


def _build_stratum(r_obs: int, zw: np.ndarray, sxd: np.ndarray, offset: int) -> Tuple[Stratum, np.ndarray, np.ndarray]:
    uzw, zw_inv = _unique_rows(zw)
    usxd, sxd_inv = _unique_rows(sxd)
    stratum = Stratum(
        r_obs=r_obs,
        zw=uzw,
        sxd=usxd,
        cell_z=np.zeros(uzw.shape[0], dtype=int),
        outcome_col=np.full(usxd.shape[0], -1, dtype=int),
        offset=offset,
        zw_lookup={_key(row): k for k, row in enumerate(uzw)},
        sxd_lookup={_key(row): j for j, row in enumerate(usxd)},
    )
    return stratum, zw_inv, sxd_inv


def build_support(data: Dataset, require_both: bool = False) -> DiscretizedSupport:
    """Construct Omega = Omega_0 ∪ Omega_1 from a canonical dataset.

    c is not part of Omega. An empty stratum is allowed with a warning unless
    `require_both` is set, in which case EmptyStratum is raised.
    """
    n, m = data.n, data.m
    if require_both and (m == 0 or n - m == 0):
        which = "r_obs=0" if m == 0 else "r_obs=1"
        raise EmptyStratum(f"stratum {which} has no records; both strata are required")
    for r, count in ((0, m), (1, n - m)):
        if count == 0:
            logger.warning("Stratum r_obs=%d is empty; its factorization is unused", r)

    zw = np.hstack([data.z, data.w])
    sxd = np.column_stack([data.s.astype(float), data.x, data.delta])
    blocks = [np.flatnonzero(data.r_obs == 0), np.flatnonzero(data.r_obs == 1)]

    s0, zw_inv0, sxd_inv0 = _build_stratum(0, zw[blocks[0]], sxd[blocks[0]], 0)
    s1, zw_inv1, sxd_inv1 = _build_stratum(1, zw[blocks[1]], sxd[blocks[1]], s0.size)

    dz = data.z_dim
    all_z = np.vstack([s0.zw[:, :dz], s1.zw[:, :dz]])
    unique_z, z_inv = _unique_rows(all_z)
    s0.cell_z = z_inv[: s0.n_cells]
    s1.cell_z = z_inv[s0.n_cells:]

    xs = np.concatenate([s0.sxd[:, 1], s1.sxd[:, 1]])
    x_grid = np.unique(xs[~np.isnan(xs)])
    for st in (s0, s1):
        obs = ~np.isnan(st.sxd[:, 1])
        u = np.searchsorted(x_grid, st.sxd[obs, 1])
        st.outcome_col[obs] = 2 * u + st.sxd[obs, 2].astype(int)

    record_index = np.empty(n, dtype=int)
    record_index[blocks[0]] = s0.offset + zw_inv0 * s0.n_outcomes + sxd_inv0
    record_index[blocks[1]] = s1.offset + zw_inv1 * s1.n_outcomes + sxd_inv1

    support = DiscretizedSupport(
        strata=(s0, s1),
        unique_z=unique_z,
        x_grid=x_grid,
        z_dim=dz,
        w_dim=data.w_dim,
        record_index=record_index,
    )
    logger.info(
        "Built support: |Omega_0|=%d (%dx%d), |Omega_1|=%d (%dx%d), n=%d",
        s0.size, s0.n_cells, s0.n_outcomes, s1.size, s1.n_cells, s1.n_outcomes, n,
    )
    return support


def index_of(support: DiscretizedSupport, record: ObservedRecord) -> int:
    """Flat index of a record's (r_obs, z, w, s, x, delta) projection."""
    return support.lookup(record.projection())
