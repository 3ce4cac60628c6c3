"""Observed-data records, the canonical Dataset container and CSV ingestion.

A record is one subject's (c, r_obs, z, w, s, x, delta). NA is the literal
"NA" on disk, `None` on an ObservedRecord and NaN inside Dataset arrays.
"""
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from deduct.errors import EmptyDataset, InvariantViolation, MalformedRow

logger = logging.getLogger(__name__)

NA_TOKEN = "NA"


class ColumnSpec(BaseModel):
    """Maps CSV header names onto record fields."""

    c: str = "c"
    r_obs: str = "r_obs"
    s: str = "s"
    x: str = "x"
    delta: str = "delta"
    z_cols: List[str] = []
    w_cols: List[str] = []
    na_token: str = NA_TOKEN

    def required_columns(self) -> List[str]:
        return [self.c, self.r_obs, *self.z_cols, *self.w_cols, self.s, self.x, self.delta]


def _is_na(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


class ObservedRecord(BaseModel):
    """One subject's observed tuple. Construction fails on any invariant violation."""

    model_config = ConfigDict(frozen=True)

    c: float
    r_obs: int
    z: Tuple[float, ...] = ()
    w: Tuple[Optional[float], ...] = ()
    s: int = 0
    x: Optional[float] = None
    delta: Optional[int] = None
    row_id: Optional[int] = None

    def violations(self) -> List[str]:
        problems = []
        if not (math.isfinite(self.c) and self.c > 0):
            problems.append(f"c must be a positive real, got {self.c}")
        if self.r_obs not in (0, 1):
            problems.append(f"r_obs must be 0 or 1, got {self.r_obs}")
        if self.s not in (0, 1):
            problems.append(f"s must be 0 or 1, got {self.s}")
        if self.r_obs == 1 and self.s == 1:
            problems.append("s=1 is not allowed when r_obs=1")
        if any(_is_na(v) or not math.isfinite(v) for v in self.z):
            problems.append("z must be fully observed")
        if self.r_obs == 0 and any(_is_na(v) for v in self.w):
            problems.append("w must be observed for observed dropouts (r_obs=0)")
        if any(not _is_na(v) and not math.isfinite(v) for v in self.w):
            problems.append("w must be finite or NA")
        x_na, d_na = _is_na(self.x), _is_na(self.delta)
        if x_na != d_na:
            problems.append("x and delta must be NA jointly")
        unobserved = self.r_obs == 0 and self.s == 0
        if unobserved and not (x_na and d_na):
            problems.append("(x, delta) must be NA when r_obs=0 and s=0")
        if not unobserved and (x_na or d_na):
            problems.append("(x, delta) must be observed unless r_obs=0 and s=0")
        if not x_na:
            if not (self.x > 0 and self.x <= self.c):
                problems.append(f"x must satisfy 0 < x <= c, got x={self.x}, c={self.c}")
        if not d_na and self.delta not in (0, 1):
            problems.append(f"delta must be 0 or 1, got {self.delta}")
        return problems

    @model_validator(mode="after")
    def _check_invariants(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def projection(self) -> tuple:
        """O_i: the record without c, NA as None."""
        return (
            self.r_obs,
            tuple(self.z),
            tuple(None if _is_na(v) else v for v in self.w),
            self.s,
            None if _is_na(self.x) else self.x,
            None if _is_na(self.delta) else self.delta,
        )


def _block(r_obs: np.ndarray, s: np.ndarray) -> np.ndarray:
    # 0: (r_obs=0, s=1), 1: (r_obs=0, s=0), 2: r_obs=1
    return np.where(r_obs == 1, 2, np.where(s == 1, 0, 1))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Canonically ordered, validated observed data.

    Records 0..m1-1 are (r_obs=0, s=1), m1..m-1 are (r_obs=0, s=0) and
    m..n-1 have r_obs=1. Arrays are read-only.
    """

    c: np.ndarray
    r_obs: np.ndarray
    z: np.ndarray
    w: np.ndarray
    s: np.ndarray
    x: np.ndarray
    delta: np.ndarray
    row_ids: np.ndarray
    z_names: Tuple[str, ...] = ()
    w_names: Tuple[str, ...] = ()
    _records: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        for name in ("c", "r_obs", "z", "w", "s", "x", "delta", "row_ids"):
            getattr(self, name).setflags(write=False)

    # ---------- construction ----------

    @classmethod
    def from_arrays(
        cls,
        c,
        r_obs,
        z,
        w,
        s,
        x,
        delta,
        row_ids=None,
        z_names: Sequence[str] = (),
        w_names: Sequence[str] = (),
    ) -> "Dataset":
        """Validate column arrays and return them in canonical order."""
        c = np.asarray(c, dtype=float).reshape(-1)
        n = c.shape[0]
        if n == 0:
            raise EmptyDataset("dataset has no records")
        r_obs = np.asarray(r_obs, dtype=float).reshape(-1)
        s = np.asarray(s, dtype=float).reshape(-1)
        x = np.asarray(x, dtype=float).reshape(-1)
        delta = np.asarray(delta, dtype=float).reshape(-1)
        z = _columns(z, n)
        w = _columns(w, n)
        row_ids = np.arange(n) if row_ids is None else np.asarray(row_ids, dtype=int).reshape(-1)

        _validate_arrays(c, r_obs, z, w, s, x, delta, row_ids)

        r_obs = r_obs.astype(np.int8)
        s = s.astype(np.int8)
        order = np.argsort(_block(r_obs, s), kind="stable")
        z_names = tuple(z_names) or tuple(f"z{i + 1}" for i in range(z.shape[1]))
        w_names = tuple(w_names) or tuple(f"w{i + 1}" for i in range(w.shape[1]))
        return cls(
            c=c[order].copy(),
            r_obs=r_obs[order].copy(),
            z=z[order].copy(),
            w=w[order].copy(),
            s=s[order].copy(),
            x=x[order].copy(),
            delta=delta[order].copy(),
            row_ids=row_ids[order].copy(),
            z_names=z_names,
            w_names=w_names,
        )

    # ---------- counts ----------

    @property
    def n(self) -> int:
        return int(self.c.shape[0])

    @property
    def m(self) -> int:
        return int(np.sum(self.r_obs == 0))

    @property
    def m1(self) -> int:
        return int(np.sum((self.r_obs == 0) & (self.s == 1)))

    @property
    def z_dim(self) -> int:
        return int(self.z.shape[1])

    @property
    def w_dim(self) -> int:
        return int(self.w.shape[1])

    def is_canonical(self) -> bool:
        return bool(np.all(np.diff(_block(self.r_obs, self.s)) >= 0))

    # ---------- views ----------

    @property
    def records(self) -> List[ObservedRecord]:
        if not self._records:
            self._records.extend(self.record(i) for i in range(self.n))
        return self._records

    def record(self, i: int) -> ObservedRecord:
        x = None if np.isnan(self.x[i]) else float(self.x[i])
        d = None if np.isnan(self.delta[i]) else int(self.delta[i])
        return ObservedRecord(
            c=float(self.c[i]),
            r_obs=int(self.r_obs[i]),
            z=tuple(float(v) for v in self.z[i]),
            w=tuple(None if np.isnan(v) else float(v) for v in self.w[i]),
            s=int(self.s[i]),
            x=x,
            delta=d,
            row_id=int(self.row_ids[i]),
        )

    def take(self, indices) -> "Dataset":
        """Rows at `indices` (duplicates allowed), re-canonicalized."""
        idx = np.asarray(indices, dtype=int)
        return Dataset.from_arrays(
            self.c[idx], self.r_obs[idx], self.z[idx], self.w[idx], self.s[idx],
            self.x[idx], self.delta[idx], self.row_ids[idx], self.z_names, self.w_names,
        )

    def replace(self, **arrays) -> "Dataset":
        cols = {
            name: arrays.get(name, getattr(self, name))
            for name in ("c", "r_obs", "z", "w", "s", "x", "delta", "row_ids")
        }
        return Dataset.from_arrays(**cols, z_names=self.z_names, w_names=self.w_names)

    def same_records(self, other: "Dataset") -> bool:
        """Equality of the observed data (row identities ignored, NA equal to NA)."""
        if self.n != other.n or self.z_dim != other.z_dim or self.w_dim != other.w_dim:
            return False
        pairs = [
            (self.c, other.c), (self.r_obs, other.r_obs), (self.z, other.z), (self.w, other.w),
            (self.s, other.s), (self.x, other.x), (self.delta, other.delta),
        ]
        return all(np.array_equal(a, b, equal_nan=True) for a, b in pairs)


def _columns(values, n: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return np.empty((n, 0))
    return arr.reshape(n, -1)


def _validate_arrays(c, r_obs, z, w, s, x, delta, row_ids) -> None:
    n = c.shape[0]
    for name, arr in (("r_obs", r_obs), ("s", s), ("x", x), ("delta", delta), ("row_ids", row_ids)):
        if arr.shape[0] != n:
            raise InvariantViolation(f"column {name} has {arr.shape[0]} entries, expected {n}")

    def fail(mask, message):
        bad = np.flatnonzero(mask)
        if bad.size:
            raise InvariantViolation(message, row=int(row_ids[bad[0]]))

    x_na, d_na = np.isnan(x), np.isnan(delta)
    fail(~(np.isfinite(c) & (c > 0)), "c must be a positive real")
    fail(~np.isin(r_obs, (0, 1)), "r_obs must be 0 or 1")
    fail(~np.isin(s, (0, 1)), "s must be 0 or 1")
    fail((r_obs == 1) & (s == 1), "s=1 is not allowed when r_obs=1")
    fail(~np.all(np.isfinite(z), axis=1), "z must be fully observed")
    if w.shape[1]:
        fail((r_obs == 0) & np.any(np.isnan(w), axis=1), "w must be observed for observed dropouts (r_obs=0)")
        fail(np.any(np.isinf(w), axis=1), "w must be finite or NA")
    fail(x_na != d_na, "x and delta must be NA jointly")
    unobserved = (r_obs == 0) & (s == 0)
    fail(unobserved & ~x_na, "(x, delta) must be NA when r_obs=0 and s=0")
    fail(~unobserved & x_na, "(x, delta) must be observed unless r_obs=0 and s=0")
    with np.errstate(invalid="ignore"):
        fail(~x_na & ~((x > 0) & (x <= c)), "x must satisfy 0 < x <= c")
    fail(~d_na & ~np.isin(delta, (0, 1)), "delta must be 0 or 1")


def canonical_sort(records: Iterable[ObservedRecord]) -> Dataset:
    """Stable reorder into (r_obs=0,s=1), (r_obs=0,s=0), r_obs=1 blocks."""
    records = list(records)
    if not records:
        raise EmptyDataset("no records to sort")
    nan = float("nan")
    z_dim, w_dim = len(records[0].z), len(records[0].w)
    for rec in records:
        if len(rec.z) != z_dim or len(rec.w) != w_dim:
            raise InvariantViolation("records disagree on z/w dimension", row=rec.row_id)
    return Dataset.from_arrays(
        c=[r.c for r in records],
        r_obs=[r.r_obs for r in records],
        z=np.array([r.z for r in records], dtype=float).reshape(len(records), z_dim),
        w=np.array([[nan if v is None else v for v in r.w] for r in records], dtype=float).reshape(
            len(records), w_dim
        ),
        s=[r.s for r in records],
        x=[nan if r.x is None else r.x for r in records],
        delta=[nan if r.delta is None else r.delta for r in records],
        row_ids=[i if r.row_id is None else r.row_id for i, r in enumerate(records)],
    )


# ---------- CSV ----------

def _numeric_column(frame: pd.DataFrame, col: str, na_token: str) -> np.ndarray:
    raw = frame[col].astype(str).str.strip()
    empty = raw == ""
    if empty.any():
        raise MalformedRow(f"empty cell in column {col!r} (use {na_token!r} for missing)", row=int(np.flatnonzero(empty)[0]))
    is_na = raw == na_token
    values = pd.to_numeric(raw.where(~is_na), errors="coerce")
    bad = values.isna() & ~is_na
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise MalformedRow(f"non-numeric value {raw.iloc[i]!r} in column {col!r}", row=i)
    return values.to_numpy(dtype=float)


def parse_csv(path, schema: Optional[ColumnSpec] = None) -> Dataset:
    """Read a dataset CSV, validate every row and return it in canonical order.

    Row numbers in errors are 0-based data rows (header excluded) and are kept
    as `row_ids` for reporting.
    """
    schema = schema or ColumnSpec()
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.EmptyDataError:
        raise EmptyDataset(f"{path} is empty")
    except pd.errors.ParserError as e:
        # pandas counts file lines from 1, header included
        line = re.search(r"line (\d+)", str(e))
        row = int(line.group(1)) - 2 if line else None
        raise MalformedRow(f"cannot parse {path}: {e}", row=row) from e
    missing = [col for col in schema.required_columns() if col not in frame.columns]
    if missing:
        raise MalformedRow(f"missing columns {missing} in {path}")
    if frame.empty:
        raise EmptyDataset(f"{path} has no data rows")

    cols = {name: _numeric_column(frame, name, schema.na_token) for name in schema.required_columns()}
    n = len(frame)
    z = np.column_stack([cols[k] for k in schema.z_cols]) if schema.z_cols else np.empty((n, 0))
    w = np.column_stack([cols[k] for k in schema.w_cols]) if schema.w_cols else np.empty((n, 0))
    data = Dataset.from_arrays(
        c=cols[schema.c],
        r_obs=cols[schema.r_obs],
        z=z,
        w=w,
        s=cols[schema.s],
        x=cols[schema.x],
        delta=cols[schema.delta],
        z_names=schema.z_cols,
        w_names=schema.w_cols,
    )
    logger.info("Loaded %s: n=%d, m=%d, m1=%d", path, data.n, data.m, data.m1)
    return data


def _fmt(v: float, integer: bool = False, na_token: str = NA_TOKEN) -> str:
    if np.isnan(v):
        return na_token
    return str(int(v)) if integer else repr(float(v))


def write_csv(data: Dataset, path, schema: Optional[ColumnSpec] = None) -> Path:
    """Write a Dataset in the same dialect parse_csv reads (exact float repr)."""
    schema = schema or ColumnSpec(z_cols=list(data.z_names), w_cols=list(data.w_names))
    tok = schema.na_token
    out = {
        schema.c: [_fmt(v, na_token=tok) for v in data.c],
        schema.r_obs: [_fmt(v, True, tok) for v in data.r_obs.astype(float)],
    }
    for j, col in enumerate(schema.z_cols):
        out[col] = [_fmt(v, na_token=tok) for v in data.z[:, j]]
    for j, col in enumerate(schema.w_cols):
        out[col] = [_fmt(v, na_token=tok) for v in data.w[:, j]]
    out[schema.s] = [_fmt(v, True, tok) for v in data.s.astype(float)]
    out[schema.x] = [_fmt(v, na_token=tok) for v in data.x]
    out[schema.delta] = [_fmt(v, True, tok) for v in data.delta]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(out).to_csv(path, index=False)
    return path
