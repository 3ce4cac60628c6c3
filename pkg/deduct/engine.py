"""Deductive estimation: numerical Gateaux derivatives of tau at the working
distribution, the estimating equation sum_i Gateaux(O_i, F(alpha)) = 0 and the
influence-function standard error.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from common.result_schema import EstimationResult, SolverDiagnostics
from deduct.data_model import Dataset, ObservedRecord
from deduct.errors import DegenerateExtension, NoRoot
from deduct.estimand import (
    DiscreteDistribution,
    cell_grid,
    components_from_distribution,
    grid_survival,
    mixture_tables,
    tau_of_distribution,
    safe_divide,
)
from deduct.support import DiscretizedSupport, index_of
from deduct.working_models import Variant, WorkingModelFit, assemble_distribution, fit_working_models

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4
DEFAULT_BRACKET = (-5.0, 5.0)
BRACKET_LIMIT = 50.0
SCAN_POINTS = 11
CHUNK = 256
Z_95 = 1.959963984540054


def _flat_index(support: DiscretizedSupport, record: Union[ObservedRecord, int]) -> int:
    if isinstance(record, ObservedRecord):
        return index_of(support, record)
    return int(record)


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")


# ---------- generic path ----------

def perturb(g: DiscreteDistribution, record: Union[ObservedRecord, int], epsilon: float) -> DiscreteDistribution:
    """(1 - epsilon) * g + epsilon * point mass at the record's support point."""
    _check_epsilon(epsilon)
    i = _flat_index(g.support, record)
    probs = (1.0 - epsilon) * g.probs
    probs[i] += epsilon
    return DiscreteDistribution(g.support, probs)


def numerical_gateaux(
    g: DiscreteDistribution,
    record: Union[ObservedRecord, int],
    epsilon: float,
    functional: Callable[[DiscreteDistribution], float],
) -> float:
    """[functional(perturbed g) - functional(g)] / epsilon for any functional."""
    return (functional(perturb(g, record, epsilon)) - functional(g)) / epsilon


def gateaux(
    fit: WorkingModelFit,
    alpha: float,
    record: Union[ObservedRecord, int],
    epsilon: float,
    t: float,
    method: str = "km",
) -> float:
    g = assemble_distribution(fit, alpha)
    return numerical_gateaux(g, record, epsilon, lambda d: tau_of_distribution(d, t, method))


# ---------- fast path ----------

class GateauxEvaluator:
    """Gateaux derivatives of tau at a fixed distribution for many perturbation points.

    A point mass moves only the z cell it lands in; every other z row of the
    mixture scales by (1 - epsilon), which leaves its survival curve unchanged.
    """

    def __init__(self, g: DiscreteDistribution, t: float, method: str = "km"):
        self.g = g
        self.t = t
        self.method = method
        support = g.support
        self.support = support
        self.n_cols = 2 * support.n_grid
        self.mix, self.prz = mixture_tables(components_from_distribution(g))
        self.surv = grid_survival(self.mix, support.x_grid, t, method)
        self.tau = float(np.dot(self.prz, self.surv))

        g0 = g.block(0)
        st0 = support.omega0
        self.cell_mass0 = g0.sum(axis=1)
        self.obs_grid0 = cell_grid(st0, g0, self.n_cols)
        self.cond0 = safe_divide(self.obs_grid0, self.obs_grid0.sum(axis=1, keepdims=True))

    def _locate(self, flat: np.ndarray):
        st0, st1 = self.support.strata
        in1 = flat >= st1.offset
        stratum = np.where(in1, 1, 0)
        local = np.where(in1, flat - st1.offset, flat)
        n_out = np.where(in1, st1.n_outcomes, max(st0.n_outcomes, 1))
        cell, outcome = np.divmod(local, n_out)
        z = np.empty_like(flat)
        col = np.empty_like(flat)
        z[in1] = st1.cell_z[cell[in1]]
        col[in1] = st1.outcome_col[outcome[in1]]
        z[~in1] = st0.cell_z[cell[~in1]]
        col[~in1] = st0.outcome_col[outcome[~in1]]
        return stratum, cell, z, col

    def values(self, flat_indices: Sequence[int], epsilon: float) -> np.ndarray:
        _check_epsilon(epsilon)
        flat = np.asarray(flat_indices, dtype=int).reshape(-1)
        out = np.empty(flat.size)
        for start in range(0, flat.size, CHUNK):
            sl = slice(start, start + CHUNK)
            out[sl] = self._chunk(flat[sl], epsilon)
        return out

    def _chunk(self, flat: np.ndarray, epsilon: float) -> np.ndarray:
        keep = 1.0 - epsilon
        stratum, cell, z, col = self._locate(flat)
        rows = keep * self.mix[z]
        b_idx = np.arange(flat.size)

        one = stratum == 1
        rows[b_idx[one], col[one]] += epsilon

        zero = ~one
        if zero.any():
            k = cell[zero]
            rows[zero] -= keep * self.cell_mass0[k, None] * self.cond0[k]
            cell_total = keep * self.cell_mass0[k] + epsilon
            cond = self.cond0[k].copy()
            observed = col[zero] >= 0
            if observed.any():
                obs_rows = keep * self.obs_grid0[k[observed]]
                obs_rows[np.arange(obs_rows.shape[0]), col[zero][observed]] += epsilon
                cond[observed] = safe_divide(obs_rows, obs_rows.sum(axis=1, keepdims=True))
            rows[zero] += cell_total[:, None] * cond

        before = self.prz[z] * self.surv[z]
        after = (keep * self.prz[z] + epsilon) * grid_survival(rows, self.support.x_grid, self.t, self.method)
        return (after - before) / epsilon - (self.tau - before)


def record_indices(support: DiscretizedSupport, data: Dataset) -> np.ndarray:
    """Flat support index of every record of `data`, in dataset order."""
    return np.array([index_of(support, rec) for rec in data.records], dtype=int)


def gateaux_values(
    fit: WorkingModelFit,
    alpha: float,
    data: Dataset,
    epsilon: float,
    t: float,
    method: str = "km",
    indices: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    """Per-subject Gateaux values at F(alpha) and tau{F(alpha)}."""
    g = assemble_distribution(fit, alpha)
    evaluator = GateauxEvaluator(g, t, method)
    if indices is None:
        indices = record_indices(fit.support, data)
    unique, inverse = np.unique(indices, return_inverse=True)
    per_point = evaluator.values(unique, epsilon)
    return per_point[inverse.reshape(-1)], evaluator.tau


def sum_gateaux(
    fit: WorkingModelFit,
    alpha: float,
    data: Dataset,
    epsilon: float,
    t: float,
    method: str = "km",
    indices: Optional[np.ndarray] = None,
) -> float:
    values, _ = gateaux_values(fit, alpha, data, epsilon, t, method, indices)
    return float(np.sum(values))


# ---------- root search ----------

@dataclass
class AlphaSolution:
    alpha: float
    root_found: bool
    residual: float
    bracket: Tuple[float, float]
    iterations: int = 0
    evaluations: int = 0
    sign_changes: List[Tuple[float, float]] = field(default_factory=list)

    def diagnostics(self) -> SolverDiagnostics:
        return SolverDiagnostics(
            bracket=list(self.bracket),
            iterations=self.iterations,
            evaluations=self.evaluations,
            residual=self.residual,
            root_found=self.root_found,
            sign_changes=[list(pair) for pair in self.sign_changes],
        )


def _sign_changes(points: Dict[float, float]) -> List[Tuple[float, float]]:
    """Brackets (a, b) with f(a) * f(b) < 0 and exact zeros as (a, a), ascending."""
    finite = sorted((a, f) for a, f in points.items() if np.isfinite(f))
    changes = [(a, a) for a, fa in finite if fa == 0.0]
    changes += [(a, b) for (a, fa), (b, fb) in zip(finite, finite[1:]) if fa * fb < 0.0]
    return sorted(changes)


def solve_alpha(
    fit: WorkingModelFit,
    data: Dataset,
    epsilon: float = DEFAULT_EPSILON,
    t: float = 0.7,
    bracket: Tuple[float, float] = DEFAULT_BRACKET,
    limit: float = BRACKET_LIMIT,
    method: str = "km",
    xtol: float = 1e-8,
    indices: Optional[np.ndarray] = None,
    strict: bool = False,
) -> AlphaSolution:
    """Root of sum_gateaux in alpha.

    The bracket is scanned on a grid and doubled up to `limit` until a sign
    change shows up; the change nearest 0 is refined with Brent's method. With
    no sign change the alpha minimizing |sum_gateaux| is returned flagged
    `root_found=False` (or NoRoot is raised when `strict`).
    """
    if indices is None:
        indices = record_indices(fit.support, data)
    seen: Dict[float, float] = {}

    def f(alpha: float) -> float:
        alpha = float(alpha)
        if alpha not in seen:
            try:
                seen[alpha] = sum_gateaux(fit, alpha, data, epsilon, t, method, indices)
            except DegenerateExtension as exc:
                logger.debug("alpha=%g is outside the admissible range: %s", alpha, exc)
                seen[alpha] = math.nan
        return seen[alpha]

    lo, hi = bracket
    if not lo < hi:
        raise ValueError(f"bracket must satisfy lo < hi, got {bracket}")
    changes: List[Tuple[float, float]] = []
    while True:
        for a in np.linspace(lo, hi, SCAN_POINTS):
            f(a)
        changes = _sign_changes(seen)
        wider = max(2.0 * lo, -limit) if lo < 0 else lo, min(2.0 * hi, limit) if hi > 0 else hi
        if changes or wider == (lo, hi):
            break
        lo, hi = wider

    if not changes:
        finite = {a: v for a, v in seen.items() if np.isfinite(v)}
        if not finite:
            raise DegenerateExtension("sum of Gateaux derivatives is undefined over the whole bracket")
        best = min(finite, key=lambda a: abs(finite[a]))
        msg = f"no sign change of the estimating equation on [{lo:g}, {hi:g}]; best |sum|={abs(finite[best]):.3g} at alpha={best:g}"
        if strict:
            raise NoRoot(msg)
        logger.warning(msg)
        return AlphaSolution(best, False, finite[best], (lo, hi), 0, len(seen), [])

    a, b = min(changes, key=lambda ab: min(abs(ab[0]), abs(ab[1])) if ab[0] * ab[1] > 0 else 0.0)
    if seen[a] == 0.0:
        root, iterations = a, 0
    else:
        root, info = brentq(f, a, b, xtol=xtol, full_output=True)
        iterations = info.iterations
    if len(changes) > 1:
        logger.info("Estimating equation changes sign %d times; using the root nearest 0", len(changes))
    return AlphaSolution(float(root), True, f(root), (lo, hi), iterations, len(seen), changes)


# ---------- estimator ----------

class DeductiveEstimator:
    """Fits the working models once and estimates tau at any t.

    `wrong_s` uses an intercept-only selection model; `alpha_zero` skips the
    root search and reports tau{F(0)}.
    """

    def __init__(
        self,
        data: Dataset,
        variant: Variant = Variant.COX,
        epsilon: float = DEFAULT_EPSILON,
        wrong_s: bool = False,
        alpha_zero: bool = False,
        bracket: Tuple[float, float] = DEFAULT_BRACKET,
        bracket_limit: float = BRACKET_LIMIT,
        surv_method: str = "km",
        use_w_in_observed: bool = False,
        strict_selection: bool = True,
    ):
        _check_epsilon(epsilon)
        self.data = data
        self.variant = Variant(variant)
        self.epsilon = epsilon
        self.wrong_s = wrong_s
        self.alpha_zero = alpha_zero
        self.bracket = bracket
        self.bracket_limit = bracket_limit
        self.surv_method = surv_method
        self.use_w_in_observed = use_w_in_observed
        self.strict_selection = strict_selection
        self._fit: Optional[WorkingModelFit] = None

    @property
    def name(self) -> str:
        name = "DE.Cox" if self.variant == Variant.COX else "DE.LN"
        if self.wrong_s:
            name += ".WrongS"
        if self.alpha_zero:
            name += "(alpha=0)"
        return name

    @property
    def fit(self) -> WorkingModelFit:
        if self._fit is None:
            self._fit = fit_working_models(
                self.data,
                variant=self.variant,
                intercept_only_selection=self.wrong_s,
                use_w_in_observed=self.use_w_in_observed,
                strict=self.strict_selection,
            )
        return self._fit

    def estimate(self, t: float, epsilon: Optional[float] = None) -> EstimationResult:
        epsilon = self.epsilon if epsilon is None else epsilon
        fit = self.fit
        indices = fit.support.record_index
        if self.alpha_zero:
            solution = AlphaSolution(0.0, True, math.nan, (0.0, 0.0))
        else:
            solution = solve_alpha(
                fit, self.data, epsilon, t, self.bracket, self.bracket_limit, self.surv_method, indices=indices
            )
        values, tau_hat = gateaux_values(fit, solution.alpha, self.data, epsilon, t, self.surv_method, indices)
        tau_hat = float(np.clip(tau_hat, 0.0, 1.0))
        if self.alpha_zero:
            solution.residual = float(np.sum(values))
        se = math.sqrt(float(np.sum(values ** 2))) / self.data.n
        warnings = [] if solution.root_found else ["NoRoot"]
        if fit.n_zero_cells:
            warnings.append(f"AllMassZero:{fit.n_zero_cells}")
        logger.info("%s at t=%g: tau=%.4f alpha=%.4g se=%.4f", self.name, t, tau_hat, solution.alpha, se)
        return EstimationResult(
            estimator=self.name,
            variant=self.variant.value,
            t=t,
            tau_hat=tau_hat,
            alpha_hat=solution.alpha,
            se=se,
            ci_lo=tau_hat - Z_95 * se,
            ci_hi=tau_hat + Z_95 * se,
            epsilon=epsilon,
            n=self.data.n,
            solver=solution.diagnostics(),
            support=fit.support.diagnostics(self.data.n),
            gateaux_values=values.tolist(),
            warnings=warnings,
        )

    def estimate_curve(self, times: Sequence[float]) -> List[EstimationResult]:
        return [self.estimate(t) for t in times]

    def compare_epsilon(self, t: float, epsilons: Sequence[float] = (1e-4, 1e-6)) -> Dict[float, EstimationResult]:
        """Estimates at several epsilon values on the same fit."""
        results = {eps: self.estimate(t, epsilon=eps) for eps in epsilons}
        taus = [r.tau_hat for r in results.values()]
        logger.info("epsilon comparison at t=%g: tau spread %.3g", t, max(taus) - min(taus))
        return results


def estimate(
    data: Dataset,
    variant: Variant = Variant.COX,
    epsilon: float = DEFAULT_EPSILON,
    t: float = 0.7,
    **options,
) -> EstimationResult:
    """Fit, solve for alpha and return tau-hat with its standard error."""
    return DeductiveEstimator(data, variant, epsilon, **options).estimate(t)
