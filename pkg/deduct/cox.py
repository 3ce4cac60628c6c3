"""Cox proportional hazards working model: Newton-Raphson on the Breslow
partial likelihood and the Breslow baseline cumulative hazard."""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import LinAlgError, lstsq, solve

from deduct.errors import NonConvergence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoxFit:
    coefficients: np.ndarray       # (p,) zeros for inactive columns
    means: np.ndarray              # (p,) covariate centering
    event_times: np.ndarray        # (E,) unique event times, ascending
    cumulative_hazard: np.ndarray  # (E,) Breslow baseline at event_times
    stratum: str
    converged: bool
    iterations: int
    gradient_norm: float
    log_likelihood: float

    def baseline_at(self, x: np.ndarray) -> np.ndarray:
        """Right-continuous step baseline cumulative hazard at x."""
        x = np.asarray(x, dtype=float)
        if self.event_times.size == 0:
            return np.zeros_like(x)
        idx = np.searchsorted(self.event_times, x, side="right") - 1
        return np.where(idx >= 0, self.cumulative_hazard[np.clip(idx, 0, None)], 0.0)

    def survival(self, x: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        """S(x | covariates) as a (rows, len(x)) table."""
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        risk = np.exp((covariates - self.means) @ self.coefficients) if self.coefficients.size else np.ones(covariates.shape[0])
        return np.exp(-np.outer(risk, self.baseline_at(x)))

    def summary(self) -> dict:
        return {
            "stratum": self.stratum,
            "coefficients": self.coefficients.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "log_likelihood": self.log_likelihood,
            "baseline_steps": {
                "times": self.event_times.tolist(),
                "cumulative_hazard": self.cumulative_hazard.tolist(),
            },
        }


class _RiskSets:
    """Sorted data with tie groups, reused across Newton iterations."""

    def __init__(self, times: np.ndarray, events: np.ndarray, X: np.ndarray):
        order = np.argsort(times, kind="stable")
        self.times = times[order]
        self.events = events[order]
        self.X = X[order]
        self.group_times, self.group_start = np.unique(self.times, return_index=True)
        group_of = np.searchsorted(self.group_times, self.times)
        self.deaths = np.bincount(group_of, weights=self.events, minlength=self.group_times.size)
        self.event_x_sum = self.events @ self.X

    def _reverse_cumsum(self, arr):
        return np.cumsum(arr[::-1], axis=0)[::-1]

    def evaluate(self, beta: np.ndarray, with_hessian: bool = True):
        eta = self.X @ beta
        shift = eta.max() if eta.size else 0.0
        e = np.exp(eta - shift)
        s0 = self._reverse_cumsum(e)[self.group_start]
        s1 = self._reverse_cumsum(e[:, None] * self.X)[self.group_start]
        d = self.deaths
        has = d > 0
        ll = float(self.events @ eta - np.sum(d[has] * (np.log(s0[has]) + shift)))
        xbar = s1[has] / s0[has][:, None]
        grad = self.event_x_sum - d[has] @ xbar
        if not with_hessian:
            return ll, grad, None
        outer = e[:, None, None] * self.X[:, :, None] * self.X[:, None, :]
        s2 = self._reverse_cumsum(outer)[self.group_start][has]
        cov = s2 / s0[has][:, None, None] - xbar[:, :, None] * xbar[:, None, :]
        hess = -np.tensordot(d[has], cov, axes=1)
        return ll, grad, hess

    def breslow(self, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        e = np.exp(self.X @ beta)
        s0 = self._reverse_cumsum(e)[self.group_start]
        has = self.deaths > 0
        increments = self.deaths[has] / s0[has]
        return self.group_times[has], np.cumsum(increments)


def fit_cox(
    times: np.ndarray,
    events: np.ndarray,
    covariates: np.ndarray,
    stratum: str = "",
    tol: float = 1e-8,
    max_iter: int = 100,
) -> CoxFit:
    """Fit one Cox model (Breslow ties) and its Breslow baseline.

    Constant covariate columns are held at 0. With no events the baseline is
    zero everywhere and S is identically 1.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    covariates = covariates.reshape(times.size, -1) if covariates.size else np.empty((times.size, 0))
    p = covariates.shape[1]
    means = covariates.mean(axis=0) if times.size else np.zeros(p)
    beta_full = np.zeros(p)

    if events.sum() == 0:
        logger.warning("Cox fit %s: all observations censored; baseline hazard is zero", stratum)
        return CoxFit(beta_full, means, np.zeros(0), np.zeros(0), stratum, True, 0, 0.0, 0.0)

    active = np.ptp(covariates, axis=0) > 0 if times.size else np.zeros(p, dtype=bool)
    Xc = (covariates - means)[:, active]
    risk = _RiskSets(times, events, Xc)
    beta = np.zeros(Xc.shape[1])
    ll, grad, hess = risk.evaluate(beta)
    converged, iterations = True, 0
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0

    if Xc.shape[1]:
        converged = False
        for iterations in range(1, max_iter + 1):
            if grad_norm <= tol:
                converged = True
                iterations -= 1
                break
            try:
                step = solve(-hess, grad, assume_a="pos", check_finite=False)
            except (LinAlgError, ValueError):
                step = lstsq(-hess, grad)[0]
            size = 1.0
            for _ in range(40):
                cand = beta + size * step
                ll_new, grad_new, hess_new = risk.evaluate(cand)
                if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                    break
                size *= 0.5
            beta, ll, grad, hess = cand, ll_new, grad_new, hess_new
            grad_norm = float(np.max(np.abs(grad)))
        else:
            converged = grad_norm <= tol
        if not converged:
            raise NonConvergence(
                f"Cox fit {stratum}: gradient {grad_norm:.3g} above {tol:g} after {max_iter} iterations",
                stage="fit",
            )

    beta_full[active] = beta
    event_times, cumhaz = risk.breslow(beta)
    return CoxFit(
        coefficients=beta_full,
        means=means,
        event_times=event_times,
        cumulative_hazard=cumhaz,
        stratum=stratum,
        converged=converged,
        iterations=iterations,
        gradient_norm=grad_norm,
        log_likelihood=ll,
    )
