"""Censored log-normal (accelerated failure time) working model.

log T = intercept + cov @ slopes + sigma * eps, eps ~ N(0, 1). Events contribute
the density term and censored records the survivor term. Parameters are
fitted on (beta, log sigma) by Newton with a backtracking line search.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq
from scipy.special import log_ndtr, ndtr

from deduct.errors import NonConvergence, ZeroVariance

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
LOG_SIGMA_BOUNDS = (-25.0, 10.0)


@dataclass(frozen=True)
class LogNormalFit:
    intercept: float
    slopes: np.ndarray
    sigma: float
    converged: bool
    iterations: int = 0
    degenerate: bool = False  # no events: survivor is identically 1
    stratum: str = ""
    log_likelihood: float = 0.0

    def linear_predictor(self, covariates: np.ndarray) -> np.ndarray:
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if self.slopes.size == 0:
            return np.full(covariates.shape[0], self.intercept)
        return self.intercept + covariates @ self.slopes

    def survival(self, x: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        """P(T > x | covariates) as a (rows, len(x)) table; x may contain inf."""
        mu = self.linear_predictor(covariates)
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return np.ones((mu.size, x.size))
        with np.errstate(divide="ignore"):
            logx = np.log(x)
        return ndtr(-(logx[None, :] - mu[:, None]) / self.sigma)

    def shifted(self, alpha: float) -> "LogNormalFit":
        return replace(self, intercept=self.intercept + alpha)

    def summary(self) -> dict:
        return {
            "stratum": self.stratum,
            "intercept": self.intercept,
            "slopes": self.slopes.tolist(),
            "sigma": self.sigma,
            "converged": self.converged,
            "iterations": self.iterations,
            "degenerate": self.degenerate,
            "log_likelihood": self.log_likelihood,
        }


def _loglik(theta, X, y, events, with_derivatives=True):
    p = X.shape[1]
    beta, tau = theta[:p], theta[p]
    sigma = np.exp(tau)
    r = (y - X @ beta) / sigma
    ev = events.astype(bool)
    ll = float(np.sum(-tau - 0.5 * r[ev] ** 2 - _LOG_SQRT_2PI) + np.sum(log_ndtr(-r[~ev])))
    if not with_derivatives:
        return ll, None, None

    # d ll / d r and d2 ll / d r2 per record
    d1 = np.empty_like(r)
    d2 = np.empty_like(r)
    d1[ev], d2[ev] = -r[ev], -1.0
    rc = r[~ev]
    hazard = np.exp(-0.5 * rc ** 2 - _LOG_SQRT_2PI - log_ndtr(-rc))
    d1[~ev] = -hazard
    d2[~ev] = -hazard * (hazard - rc)

    grad = np.empty(p + 1)
    grad[:p] = X.T @ (-d1) / sigma
    grad[p] = np.sum(-d1 * r) - ev.sum()

    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = (X * d2[:, None]).T @ X / sigma ** 2
    cross = X.T @ (d2 * r + d1) / sigma
    hess[:p, p] = cross
    hess[p, :p] = cross
    hess[p, p] = np.sum(d2 * r ** 2 + d1 * r)
    return ll, grad, hess


def _newton_direction(grad, hess):
    neg = -hess
    ridge = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(neg)))))
    for _ in range(30):
        try:
            factor = cho_factor(neg + ridge * np.eye(neg.shape[0]), check_finite=False)
            return cho_solve(factor, grad, check_finite=False)
        except (LinAlgError, ValueError):
            ridge = 1e-8 * scale if ridge == 0.0 else ridge * 10.0
    return lstsq(neg, grad)[0]


def fit_lognormal(
    times: np.ndarray,
    events: np.ndarray,
    covariates: np.ndarray,
    stratum: str = "",
    rtol: float = 1e-10,
    gtol: float = 1e-6,
    max_iter: int = 100,
) -> LogNormalFit:
    """Censored log-normal MLE of `times` on `covariates`.

    Constant covariate columns get slope 0. Raises ZeroVariance when every
    record is an event and the log-times are fitted exactly.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    covariates = covariates.reshape(times.size, -1) if covariates.size else np.empty((times.size, 0))
    p = covariates.shape[1]
    slopes = np.zeros(p)

    if events.sum() == 0:
        logger.warning("Log-normal fit %s: no events; survivor is identically 1", stratum)
        return LogNormalFit(0.0, slopes, 1.0, True, 0, degenerate=True, stratum=stratum)

    active = np.ptp(covariates, axis=0) > 0
    X = np.column_stack([np.ones(times.size), covariates[:, active]])
    y = np.log(times)

    beta0 = lstsq(X, y)[0]
    resid = y - X @ beta0
    spread = float(np.sqrt(np.mean(resid ** 2)))
    if events.all() and spread <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        raise ZeroVariance(f"log-normal fit {stratum}: log-times are fitted exactly; sigma would be 0")
    theta = np.append(beta0, np.log(max(spread, 1e-3)))

    ll, grad, hess = _loglik(theta, X, y, events)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        step = _newton_direction(grad, hess)
        size = 1.0
        for _ in range(50):
            cand = theta + size * step
            cand[-1] = np.clip(cand[-1], *LOG_SIGMA_BOUNDS)
            ll_new, _, _ = _loglik(cand, X, y, events, with_derivatives=False)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            size *= 0.5
        else:
            # no acceptable step: only a stationary point counts as converged
            grad_norm = float(np.max(np.abs(grad)))
            if grad_norm <= gtol * max(abs(ll), 1.0):
                converged = True
                break
            raise NonConvergence(
                f"log-normal fit {stratum}: line search stalled with gradient {grad_norm:.3g}", stage="fit"
            )
        change = abs(ll_new - ll)
        theta = cand
        ll, grad, hess = _loglik(theta, X, y, events)
        if change <= rtol * max(abs(ll), 1.0):
            converged = True
            break

    if not converged:
        raise NonConvergence(
            f"log-normal fit {stratum}: log-likelihood still changing after {max_iter} iterations",
            stage="fit",
        )

    slopes[active] = theta[1:-1]
    fit = LogNormalFit(
        intercept=float(theta[0]),
        slopes=slopes,
        sigma=float(np.exp(theta[-1])),
        converged=True,
        iterations=iterations,
        stratum=stratum,
        log_likelihood=ll,
    )
    logger.debug("Log-normal fit %s: %s", stratum, fit.summary())
    return fit
