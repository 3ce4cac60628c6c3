import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import LinAlgError, lstsq, solve
from scipy.special import expit

from deduct.data_model import Dataset
from deduct.errors import DegenerateSelection, NonConvergence, SeparationDetected

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-15


@dataclass(frozen=True)
class SelectionModel:
    """Logistic model for P(S=1 | r_obs=0, z, w)."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    intercept_only: bool
    gradient_norm: float
    columns: Tuple[str, ...] = ()

    def design(self, zw: np.ndarray) -> np.ndarray:
        zw = np.atleast_2d(np.asarray(zw, dtype=float))
        if self.intercept_only:
            return np.ones((zw.shape[0], 1))
        return np.column_stack([np.ones(zw.shape[0]), zw])

    def predict(self, zw: np.ndarray) -> np.ndarray:
        p = expit(self.design(zw) @ self.coefficients)
        return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)

    def summary(self) -> dict:
        return {
            "columns": list(self.columns),
            "coefficients": self.coefficients.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
        }


def _irls(X: np.ndarray, y: np.ndarray, tol: float, max_iter: int):
    beta = np.zeros(X.shape[1])
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        grad = X.T @ (y - p)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            return beta, True, it - 1, grad_norm
        weights = p * (1.0 - p)
        hess = X.T @ (X * weights[:, None])
        try:
            step = solve(hess, grad, assume_a="pos", check_finite=False)
        except (LinAlgError, ValueError):
            step = lstsq(hess, grad)[0]
        beta = beta + step
    return beta, False, max_iter, grad_norm


def fit_selection(
    data: Dataset,
    intercept_only: bool = False,
    tol: float = 1e-8,
    max_iter: int = 100,
    strict: bool = True,
) -> SelectionModel:
    """Maximum-likelihood logistic regression of s on (1, z, w) over r_obs=0 records.

    With `strict=False` a detected separation is logged and the clamped fit is
    returned instead of raising.
    """
    mask = data.r_obs == 0
    y = data.s[mask].astype(float)
    if y.size == 0:
        raise DegenerateSelection("no observed dropouts to fit the selection model")
    if np.all(y == y[0]):
        raise DegenerateSelection(f"all observed dropouts have s={int(y[0])}")

    columns = ("intercept",) if intercept_only else ("intercept", *data.z_names, *data.w_names)
    if intercept_only:
        X = np.ones((y.size, 1))
    else:
        X = np.column_stack([np.ones(y.size), data.z[mask], data.w[mask]])

    beta, converged, iterations, grad_norm = _irls(X, y, tol, max_iter)
    model = SelectionModel(
        coefficients=beta,
        converged=converged,
        iterations=iterations,
        intercept_only=intercept_only,
        gradient_norm=grad_norm,
        columns=columns,
    )

    fitted = expit(X @ beta)
    separated = np.all(np.abs(y - fitted) < 1e-6) or (not converged and np.max(np.abs(beta)) > 20)
    if separated:
        msg = f"selection model separates s perfectly (|beta|max={np.max(np.abs(beta)):.3g})"
        if strict:
            raise SeparationDetected(msg, model=model)
        logger.warning("%s; continuing with the clamped fit", msg)
        return model
    if not converged:
        raise NonConvergence(f"IRLS did not converge in {max_iter} iterations (gradient {grad_norm:.3g})")
    logger.debug("Selection model converged in %d iterations: %s", iterations, beta)
    return model
