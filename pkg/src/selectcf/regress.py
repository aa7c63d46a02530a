"""Least-squares and logistic fitting.

Both fits include an unpenalised intercept. Ridge penalties apply to the
slope coefficients only, so the intercept is handled by centering.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit

from .core import (
    DegenerateLabelsError,
    FeatureMode,
    InvalidModelError,
    LinearModel,
    LogitModel,
    RankDeficiencyError,
)

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class DesignMatrix:
    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        y = np.asarray(self.targets, dtype=float)
        if f.ndim != 2 or y.ndim != 1:
            raise ValueError("features must be 2-D and targets 1-D")
        if f.shape[0] != y.shape[0]:
            raise ValueError(f"{f.shape[0]} rows but {y.shape[0]} targets")
        if f.shape[0] < 1 or f.shape[1] < 1:
            raise ValueError("design needs at least one row and one column")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "targets", y)

    @property
    def rows(self) -> int:
        return self.features.shape[0]


def fit_least_squares(design: DesignMatrix, ridge_lambda: float = DEFAULT_RIDGE,
                      feature_mode: FeatureMode = FeatureMode.X_ONLY) -> LinearModel:
    """Minimise ``sum((y - X b - c)^2) + ridge_lambda * |b|^2`` via the normal equations."""
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    X, y = design.features, design.targets
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc
    if ridge_lambda > 0:
        gram[np.diag_indices_from(gram)] += ridge_lambda
    rhs = Xc.T @ (y - y_mean)
    try:
        chol = linalg.cho_factor(gram, lower=True, check_finite=False)
        diag = np.abs(np.diag(chol[0]))
        if ridge_lambda == 0 and (diag.min() == 0 or (diag.max() / diag.min()) ** 2 > _COND_LIMIT):
            raise linalg.LinAlgError("ill-conditioned")
    except linalg.LinAlgError as exc:
        if ridge_lambda == 0:
            raise RankDeficiencyError(
                "normal equations are singular; refit with ridge_lambda > 0") from exc
        raise
    beta = linalg.cho_solve(chol, rhs, check_finite=False)
    return LinearModel(beta, y_mean - x_mean @ beta, feature_mode)


def predict_linear(model: LinearModel, features: np.ndarray):
    """``features @ coefficients + intercept`` for a vector or a batch of rows."""
    f = np.asarray(features, dtype=float)
    if f.shape[-1] != len(model.coefficients):
        raise InvalidModelError(
            f"feature length {f.shape[-1]} does not match model width {len(model.coefficients)}")
    out = f @ model.coefficients + model.intercept
    return float(out) if f.ndim == 1 else out


def _penalised_loglik(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    eta = X @ w + b
    return float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)) - 0.5 * lam * w @ w)


def fit_logistic(design: DesignMatrix, max_iter: int = 100, tol: float = 1e-8,
                 ridge_lambda: float = DEFAULT_RIDGE, clip_epsilon: float = 0.01) -> LogitModel:
    """Ridge-penalised logistic regression by iteratively reweighted least squares.

    Each Newton step is halved until the penalised log-likelihood does not
    decrease, so the objective trace is monotone. Hitting ``max_iter`` is
    logged and reported on the model, not raised.
    """
    X, y = design.features, design.targets
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic targets must be 0/1")
    if y.min() == y.max():
        raise DegenerateLabelsError("logistic fit needs both classes present")
    n, p = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    penalty = np.full(p + 1, ridge_lambda)
    penalty[-1] = 0.0

    coef = np.zeros(p + 1)
    obj = _penalised_loglik(coef[:-1], coef[-1], X, y, ridge_lambda)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(A @ coef)
        w = mu * (1 - mu)
        grad = A.T @ (y - mu) - penalty * coef
        hess = (A * w[:, None]).T @ A
        hess[np.diag_indices_from(hess)] += penalty
        # tiny jitter keeps separable / intercept-only cases solvable
        hess[np.diag_indices_from(hess)] += 1e-12
        step = linalg.solve(hess, grad, assume_a="pos", check_finite=False)
        scale = 1.0
        while True:
            cand = coef + scale * step
            cand_obj = _penalised_loglik(cand[:-1], cand[-1], X, y, ridge_lambda)
            if cand_obj >= obj - 1e-12 * abs(obj) or scale < 1e-10:
                break
            scale *= 0.5
        if cand_obj < obj:
            # no ascent direction left at machine precision
            converged = True
            break
        delta = np.max(np.abs(cand - coef))
        coef, obj = cand, cand_obj
        trace.append(obj)
        if delta < tol:
            converged = True
            break
    if not converged:
        logger.warning("logistic IRLS reached max_iter=%d without converging", max_iter)
    return LogitModel(coef[:-1], coef[-1], clip_epsilon, it, converged, tuple(trace))


def predict_proba(model: LogitModel, features: np.ndarray):
    """Clipped ``sigmoid(features @ coefficients + intercept)``."""
    f = np.asarray(features, dtype=float)
    if f.shape[-1] != len(model.coefficients):
        raise InvalidModelError(
            f"feature length {f.shape[-1]} does not match model width {len(model.coefficients)}")
    p = np.clip(expit(f @ model.coefficients + model.intercept),
                model.clip_epsilon, 1 - model.clip_epsilon)
    return float(p) if f.ndim == 1 else p
