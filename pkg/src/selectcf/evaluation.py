"""Evaluation: ground-truth MSE, doubly-robust MSE estimation, AR/FR, policy swap, hold-out."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    DegenerateStudyError,
    FeatureMode,
    FittedPredictor,
    LogitModel,
    Study,
    Treatment,
    predict,
)
from .learners import estimate_dual_labels, fit_label_model, fit_learner
from .regress import DEFAULT_RIDGE, DesignMatrix, fit_least_squares, predict_linear, predict_proba


@dataclass(frozen=True)
class LocationStats:
    location: int
    ar_emp: float
    fr_emp: float
    n: int


@dataclass(frozen=True)
class SwapOutcome:
    location: int
    selected: int
    fr_historical: float
    fr_swapped: float


@dataclass(frozen=True)
class HoldoutResult:
    residual_mse: float
    truth_mse: Optional[float]
    n_eval: int


def mse_vs_truth(predictor: FittedPredictor, test: Study) -> float:
    """Mean squared distance between the predictor and the true ``nu(x)``."""
    if len(test) == 0:
        raise ValueError("empty test set")
    if test.truth is None:
        raise ValueError("test set carries no truth records")
    return float(np.mean((test.truth.nu - predict(predictor, test.x)) ** 2))


def truth_side_mse(predictor: FittedPredictor, test: Study) -> float:
    """``mean((Y_a1 - nu_hat(x))^2)`` from the sealed potential outcomes."""
    if test.truth is None:
        raise ValueError("test set carries no truth records")
    return float(np.mean((test.truth.y_a1 - predict(predictor, test.x)) ** 2))


PiSource = Union[None, Sequence[LogitModel], Callable]


def _pi_on(test: Study, rows: np.ndarray, predictor: FittedPredictor, pi: PiSource,
           clip_epsilon: float) -> np.ndarray:
    x, z = test.x[rows], test.z[rows]
    if callable(pi):
        return np.clip(pi(x, z), clip_epsilon, 1 - clip_epsilon)
    models = pi if pi is not None else predictor.nuisance_pi
    models = [m for m in (models or ()) if m is not None]
    if not models:
        raise ValueError("no propensity models: pass pi= or a DR predictor with fitted pi nuisances")
    xz = np.hstack([x, z])
    return np.mean([predict_proba(m, xz) for m in models], axis=0)


def _eta_cross_fit(test: Study, residual2: np.ndarray, rows: np.ndarray, seed: int,
                   ridge_lambda: float) -> np.ndarray:
    """Two-fold cross-fitted linear regression of squared residuals on ``(x, z)``, floored at 0."""
    a3 = test.index_of(Treatment.A3)
    if len(a3) < 2:
        raise DegenerateStudyError("error regression needs at least two A3 samples")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    fold = np.empty(len(test), dtype=int)
    fold[:] = rng.integers(0, 2, len(test))
    fold[rng.permutation(a3)] = np.arange(len(a3)) % 2
    xz = test.xz
    out = np.zeros(len(test))
    for f in (0, 1):
        train = (fold == f) & np.isin(np.arange(len(test)), a3)
        model = fit_least_squares(DesignMatrix(xz[train], residual2[train]), ridge_lambda,
                                  FeatureMode.X_AND_Z)
        target = rows & (fold != f)
        out[target] = predict_linear(model, xz[target])
    return np.maximum(out, 0.0)


def dr_mse_estimate(predictor: FittedPredictor, test: Study, labels: np.ndarray, *,
                    pi: PiSource = None, eta: Optional[Callable] = None, seed: int = 0,
                    clip_epsilon: float = 0.01, ridge_lambda: float = DEFAULT_RIDGE) -> float:
    """Doubly-robust estimate of ``E[(Y_a1 - nu_hat(x))^2]`` without counterfactual labels.

    ``labels`` holds the estimated ``Y_a1`` of each A3 test sample in
    ``test.index_of(A3)`` order. The propensity defaults to the average of
    the predictor's own cross-fitted propensity models; ``pi`` and ``eta``
    may instead be callables of ``(x, z)``.
    """
    a3 = test.index_of(Treatment.A3)
    labels = np.asarray(labels, float)
    if len(labels) != len(a3) or np.isnan(labels).any():
        raise ValueError("missing estimated Y_a1 for some A3 test samples")
    if len(test) == 0:
        raise ValueError("empty test set")
    nu_hat = predict(predictor, test.x)
    is_a1 = test.t == Treatment.A1
    non_a1 = ~is_a1
    residual2 = np.zeros(len(test))
    residual2[a3] = (labels - nu_hat[a3]) ** 2

    terms = np.where(is_a1, (test.y - nu_hat) ** 2, 0.0)
    if non_a1.any():
        if eta is None:
            eta_hat = _eta_cross_fit(test, residual2, non_a1, seed, ridge_lambda)
        else:
            eta_hat = np.zeros(len(test))
            eta_hat[non_a1] = np.maximum(eta(test.x[non_a1], test.z[non_a1]), 0.0)
        pi_hat = np.ones(len(test))
        pi_hat[non_a1] = _pi_on(test, non_a1, predictor, pi, clip_epsilon)
        is_a3 = test.t == Treatment.A3
        aug = np.where(is_a3, (residual2 - eta_hat) / pi_hat, 0.0) + eta_hat
        terms = np.where(non_a1, aug, terms)
    return float(terms.mean())


# ---------------------------------------------------------------------------
# acceptance / failure rates


def adversity_threshold(study: Study, quantile: float = 0.75) -> float:
    """Default adverse-outcome cut: a quantile of the pooled A1 outcomes."""
    a1 = study.mask(Treatment.A1)
    if not a1.any():
        raise DegenerateStudyError("no A1 outcomes to derive an adversity threshold from")
    return float(np.quantile(study.y[a1], quantile))


def location_stats(study: Study, threshold: Optional[float] = None) -> list[LocationStats]:
    """Per-location acceptance rate and failure rate, both over all ``N`` samples."""
    if threshold is None:
        threshold = adversity_threshold(study) if study.mask(Treatment.A1).any() else np.inf
    out = []
    for loc in study.locations:
        here = study.location == loc
        a1 = here & (study.t == Treatment.A1)
        n = int(here.sum())
        out.append(LocationStats(int(loc), a1.sum() / n, (a1 & (study.y > threshold)).sum() / n, n))
    return out


def policy_swap_fr(predictor: FittedPredictor, study: Study, labels: Optional[np.ndarray] = None,
                   threshold: Optional[float] = None) -> list[SwapOutcome]:
    """Re-select A1 cases by predicted risk while keeping each location's A1 count.

    Per location, A1 and A3 samples are pooled and ranked by predicted
    outcome (ties by sample index); the ``m`` lowest are kept, ``m`` being
    the historical A1 count. Selected A3 cases are scored with their
    estimated ``Y_a1`` labels.
    """
    if labels is None:
        labels = estimate_dual_labels(study)
    if threshold is None:
        threshold = adversity_threshold(study)
    outcome = study.y.astype(float).copy()
    a3 = study.index_of(Treatment.A3)
    outcome[a3] = labels
    score = predict(predictor, study.x)
    results = []
    for loc in study.locations:
        here = study.location == loc
        n = int(here.sum())
        hist = here & (study.t == Treatment.A1)
        m = int(hist.sum())
        pool = np.flatnonzero(here & study.mask(Treatment.A1, Treatment.A3))
        order = pool[np.lexsort((pool, score[pool]))]
        chosen = order[:m]
        results.append(SwapOutcome(
            int(loc), m,
            float((study.y[hist] > threshold).sum() / n),
            float((outcome[chosen] > threshold).sum() / n),
        ))
    return results


def holdout_location_mse(learner: str, study: Study, holdout: Sequence[int], seed: int = 0,
                         **fit_options) -> HoldoutResult:
    """Train on every location outside ``holdout``; score on the holdout's A1 samples."""
    holdout = np.asarray(list(holdout))
    in_holdout = np.isin(study.location, holdout)
    if in_holdout.all():
        raise ValueError("holdout covers every location; nothing left to train on")
    evaluate = in_holdout & (study.t == Treatment.A1)
    if not evaluate.any():
        raise DegenerateStudyError("holdout locations contain no A1 samples")
    predictor = fit_learner(learner, study.take(~in_holdout), seed, **fit_options)
    held = study.take(evaluate)
    resid = float(np.mean((held.y - predict(predictor, held.x)) ** 2))
    truth = mse_vs_truth(predictor, held) if held.truth is not None else None
    return HoldoutResult(resid, truth, int(evaluate.sum()))


def strictest_location(study: Study) -> int:
    """Location with the lowest acceptance rate (drawn rate if known, else empirical)."""
    if study.ar is not None:
        return int(np.argmin(study.ar))
    stats = location_stats(study, threshold=np.inf)
    return min(stats, key=lambda s: (s.ar_emp, s.location)).location


def heldout_dual_labels(train: Study, test: Study) -> np.ndarray:
    """Estimated dual-treatment labels for ``test`` from a label model fitted on ``train``."""
    return estimate_dual_labels(test, model=fit_label_model(train))
