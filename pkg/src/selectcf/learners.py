"""Counterfactual learners: standard predictor, regression adjustment, doubly robust.

The RA and DR learners are cross-fitted: every fold model's pseudo-outcomes
come from nuisance models trained on other folds. Dual-treatment labels are
estimated once on the full training data before folding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    Aggregate,
    DegenerateStudyError,
    FeatureMode,
    FittedPredictor,
    FoldPlanError,
    Learner,
    LinearModel,
    LogitModel,
    Study,
    Treatment,
)
from .regress import (
    DEFAULT_RIDGE,
    DesignMatrix,
    fit_least_squares,
    fit_logistic,
    predict_linear,
    predict_proba,
)
from . import synthgen

RA_ROTATIONS = ((0, 1), (1, 0))
DR_ROTATIONS = ((0, 1, 2), (2, 0, 1), (1, 2, 0))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray
    seed: int

    def members(self, fold: int) -> np.ndarray:
        return self.assignment == fold


def make_fold_plan(study: Study, k: int, seed: int) -> FoldPlan:
    """Split samples into ``k`` folds, stratified by treatment class."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
    assignment = np.empty(len(study), dtype=np.int64)
    offset = 0
    for t in Treatment:
        idx = study.index_of(t)
        perm = rng.permutation(idx)
        # rotate the starting fold so small classes don't pile up in fold 0
        assignment[perm] = (np.arange(len(perm)) + offset) % k
        offset += len(perm)
    return FoldPlan(k, assignment, seed)


def check_fold_plan(study: Study, plan: FoldPlan, needs: dict) -> None:
    """``needs`` maps a fold id to the treatment classes it must contain."""
    if len(plan.assignment) != len(study):
        raise FoldPlanError("fold assignment does not cover the study")
    for fold, classes in needs.items():
        for t in classes:
            if not np.any(plan.members(fold) & study.mask(t)):
                raise FoldPlanError(f"fold {fold} holds no {t.name} samples")


@dataclass(frozen=True)
class OracleHooks:
    """Ground-truth substitutes for diagnostic runs.

    ``true_mu`` and ``true_pi`` take ``(x, z)`` batches; ``true_pi`` must be
    the conditional propensity ``P(T=A3 | x, z, T != A1)``. ``true_y_a1``
    replaces the estimated dual-treatment labels and is aligned with the A3
    samples of the study passed to the learner.
    """

    true_mu: Optional[Callable] = None
    true_pi: Optional[Callable] = None
    true_y_a1: Optional[np.ndarray] = None


def generator_hooks(study: Study, mu: bool = True, pi: bool = True, labels: bool = True) -> OracleHooks:
    """Hooks sourced from a synthetic study's configuration and sealed truth."""
    cfg = study.config
    if cfg is None or study.truth is None:
        raise ValueError("oracle hooks need a generated study with truth")
    return OracleHooks(
        true_mu=(lambda x, z: synthgen.true_mu_a1(x, z, cfg)) if mu else None,
        true_pi=(lambda x, z: synthgen.true_conditional_propensity(x, z, cfg)) if pi else None,
        true_y_a1=study.truth.y_a1[study.index_of(Treatment.A3)] if labels else None,
    )


def zero_mu(x, z):
    return np.zeros(len(x))


# ---------------------------------------------------------------------------
# label estimation


def fit_label_model(study: Study, ridge_lambda: float = DEFAULT_RIDGE) -> LinearModel:
    """Regress observed outcomes on ``x`` over every A1 sample, all locations pooled."""
    a1 = study.mask(Treatment.A1)
    if not a1.any():
        raise DegenerateStudyError("label estimation needs at least one A1 sample")
    return fit_least_squares(DesignMatrix(study.x[a1], study.y[a1]), ridge_lambda)


def estimate_dual_labels(study: Study, model: Optional[LinearModel] = None,
                         ridge_lambda: float = DEFAULT_RIDGE) -> np.ndarray:
    """Estimated ``Y_a1`` for each A3 sample, in ``study.index_of(A3)`` order.

    Pass ``model`` to label a held-out study with a model fitted elsewhere.
    """
    if model is None:
        model = fit_label_model(study, ridge_lambda)
    a3 = study.mask(Treatment.A3)
    if not a3.any():
        return np.empty(0)
    return predict_linear(model, study.x[a3])


def raw_dual_labels(study: Study) -> np.ndarray:
    """Observed dual-treatment outcomes used as-is (no label estimation)."""
    return study.y[study.mask(Treatment.A3)].copy()


def _full_labels(study: Study, labels: np.ndarray) -> np.ndarray:
    a3 = study.index_of(Treatment.A3)
    labels = np.asarray(labels, float)
    if len(labels) != len(a3):
        raise ValueError(f"got {len(labels)} dual labels for {len(a3)} A3 samples")
    full = np.full(len(study), np.nan)
    full[a3] = labels
    return full


# ---------------------------------------------------------------------------
# learners


def fit_sp(study: Study, ridge_lambda: float = DEFAULT_RIDGE) -> FittedPredictor:
    """Standard predictor: least squares of ``y`` on ``x`` over A1 samples only."""
    a1 = study.mask(Treatment.A1)
    if not a1.any():
        raise DegenerateStudyError("SP needs at least one A1 sample")
    model = fit_least_squares(DesignMatrix(study.x[a1], study.y[a1]), ridge_lambda)
    return FittedPredictor(Learner.SP, (model,))


def _fit_mu(study: Study, rows: np.ndarray, full_labels: np.ndarray, ridge_lambda: float) -> LinearModel:
    rows = rows & study.mask(Treatment.A3)
    return fit_least_squares(DesignMatrix(study.xz[rows], full_labels[rows]), ridge_lambda,
                             FeatureMode.X_AND_Z)


def _fit_pi(study: Study, rows: np.ndarray, ridge_lambda: float, clip_epsilon: float) -> LogitModel:
    rows = rows & study.has_z
    target = (study.t[rows] == Treatment.A3).astype(float)
    return fit_logistic(DesignMatrix(study.xz[rows], target), ridge_lambda=ridge_lambda,
                        clip_epsilon=clip_epsilon)


def ra_pseudo_outcomes(study: Study, mu_hat: np.ndarray) -> np.ndarray:
    """``y`` for A1 samples, the outcome-model prediction otherwise."""
    return np.where(study.t == Treatment.A1, study.y, mu_hat)


def dr_pseudo_outcomes(study: Study, labels_full: np.ndarray, mu_hat: np.ndarray,
                       pi_hat: np.ndarray) -> np.ndarray:
    """Augmented inverse-propensity pseudo-outcome.

    ``labels_full`` only needs valid entries on A3 rows; ``pi_hat`` is the
    conditional propensity of being A3 among non-A1 samples.
    """
    is_a3 = study.t == Treatment.A3
    correction = np.zeros(len(study))
    correction[is_a3] = (labels_full[is_a3] - mu_hat[is_a3]) / pi_hat[is_a3]
    return np.where(study.t == Treatment.A1, study.y, correction + mu_hat)


def _mu_predictions(study, rows, model: Optional[LinearModel], hooks: Optional[OracleHooks]):
    out = np.zeros(len(study))
    rows = rows & study.has_z
    if hooks is not None and hooks.true_mu is not None:
        out[rows] = hooks.true_mu(study.x[rows], study.z[rows])
    else:
        out[rows] = predict_linear(model, study.xz[rows])
    return out


def _pi_predictions(study, rows, model: Optional[LogitModel], hooks: Optional[OracleHooks],
                    clip_epsilon: float):
    out = np.ones(len(study))
    rows = rows & study.has_z
    if hooks is not None and hooks.true_pi is not None:
        out[rows] = np.clip(hooks.true_pi(study.x[rows], study.z[rows]), clip_epsilon, 1 - clip_epsilon)
    else:
        out[rows] = predict_proba(model, study.xz[rows])
    return out


def _resolve_labels(study: Study, labels, hooks: Optional[OracleHooks]) -> np.ndarray:
    if hooks is not None and hooks.true_y_a1 is not None:
        labels = hooks.true_y_a1
    if labels is None:
        labels = estimate_dual_labels(study)
    return _full_labels(study, labels)


def fit_ra(study: Study, labels: Optional[np.ndarray] = None, plan: Optional[FoldPlan] = None,
           hooks: Optional[OracleHooks] = None, *, seed: int = 0,
           aggregate: Aggregate = Aggregate.MEAN,
           ridge_lambda: float = DEFAULT_RIDGE) -> FittedPredictor:
    """Two-fold cross-fitted regression adjustment."""
    plan = plan or make_fold_plan(study, 2, seed)
    if plan.k != 2:
        raise FoldPlanError(f"RA needs a 2-fold plan, got k={plan.k}")
    full = _resolve_labels(study, labels, hooks)
    oracle_mu = hooks is not None and hooks.true_mu is not None
    if not oracle_mu:
        check_fold_plan(study, plan, {0: [Treatment.A3], 1: [Treatment.A3]})

    fold_models, mus, rotations = [], [], []
    for i, j in RA_ROTATIONS:
        mu_model = None if oracle_mu else _fit_mu(study, plan.members(i), full, ridge_lambda)
        target = plan.members(j)
        mu_hat = _mu_predictions(study, target, mu_model, hooks)
        pseudo = ra_pseudo_outcomes(study, mu_hat)
        fold_models.append(
            fit_least_squares(DesignMatrix(study.x[target], pseudo[target]), ridge_lambda))
        mus.append(mu_model)
        rotations.append({"mu": i, "target": j})
    return FittedPredictor(Learner.RA, fold_models, nuisance_mu=mus, aggregate=aggregate,
                           rotations=tuple(rotations), diagnostic=hooks is not None)


def fit_dr(study: Study, labels: Optional[np.ndarray] = None, plan: Optional[FoldPlan] = None,
           hooks: Optional[OracleHooks] = None, *, seed: int = 0,
           aggregate: Aggregate = Aggregate.MEAN, ridge_lambda: float = DEFAULT_RIDGE,
           clip_epsilon: float = 0.01) -> FittedPredictor:
    """Three-fold cross-fitted doubly-robust learner."""
    plan = plan or make_fold_plan(study, 3, seed)
    if plan.k != 3:
        raise FoldPlanError(f"DR needs a 3-fold plan, got k={plan.k}")
    full = _resolve_labels(study, labels, hooks)
    oracle_mu = hooks is not None and hooks.true_mu is not None
    oracle_pi = hooks is not None and hooks.true_pi is not None
    if not oracle_mu:
        check_fold_plan(study, plan, {f: [Treatment.A3] for f in range(3)})

    fold_models, mus, pis, rotations = [], [], [], []
    for i, j, k in DR_ROTATIONS:
        mu_model = None if oracle_mu else _fit_mu(study, plan.members(i), full, ridge_lambda)
        pi_model = None if oracle_pi else _fit_pi(study, plan.members(j), ridge_lambda, clip_epsilon)
        target = plan.members(k)
        mu_hat = _mu_predictions(study, target, mu_model, hooks)
        pi_hat = _pi_predictions(study, target, pi_model, hooks, clip_epsilon)
        pseudo = dr_pseudo_outcomes(study, full, mu_hat, pi_hat)
        fold_models.append(
            fit_least_squares(DesignMatrix(study.x[target], pseudo[target]), ridge_lambda))
        mus.append(mu_model)
        pis.append(pi_model)
        rotations.append({"mu": i, "pi": j, "target": k})
    return FittedPredictor(Learner.DR, fold_models, nuisance_mu=mus, nuisance_pi=pis,
                           aggregate=aggregate, rotations=tuple(rotations),
                           diagnostic=hooks is not None)


# ---------------------------------------------------------------------------
# named learner configurations used by the experiment harness

LEARNER_NAMES = ("SP", "RA", "DR", "RA_ORACLE", "DR_ORACLE", "DR_NO_LABEL_EST")


def fit_learner(name: str, study: Study, seed: int = 0, *,
                aggregate: Aggregate = Aggregate.MEAN,
                ridge_lambda: float = DEFAULT_RIDGE) -> FittedPredictor:
    """Fit one of :data:`LEARNER_NAMES` on ``study``.

    The ``*_ORACLE`` variants read the study's sealed truth and are for
    diagnostics only.
    """
    opts = dict(seed=seed, aggregate=aggregate, ridge_lambda=ridge_lambda)
    if name == "SP":
        return fit_sp(study, ridge_lambda)
    if name == "RA":
        return fit_ra(study, **opts)
    if name == "DR":
        return fit_dr(study, **opts)
    if name == "RA_ORACLE":
        return fit_ra(study, hooks=generator_hooks(study, pi=False), **opts)
    if name == "DR_ORACLE":
        return fit_dr(study, hooks=generator_hooks(study), **opts)
    if name == "DR_NO_LABEL_EST":
        return fit_dr(study, labels=raw_dual_labels(study), **opts)
    raise ValueError(f"unknown learner {name!r}; expected one of {LEARNER_NAMES}")
