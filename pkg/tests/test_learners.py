import numpy as np
import pytest

from selectcf.core import (
    Aggregate,
    DegenerateLabelsError,
    DegenerateStudyError,
    FoldPlanError,
    GenConfig,
    Learner,
    Study,
    Treatment,
    predict,
)
from selectcf import learners as L
from selectcf.evaluation import mse_vs_truth
from selectcf.synthgen import generate_study


def _tiny_study(x, t, y, z=None):
    x = np.asarray(x, float).reshape(len(t), -1)
    z = np.zeros_like(x) if z is None else np.asarray(z, float).reshape(x.shape)
    return Study(x=x, z=z, t=np.asarray(t), y=np.asarray(y, float), location=np.zeros(len(t), int))


def test_dual_labels_single_a1_sample():
    s = _tiny_study([[0.7], [0.7], [2.0]], [1, 3, 2], [4.2, -1.0, 9.0])
    labels = L.estimate_dual_labels(s)
    assert labels.shape == (1,)
    assert labels[0] == pytest.approx(4.2, abs=1e-12)


def test_dual_labels_edge_cases():
    no_a3 = _tiny_study([[0.1], [0.2]], [1, 2], [1.0, 2.0])
    assert L.estimate_dual_labels(no_a3).size == 0
    with pytest.raises(DegenerateStudyError):
        L.estimate_dual_labels(_tiny_study([[0.1], [0.2]], [3, 2], [1.0, 2.0]))


def test_dual_labels_unbiased_without_hidden_confounding():
    c = GenConfig(L=20, n=300, d=6, k_x=6, k_z=0, rho=0.25, tau=0.5, seed=21)
    s = generate_study(c)
    a3 = s.index_of(Treatment.A3)
    gap = L.estimate_dual_labels(s) - s.truth.nu[a3]
    # oracle: selection depends on x only, so the A1 fit is consistent for nu on A3 rows
    assert abs(gap.mean()) < 4 * gap.std() / np.sqrt(len(gap)) + 0.02


def test_dual_labels_biased_under_hidden_confounding():
    c = GenConfig(L=20, n=300, d=6, k_x=6, k_z=6, rho=0.25, tau=0.0, seed=21)
    s = generate_study(c)
    a3 = s.index_of(Treatment.A3)
    # A1 rows were selected on low z, so the x-only fit under-predicts A3 outcomes
    assert np.mean(L.estimate_dual_labels(s) - s.y[a3]) < 0


def test_dual_labels_error_shrinks_with_sample_size():
    errs = []
    for n in (250, 1000, 4000):
        vals = []
        for rep in range(4):
            s = generate_study(GenConfig(L=10, n=n, d=6, k_x=3, k_z=3, rho=0.25, tau=0.5, seed=100 + rep))
            a3 = s.index_of(Treatment.A3)
            model = L.fit_label_model(s)
            # estimation error of the fitted regression against its population limit
            big = generate_study(GenConfig(L=10, n=20_000, d=6, k_x=3, k_z=3, rho=0.25, tau=0.5, seed=999))
            limit = L.fit_label_model(big)
            diff = (L.estimate_dual_labels(s, model) - L.estimate_dual_labels(s, limit))
            vals.append(np.mean(diff ** 2))
        errs.append(np.mean(vals))
    assert errs[0] > errs[1] > errs[2]


def test_fit_sp_uses_only_a1():
    s = _tiny_study([[0.0], [1.0], [5.0], [7.0]], [1, 1, 2, 3], [1.0, 3.0, 100.0, -50.0])
    p = L.fit_sp(s)
    assert p.learner is Learner.SP and len(p.fold_models) == 1
    assert predict(p, np.array([2.0])) == pytest.approx(5.0, abs=1e-5)
    with pytest.raises(DegenerateStudyError):
        L.fit_sp(_tiny_study([[0.0]], [2], [1.0]))


def test_fit_sp_deterministic(small_study):
    a, b = L.fit_sp(small_study), L.fit_sp(small_study)
    np.testing.assert_array_equal(a.fold_models[0].coefficients, b.fold_models[0].coefficients)


def test_fold_plan_stratified_and_deterministic(small_study):
    p = L.make_fold_plan(small_study, 3, seed=5)
    q = L.make_fold_plan(small_study, 3, seed=5)
    np.testing.assert_array_equal(p.assignment, q.assignment)
    for t in Treatment:
        counts = np.bincount(p.assignment[small_study.mask(t)], minlength=3)
        assert counts.max() - counts.min() <= 1


def test_fold_plan_error_when_fold_lacks_a3():
    s = _tiny_study(np.arange(6.0), [1, 1, 2, 2, 3, 1], np.arange(6.0), z=np.arange(6.0))
    plan = L.make_fold_plan(s, 2, seed=0)
    with pytest.raises(FoldPlanError):
        L.fit_ra(s, plan=plan)


def test_cross_fitting_hygiene(small_study):
    ra = L.fit_ra(small_study, seed=1)
    for rot in ra.rotations:
        assert rot["mu"] != rot["target"]
    dr = L.fit_dr(small_study, seed=1)
    assert len({tuple(sorted(r.items())) for r in dr.rotations}) == 3
    for rot in dr.rotations:
        assert len({rot["mu"], rot["pi"], rot["target"]}) == 3
    assert sorted(r["target"] for r in dr.rotations) == [0, 1, 2]


def test_predictor_shapes(small_study):
    ra = L.fit_ra(small_study, seed=2)
    dr = L.fit_dr(small_study, seed=2)
    assert ra.learner is Learner.RA and len(ra.fold_models) == 2 and len(ra.nuisance_mu) == 2
    assert dr.learner is Learner.DR and len(dr.fold_models) == 3 and len(dr.nuisance_pi) == 3
    assert not ra.diagnostic and not dr.diagnostic


def test_sum_aggregation_scales_with_fold_count(small_study):
    mean = L.fit_dr(small_study, seed=3)
    total = L.fit_dr(small_study, seed=3, aggregate=Aggregate.SUM)
    np.testing.assert_allclose(predict(total, small_study.x), 3 * predict(mean, small_study.x))


def test_constant_pseudo_outcomes_give_constant_predictor():
    rng = np.random.default_rng(0)
    n = 90
    x = rng.standard_normal((n, 2))
    z = rng.standard_normal((n, 2))
    t = np.tile([1, 2, 3], n // 3)
    s = Study(x=x, z=z, t=t, y=np.full(n, 2.5), location=np.zeros(n, int))
    p = L.fit_ra(s, labels=np.full((t == 3).sum(), 2.5), seed=0)
    np.testing.assert_allclose(predict(p, rng.standard_normal((10, 2))), 2.5, atol=1e-6)


def test_pseudo_outcome_invariants(small_study):
    s = small_study
    n = len(s)
    rng = np.random.default_rng(1)
    mu_hat = rng.standard_normal(n)
    pi_hat = rng.uniform(0.01, 0.99, n)
    labels = np.where(s.t == Treatment.A3, rng.standard_normal(n), np.nan)
    dr = L.dr_pseudo_outcomes(s, labels, mu_hat, pi_hat)
    ra = L.ra_pseudo_outcomes(s, mu_hat)
    a1, a2, a3 = (s.t == Treatment.A1), (s.t == Treatment.A2), (s.t == Treatment.A3)
    np.testing.assert_array_equal(dr[a1], s.y[a1])
    np.testing.assert_array_equal(ra[a1], s.y[a1])
    np.testing.assert_array_equal(dr[a2], mu_hat[a2])
    np.testing.assert_allclose(dr[a3], (labels[a3] - mu_hat[a3]) / pi_hat[a3] + mu_hat[a3])
    bound = np.abs(s.y).max() + 100 * (np.nanmax(np.abs(labels)) + np.abs(mu_hat).max()) + np.abs(mu_hat).max()
    assert np.all(np.abs(np.clip(dr, -np.inf, np.inf)) <= bound)


def test_clipped_weights_are_bounded(small_study):
    dr = L.fit_dr(small_study, seed=4)
    xz = small_study.xz[small_study.has_z]
    from selectcf.regress import predict_proba
    for m in dr.nuisance_pi:
        assert np.all(1 / predict_proba(m, xz) <= 100 + 1e-9)


def test_dr_single_class_fold_raises():
    rng = np.random.default_rng(3)
    n = 60
    t = np.array([1, 3] * (n // 2))
    s = Study(x=rng.standard_normal((n, 2)), z=rng.standard_normal((n, 2)), t=t,
              y=rng.standard_normal(n), location=np.zeros(n, int))
    with pytest.raises(DegenerateLabelsError):
        L.fit_dr(s, seed=0)


def test_oracle_hooks_mark_predictor_diagnostic(small_study):
    p = L.fit_dr(small_study, hooks=L.generator_hooks(small_study), seed=0)
    assert p.diagnostic
    assert all(m is None for m in p.nuisance_mu) and all(m is None for m in p.nuisance_pi)


@pytest.mark.parametrize("name", L.LEARNER_NAMES)
def test_fit_learner_dispatch(small_study, name):
    p = L.fit_learner(name, small_study, seed=0)
    assert np.isfinite(mse_vs_truth(p, small_study))


def test_fit_learner_unknown(small_study):
    with pytest.raises(ValueError):
        L.fit_learner("IPW", small_study)


def _paired_mse(config_kw, fitters, reps):
    out = []
    for r in range(reps):
        s = generate_study(GenConfig(**config_kw, seed=500 + r))
        train = np.random.default_rng(r).random(len(s)) < 0.7
        s = s.with_split(train)
        a, b = s.train_part(), s.test_part()
        out.append([mse_vs_truth(f(a, r), b) for f in fitters])
    return np.mean(out, axis=0)


FAST_C = dict(L=20, n=250, d=50, k_x=10, rho=0.25, tau=0.5)


@pytest.mark.slow
def test_no_confounding_control():
    sp, ra, dr = _paired_mse(dict(FAST_C, k_z=0), [
        lambda a, r: L.fit_sp(a),
        lambda a, r: L.fit_ra(a, seed=r),
        lambda a, r: L.fit_dr(a, seed=r),
    ], reps=10)
    assert abs(ra - sp) / sp < 0.2
    assert abs(dr - sp) / sp < 0.2


@pytest.mark.slow
def test_oracle_stage_one_cannot_hurt():
    ra, ra_o, dr, dr_o = _paired_mse(dict(FAST_C, k_z=10), [
        lambda a, r: L.fit_ra(a, seed=r),
        lambda a, r: L.fit_ra(a, hooks=L.generator_hooks(a, pi=False), seed=r),
        lambda a, r: L.fit_dr(a, seed=r),
        lambda a, r: L.fit_dr(a, hooks=L.generator_hooks(a), seed=r),
    ], reps=20)
    assert ra_o <= ra
    assert dr_o <= dr
