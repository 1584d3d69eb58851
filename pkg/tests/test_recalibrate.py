import numpy as np
import pytest

from conftest import random_instance
from squeezy.codata import GroupStructure
from squeezy.enet import fit_elastic_net
from squeezy.families import BINOMIAL, GAUSSIAN
from squeezy.marginal import RidgePenaltyState
from squeezy.pipeline import fit_group_adaptive, resolve_recalibration
from squeezy.recalibrate import (
    N_GRID,
    CvPlan,
    default_grid,
    make_folds,
    make_plan,
    recalibrate_lambda0,
)
from squeezy.transform import ElasticNetPenalty, transform_ridge_to_en


@pytest.fixture
def logistic(rng):
    data, groups = random_instance(rng, 60, 80, 2, "binomial", intercept=True, signal=0.5)
    pen = transform_ridge_to_en(RidgePenaltyState.from_lambdas([3.0, 30.0]), groups, 0.5)
    return data, groups, pen


def test_singleton_grid_is_noop(logistic):
    data, groups, _ = logistic
    on = fit_group_adaptive(data, BINOMIAL, groups, alpha=0.5, recalibrate="on",
                            lambda0_grid=[1.0], n_folds=5)
    off = fit_group_adaptive(data, BINOMIAL, groups, alpha=0.5, recalibrate="off")
    assert on[0.5].lambda0 == 1.0
    np.testing.assert_array_equal(on[0.5].fit.beta_pen, off[0.5].fit.beta_pen)
    np.testing.assert_array_equal(on[0.5].penalty.penalty_factor, off[0.5].penalty.penalty_factor)


def test_single_group_equals_direct_cv(rng):
    data, _ = random_instance(rng, 50, 60, 1, "binomial", intercept=True, signal=0.5)
    lam = 2.5
    pen = ElasticNetPenalty.uniform(lam, 60, 0.7)
    plan = make_plan(data, BINOMIAL, n_folds=5, seed=3)
    lambda0, curve = recalibrate_lambda0(data, BINOMIAL, pen, plan)
    # direct CV over lambda on the same folds, cold starts, arbitrary order
    lams = lam * curve.lambda0
    dev = np.zeros(lams.size)
    for k in range(5):
        test = plan.folds == k
        tr, te = data.subset(~test), data.subset(test)
        for j in rng.permutation(lams.size):
            fit = fit_elastic_net(tr, BINOMIAL, ElasticNetPenalty.uniform(lams[j], 60, 0.7))
            dev[j] += BINOMIAL.deviance(te.y, fit.predict(te))
    # curves agree to solver tolerance (warm versus cold starts); the choice is identical
    np.testing.assert_allclose(curve.mean_deviance, dev / data.n, rtol=1e-5)
    assert lam * lambda0 == lams[np.argmin(dev)]


def test_argmin_consistency_and_improvement(logistic):
    data, _, pen = logistic
    grid = np.r_[default_grid(data, BINOMIAL, pen), 1.0]
    plan = make_plan(data, BINOMIAL, n_folds=5, seed=1, lambda0_grid=grid)
    lambda0, curve = recalibrate_lambda0(data, BINOMIAL, pen, plan)
    i = np.flatnonzero(curve.lambda0 == lambda0)[0]
    assert curve.mean_deviance[i] == pytest.approx(curve.mean_deviance.min(), rel=1e-10)
    assert curve.mean_deviance[i] <= curve.mean_deviance[curve.lambda0 == 1.0][0]
    assert curve.fold_deviance.shape == (5, grid.size)
    assert np.all(curve.se_deviance >= 0)


def test_ties_go_to_larger_lambda0(rng):
    data, _ = random_instance(rng, 30, 20, 1, "binomial", intercept=True)
    pen = ElasticNetPenalty.uniform(1.0, 20, 1.0)
    top = default_grid(data, BINOMIAL, pen)[0]
    # every grid point above the null threshold gives the same empty model
    grid = top * np.array([1.5, 2.0, 4.0])
    lambda0, curve = recalibrate_lambda0(data, BINOMIAL, pen,
                                         make_plan(data, BINOMIAL, 5, lambda0_grid=grid))
    np.testing.assert_allclose(curve.mean_deviance, curve.mean_deviance[0], rtol=1e-12)
    assert lambda0 == grid.max()


def test_scale_cancellation(logistic):
    data, _, pen = logistic
    grid = default_grid(data, BINOMIAL, pen)
    plan = make_plan(data, BINOMIAL, 5, seed=2, lambda0_grid=grid)
    a, _ = recalibrate_lambda0(data, BINOMIAL, pen, plan)
    c = 8.0
    scaled = pen.rescaled(c)
    plan_c = make_plan(data, BINOMIAL, 5, seed=2, lambda0_grid=grid / c)
    b, _ = recalibrate_lambda0(data, BINOMIAL, scaled, plan_c)
    np.testing.assert_allclose(scaled.rescaled(b).penalty_factor, pen.rescaled(a).penalty_factor,
                               rtol=1e-14)


def test_default_grid_shape(logistic):
    data, _, pen = logistic
    grid = default_grid(data, BINOMIAL, pen)
    assert grid.size == N_GRID
    assert grid[-1] / grid[0] == pytest.approx(1e-4)
    fit = fit_elastic_net(data, BINOMIAL, pen.rescaled(grid[0] * (1 + 1e-9)))
    assert fit.n_nonzero == 0
    ridge = ElasticNetPenalty.uniform(1.0, pen.penalty_factor.size, 0.0)
    assert default_grid(data, BINOMIAL, ridge)[0] == pytest.approx(1e3)


def test_folds_are_stratified_partition():
    y = np.r_[np.zeros(37), np.ones(23)]
    folds = make_folds(y, BINOMIAL, 10, seed=4)
    assert set(folds) == set(range(10))
    for k in range(10):
        assert 3 <= np.sum(y[folds == k] == 0) <= 4
        assert 2 <= np.sum(y[folds == k] == 1) <= 3
    g = make_folds(np.zeros(23), GAUSSIAN, 4, seed=0)
    np.testing.assert_array_equal(np.bincount(g), [6, 6, 6, 5])


def test_fold_count_validation():
    with pytest.raises(ValueError):
        make_folds(np.zeros(5), GAUSSIAN, 6)


def test_single_class_training_fold_is_rejected(rng):
    data, _ = random_instance(rng, 12, 10, 1, "binomial")
    y = np.zeros(12)
    y[0] = 1
    data = type(data)(y, data.X, data.unpen_idx, data.pen_idx)
    folds = np.r_[0, np.arange(11) % 3 + 1]
    plan = CvPlan(folds, np.array([1.0]))
    with pytest.raises(ValueError, match="single class"):
        recalibrate_lambda0(data, BINOMIAL, ElasticNetPenalty.uniform(1.0, 10, 0.5), plan)


def test_bit_reproducible(logistic):
    data, _, pen = logistic
    runs = [recalibrate_lambda0(data, BINOMIAL, pen, make_plan(data, BINOMIAL, 5, seed=9))
            for _ in range(2)]
    assert runs[0][0] == runs[1][0]
    np.testing.assert_array_equal(runs[0][1].fold_deviance, runs[1][1].fold_deviance)


def test_gaussian_recalibration_with_dispersion(rng):
    data, groups = random_instance(rng, 40, 60, 2, intercept=True, signal=0.5)
    pen = transform_ridge_to_en(RidgePenaltyState.from_lambdas([2.0, 20.0], 0.7), groups, 0.3)
    lambda0, curve = recalibrate_lambda0(data, GAUSSIAN, pen, make_plan(data, GAUSSIAN, 5),
                                         dispersion=0.7)
    assert lambda0 in curve.lambda0


def test_default_recalibration_policy():
    assert resolve_recalibration("auto", BINOMIAL)
    assert not resolve_recalibration("auto", GAUSSIAN)
    assert resolve_recalibration("on", GAUSSIAN)
    assert not resolve_recalibration(False, BINOMIAL)


def test_unsupported_loss(logistic):
    data, _, pen = logistic
    plan = CvPlan(make_folds(data.y, BINOMIAL, 5), None, loss="auc")
    with pytest.raises(ValueError, match="unsupported loss"):
        recalibrate_lambda0(data, BINOMIAL, pen, plan)
