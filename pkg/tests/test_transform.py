import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import en_variance_oracle
from squeezy.codata import GroupStructure
from squeezy.marginal import RidgePenaltyState
from squeezy.transform import (
    LAMBDA_MAX,
    LAMBDA_MIN,
    TRUNC_LASSO,
    TRUNC_NONE,
    TRUNC_RIDGE,
    en_penalty_from_variance,
    en_prior_variance,
    sample_en_prior,
    transform_ridge_to_en,
)


def test_closed_form_endpoints():
    assert en_prior_variance(4.0, 0.0) == 0.25
    assert en_prior_variance(2.0, 1.0) == 0.5


def test_interior_matches_quadrature_example():
    assert en_prior_variance(1.0, 0.5) == pytest.approx(en_variance_oracle(1.0, 0.5), rel=1e-10)


@pytest.mark.parametrize("alpha", [0.02, 0.3, 0.5, 0.8, 0.99])
@pytest.mark.parametrize("lam", [1e-6, 1e-2, 1.0, 50.0, 1e4, 1e6])
def test_forward_map_matches_quadrature(lam, alpha):
    assert en_prior_variance(lam, alpha) == pytest.approx(en_variance_oracle(lam, alpha),
                                                          rel=1e-8)


def test_large_z_branch_is_continuous():
    # the variance formula switches evaluation branch at z = 1 and z = 3
    alpha = 0.5
    for z in (1.0, 3.0):
        lam = (z * np.sqrt(1 - alpha) / alpha) ** 2
        lo, hi = en_prior_variance(lam * (1 - 1e-12), alpha), en_prior_variance(lam * (1 + 1e-12), alpha)
        assert hi < lo and lo == pytest.approx(hi, rel=1e-10)


def test_vectorised_evaluation():
    lam = np.logspace(-3, 3, 7)
    np.testing.assert_allclose(en_prior_variance(lam, 0.4),
                               [en_prior_variance(x, 0.4) for x in lam], rtol=1e-15)


def test_forward_errors():
    with pytest.raises(ValueError):
        en_prior_variance(1.0, 1.5)
    with pytest.raises(ValueError):
        en_prior_variance(0.0, 0.5)


@pytest.mark.parametrize("alpha", np.linspace(0, 1, 11))
def test_strictly_decreasing(alpha):
    v = en_prior_variance(np.logspace(-6, 6, 1000), alpha)
    assert np.all(np.diff(v) < 0)


def test_inverse_examples():
    assert en_penalty_from_variance(0.125, 0.0) == (8.0, TRUNC_NONE)
    lam, flag = en_penalty_from_variance(1 / 8, 1.0)
    assert lam == pytest.approx(4.0, rel=1e-15) and flag == TRUNC_NONE
    lam, flag = en_penalty_from_variance(en_prior_variance(10.0, 0.3), 0.3)
    assert lam == pytest.approx(10.0, rel=1e-8) and flag == TRUNC_NONE


@settings(max_examples=200, deadline=None)
@given(st.floats(-6, 6), st.sampled_from(np.round(np.linspace(0, 1, 21), 2).tolist()))
def test_round_trip(log_lam, alpha):
    lam = 10.0**log_lam
    back, _ = en_penalty_from_variance(en_prior_variance(lam, alpha), alpha)
    assert back == pytest.approx(lam, rel=1e-6)


def test_inverse_residual():
    for alpha in (0.1, 0.5, 0.9):
        for v in (1e-3, 0.5, 20.0):
            lam, flag = en_penalty_from_variance(v, alpha)
            if flag == TRUNC_NONE:
                assert abs(en_prior_variance(lam, alpha) - v) / v < 1e-8


def test_truncation_flags_and_continuity():
    alpha = 0.5
    v_min = en_prior_variance(LAMBDA_MIN, alpha)
    v_max = en_prior_variance(LAMBDA_MAX, alpha)
    lam, flag = en_penalty_from_variance(10 * v_min, alpha)
    assert flag == TRUNC_RIDGE and lam < LAMBDA_MIN
    lam, flag = en_penalty_from_variance(v_max / 10, alpha)
    assert flag == TRUNC_LASSO and lam > LAMBDA_MAX
    assert en_penalty_from_variance(v_min * (1 + 1e-9), alpha)[0] == pytest.approx(LAMBDA_MIN,
                                                                                    rel=1e-6)
    assert en_penalty_from_variance(v_max * (1 - 1e-9), alpha)[0] == pytest.approx(LAMBDA_MAX,
                                                                                    rel=1e-6)


@pytest.mark.parametrize("alpha", [0.05, 0.5, 0.95])
def test_inverse_monotone_across_truncation(alpha):
    v_min = en_prior_variance(LAMBDA_MIN, alpha)
    v_max = en_prior_variance(LAMBDA_MAX, alpha)
    v = np.logspace(np.log10(v_max) - 3, np.log10(v_min) + 3, 1000)
    lam = np.array([en_penalty_from_variance(x, alpha)[0] for x in v])
    assert np.all(np.diff(lam) < 0)


def test_inverse_errors():
    with pytest.raises(ValueError):
        en_penalty_from_variance(0.0, 0.5)
    with pytest.raises(ValueError):
        en_penalty_from_variance(np.inf, 0.5)


def test_transform_endpoints():
    groups = GroupStructure.from_labels([0, 0, 1])
    state = RidgePenaltyState.from_lambdas([8.0, 2.0], 1.0)
    en = transform_ridge_to_en(state, groups, 1.0)
    np.testing.assert_allclose(en.lambda_group, [4.0, 2.0], rtol=1e-15)
    np.testing.assert_allclose(en.penalty_factor, [4.0, 4.0, 2.0], rtol=1e-15)
    state = RidgePenaltyState.from_lambdas([3.0, 7.0], 0.6)
    en = transform_ridge_to_en(state, groups, 0.0)
    np.testing.assert_allclose(en.lambda_group, np.array([3.0, 7.0]) / 0.6, rtol=1e-15)


def test_transform_over_alpha_grid_preserves_ordering(rng):
    groups = GroupStructure.from_labels([0, 1, 2])
    alphas = np.linspace(0, 1, 11)
    for _ in range(20):
        lam_r = np.sort(np.exp(rng.uniform(-5, 5, 3)))
        state = RidgePenaltyState.from_lambdas(lam_r, rng.uniform(0.1, 10))
        for en in transform_ridge_to_en(state, groups, alphas):
            assert np.all(np.diff(en.lambda_group) > 0)


def test_transform_under_overlap_pools_variances():
    groups = GroupStructure.from_members([[0, 1], [1, 2]], 3)
    state = RidgePenaltyState.from_lambdas([1.0, 4.0], 2.0)
    en = transform_ridge_to_en(state, groups, 0.4)
    pooled = np.array([2.0, (2.0 + 0.5) / 2, 0.5])
    np.testing.assert_allclose(en_prior_variance(en.penalty_factor, 0.4), pooled, rtol=1e-8)


def test_transform_group_count_mismatch():
    with pytest.raises(ValueError):
        transform_ridge_to_en(RidgePenaltyState([0.0]), GroupStructure.from_labels([0, 1]), 0.5)


def test_rescaled_penalty():
    en = transform_ridge_to_en(RidgePenaltyState.from_lambdas([2.0]), GroupStructure.single(2),
                               0.5)
    r = en.rescaled(3.0)
    np.testing.assert_allclose(r.penalty_factor, 3 * en.penalty_factor)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 0.7, 1.0])
def test_sampler_variance(alpha):
    rng = np.random.default_rng(5)
    lam = 2.0
    draws = sample_en_prior(lam, alpha, 400_000, rng)
    var = np.mean(draws**2)
    se = np.std(draws**2) / np.sqrt(draws.size)
    assert abs(var - en_prior_variance(lam, alpha)) < 4 * se
    assert abs(np.mean(draws)) < 4 * np.std(draws) / np.sqrt(draws.size)
    if 0 < alpha:
        # the density is continuous at zero, so no point mass
        assert np.mean(draws == 0.0) < 1e-4


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("lam", [LAMBDA_MIN, LAMBDA_MAX])
def test_round_trip_at_exact_boundaries(lam, alpha):
    back, flag = en_penalty_from_variance(en_prior_variance(lam, alpha), alpha)
    assert back == pytest.approx(lam, rel=1e-12) and flag == TRUNC_NONE
