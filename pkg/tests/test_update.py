import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CONJ_MEAN, CONJ_VAR, TOY_VAR_Y, TOY_Y, random_spd
from enkf_cal import (
    JointEnsemble,
    MomentEstimate,
    NumericalError,
    ObservationModel,
    StageSchedule,
    ValidationError,
    compute_moments,
    ensemble_update,
    gaussian_update,
    multistage_gaussian,
    multistage_update,
    precision_form_update,
)
from enkf_cal.emulator import quadrature_posterior
from enkf_cal.models import TOY, identity_forward, linear_forward, toy_ensemble
from enkf_cal.update import ForwardModelError, make_rng, theta_summary


def conjugate_2x2(mu, S, y, r):
    """Hand Kalman arithmetic for a scalar observation of the second component."""
    s12, s22 = S[0][1], S[1][1]
    denom = s22 + r
    k = np.array([s12, s22]) / denom
    innov = y - mu[1]
    mean = np.asarray(mu) + k * innov
    cov = np.asarray(S) - np.outer(k, [s12, s22])
    return mean, cov


def test_linear_toy_conjugate(linear_toy_moments, toy_obs):
    post = gaussian_update(linear_toy_moments, toy_obs)
    assert post.theta_mean[0] == pytest.approx(CONJ_MEAN, abs=1e-12)
    assert post.theta_cov[0, 0] == pytest.approx(CONJ_VAR, abs=1e-12)


def test_correlated_2x2_by_hand(toy_obs):
    S = [[1.0, 0.9], [0.9, 1.0]]
    post = gaussian_update(MomentEstimate([0.0, 0.0], S, 1), toy_obs)
    mean, cov = conjugate_2x2([0.0, 0.0], S, TOY_Y, TOY_VAR_Y)
    np.testing.assert_allclose(post.mu_post, mean, rtol=1e-12)
    np.testing.assert_allclose(post.sigma_post, cov, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(post.mu_post, [0.71287, 0.79208], atol=5e-6)
    np.testing.assert_allclose(post.sigma_post, [[0.19802, 0.00891], [0.00891, 0.00990]], atol=5e-6)


def test_zero_operator_is_no_information():
    rng = np.random.default_rng(0)
    mo = MomentEstimate(rng.standard_normal(3), random_spd(rng, 3), 1)
    obs = ObservationModel(np.zeros((2, 3)), [1.0, -1.0], np.eye(2))
    post = gaussian_update(mo, obs)
    np.testing.assert_array_equal(post.mu_post, mo.mu_pr)
    np.testing.assert_allclose(post.sigma_post, mo.sigma_pr, atol=0)


def test_dimension_mismatch():
    mo = MomentEstimate([0.0, 0.0, 0.0], np.eye(3), 1)
    with pytest.raises(ValidationError):
        gaussian_update(mo, ObservationModel([[0.0, 1.0]], [0.0], [[1.0]]))


def test_non_spd_innovation_raises():
    S = np.array([[1.0, 0.0], [0.0, -5.0]])
    mo = MomentEstimate.__new__(MomentEstimate)
    object.__setattr__(mo, "mu_pr", np.zeros(2))
    object.__setattr__(mo, "sigma_pr", S)
    object.__setattr__(mo, "d_theta", 1)
    with pytest.raises(NumericalError):
        gaussian_update(mo, ObservationModel([[0.0, 1.0]], [0.0], [[1.0]]))


def test_precision_form_needs_invertible_prior(linear_toy_moments, toy_obs):
    with pytest.raises(NumericalError):
        precision_form_update(linear_toy_moments, toy_obs)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(1, 4), st.floats(1.0, 1e7))
def test_kalman_and_precision_forms_agree(seed, p, n, cond):
    rng = np.random.default_rng(seed)
    mo = MomentEstimate(rng.standard_normal(p), random_spd(rng, p, cond), 1)
    obs = ObservationModel(rng.standard_normal((n, p)), rng.standard_normal(n), random_spd(rng, n, 10.0))
    a = gaussian_update(mo, obs)
    b = precision_form_update(mo, obs)
    scale = np.abs(mo.sigma_pr).max()
    np.testing.assert_allclose(a.sigma_post, b.sigma_post, rtol=1e-8, atol=1e-8 * scale)
    np.testing.assert_allclose(a.mu_post, b.mu_post, rtol=1e-8, atol=1e-8 * (1 + np.abs(a.mu_post).max()))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 5))
def test_observing_never_adds_variance(seed, p, n):
    rng = np.random.default_rng(seed)
    mo = MomentEstimate(np.zeros(p), random_spd(rng, p, 100.0), 1)
    obs = ObservationModel(rng.standard_normal((n, p)), np.zeros(n), random_spd(rng, n, 10.0))
    post = gaussian_update(mo, obs)
    gap = np.linalg.eigvalsh(mo.sigma_pr - post.sigma_post)
    assert gap.min() >= -1e-10 * np.trace(mo.sigma_pr)
    assert np.linalg.eigvalsh(post.sigma_post).min() >= -1e-10 * np.trace(mo.sigma_pr)


def _linear_ensemble(m, seed, eps=1e-6):
    cov = np.array([[1.0, 1.0], [1.0, 1.0]]) + eps * np.eye(2)
    X = make_rng(seed).multivariate_normal(np.zeros(2), cov, size=m, method="cholesky")
    return JointEnsemble(X, 1, 1)


def test_infinite_noise_leaves_members(toy_obs):
    ens = _linear_ensemble(50, 3)
    up = ensemble_update(ens, toy_obs.scaled(1e9), 4)
    np.testing.assert_allclose(up.members, ens.members, rtol=1e-3, atol=1e-3 * np.abs(ens.members).max())


def test_ensemble_update_moment_matching(toy_obs):
    ens = _linear_ensemble(10**5, 11)
    up = ensemble_update(ens, toy_obs, 12)
    th = up.theta.ravel()
    assert th.mean() == pytest.approx(CONJ_MEAN, rel=0.02)
    assert th.var(ddof=1) == pytest.approx(CONJ_VAR, rel=0.02)


def test_expectation_over_seeds_matches_gaussian(toy_obs):
    # 100 seeds x 1000 members = 1e5 draws, all from the same prior ensemble
    ens = toy_ensemble(1000, 5)
    target = gaussian_update(compute_moments(ens), toy_obs)
    means = [ensemble_update(ens, toy_obs, s).theta.mean() for s in range(100)]
    assert np.mean(means) == pytest.approx(target.theta_mean[0], rel=0.02)


def test_determinism(toy_obs):
    ens = _linear_ensemble(3, 0)
    a = ensemble_update(ens, toy_obs, 99)
    b = ensemble_update(ens, toy_obs, 99)
    assert a.members.tobytes() == b.members.tobytes()
    assert a.perturbed_data.tobytes() == b.perturbed_data.tobytes()
    c = ensemble_update(ens, toy_obs, 100)
    assert a.members.tobytes() != c.members.tobytes()


def test_ensemble_update_shapes(toy_obs):
    ens = toy_ensemble(17, 1)
    up = ensemble_update(ens, toy_obs, 2)
    assert up.members.shape == (17, 2) and up.perturbed_data.shape == (17, 1)
    assert up.seed == 2


def test_stage_schedule_validation():
    assert StageSchedule().weights == (0.5, 0.5)
    assert sum(StageSchedule.even(3).weights) == pytest.approx(1.0, abs=1e-12)
    for bad in [(), (0.5, 0.6), (1.0, 0.0), (-0.5, 1.5)]:
        with pytest.raises(ValidationError):
            StageSchedule(bad)


def test_single_stage_equals_ensemble_update(toy_obs):
    ens = toy_ensemble(40, 0)
    a = multistage_update(ens, toy_obs, StageSchedule((1.0,)), TOY, 7)
    b = ensemble_update(ens, toy_obs, 7)
    np.testing.assert_array_equal(a.members, b.members)


def test_two_stage_exact_moments_compose(linear_toy_moments, toy_obs):
    one = gaussian_update(linear_toy_moments, toy_obs)
    for fwd in (identity_forward(1), None):
        two = multistage_gaussian(linear_toy_moments, toy_obs, StageSchedule.even(2), fwd)
        np.testing.assert_allclose(two.mu_post, one.mu_post, rtol=0, atol=1e-10)
        np.testing.assert_allclose(two.sigma_post, one.sigma_post, rtol=0, atol=1e-10)


def test_multistage_composition_multivariate():
    rng = np.random.default_rng(5)
    fwd = linear_forward(rng.standard_normal(4), rng.standard_normal((4, 2)))
    mo = fwd.propagate_moments(rng.standard_normal(2), random_spd(rng, 2))
    obs = ObservationModel.incidence([0, 2, 3], 2, 4, rng.standard_normal(3), [0.3, 0.2, 0.5])
    one = gaussian_update(mo, obs)
    three = multistage_gaussian(mo, obs, StageSchedule((0.2, 0.3, 0.5)), fwd)
    np.testing.assert_allclose(three.mu_post, one.mu_post, atol=1e-10)
    np.testing.assert_allclose(three.sigma_post, one.sigma_post, atol=1e-10)


def test_two_stage_toy_against_quadrature(toy_obs):
    exact = quadrature_posterior(TOY, TOY_Y, 0.1)
    ens = toy_ensemble(200, 0)
    out = multistage_update(ens, toy_obs, StageSchedule.even(2), TOY, 1)
    se = np.sqrt(exact.var() / 200)
    assert abs(out.theta.mean() - exact.mean()) < 3 * se


def test_multistage_final_gaussian(toy_obs):
    post = multistage_update(toy_ensemble(100, 0), toy_obs, StageSchedule.even(2), TOY, 1, final="gaussian")
    assert post.sigma_post.shape == (2, 2)


def test_forward_failure_reports_member(toy_obs):
    calls = []

    def bad(theta):
        calls.append(theta)
        if len(calls) == 4:
            raise RuntimeError("solver diverged")
        return TOY(theta)

    with pytest.raises(ForwardModelError) as info:
        multistage_update(toy_ensemble(10, 0), toy_obs, StageSchedule.even(2), bad, 1)
    assert info.value.member == 3


def test_gaussian_posterior_sampling(linear_toy_moments, toy_obs):
    post = gaussian_update(linear_toy_moments, toy_obs)
    draws = post.sample(20_000, 3)
    assert draws[:, 0].mean() == pytest.approx(CONJ_MEAN, abs=0.005)


def test_single_update_skewness_centres_on_zero(toy_obs):
    # an odd map of a symmetric prior plus symmetric noise: no skewness on average
    ens = toy_ensemble(10_000, 0)
    skews = [float(theta_summary(ensemble_update(ens, toy_obs, s).theta)["skewness"][0]) for s in range(20)]
    assert abs(np.mean(skews)) < 0.05


def test_two_stage_skews_right(toy_obs):
    out = multistage_update(toy_ensemble(10_000, 0), toy_obs, StageSchedule.even(2), TOY, 1)
    assert theta_summary(out.theta)["skewness"][0] > 0
