"""EnKF analysis steps for static calibration problems.

Two posterior representations are produced from the same prior moments:

* :func:`gaussian_update` fits one multivariate normal to the joint
  ``(theta, eta)`` ensemble and conditions it on ``y`` (Kalman form).
* :func:`ensemble_update` moves every member towards its own perturbed copy
  of the data, ``y_k ~ N(y, Σy)``, through one shared gain.

:func:`multistage_update` splits the likelihood into ``K`` pieces, each
observed with covariance ``Σy / w_s``, re-running the forward model between
stages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla

from enkf_cal._linalg import (
    InsufficientEnsembleError,
    NumericalError,
    ValidationError,
    cholesky_jitter,
    symmetrize,
)
from enkf_cal.ensemble import JointEnsemble, MomentEstimate, ObservationModel, compute_moments


class ForwardModelError(RuntimeError):
    def __init__(self, member: int, cause: BaseException):
        super().__init__(f"forward model failed at ensemble member {member}: {cause}")
        self.member = member


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator (Philox) so streams are reproducible across platforms."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None:
        raise ValidationError("a seed is required for stochastic updates")
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class GaussianPosterior:
    mu_post: np.ndarray
    sigma_post: np.ndarray
    kalman_gain: np.ndarray
    d_theta: int

    @property
    def theta_mean(self) -> np.ndarray:
        return self.mu_post[: self.d_theta]

    @property
    def theta_cov(self) -> np.ndarray:
        return self.sigma_post[: self.d_theta, : self.d_theta]

    def as_moments(self) -> MomentEstimate:
        return MomentEstimate(self.mu_post, self.sigma_post, self.d_theta)

    def sample(self, size: int, seed) -> np.ndarray:
        """Draws from ``N(mu_post, sigma_post)``; the covariance may be singular."""
        rng = make_rng(seed)
        w, V = np.linalg.eigh(self.sigma_post)
        root = V * np.sqrt(np.clip(w, 0.0, None))
        z = rng.standard_normal((size, self.mu_post.size))
        return self.mu_post + z @ root.T


@dataclass(frozen=True)
class UpdatedEnsemble:
    members: np.ndarray
    perturbed_data: np.ndarray
    seed: int | None
    d_theta: int

    @property
    def theta(self) -> np.ndarray:
        return self.members[:, : self.d_theta]

    @property
    def eta(self) -> np.ndarray:
        return self.members[:, self.d_theta :]

    def as_ensemble(self) -> JointEnsemble:
        return JointEnsemble(self.members, self.d_theta, self.members.shape[1] - self.d_theta)


def _check_dims(p: int, obs: ObservationModel) -> None:
    if obs.H.shape[1] != p:
        raise ValidationError(f"H has {obs.H.shape[1]} columns, state dimension is {p}")


def kalman_gain(sigma_pr: np.ndarray, obs: ObservationModel) -> np.ndarray:
    """``Σ H' (H Σ H' + Σy)^{-1}`` via a Cholesky solve of the innovation covariance."""
    H = obs.H
    HS = H @ sigma_pr
    innov = symmetrize(HS @ H.T + obs.sigma_y)
    L = cholesky_jitter(innov, what="innovation covariance H Σpr H' + Σy")
    return sla.cho_solve((L, True), HS).T


def gaussian_update(moments: MomentEstimate, obs: ObservationModel) -> GaussianPosterior:
    _check_dims(moments.p, obs)
    S = moments.sigma_pr
    K = kalman_gain(S, obs)
    mu = moments.mu_pr + K @ (obs.y - obs.H @ moments.mu_pr)
    sigma = symmetrize(S - K @ (obs.H @ S))
    return GaussianPosterior(mu, sigma, K, moments.d_theta)


def precision_form_update(moments: MomentEstimate, obs: ObservationModel) -> GaussianPosterior:
    """Information-form update; only defined when ``Σpr`` is invertible.

    Kept as an independent cross-check of :func:`gaussian_update`.
    """
    _check_dims(moments.p, obs)
    try:
        Lp = sla.cholesky(moments.sigma_pr, lower=True)
    except sla.LinAlgError as exc:
        raise NumericalError("prior covariance is singular; precision form undefined") from exc
    Ly = sla.cholesky(obs.sigma_y, lower=True)
    p = moments.p
    prior_prec = sla.cho_solve((Lp, True), np.eye(p))
    HtRi = sla.cho_solve((Ly, True), obs.H).T
    post_prec = symmetrize(prior_prec + HtRi @ obs.H)
    sigma = symmetrize(np.linalg.inv(post_prec))
    mu = sigma @ (prior_prec @ moments.mu_pr + HtRi @ obs.y)
    K = sigma @ HtRi
    return GaussianPosterior(mu, sigma, K, moments.d_theta)


def perturb_data(obs: ObservationModel, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` draws ``y_k ~ N(y, Σy)``, row ``k`` for member ``k``."""
    L = sla.cholesky(obs.sigma_y, lower=True)
    z = rng.standard_normal((m, obs.n))
    return obs.y + z @ L.T


def ensemble_update(ensemble: JointEnsemble, obs: ObservationModel, seed) -> UpdatedEnsemble:
    """Perturbed-observation EnKF step with one gain from the full prior ensemble."""
    if ensemble.m < 2:
        raise InsufficientEnsembleError(f"need at least 2 ensemble members, got {ensemble.m}")
    _check_dims(ensemble.p, obs)
    moments = compute_moments(ensemble)
    K = kalman_gain(moments.sigma_pr, obs)
    X = ensemble.members
    Y = perturb_data(obs, ensemble.m, make_rng(seed))
    X1 = X + (Y - X @ obs.H.T) @ K.T
    seed_val = None if isinstance(seed, np.random.SeedSequence) else int(seed)
    return UpdatedEnsemble(X1, Y, seed_val, ensemble.d_theta)


@dataclass(frozen=True)
class StageSchedule:
    """Information fractions ``w_s``; stage ``s`` observes ``y`` with covariance ``Σy / w_s``."""

    weights: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not w:
            raise ValidationError("stage schedule needs at least one weight")
        if any(not np.isfinite(v) or v <= 0 for v in w):
            raise ValidationError("stage weights must be positive")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ValidationError(f"stage weights sum to {sum(w)!r}, not 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def even(cls, k: int) -> "StageSchedule":
        if k < 1:
            raise ValidationError("number of stages must be >= 1")
        w = [1.0 / k] * k
        w[-1] = 1.0 - sum(w[:-1])
        return cls(tuple(w))

    @property
    def k(self) -> int:
        return len(self.weights)


def _stage_seed(seed, stage: int):
    if stage == 0:
        return seed
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(stage,))


def _evaluate(forward, theta_rows: np.ndarray) -> np.ndarray:
    fn = getattr(forward, "evaluate", forward)
    out = []
    for k, th in enumerate(theta_rows):
        try:
            v = np.atleast_1d(np.asarray(fn(th), dtype=float)).ravel()
        except Exception as exc:  # noqa: BLE001 - any simulator failure aborts the stage
            raise ForwardModelError(k, exc) from exc
        if not np.all(np.isfinite(v)):
            raise ForwardModelError(k, ValueError("non-finite output"))
        out.append(v)
    return np.vstack(out)


def multistage_update(
    initial: JointEnsemble,
    obs: ObservationModel,
    schedule: StageSchedule,
    forward: Callable | None,
    seed,
    final: str = "ensemble",
):
    """Split-likelihood EnKF.

    After every stage but the last, the output block is recomputed by running
    ``forward`` on each updated parameter vector. ``final="gaussian"`` makes
    the last stage return a :class:`GaussianPosterior` instead of an ensemble.
    """
    if final not in ("ensemble", "gaussian"):
        raise ValidationError(f"final must be 'ensemble' or 'gaussian', not {final!r}")
    if schedule.k > 1 and forward is None:
        raise ValidationError("a forward model is required between stages")
    ens = initial
    result = None
    for s, w in enumerate(schedule.weights):
        obs_s = obs.scaled(1.0 / w)
        last = s == schedule.k - 1
        if last and final == "gaussian":
            return gaussian_update(compute_moments(ens), obs_s)
        result = ensemble_update(ens, obs_s, _stage_seed(seed, s))
        if not last:
            theta = result.theta
            eta = _evaluate(forward, theta)
            if eta.shape[1] != ens.d_eta:
                raise ValidationError(f"forward model returned {eta.shape[1]} outputs, expected {ens.d_eta}")
            ens = JointEnsemble(np.hstack([theta, eta]), ens.d_theta, ens.d_eta)
    return UpdatedEnsemble(result.members, result.perturbed_data, seed, initial.d_theta)


def multistage_gaussian(
    moments: MomentEstimate,
    obs: ObservationModel,
    schedule: StageSchedule,
    forward=None,
) -> GaussianPosterior:
    """Split-likelihood update carried out on exact moments.

    Between stages the joint moments are rebuilt from the θ-marginal through
    ``forward.propagate_moments`` when the forward model offers it (exact for
    affine models). Without a forward model the joint posterior is reused as
    the next prior, i.e. plain sequential Gaussian conditioning.
    """
    post = None
    for s, w in enumerate(schedule.weights):
        post = gaussian_update(moments, obs.scaled(1.0 / w))
        if s < schedule.k - 1:
            if forward is not None and hasattr(forward, "propagate_moments"):
                moments = forward.propagate_moments(post.theta_mean, post.theta_cov)
            else:
                moments = post.as_moments()
    return post


def theta_summary(theta: np.ndarray) -> dict:
    """Mean, covariance, and per-parameter skewness of a parameter sample."""
    theta = np.atleast_2d(theta)
    mu = theta.mean(axis=0)
    cov = np.atleast_2d(np.cov(theta, rowvar=False))
    c = theta - mu
    m2 = (c**2).mean(axis=0)
    m3 = (c**3).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(m2 > 0, m3 / m2**1.5, 0.0)
    return {"mean": mu, "cov": cov, "skewness": skew}


def stage_weights(values: Sequence[float] | None, stages: int | None) -> StageSchedule:
    if values:
        return StageSchedule(tuple(values))
    return StageSchedule.even(stages or 2)
