"""Reference posteriors for benchmarking the EnKF.

* a fixed-hyperparameter Gaussian-process emulator for scalar models,
* brute-force quadrature of a 1-d posterior on a fine grid,
* the linear-regression emulator implied by a joint Gaussian fit,
* a random-walk Metropolis sampler.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg as sla

from enkf_cal._linalg import NumericalError, ValidationError, cholesky_jitter, symmetrize
from enkf_cal.ensemble import MomentEstimate, ObservationModel
from enkf_cal.update import make_rng

DEFAULT_GRID = np.linspace(-6.0, 6.0, 100_001)


@dataclass(frozen=True)
class GpConfig:
    """Constant-mean GP with squared-exponential covariance."""

    mean_const: float = 0.5
    signal_var: float = 0.25
    lengthscale: float = 1.5
    nugget: float = 0.0

    def __post_init__(self):
        if not self.signal_var > 0 or not self.lengthscale > 0:
            raise ValidationError("signal_var and lengthscale must be positive")
        if self.nugget < 0:
            raise ValidationError("nugget must be nonnegative")

    def kernel(self, a, b) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        d = a[:, None] - b[None, :]
        return self.signal_var * np.exp(-0.5 * (d / self.lengthscale) ** 2)


@dataclass(frozen=True)
class DesignRuns:
    theta_design: np.ndarray
    eta_design: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.theta_design, dtype=float)).ravel()
        e = np.atleast_1d(np.asarray(self.eta_design, dtype=float)).ravel()
        if t.size != e.size or t.size == 0:
            raise ValidationError("design inputs and outputs must be nonempty and equally long")
        object.__setattr__(self, "theta_design", t)
        object.__setattr__(self, "eta_design", e)

    @classmethod
    def from_forward(cls, forward: Callable, theta_design) -> "DesignRuns":
        t = np.asarray(theta_design, dtype=float).ravel()
        return cls(t, np.array([float(np.ravel(forward(v))[0]) for v in t]))


def gp_condition(config: GpConfig, runs: DesignRuns, theta):
    """GP predictive mean and variance at ``theta`` given the design runs.

    Duplicate design inputs with zero nugget make the kernel matrix singular
    and raise :class:`NumericalError`.
    """
    td = runs.theta_design
    if config.nugget == 0 and np.unique(td).size != td.size:
        raise NumericalError("duplicate design points with zero nugget give a singular kernel matrix")
    Kd = config.kernel(td, td) + config.nugget * np.eye(td.size)
    L = cholesky_jitter(Kd, what="GP kernel matrix")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    Ks = config.kernel(theta.ravel(), td)
    alpha = sla.cho_solve((L, True), runs.eta_design - config.mean_const)
    mu = config.mean_const + Ks @ alpha
    W = sla.solve_triangular(L, Ks.T, lower=True)
    v = config.signal_var - np.sum(W * W, axis=0)
    return mu.reshape(theta.shape), np.maximum(v, 0.0).reshape(theta.shape)


@dataclass(frozen=True)
class DensityTable:
    grid: np.ndarray
    density: np.ndarray

    @classmethod
    def from_log(cls, grid, logdens) -> "DensityTable":
        grid = np.asarray(grid, dtype=float)
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("density grid must be strictly increasing")
        logdens = np.asarray(logdens, dtype=float)
        w = np.exp(logdens - np.max(logdens))
        return cls(grid, w / np.trapezoid(w, grid))

    @property
    def normalization(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def moment(self, fn) -> float:
        return float(np.trapezoid(fn(self.grid) * self.density, self.grid))

    def mean(self) -> float:
        return self.moment(lambda g: g)

    def var(self) -> float:
        mu = self.mean()
        return self.moment(lambda g: (g - mu) ** 2)

    def skewness(self) -> float:
        mu, v = self.mean(), self.var()
        return self.moment(lambda g: (g - mu) ** 3) / v**1.5

    def mode(self) -> float:
        return float(self.grid[np.argmax(self.density)])

    def cdf_at(self, edges) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.grid))])
        return np.interp(edges, self.grid, cum)

    def to_csv(self, path, step: int = 1) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "density"])
            for t, d in zip(self.grid[::step], self.density[::step]):
                w.writerow([repr(float(t)), repr(float(d))])


def tv_distance(a: DensityTable, b: DensityTable) -> float:
    """Total-variation distance, ``b`` interpolated onto ``a``'s grid."""
    db = np.interp(a.grid, b.grid, b.density, left=0.0, right=0.0)
    return 0.5 * float(np.trapezoid(np.abs(a.density - db), a.grid))


def histogram_tv(samples, table: DensityTable, bins: int = 40) -> float:
    """TV distance between a sample histogram and a density, equal-width bins over the central 99.9%."""
    s = np.asarray(samples, dtype=float).ravel()
    lo, hi = np.quantile(s, [0.0005, 0.9995])
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(s, bins=edges)
    p = counts / s.size
    q = np.diff(table.cdf_at(edges))
    tails_p = 1.0 - p.sum()
    tails_q = 1.0 - q.sum()
    return 0.5 * float(np.abs(p - q).sum() + abs(tails_p - tails_q))


def _check_grid(grid, prior_sd):
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing")
    return grid


def gp_posterior_density(y, sigma_y, config: GpConfig, runs: DesignRuns, prior_sd=1.0, grid=None, prior_mean=0.0):
    """``π(θ | y, η°) ∝ N(y; μθ, vθ + σy²) · N(θ; prior_mean, prior_sd²)`` on a grid."""
    grid = _check_grid(DEFAULT_GRID if grid is None else grid, prior_sd)
    if grid[-1] - grid[0] < 6 * prior_sd:
        raise ValidationError("grid must cover at least 6 prior standard deviations")
    mu, v = gp_condition(config, runs, grid)
    tot = v + float(sigma_y) ** 2
    logd = -0.5 * (y - mu) ** 2 / tot - 0.5 * np.log(tot) - 0.5 * ((grid - prior_mean) / prior_sd) ** 2
    return DensityTable.from_log(grid, logd)


def _eval_on_grid(forward, grid):
    fn = getattr(forward, "fn", None) or getattr(forward, "evaluate", forward)
    try:
        out = np.asarray(fn(grid), dtype=float)
        if out.shape == grid.shape:
            return out
    except Exception:  # noqa: BLE001 - fall back to pointwise evaluation
        pass
    out = np.empty_like(grid)
    for i, t in enumerate(grid):
        try:
            out[i] = float(np.ravel(forward(np.array([t])))[0])
        except Exception as exc:  # noqa: BLE001
            raise RuntimeError(f"forward model failed at grid point {i} (theta={t})") from exc
    return out


def quadrature_posterior(forward, y, sigma_y, prior_mean=0.0, prior_sd=1.0, grid=None) -> DensityTable:
    """Exact 1-d posterior ``∝ N(y; η(θ), σy²) N(θ; prior_mean, prior_sd²)`` by trapezoid rule."""
    grid = _check_grid(DEFAULT_GRID if grid is None else grid, prior_sd)
    if np.max(np.diff(grid)) > prior_sd / 100:
        raise ValidationError("grid resolution must be at most prior_sd / 100")
    eta = _eval_on_grid(forward, grid)
    logd = -0.5 * ((y - eta) / sigma_y) ** 2 - 0.5 * ((grid - prior_mean) / prior_sd) ** 2
    return DensityTable.from_log(grid, logd)


@dataclass(frozen=True)
class LinearEmulator:
    """``η | θ ~ N(intercept + slope θ, residual_cov)``."""

    intercept: np.ndarray
    slope: np.ndarray
    residual_cov: np.ndarray

    def predict(self, theta) -> np.ndarray:
        return self.intercept + np.atleast_2d(theta) @ self.slope.T


def linear_emulator(moments: MomentEstimate) -> LinearEmulator:
    """Regression of outputs on parameters implied by the joint Gaussian fit."""
    Stt = moments.sigma_tt
    try:
        L = sla.cholesky(Stt, lower=True)
    except sla.LinAlgError as exc:
        raise NumericalError("parameter covariance block is singular") from exc
    slope = sla.cho_solve((L, True), moments.sigma_te).T
    intercept = moments.mu_eta - slope @ moments.mu_theta
    resid = symmetrize(moments.sigma_ee - slope @ moments.sigma_te)
    return LinearEmulator(intercept, slope, resid)


def emulator_posterior(emulator: LinearEmulator, theta_mean, theta_cov, obs: ObservationModel, d_theta: int):
    """Conjugate θ-posterior (mean, cov) when outputs follow the linear emulator.

    ``y = Hθ θ + Hη η + ε`` with ``η | θ`` from the emulator gives a Gaussian
    likelihood in θ alone, combined with the ``N(theta_mean, theta_cov)`` prior
    in precision form.
    """
    Ht, He = obs.H[:, :d_theta], obs.H[:, d_theta:]
    G = Ht + He @ emulator.slope
    c = He @ emulator.intercept
    noise = symmetrize(He @ emulator.residual_cov @ He.T + obs.sigma_y)
    Ln = cholesky_jitter(noise, what="emulator noise covariance")
    Gt_Ni = sla.cho_solve((Ln, True), G).T
    Lp = sla.cholesky(np.atleast_2d(theta_cov), lower=True)
    prior_prec = sla.cho_solve((Lp, True), np.eye(d_theta))
    cov = symmetrize(np.linalg.inv(prior_prec + Gt_Ni @ G))
    mean = cov @ (prior_prec @ np.atleast_1d(theta_mean) + Gt_Ni @ (obs.y - c))
    return mean, cov


@dataclass(frozen=True)
class Chain:
    states: np.ndarray
    log_target: np.ndarray
    acceptance_rate: float
    burn_in: int

    @property
    def samples(self) -> np.ndarray:
        return self.states[self.burn_in :]


def mcmc_sampler(log_target: Callable, init, steps: int, proposal_sd, seed, burn_in: int | None = None) -> Chain:
    """Random-walk Metropolis with an isotropic normal proposal.

    The first half of the chain is flagged as burn-in unless ``burn_in`` is
    given. Deterministic for a fixed seed.
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise ValidationError("log target is not finite at the initial state")
    rng = make_rng(seed)
    d = x.size
    steps_z = rng.standard_normal((steps, d)) * np.asarray(proposal_sd, dtype=float)
    log_u = np.log(rng.random(steps))
    states = np.empty((steps, d))
    lps = np.empty(steps)
    accepted = 0
    for i in range(steps):
        prop = x + steps_z[i]
        lq = float(log_target(prop))
        if np.isfinite(lq) and log_u[i] < lq - lp:
            x, lp = prop, lq
            accepted += 1
        states[i] = x
        lps[i] = lp
    return Chain(states, lps, accepted / steps if steps else 0.0, steps // 2 if burn_in is None else burn_in)
