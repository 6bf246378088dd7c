"""Built-in forward models and ensemble generators.

None of these are physical simulators. The toy model and the ice-sheet
surrogate are small closed-form stand-ins with the shapes and monotonicities
the calibration examples need; the cosmology and climate generators only
produce shape-matched synthetic tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import ndtr

from enkf_cal._linalg import ValidationError
from enkf_cal.ensemble import JointEnsemble, MomentEstimate
from enkf_cal.taper import SpatialGrid
from enkf_cal.update import make_rng


@dataclass(frozen=True)
class ForwardModel:
    fn: Callable[[np.ndarray], np.ndarray]
    d_theta: int
    d_eta: int
    name: str = "forward"

    def evaluate(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != self.d_theta:
            raise ValidationError(f"{self.name}: expected {self.d_theta} parameters, got {theta.size}")
        out = np.atleast_1d(np.asarray(self.fn(theta), dtype=float)).ravel()
        if out.size != self.d_eta:
            raise ValidationError(f"{self.name}: produced {out.size} outputs, declared {self.d_eta}")
        return out

    __call__ = evaluate

    def run(self, thetas) -> JointEnsemble:
        """Evaluate at every row of ``thetas`` and pair inputs with outputs."""
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.d_theta)
        eta = np.vstack([self.evaluate(t) for t in thetas])
        return JointEnsemble(np.hstack([thetas, eta]), self.d_theta, self.d_eta)


def toy_forward(theta):
    """Standard normal CDF; strictly increasing from 0 to 1."""
    return ndtr(theta)


TOY = ForwardModel(lambda t: ndtr(t), 1, 1, name="toy")
TOY_Y = 0.8
TOY_SIGMA_Y = 0.1


@dataclass(frozen=True)
class LinearForward(ForwardModel):
    """Affine map ``eta = a + B theta``."""

    a: np.ndarray = None
    B: np.ndarray = None

    @classmethod
    def create(cls, a, B) -> "LinearForward":
        a = np.atleast_1d(np.asarray(a, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[0] != a.size:
            raise ValidationError(f"B has {B.shape[0]} rows but a has {a.size} entries")
        return cls(lambda t: a + B @ t, B.shape[1], a.size, "linear", a, B)

    def propagate_moments(self, theta_mean, theta_cov) -> MomentEstimate:
        """Exact joint moments of ``(theta, a + B theta)`` for Gaussian ``theta``."""
        mt = np.atleast_1d(theta_mean)
        St = np.atleast_2d(theta_cov)
        mu = np.concatenate([mt, self.a + self.B @ mt])
        cross = St @ self.B.T
        S = np.block([[St, cross], [cross.T, self.B @ St @ self.B.T]])
        return MomentEstimate(mu, S, self.d_theta)


def linear_forward(a, B) -> LinearForward:
    return LinearForward.create(a, B)


def identity_forward(d: int = 1) -> LinearForward:
    return LinearForward.create(np.zeros(d), np.eye(d))


# ------------------------------------------------------------ ice surrogate

ICE_DIMS = (36, 30)
ICE_C0 = 1.0
ICE_C1 = 0.5


def ice_bump(nx: int = 36, ny: int = 30) -> np.ndarray:
    """Spatial profile in [0, 1], flattened in :class:`SpatialGrid` site order."""
    grid = SpatialGrid.lattice(nx, ny)
    x = grid.sites[:, 0] + 0.5
    y = grid.sites[:, 1] + 0.5
    b = (x / nx) * (y / ny) * (1 - y / ny) * (1 - x / nx + 0.2)
    return b / b.max()


def synthetic_ice_thickness(theta1: float, theta2: float, nx: int = 36, ny: int = 30) -> np.ndarray:
    """Log ice thickness on an ``nx × ny`` lattice.

    ``log T(s) = c0 + b(s) (1 + c1 (theta2 - theta1))``: thicker for small
    ``theta1`` and large ``theta2`` at every site.
    """
    if not (0.0 <= theta1 <= 1.0 and 0.0 <= theta2 <= 1.0):
        raise ValidationError("ice surrogate parameters must lie in [0, 1]")
    return ICE_C0 + ice_bump(nx, ny) * (1.0 + ICE_C1 * (theta2 - theta1))


def ice_forward(nx: int = 36, ny: int = 30) -> ForwardModel:
    b = ice_bump(nx, ny)

    def fn(t):
        if np.any(t < 0) or np.any(t > 1):
            raise ValidationError("ice surrogate parameters must lie in [0, 1]")
        return ICE_C0 + b * (1.0 + ICE_C1 * (t[1] - t[0]))

    return ForwardModel(fn, 2, nx * ny, name="ice")


# ------------------------------------------------------------ designs


@dataclass(frozen=True)
class ParameterBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValidationError("ParameterBox needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return self.lower.size

    def scale(self, unit) -> np.ndarray:
        return self.lower + np.asarray(unit) * (self.upper - self.lower)

    def to_json(self) -> str:
        return json.dumps({"lower": self.lower.tolist(), "upper": self.upper.tolist()})

    @classmethod
    def from_json(cls, text_or_path) -> "ParameterBox":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text(encoding="utf-8")
        d = json.loads(text)
        return cls(d["lower"], d["upper"])


COSMOLOGY_NAMES = ("n", "h", "sigma_8", "Omega_CDM", "Omega_B")
COSMOLOGY_BOX = ParameterBox([0.8, 0.5, 0.6, 0.0, 0.02], [1.4, 1.1, 1.6, 0.6, 0.12])


def latin_hypercube(m: int, d: int, seed) -> np.ndarray:
    """Stratified-permutation LHS in ``[0, 1]^d``: one point per stratum per axis."""
    rng = make_rng(seed)
    u = rng.random((m, d))
    perms = np.column_stack([rng.permutation(m) for _ in range(d)])
    return (perms + u) / m


def maximin_lhs(m: int, d: int, seed, tries: int = 50) -> np.ndarray:
    """Best of ``tries`` Latin hypercubes by minimum pairwise distance."""
    ss = np.random.SeedSequence(int(seed))
    best, best_d = None, -np.inf
    for child in ss.spawn(tries):
        X = latin_hypercube(m, d, child)
        dmin = pdist(X).min() if m > 1 else np.inf
        if dmin > best_d:
            best, best_d = X, dmin
    return best


def toy_ensemble(m: int, seed, forward: ForwardModel = TOY) -> JointEnsemble:
    """``theta ~ N(0, 1)`` prior draws paired with ``forward(theta)``."""
    theta = make_rng(seed).standard_normal((m, 1))
    return forward.run(theta)


def ice_ensemble(m: int = 20, seed=0, nx: int = 36, ny: int = 30) -> JointEnsemble:
    return ice_forward(nx, ny).run(maximin_lhs(m, 2, seed))


# ------------------------------------------------------------ shape-matched fixtures


def cosmology_fixture(seed=0, m: int = 128, n_out: int = 55, n_obs: int = 22):
    """Synthetic (θ, log power) table shaped like the 128-run, 5+55 ensemble.

    Returns ``(ensemble, h_indices, y, sigma_y_diag)``. The outputs are a smooth
    made-up log spectrum; only the shapes match the real problem.
    """
    unit = latin_hypercube(m, 5, seed)
    theta = COSMOLOGY_BOX.scale(unit)
    logk = np.linspace(np.log(0.01), np.log(1.0), n_out)

    def spectrum(t):
        n, h, s8, ocdm, ob = t
        om = ocdm + ob + 0.05
        return 2 * np.log(s8) + n * logk - 2 * np.log1p((np.exp(logk) / (om * h)) ** 2)

    fwd = ForwardModel(spectrum, 5, n_out, name="cosmology-synthetic")
    ens = fwd.run(theta)
    h_idx = np.linspace(6, n_out - 4, n_obs).round().astype(int)
    rng = make_rng(np.random.SeedSequence(int(seed), spawn_key=(1,)))
    truth = COSMOLOGY_BOX.scale(np.full(5, 0.45))
    sd = np.linspace(0.05, 0.15, n_obs)
    y = fwd.evaluate(truth)[h_idx] + sd * rng.standard_normal(n_obs)
    return ens, h_idx, y, sd**2


def climate_fixture(seed=0, m: int = 1400, d_theta: int = 15, n_outputs: int = 7, n_seasons: int = 4, k: int = 5):
    """Synthetic ensemble in EOF-weight space with the 7 × 4 × 5 layout.

    Weights respond linearly plus a mild quadratic term to uniform θ. The
    observation carries unit climate noise plus a per-output discrepancy.
    Returns ``(ensemble, y, true_lambda)``.
    """
    ss = np.random.SeedSequence(int(seed))
    r_design, r_map, r_obs = (make_rng(c) for c in ss.spawn(3))
    d_eta = n_outputs * n_seasons * k
    theta = r_design.random((m, d_theta))
    A = r_map.standard_normal((d_eta, d_theta)) * 1.5
    Q = r_map.standard_normal(d_eta) * 0.5
    base = r_map.standard_normal(d_eta)
    eta = base + (theta - 0.5) @ A.T + Q * ((theta[:, :1] - 0.5) ** 2)
    eta = eta + r_design.standard_normal(eta.shape)  # climate noise in each run
    true_lambda = np.array([0.25, 1.0, 4.0, 0.5, 10.0, 2.0, 0.1])[:n_outputs]
    if true_lambda.size < n_outputs:
        true_lambda = np.resize(true_lambda, n_outputs)
    block = n_seasons * k
    t_true = np.full(d_theta, 0.4)
    clean = base + A @ (t_true - 0.5) + Q * (t_true[0] - 0.5) ** 2
    discrep = r_obs.standard_normal(d_eta) / np.sqrt(np.repeat(true_lambda, block))
    y = clean + r_obs.standard_normal(d_eta) + discrep
    return JointEnsemble(np.hstack([theta, eta]), d_theta, d_eta), y, true_lambda
