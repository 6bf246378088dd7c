"""Spatial covariance tapering and taper-range selection.

A sample covariance ``S`` from a small ensemble is stabilised by the Schur
(elementwise) product with an exponential correlation matrix,
``Σηη(r) = S ∘ R(r)``, ``R_ij = exp(-|s_i - s_j| / r)``. Since ``R(r)`` is
positive definite on distinct sites, ``S ∘ R(r)`` is positive definite
whenever ``S`` is PSD with a strictly positive diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.spatial.distance import cdist

from enkf_cal._linalg import (
    InsufficientEnsembleError,
    NumericalError,
    ValidationError,
    cholesky_jitter,
    logdet_from_chol,
    parallel_map,
)

DEFAULT_CANDIDATES = np.geomspace(0.1, 100.0, 32)


@dataclass(frozen=True)
class SpatialGrid:
    """Measurement sites in lattice-index units.

    Lattice sites are ordered with the second coordinate fastest, so site
    ``i`` of an ``(nx, ny)`` lattice sits at ``(i // ny, i % ny)``.
    """

    sites: np.ndarray
    dims: tuple[int, int] | None = None

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sites, dtype=float))
        if s.shape[1] != 2:
            raise ValidationError("sites must be 2-d coordinates")
        if len(np.unique(s, axis=0)) != len(s):
            raise ValidationError("grid sites must be distinct")
        if self.dims is not None and self.dims[0] * self.dims[1] != len(s):
            raise ValidationError("lattice dims do not match the number of sites")
        s.setflags(write=False)
        object.__setattr__(self, "sites", s)

    @classmethod
    def lattice(cls, nx: int, ny: int) -> "SpatialGrid":
        if nx < 1 or ny < 1:
            raise ValidationError("lattice dims must be positive")
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return cls(np.column_stack([ix.ravel(), iy.ravel()]), (int(nx), int(ny)))

    def __len__(self) -> int:
        return len(self.sites)

    def distances(self) -> np.ndarray:
        return cdist(self.sites, self.sites)

    def permuted(self, perm) -> "SpatialGrid":
        return SpatialGrid(self.sites[np.asarray(perm)], None)


@dataclass(frozen=True)
class TaperMatrix:
    r: float
    matrix: np.ndarray


def exponential_taper(grid: SpatialGrid, r: float, distances: np.ndarray | None = None) -> TaperMatrix:
    if not r > 0:
        raise ValidationError(f"taper range must be positive, got {r}")
    D = grid.distances() if distances is None else distances
    with np.errstate(over="ignore"):
        R = np.exp(-D / r)
    return TaperMatrix(float(r), R)


def taper_apply(S: np.ndarray, R) -> np.ndarray:
    """Elementwise product ``S ∘ R``."""
    S = np.asarray(S, dtype=float)
    Rm = R.matrix if isinstance(R, TaperMatrix) else np.asarray(R, dtype=float)
    if S.shape != Rm.shape or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"shape mismatch: S {S.shape}, R {Rm.shape}")
    if np.any(np.diag(S) <= 0):
        raise ValidationError("sample covariance has a nonpositive diagonal entry")
    return S * Rm


def _sample_cov(X: np.ndarray):
    mu = X.mean(axis=0)
    A = X - mu
    return mu, A.T @ A / (X.shape[0] - 1)


def _gauss_loglik(resid: np.ndarray, cov: np.ndarray) -> float:
    L = cholesky_jitter(cov, what="tapered covariance")
    z = sla.solve_triangular(L, resid.T, lower=True)
    n = resid.shape[0]
    return -0.5 * n * logdet_from_chol(L) - 0.5 * float(np.sum(z * z))


def taper_loglik(samples: np.ndarray, D: np.ndarray, r: float, method: str = "loo") -> float:
    """Gaussian log-likelihood (up to a constant) of ``samples`` under ``S ∘ R(r)``.

    ``method="in_sample"`` plugs the mean and covariance of all samples into
    the density of every sample. With fewer samples than sites that estimate
    is singular and the likelihood grows without bound as ``r`` increases, so
    the default ``"loo"`` scores each sample against the mean and covariance
    of the other ``m - 1``.
    """
    X = np.asarray(samples, dtype=float)
    R = np.exp(-D / r)
    if method == "in_sample":
        mu, S = _sample_cov(X)
        return _gauss_loglik(X - mu, taper_apply(S, R))
    if method != "loo":
        raise ValidationError(f"unknown taper likelihood method {method!r}")
    m = X.shape[0]
    total = 0.0
    for k in range(m):
        rest = np.delete(X, k, axis=0)
        mu, S = _sample_cov(rest)
        total += _gauss_loglik((X[k] - mu)[None, :], taper_apply(S, R))
    return total


@dataclass(frozen=True)
class TaperFit:
    r_star: float
    candidates: np.ndarray
    loglik: np.ndarray

    def curve(self) -> list[dict]:
        return [{"r": float(r), "loglik": float(v)} for r, v in zip(self.candidates, self.loglik)]


def fit_taper_range(samples, grid: SpatialGrid, candidate_rs=None, method: str = "loo") -> TaperFit:
    """Candidate-grid maximum likelihood for the taper range.

    Ties go to the smallest ``r``. Candidates whose covariance cannot be
    factorized score ``-inf``; if every candidate fails, :class:`NumericalError`.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] < 2 or (method == "loo" and X.shape[0] < 3):
        raise InsufficientEnsembleError(f"too few samples ({X.shape[0]}) to fit a taper range")
    if X.shape[1] != len(grid):
        raise ValidationError(f"samples have {X.shape[1]} columns, grid has {len(grid)} sites")
    cands = np.asarray(DEFAULT_CANDIDATES if candidate_rs is None else candidate_rs, dtype=float).ravel()
    if cands.size == 0 or np.any(cands <= 0):
        raise ValidationError("candidate ranges must be a nonempty set of positive values")
    if cands.size == 1:
        try:
            ll = taper_loglik(X, grid.distances(), cands[0], method)
        except NumericalError:
            ll = -np.inf
        return TaperFit(float(cands[0]), cands, np.array([ll]))
    D = grid.distances()

    def score(r):
        try:
            return taper_loglik(X, D, r, method)
        except NumericalError:
            return -np.inf

    ll = np.array(parallel_map(score, cands))
    if not np.any(np.isfinite(ll)):
        raise NumericalError("no candidate taper range gives a positive definite covariance")
    best = np.flatnonzero(ll == np.max(ll))
    r_star = cands[best[np.argmin(cands[best])]]
    return TaperFit(float(r_star), cands, ll)


def tapered_moments(moments, grid: SpatialGrid, r: float):
    """Replace the output block of ``moments`` by ``Σηη ∘ R(r)``."""
    return moments.with_sigma_ee(taper_apply(moments.sigma_ee, exponential_taper(grid, r)))
