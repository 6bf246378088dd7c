"""Bayesian D-optimal placement of point measurements.

For a design ``I`` (indices of measured outputs, each with noise variance
``σ²``) the parameter posterior covariance is

    Σθ_post(I) = Σθθ - ΣθI (ΣII + σ² I)^{-1} ΣIθ

and the design criterion is ``log det Σθ_post(I)`` (smaller is better).
Only an ``n × n`` system is ever solved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy import linalg as sla

from enkf_cal._linalg import (
    NumericalError,
    ValidationError,
    cholesky_jitter,
    logdet_from_chol,
    parallel_map,
    symmetrize,
)
from enkf_cal.ensemble import MomentEstimate
from enkf_cal.taper import SpatialGrid, exponential_taper, taper_apply
from enkf_cal.update import make_rng

IMPROVE_TOL = 1e-12
EXHAUSTIVE_LIMIT = 10**6


@dataclass(frozen=True)
class DesignProblem:
    moments: MomentEstimate
    tapered_cov: np.ndarray
    obs_noise_var: float
    grid: SpatialGrid
    n: int

    def __post_init__(self):
        C = np.asarray(self.tapered_cov, dtype=float)
        p_eta = self.moments.d_eta
        if C.shape != (p_eta, p_eta):
            raise ValidationError(f"tapered covariance shape {C.shape} != ({p_eta}, {p_eta})")
        if len(self.grid) != p_eta:
            raise ValidationError(f"grid has {len(self.grid)} sites but there are {p_eta} outputs")
        if not self.obs_noise_var > 0:
            raise ValidationError("observation noise variance must be positive")
        if not 1 <= self.n <= p_eta:
            raise ValidationError(f"number of sites n={self.n} must be in [1, {p_eta}]")
        object.__setattr__(self, "tapered_cov", symmetrize(C))

    @classmethod
    def build(cls, moments: MomentEstimate, grid: SpatialGrid, n: int, obs_noise_var: float = 1.0, r=None):
        """Problem with ``Σηη ∘ R(r)`` as output covariance (untapered when ``r`` is None)."""
        C = moments.sigma_ee
        if r is not None:
            C = taper_apply(C, exponential_taper(grid, r))
        return cls(moments, C, float(obs_noise_var), grid, int(n))

    @property
    def p_eta(self) -> int:
        return self.moments.d_eta

    def with_n(self, n: int) -> "DesignProblem":
        return DesignProblem(self.moments, self.tapered_cov, self.obs_noise_var, self.grid, n)


@dataclass(frozen=True)
class Design:
    site_indices: tuple[int, ...]
    criterion: float
    start_criteria: tuple[float, ...] = field(default=(), compare=False)

    def coords(self, grid: SpatialGrid) -> list[list[float]]:
        return grid.sites[list(self.site_indices)].tolist()


def _indices(problem: DesignProblem, design) -> np.ndarray:
    idx = design.site_indices if isinstance(design, Design) else design
    idx = np.asarray(list(idx), dtype=int)
    if np.unique(idx).size != idx.size:
        raise ValidationError("design indices must be distinct")
    if idx.size and (idx.min() < 0 or idx.max() >= problem.p_eta):
        raise ValidationError("design index out of range")
    return idx


def posterior_param_cov(problem: DesignProblem, design) -> np.ndarray:
    idx = _indices(problem, design)
    Stt = problem.moments.sigma_tt
    if idx.size == 0:
        return np.array(Stt)
    Ste = problem.moments.sigma_te[:, idx]
    M = problem.tapered_cov[np.ix_(idx, idx)] + problem.obs_noise_var * np.eye(idx.size)
    L = cholesky_jitter(M, what="design innovation covariance")
    W = sla.solve_triangular(L, Ste.T, lower=True)
    return symmetrize(Stt - W.T @ W)


def d_criterion(problem: DesignProblem, design) -> float:
    P = posterior_param_cov(problem, design)
    sign, logdet = np.linalg.slogdet(P)
    if sign <= 0:
        raise NumericalError("posterior parameter covariance is not positive definite")
    return float(logdet)


def exhaustive_design(problem: DesignProblem) -> Design:
    """Global minimiser by enumeration; ties go to the lexicographically smallest set."""
    total = comb(problem.p_eta, problem.n)
    if total > EXHAUSTIVE_LIMIT:
        raise ValidationError(f"{total} candidate designs exceeds the exhaustive limit {EXHAUSTIVE_LIMIT}")
    best, best_c = None, np.inf
    for idx in combinations(range(problem.p_eta), problem.n):
        c = d_criterion(problem, idx)
        if c < best_c - IMPROVE_TOL:
            best, best_c = idx, c
    return Design(tuple(best), best_c)


def _best_addition(problem: DesignProblem, kept: np.ndarray, excluded: np.ndarray):
    """Criterion of ``kept ∪ {j}`` for every site ``j`` (rank-one determinant update).

    Sites in ``excluded`` get ``+inf``.
    """
    Stt = problem.moments.sigma_tt
    Ste = problem.moments.sigma_te
    C = problem.tapered_cov
    s2 = problem.obs_noise_var
    if kept.size:
        M = C[np.ix_(kept, kept)] + s2 * np.eye(kept.size)
        L = cholesky_jitter(M, what="design innovation covariance")
        Wk = sla.solve_triangular(L, C[kept, :], lower=True)  # (n-1, p)
        Wt = sla.solve_triangular(L, Ste[:, kept].T, lower=True)  # (n-1, dθ)
        P = Stt - Wt.T @ Wt
        cvec = Ste - Wt.T @ Wk  # (dθ, p) residual cross-covariance
        svec = np.diag(C) + s2 - np.sum(Wk * Wk, axis=0)
    else:
        P = np.array(Stt)
        cvec = Ste
        svec = np.diag(C) + s2
    P = symmetrize(P)
    Lp = cholesky_jitter(P, what="posterior parameter covariance")
    base = logdet_from_chol(Lp)
    z = sla.solve_triangular(Lp, cvec, lower=True)
    q = np.sum(z * z, axis=0) / svec
    with np.errstate(invalid="ignore", divide="ignore"):
        crit = base + np.log1p(-np.clip(q, None, 1.0 - 1e-300))
    crit[excluded] = np.inf
    return crit


def _exchange_from(problem: DesignProblem, start: np.ndarray, max_passes: int = 10_000):
    current = np.sort(start)
    cur_c = d_criterion(problem, current)
    for _ in range(max_passes):
        best = None  # (criterion, swap_in, position)
        for pos in range(current.size):
            kept = np.delete(current, pos)
            crit = _best_addition(problem, kept, current)
            j = int(np.argmin(crit))  # argmin returns the lowest index among ties
            if best is None or crit[j] < best[0] - IMPROVE_TOL or (
                abs(crit[j] - best[0]) <= IMPROVE_TOL and j < best[1]
            ):
                best = (float(crit[j]), j, pos)
        if best is None or not best[0] < cur_c - IMPROVE_TOL:
            break
        cand = np.sort(np.append(np.delete(current, best[2]), best[1]))
        cand_c = d_criterion(problem, cand)
        if not cand_c < cur_c - IMPROVE_TOL:
            break
        current, cur_c = cand, cand_c
    return current, cur_c


def fedorov_exchange(problem: DesignProblem, restarts: int = 100, seed=0) -> Design:
    """Best-improving single-swap exchange from ``restarts`` random starts.

    Each restart draws its start from its own child seed, so threaded and
    sequential runs return the same design.
    """
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    children = np.random.SeedSequence(int(seed)).spawn(restarts)

    def run(child):
        start = make_rng(child).choice(problem.p_eta, size=problem.n, replace=False)
        init_c = d_criterion(problem, start)
        idx, c = _exchange_from(problem, start)
        return init_c, tuple(int(i) for i in idx), c

    results = parallel_map(run, children)
    best_idx, best_c = None, np.inf
    for _, idx, c in results:
        if c < best_c - IMPROVE_TOL or (abs(c - best_c) <= IMPROVE_TOL and idx < best_idx):
            best_idx, best_c = idx, c
    return Design(best_idx, best_c, tuple(r[0] for r in results))
