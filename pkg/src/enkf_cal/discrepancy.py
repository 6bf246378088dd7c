"""EOF dimension reduction and per-output discrepancy precisions.

Fields are reduced to weights on ``k`` empirical orthogonal functions per
(output, season) block. Weights are ordered output-major, then season, then
EOF index, so an ``n_outputs × n_seasons × k`` layout flattens C-style.

Observation covariance in weight space is ``Σy = I + Σδ`` with
``Σδ = diag(1/λ_1, ..., 1/λ_q) ⊗ I_(n_seasons·k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from enkf_cal._linalg import NumericalError, ValidationError, cholesky_jitter, logdet_from_chol
from enkf_cal.emulator import mcmc_sampler


@dataclass(frozen=True)
class EofBasis:
    """Per-block orthonormal bases and weight scales.

    ``blocks[i]`` has shape ``(field_size_i, k)``; ``scales[i]`` multiplies the
    raw inner products so pilot weights have unit sample variance.
    """

    blocks: tuple
    scales: tuple
    k: int
    layout: tuple[int, int] = (1, 1)

    @property
    def block_sizes(self) -> list[int]:
        return [b.shape[0] for b in self.blocks]

    @property
    def field_size(self) -> int:
        return sum(self.block_sizes)

    @property
    def n_weights(self) -> int:
        return len(self.blocks) * self.k

    def _splits(self):
        return np.cumsum(self.block_sizes)[:-1]


def compute_eof(pilot_fields, k: int, block_sizes=None, layout=None) -> EofBasis:
    """Top-``k`` left singular vectors of the centred pilot snapshots, per block.

    ``pilot_fields`` holds one snapshot per row; ``block_sizes`` splits the
    columns into (output, season) blocks (one block when omitted).
    """
    X = np.atleast_2d(np.asarray(pilot_fields, dtype=float))
    T, size = X.shape
    if not 1 <= k < T:
        raise ValidationError(f"need T > k >= 1 (T={T}, k={k})")
    sizes = [size] if block_sizes is None else [int(s) for s in block_sizes]
    if sum(sizes) != size:
        raise ValidationError(f"block sizes sum to {sum(sizes)}, fields have {size} columns")
    if layout is None:
        layout = (len(sizes), 1)
    if layout[0] * layout[1] != len(sizes):
        raise ValidationError("layout does not match the number of blocks")
    blocks, scales = [], []
    for Xb in np.split(X, np.cumsum(sizes)[:-1], axis=1):
        A = Xb - Xb.mean(axis=0)
        U, s, _ = np.linalg.svd(A.T, full_matrices=False)
        tol = s.max(initial=0.0) * max(A.shape) * np.finfo(float).eps
        if np.sum(s > tol) < k:
            raise ValidationError(f"pilot block has rank {int(np.sum(s > tol))} < k={k}")
        blocks.append(U[:, :k])
        scales.append(np.sqrt(T - 1) / s[:k])
    return EofBasis(tuple(blocks), tuple(scales), int(k), tuple(layout))


def project_field(field_values, basis: EofBasis) -> np.ndarray:
    """Scaled EOF weights of one field (or of each row of a 2-d array)."""
    F = np.asarray(field_values, dtype=float)
    if F.shape[-1] != basis.field_size:
        raise ValidationError(f"field length {F.shape[-1]} != basis field size {basis.field_size}")
    parts = np.split(F, basis._splits(), axis=-1)
    return np.concatenate([(p @ B) * s for p, B, s in zip(parts, basis.blocks, basis.scales)], axis=-1)


def reconstruct_field(weights, basis: EofBasis) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    parts = np.split(W, len(basis.blocks), axis=-1)
    return np.concatenate([(w / s) @ B.T for w, B, s in zip(parts, basis.blocks, basis.scales)], axis=-1)


def sigma_y_from_lambda(lam, n_seasons: int, k: int) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(~(lam > 0)):
        raise ValidationError("discrepancy precisions must be positive")
    return np.diag(1.0 + np.repeat(1.0 / lam, n_seasons * k))


def _block_size(lam, y) -> int:
    q = lam.size
    if q == 0 or y.size % q:
        raise ValidationError(f"{y.size} weights cannot be split into {q} equal output blocks")
    return y.size // q


def lambda_log_posterior(lam, y, mu_eta, sigma_ee, prior_a: float = 1.0, prior_b: float = 0.001) -> float:
    """Log posterior of the precisions, up to an additive constant.

    ``V(λ) = Σηη + I + Σδ(λ)``; each output's precision covers an equal
    contiguous block of the weight vector.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(lam > 0)):
        raise ValidationError("discrepancy precisions must be positive")
    block = _block_size(lam, y)
    S = np.atleast_2d(np.asarray(sigma_ee, dtype=float))
    if S.shape != (y.size, y.size):
        raise ValidationError(f"sigma_ee shape {S.shape} != ({y.size}, {y.size})")
    V = S + np.diag(1.0 + np.repeat(1.0 / lam, block))
    L = cholesky_jitter(V, what="V(lambda)")
    z = sla.solve_triangular(L, y - np.asarray(mu_eta, dtype=float), lower=True)
    loglik = -0.5 * logdet_from_chol(L) - 0.5 * float(z @ z)
    logprior = float(np.sum((prior_a - 1.0) * np.log(lam) - prior_b * lam))
    return loglik + logprior


@dataclass(frozen=True)
class DiscrepancyPrecisions:
    lambdas: np.ndarray
    prior_a: float = 1.0
    prior_b: float = 0.001
    diagnostics: dict = field(default_factory=dict, compare=False)

    def sigma_y(self, n_seasons: int, k: int) -> np.ndarray:
        return sigma_y_from_lambda(self.lambdas, n_seasons, k)


def estimate_lambda(
    y,
    mu_eta,
    sigma_ee,
    n_outputs: int,
    steps: int = 20_000,
    seed=0,
    prior_a: float = 1.0,
    prior_b: float = 0.001,
    proposal_sd: float = 0.5,
    init=None,
) -> DiscrepancyPrecisions:
    """Posterior-mean plug-in for the precisions via Metropolis on ``log λ``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def log_target(u):
        lam = np.exp(u)
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            return -np.inf
        try:
            return lambda_log_posterior(lam, y, mu_eta, sigma_ee, prior_a, prior_b) + float(np.sum(u))
        except NumericalError:
            return -np.inf

    u0 = np.zeros(n_outputs) if init is None else np.log(np.asarray(init, dtype=float))
    try:
        chain = mcmc_sampler(log_target, u0, steps, proposal_sd, seed)
    except ValidationError as exc:
        raise NumericalError(f"lambda sampler could not start: {exc}") from exc
    lam_samples = np.exp(chain.samples)
    diag = {
        "acceptance_rate": chain.acceptance_rate,
        "steps": steps,
        "burn_in": chain.burn_in,
        "posterior_sd": lam_samples.std(axis=0, ddof=1).tolist(),
    }
    return DiscrepancyPrecisions(lam_samples.mean(axis=0), prior_a, prior_b, diag)

