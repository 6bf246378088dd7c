"""Shared exceptions and SPD linear algebra with a single jitter retry."""

from __future__ import annotations

import os

import numpy as np
from scipy import linalg as sla


class ValidationError(ValueError):
    """Inputs violate a documented precondition."""


class InsufficientEnsembleError(ValidationError):
    pass


class NumericalError(ArithmeticError):
    """A matrix that must be SPD could not be factorized, even after jitter."""


def cholesky_jitter(A: np.ndarray, jitter_scale: float = 1e-10, what: str = "matrix"):
    """Lower Cholesky factor of ``A``, retrying once with a diagonal jitter.

    The jitter is ``jitter_scale * trace(A) / n``. Raises :class:`NumericalError`
    when both attempts fail.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{what} has non-finite entries")
    try:
        return sla.cholesky(A, lower=True)
    except sla.LinAlgError:
        pass
    eps = jitter_scale * abs(np.trace(A)) / n
    if eps == 0.0:
        eps = jitter_scale
    try:
        return sla.cholesky(A + eps * np.eye(n), lower=True)
    except sla.LinAlgError as exc:
        raise NumericalError(f"{what} is not positive definite (jitter {eps:.3g} failed)") from exc


def spd_solve(A: np.ndarray, B: np.ndarray, what: str = "matrix") -> np.ndarray:
    L = cholesky_jitter(A, what=what)
    return sla.cho_solve((L, True), B)


def logdet_from_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def max_workers() -> int:
    """Worker cap from ``ENKF_CAL_THREADS``; 0 or 1 means run sequentially."""
    raw = os.environ.get("ENKF_CAL_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(n, 1)


def parallel_map(fn, items):
    """Order-preserving map, threaded when ``ENKF_CAL_THREADS`` > 1."""
    items = list(items)
    workers = max_workers()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
