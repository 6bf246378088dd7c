"""Joint (parameter, output) ensembles, their moments, and observation models.

Every joint vector is laid out parameters first, outputs second::

    x = (theta_1, ..., theta_dθ, eta_1, ..., eta_dη)

so a moment estimate of a ``p = dθ + dη`` dimensional ensemble splits into
the four covariance blocks ``Σθθ, Σθη, Σηθ, Σηη``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from enkf_cal._linalg import (
    InsufficientEnsembleError,
    NumericalError,
    ValidationError,
    cholesky_jitter,
    symmetrize,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JointEnsemble:
    """``m`` joint vectors stored row-wise in ``members`` (shape ``(m, p)``)."""

    members: np.ndarray
    d_theta: int
    d_eta: int

    def __post_init__(self):
        X = np.array(self.members, dtype=float)
        if X.ndim != 2:
            raise ValidationError("ensemble members must be a 2-d array (m, p)")
        if self.d_theta < 1 or self.d_eta < 1:
            raise ValidationError("need d_theta >= 1 and d_eta >= 1")
        if X.shape[1] != self.d_theta + self.d_eta:
            raise ValidationError(
                f"row length {X.shape[1]} != d_theta + d_eta = {self.d_theta + self.d_eta}"
            )
        if not np.all(np.isfinite(X)):
            raise ValidationError("ensemble contains non-finite values")
        object.__setattr__(self, "members", _frozen(X))

    @classmethod
    def from_parts(cls, theta, eta) -> "JointEnsemble":
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        if theta.shape[0] == 1 and eta.shape[0] > 1:
            theta = theta.T
        if eta.shape[0] == 1 and theta.shape[0] > 1:
            eta = eta.T
        return cls(np.hstack([theta, eta]), theta.shape[1], eta.shape[1])

    @property
    def m(self) -> int:
        return self.members.shape[0]

    @property
    def p(self) -> int:
        return self.d_theta + self.d_eta

    @property
    def theta(self) -> np.ndarray:
        return self.members[:, : self.d_theta]

    @property
    def eta(self) -> np.ndarray:
        return self.members[:, self.d_theta :]


class Blocks(NamedTuple):
    mu_theta: np.ndarray
    mu_eta: np.ndarray
    sigma_tt: np.ndarray
    sigma_te: np.ndarray
    sigma_et: np.ndarray
    sigma_ee: np.ndarray


@dataclass(frozen=True)
class MomentEstimate:
    mu_pr: np.ndarray
    sigma_pr: np.ndarray
    d_theta: int

    def __post_init__(self):
        mu = np.asarray(self.mu_pr, dtype=float).ravel()
        S = np.asarray(self.sigma_pr, dtype=float)
        if S.shape != (mu.size, mu.size):
            raise ValidationError(f"sigma_pr shape {S.shape} does not match mean length {mu.size}")
        if not 1 <= self.d_theta < mu.size:
            raise ValidationError("d_theta must leave at least one output component")
        object.__setattr__(self, "mu_pr", _frozen(mu))
        object.__setattr__(self, "sigma_pr", _frozen(symmetrize(S)))

    @property
    def p(self) -> int:
        return self.mu_pr.size

    @property
    def d_eta(self) -> int:
        return self.p - self.d_theta

    @property
    def mu_theta(self):
        return self.mu_pr[: self.d_theta]

    @property
    def mu_eta(self):
        return self.mu_pr[self.d_theta :]

    @property
    def sigma_tt(self):
        return self.sigma_pr[: self.d_theta, : self.d_theta]

    @property
    def sigma_te(self):
        return self.sigma_pr[: self.d_theta, self.d_theta :]

    @property
    def sigma_et(self):
        return self.sigma_pr[self.d_theta :, : self.d_theta]

    @property
    def sigma_ee(self):
        return self.sigma_pr[self.d_theta :, self.d_theta :]

    def with_sigma_ee(self, sigma_ee) -> "MomentEstimate":
        """Copy with the output-output block replaced (e.g. by a tapered estimate)."""
        S = np.array(self.sigma_pr)
        S[self.d_theta :, self.d_theta :] = sigma_ee
        return MomentEstimate(self.mu_pr, S, self.d_theta)


def compute_moments(ensemble: JointEnsemble) -> MomentEstimate:
    """Sample mean and (m-1)-divisor sample covariance of a joint ensemble."""
    X = ensemble.members
    m = X.shape[0]
    if m < 2:
        raise InsufficientEnsembleError(f"need at least 2 ensemble members, got {m}")
    mu = X.mean(axis=0)
    A = X - mu
    S = A.T @ A / (m - 1)
    return MomentEstimate(mu, symmetrize(S), ensemble.d_theta)


def partition(moments: MomentEstimate) -> Blocks:
    return Blocks(
        moments.mu_theta,
        moments.mu_eta,
        moments.sigma_tt,
        moments.sigma_te,
        moments.sigma_et,
        moments.sigma_ee,
    )


def build_incidence(selected_output_indices: Sequence[int], d_theta: int, d_eta: int) -> np.ndarray:
    """``n × (dθ+dη)`` matrix whose row ``i`` picks output ``selected_output_indices[i]``."""
    idx = [int(i) for i in selected_output_indices]
    if len(set(idx)) != len(idx):
        raise ValidationError("duplicate output index in incidence selection")
    bad = [i for i in idx if not 0 <= i < d_eta]
    if bad:
        raise ValidationError(f"output indices out of range [0, {d_eta}): {bad}")
    H = np.zeros((len(idx), d_theta + d_eta))
    H[np.arange(len(idx)), d_theta + np.asarray(idx, dtype=int)] = 1.0
    return H


@dataclass(frozen=True)
class ObservationModel:
    H: np.ndarray
    y: np.ndarray
    sigma_y: np.ndarray
    mode: str = "general"
    d_theta: int | None = field(default=None, compare=False)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float)).ravel()
        Sy = np.atleast_2d(np.asarray(self.sigma_y, dtype=float))
        n = y.size
        if H.shape[0] != n:
            raise ValidationError(f"H has {H.shape[0]} rows but y has {n} entries")
        if Sy.shape != (n, n):
            raise ValidationError(f"sigma_y shape {Sy.shape} != ({n}, {n})")
        if not np.allclose(Sy, Sy.T, rtol=1e-12, atol=0.0):
            raise ValidationError("sigma_y is not symmetric")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(H))):
            raise ValidationError("observation model has non-finite entries")
        try:
            cholesky_jitter(Sy, jitter_scale=0.0, what="sigma_y") if n else None
        except NumericalError as exc:
            raise ValidationError("sigma_y is not positive definite") from exc
        if self.mode not in ("incidence", "general"):
            raise ValidationError(f"unknown observation mode {self.mode!r}")
        if self.mode == "incidence":
            ok = np.all((H == 0) | (H == 1)) and np.all(H.sum(axis=1) == 1)
            if self.d_theta is not None:
                ok = ok and not np.any(H[:, : self.d_theta])
            if not ok:
                raise ValidationError("incidence H must have exactly one 1 per row, in the output block")
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "sigma_y", _frozen(Sy))

    @classmethod
    def incidence(cls, indices, d_theta, d_eta, y, sigma_y) -> "ObservationModel":
        H = build_incidence(indices, d_theta, d_eta)
        Sy = np.asarray(sigma_y, dtype=float)
        if Sy.ndim < 2:
            Sy = np.diag(np.broadcast_to(Sy, (len(indices),)))
        return cls(H, y, Sy, mode="incidence", d_theta=d_theta)

    @property
    def n(self) -> int:
        return self.y.size

    def scaled(self, factor: float) -> "ObservationModel":
        """Same operator and data, observation covariance multiplied by ``factor``."""
        return ObservationModel(self.H, self.y, self.sigma_y * factor, self.mode, self.d_theta)

    def with_sigma_y(self, sigma_y) -> "ObservationModel":
        return ObservationModel(self.H, self.y, sigma_y, self.mode, self.d_theta)


# ---------------------------------------------------------------- file formats


class CsvFormatError(ValidationError):
    pass


def ensemble_header(d_theta: int, d_eta: int) -> list[str]:
    return [f"theta_{i + 1}" for i in range(d_theta)] + [f"eta_{j + 1}" for j in range(d_eta)]


def save_ensemble(ensemble: JointEnsemble, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ensemble_header(ensemble.d_theta, ensemble.d_eta))
        for row in ensemble.members:
            w.writerow([repr(float(v)) for v in row])


def load_tabulated_ensemble(path, d_theta: int | None = None) -> JointEnsemble:
    """Read an ensemble CSV (header ``theta_1..,eta_1..``, one member per row).

    ``d_theta`` is inferred from the header when omitted; when given it must
    agree with the header. Parse errors report the 1-based file line and column.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    n_theta = 0
    while n_theta < len(header) and header[n_theta].startswith("theta_"):
        n_theta += 1
    if n_theta == 0 or not all(h.startswith("eta_") for h in header[n_theta:]) or n_theta == len(header):
        raise CsvFormatError(f"{path}: header must be theta_1..theta_k followed by eta_1..eta_l")
    if d_theta is not None and d_theta != n_theta:
        raise CsvFormatError(f"{path}: header declares {n_theta} parameters, expected {d_theta}")
    width = len(header)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise CsvFormatError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise CsvFormatError(
                    f"{path}: row {lineno}, column {col} ({header[col - 1]}): non-numeric value {cell!r}"
                ) from None
        data.append(vals)
    if not data:
        raise CsvFormatError(f"{path}: no ensemble members")
    return JointEnsemble(np.array(data), n_theta, width - n_theta)


def load_matrix_csv(path) -> np.ndarray:
    """Headerless numeric CSV matrix (one row per line)."""
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float, ndmin=2))
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None


def load_observation(path, d_theta: int, d_eta: int) -> ObservationModel:
    """Read observation JSON ``{"y", "sigma_y": {"diag"|"full_csv"}, "h_indices"}``.

    A ``"H"`` key (explicit matrix) may replace ``h_indices`` for general mode.
    Relative ``full_csv`` paths resolve against the JSON file's directory.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if "y" not in spec or "sigma_y" not in spec:
        raise ValidationError(f"{path}: observation JSON needs 'y' and 'sigma_y'")
    y = np.asarray(spec["y"], dtype=float)
    sy = spec["sigma_y"]
    if isinstance(sy, dict) and "diag" in sy:
        Sy = np.diag(np.asarray(sy["diag"], dtype=float))
    elif isinstance(sy, dict) and "full_csv" in sy:
        csv_path = Path(sy["full_csv"])
        if not csv_path.is_absolute():
            csv_path = path.parent / csv_path
        Sy = load_matrix_csv(csv_path)
    else:
        raise ValidationError(f"{path}: sigma_y must be {{'diag': [...]}} or {{'full_csv': path}}")
    if "h_indices" in spec:
        return ObservationModel.incidence(spec["h_indices"], d_theta, d_eta, y, Sy)
    if "H" in spec:
        H = np.asarray(spec["H"], dtype=float)
        if H.shape != (y.size, d_theta + d_eta):
            raise ValidationError(f"{path}: H shape {H.shape} != ({y.size}, {d_theta + d_eta})")
        return ObservationModel(H, y, Sy, mode="general", d_theta=d_theta)
    raise ValidationError(f"{path}: observation JSON needs 'h_indices' or 'H'")


def save_observation(path, y, sigma_y_diag, h_indices) -> None:
    payload = {
        "y": [float(v) for v in np.ravel(y)],
        "sigma_y": {"diag": [float(v) for v in np.ravel(sigma_y_diag)]},
        "h_indices": [int(i) for i in h_indices],
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
