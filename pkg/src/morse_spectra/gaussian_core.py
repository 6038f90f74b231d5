"""Finite-dimensional Gaussian vectors: pushforward, regression, sampling.

Symmetric-matrix valued components are flattened in the orthonormal basis
``E_ii`` and ``(E_ij + E_ji)/sqrt 2`` of Sym_m, so that coordinates satisfy
``<A, B> = tr(AB)``.  ``sym_to_hat`` and ``hat_to_sym`` convert.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream

PSD_TOL = 1e-12
SINGULAR_TOL = 1e-10


class GaussianError(ValueError):
    pass


class SingularObservation(GaussianError):
    """Observed block is (numerically) degenerate.

    ``direction`` is a unit vector in the observed coordinates spanning the
    null space that broke the regression.
    """

    def __init__(self, message: str, direction: np.ndarray, labels=None):
        super().__init__(message)
        self.direction = direction
        self.labels = labels


def _clip_psd(S: np.ndarray):
    S = 0.5 * (S + S.T)
    if S.size == 0:
        return S, np.zeros(0), np.zeros((0, 0))
    evals, evecs = np.linalg.eigh(S)
    top = max(float(evals[-1]), 0.0)
    if evals[0] < -PSD_TOL * max(top, 1.0):
        raise GaussianError(f"covariance is not PSD: smallest eigenvalue {evals[0]:.3e}, largest {top:.3e}")
    return S, np.clip(evals, 0.0, None), evecs


@dataclass(frozen=True)
class GaussianVector:
    mean: np.ndarray
    cov: np.ndarray
    labels: tuple = field(default=None, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise GaussianError(f"cov shape {cov.shape} does not match mean of length {mean.size}")
        cov, _, _ = _clip_psd(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.labels is not None and len(self.labels) != mean.size:
            raise GaussianError("labels must match dimension")

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def centered(cls, cov, labels=None) -> "GaussianVector":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(np.zeros(cov.shape[0]), cov, labels)

    def sqrt_cov(self) -> np.ndarray:
        """Symmetric square root with negative roundoff eigenvalues clipped to 0."""
        _, evals, evecs = _clip_psd(self.cov)
        return (evecs * np.sqrt(evals)) @ evecs.T

    def null_directions(self, rel_tol: float = SINGULAR_TOL) -> np.ndarray:
        """Columns spanning the degenerate directions of the covariance."""
        _, evals, evecs = _clip_psd(self.cov)
        top = evals[-1] if evals.size else 0.0
        return evecs[:, evals <= rel_tol * max(top, 1e-300)]

    def marginal(self, idx) -> "GaussianVector":
        idx = np.asarray(idx, dtype=int)
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return GaussianVector(self.mean[idx], self.cov[np.ix_(idx, idx)], labels)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(),
                "labels": None if self.labels is None else list(self.labels)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def pushforward(g: GaussianVector, L, b=None) -> GaussianVector:
    """Law of ``L x + b`` for ``x ~ g``."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[1] != g.dim:
        raise GaussianError(f"map has input dimension {L.shape[1]}, vector has dimension {g.dim}")
    mean = L @ g.mean
    if b is not None:
        mean = mean + np.asarray(b, dtype=float)
    return GaussianVector(mean, L @ g.cov @ L.T)


def regression(joint: GaussianVector, observed_indices):
    """Regression matrix ``C = S12 S22^{-1}`` and the conditional covariance.

    Returns ``(free_indices, C, S_cond)``.  Raises ``SingularObservation`` when
    the observed block has an eigenvalue below ``SINGULAR_TOL`` times its
    largest one.
    """
    obs = np.asarray(observed_indices, dtype=int)
    free = np.setdiff1d(np.arange(joint.dim), obs)
    S = joint.cov
    S22 = S[np.ix_(obs, obs)]
    S12 = S[np.ix_(free, obs)]
    evals, evecs = np.linalg.eigh(0.5 * (S22 + S22.T))
    top = max(float(evals[-1]), 0.0) if evals.size else 0.0
    if evals.size and (top <= 0 or evals[0] <= SINGULAR_TOL * top):
        direction = evecs[:, 0]
        labels = None if joint.labels is None else [joint.labels[i] for i in obs]
        named = ""
        if labels is not None:
            terms = [f"{direction[k]:+.3g}*{labels[k]}" for k in np.argsort(-np.abs(direction)) if abs(direction[k]) > 1e-8]
            named = " along " + " ".join(terms)
        raise SingularObservation(
            f"observed block is singular (eigenvalue ratio {evals[0] / max(top, 1e-300):.3e}){named}", direction, labels
        )
    inv = (evecs / evals) @ evecs.T
    C = S12 @ inv
    S11 = S[np.ix_(free, free)]
    cond = S11 - C @ S12.T
    return free, C, 0.5 * (cond + cond.T)


def condition(joint: GaussianVector, observed_indices, observed_values) -> GaussianVector:
    """Conditional law of the unobserved coordinates given the observed ones."""
    obs = np.asarray(observed_indices, dtype=int)
    vals = np.atleast_1d(np.asarray(observed_values, dtype=float))
    if vals.shape != obs.shape:
        raise GaussianError("observed_values must match observed_indices")
    free, C, S = regression(joint, obs)
    mean = joint.mean[free] + C @ (vals - joint.mean[obs])
    labels = None if joint.labels is None else tuple(joint.labels[i] for i in free)
    # the Schur complement can pick up tiny negative eigenvalues; clip them
    _, evals, evecs = _clip_psd(S) if S.size else (S, np.zeros(0), S)
    S = (evecs * evals) @ evecs.T if S.size else S
    return GaussianVector(mean, S, labels)


def sample_gaussian(g: GaussianVector, seed, size: int | None = None) -> np.ndarray:
    """Draw(s) from ``g`` through the symmetric covariance square root."""
    rng = stream(seed)
    root = g.sqrt_cov()
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, g.dim)) @ root.T + g.mean
    # exactly degenerate directions come out exactly at the mean
    if size is None:
        return z[0]
    return z


# ---------------------------------------------------------------------------
# symmetric matrices in orthonormal coordinates
# ---------------------------------------------------------------------------


def hat_index(m: int):
    """Pairs ``(i, j)`` in the order used for hat coordinates: diagonal first, then i<j."""
    diag = [(i, i) for i in range(m)]
    off = [(i, j) for i in range(m) for j in range(i + 1, m)]
    return diag + off


def sym_to_hat(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    m = A.shape[-1]
    out = [A[..., i, j] * (1.0 if i == j else math.sqrt(2.0)) for i, j in hat_index(m)]
    return np.stack(out, axis=-1)


def hat_to_sym(z: np.ndarray, m: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    A = np.zeros(z.shape[:-1] + (m, m))
    for k, (i, j) in enumerate(hat_index(m)):
        if i == j:
            A[..., i, i] = z[..., k]
        else:
            A[..., i, j] = A[..., j, i] = z[..., k] / math.sqrt(2.0)
    return A


def sym_entry_cov(m: int, u: float, v: float) -> np.ndarray:
    """Covariance of Sym_m^{u,v} in hat coordinates."""
    idx = hat_index(m)
    p = len(idx)
    S = np.zeros((p, p))
    for a, (i, j) in enumerate(idx):
        for b, (k, l) in enumerate(idx):
            c = u * (i == j) * (k == l) + v * ((i == k) * (j == l) + (i == l) * (j == k))
            S[a, b] = c * (1.0 if i == j else math.sqrt(2.0)) * (1.0 if k == l else math.sqrt(2.0))
    return S


def limit_joint(m: int, s_check: float, d: float, h: float) -> GaussianVector:
    """Rescaled jet ``(u, du, Hess u)`` at a point in the eps -> 0 limit.

    Covariances: Var u = s_check, Cov(du_i, du_j) = d delta_ij,
    Cov(u, H_ij) = -d delta_ij, Cov(H_ij, H_kl) = h (delta delta + delta delta + delta delta),
    and the gradient is independent of the rest.  Ordering: u, du_1..du_m,
    then the hat coordinates of H.
    """
    idx = hat_index(m)
    p = len(idx)
    dim = 1 + m + p
    S = np.zeros((dim, dim))
    S[0, 0] = s_check
    S[1:1 + m, 1:1 + m] = d * np.eye(m)
    for a, (i, j) in enumerate(idx):
        if i == j:
            S[0, 1 + m + a] = S[1 + m + a, 0] = -d
    S[1 + m:, 1 + m:] = sym_entry_cov(m, h, h)
    labels = ("u",) + tuple(f"du{i + 1}" for i in range(m)) + tuple(f"H{i + 1}{j + 1}" for i, j in idx)
    return GaussianVector(np.zeros(dim), S, labels)


def hessian_given_value(m: int, s_check: float, d: float, h: float, x: float) -> GaussianVector:
    """Law of the rescaled Hessian (hat coordinates) given u = x and du = 0."""
    joint = limit_joint(m, s_check, d, h)
    return condition(joint, list(range(1 + m)), [x] + [0.0] * m)
