"""Metric and curvature recovered from derivative covariances of the field.

    h^eps(X, Y) = eps^{m+2} / d_m * E(X u . Y u)

On the round sphere the kernel is ``F(cos dist)`` and its normal-coordinate
derivatives come from a degree-4 Taylor polynomial (see
``fields.sphere_kernel_poly``); on flat tori everything reduces to lattice
sums.  Also: finite-difference jets of the squared spherical distance, and
the signed critical-point count used as a completeness certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fields as F
from ._rng import stream
from .weights import Weight, shape_params

DENOM_FLOOR = 1e-300
FD_STEP = 1e-2
EPS_MACH = np.finfo(float).eps


class GeometryError(ValueError):
    pass


class NotCertified(GeometryError):
    pass


class FiniteDifferenceError(GeometryError):
    def __init__(self, message: str, recommended_step: float):
        super().__init__(message)
        self.recommended_step = recommended_step


def _grad_cov(manifold: str, w: Weight, eps: float, m: int) -> np.ndarray:
    G = np.zeros((m, m))
    for i in range(m):
        for j in range(i, m):
            G[i, j] = G[j, i] = F.covariance_derivative(manifold, w, eps, (i,), (j,), m)
    return G


def h_metric(manifold: str, w: Weight, eps: float, m: int = 2) -> np.ndarray:
    """``(eps^{m+2}/d_m) E(d_i u d_j u)`` at a point (normal coordinates on the sphere)."""
    if manifold == "sphere":
        m = 2
    d = shape_params(w, m).d
    return eps ** (m + 2) / d * _grad_cov(manifold, w, eps, m)


def sectional_curvature(manifold: str, w: Weight, eps: float, i: int = 0, j: int = 1, m: int = 2) -> float:
    """``K^eps_ij = d_m/eps^{m+2} (E_{ii;jj} - E_{ij;ij}) / (E_{i;i} E_{j;j} - E_{i;j}^2)``."""
    if manifold == "sphere":
        m = 2
    if i == j or max(i, j) >= m:
        raise GeometryError("need two distinct coordinate directions")
    cov = lambda a, b: F.covariance_derivative(manifold, w, eps, a, b, m)  # noqa: E731
    num = cov((i, i), (j, j)) - cov((i, j), (i, j))
    den = cov((i,), (i,)) * cov((j,), (j,)) - cov((i,), (j,)) ** 2
    if not abs(den) > DENOM_FLOOR:
        raise GeometryError(f"gradient covariance determinant {den:.3e} is below the floor")
    d = shape_params(w, m).d
    return d / eps ** (m + 2) * num / den


@dataclass
class HessianStatEstimate:
    value: float
    stderr: float
    samples: int
    numerator: float
    denominator: float

    def to_dict(self) -> dict:
        return dict(value=self.value, stderr=self.stderr, samples=self.samples,
                    numerator=self.numerator, denominator=self.denominator)


def curvature_mc(manifold: str, w: Weight, eps: float, samples: int = 100_000, seed=0,
                 chunk: int = 5000) -> HessianStatEstimate:
    """MC version of the curvature ratio from field draws at a single point.

    Each draw is a full set of basis coefficients; jets at the point are
    linear in them, so only the per-basis jets are evaluated.  The error bar
    is the delta-method standard error of the ratio of sample means.
    """
    m = 2
    if manifold == "sphere":
        like = F.build_sphere(w, eps, seed=0)
        point = np.array([1.0, 0.0, 0.0])
    elif manifold == "torus":
        like = F.build_torus(m, w, eps, seed=0)
        point = np.zeros(m)
    else:
        raise GeometryError(f"unknown manifold {manifold!r}")
    J = F.jet_basis_at(like, point)
    rng = stream(seed, 0x6b)
    # per-draw terms: a = H11 H22 - H12^2, b1 = u1^2, b2 = u2^2, c = u1 u2
    parts = []
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        X = rng.standard_normal((n, J.shape[0]))
        jets = X @ J
        g1, g2, h11, h22, h12 = jets[:, 1], jets[:, 2], jets[:, 3], jets[:, 4], jets[:, 5] / math.sqrt(2.0)
        parts.append(np.stack([h11 * h22 - h12 * h12, g1 * g1, g2 * g2, g1 * g2], axis=1))
        done += n
    acc = np.concatenate(parts)
    mu = acc.mean(axis=0)
    C = np.cov(acc, rowvar=False) / samples
    num = mu[0]
    den = mu[1] * mu[2] - mu[3] ** 2
    ratio = num / den
    grad = np.array([1.0 / den, -ratio * mu[2] / den, -ratio * mu[1] / den, 2 * ratio * mu[3] / den])
    d = shape_params(w, m).d
    scale = d / eps ** (m + 2)
    se = math.sqrt(max(float(grad @ C @ grad), 0.0))
    return HessianStatEstimate(scale * ratio, scale * se, samples, float(num), float(den))


def fitted_order(eps_list, errors) -> float:
    """Least-squares slope of log|error| against log eps (nan if any error is 0)."""
    e = np.abs(np.asarray(errors, dtype=float))
    if np.any(e <= 0) or len(e) < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(eps_list, dtype=float)), np.log(e), 1)[0])


@dataclass
class CurvatureReport:
    manifold: str
    weight: dict
    eps: list
    h: list  # m x m matrices
    K: list
    target: float
    order: float
    mc: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def abs_err(self) -> list:
        return [abs(k - self.target) for k in self.K]

    def rows(self) -> list[dict]:
        return [dict(epsilon=e, h11=h[0][0], h12=h[0][1], K_eps=k, abs_err=a, fitted_order=self.order)
                for e, h, k, a in zip(self.eps, self.h, self.K, self.abs_err)]

    def to_dict(self) -> dict:
        return dict(manifold=self.manifold, weight=self.weight, eps=list(self.eps), h=self.h, K=self.K,
                    abs_err=self.abs_err, target=self.target, fitted_order=self.order, mc=self.mc, **self.extra)


def curvature_report(manifold: str, w: Weight, eps_list, mc_eps: float | None = None, mc_samples: int = 100_000,
                     seed=0, m: int = 2) -> CurvatureReport:
    target = 1.0 if manifold == "sphere" else 0.0
    hs, Ks = [], []
    for eps in eps_list:
        h = h_metric(manifold, w, eps, m)
        if np.linalg.eigvalsh(h)[0] <= 0:
            raise GeometryError(f"h^eps is not positive definite at eps={eps}")
        hs.append(h.tolist())
        Ks.append(sectional_curvature(manifold, w, eps, 0, 1, m))
    order = fitted_order(eps_list, [k - target for k in Ks])
    mc = None
    if mc_eps is not None:
        est = curvature_mc(manifold, w, mc_eps, mc_samples, seed)
        exact = sectional_curvature(manifold, w, mc_eps, 0, 1, m)
        mc = dict(est.to_dict(), eps=mc_eps, exact=exact, z=(est.value - exact) / est.stderr if est.stderr else 0.0)
    return CurvatureReport(manifold, w.to_dict(), list(eps_list), hs, Ks, target, order, mc)


# ---------------------------------------------------------------------------
# jets of the squared distance on S^2
# ---------------------------------------------------------------------------


def _exp_north(x: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(r > 0, r, 1.0)
    sinc = np.where(r > 0, np.sin(r) / safe, 1.0)
    return np.concatenate([sinc * x, np.cos(r)], axis=-1)


def sphere_dist2(x, y) -> np.ndarray:
    """Squared geodesic distance between ``exp(x)`` and ``exp(y)`` (normal coordinates at the pole)."""
    p, q = _exp_north(np.asarray(x, dtype=float)), _exp_north(np.asarray(y, dtype=float))
    cr = np.linalg.norm(np.cross(p, q), axis=-1)
    return np.arctan2(cr, np.sum(p * q, axis=-1)) ** 2


def eta(u, v) -> np.ndarray:
    """``dist^2`` in the coordinates ``u = x - y``, ``v = x + y``."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    return sphere_dist2((v + u) / 2, (v - u) / 2)


_STENCILS = {
    2: (np.array([-1, 0, 1]), np.array([1.0, -2.0, 1.0])),
    3: (np.array([-2, -1, 0, 1, 2]), np.array([-0.5, 1.0, 0.0, -1.0, 0.5])),
    4: (np.array([-2, -1, 0, 1, 2]), np.array([1.0, -4.0, 6.0, -4.0, 1.0])),
}


@dataclass
class DistanceJet:
    u: list
    v: list
    step: float
    coeffs: dict  # order -> Taylor coefficient [eta]_k(u, v)
    error: dict  # order -> finite-difference error estimate
    closed_form: dict

    def to_dict(self) -> dict:
        return dict(u=self.u, v=self.v, step=self.step, coeffs={str(k): c for k, c in self.coeffs.items()},
                    error={str(k): c for k, c in self.error.items()},
                    closed_form={str(k): c for k, c in self.closed_form.items()})


def _fd(g, k: int, h: float) -> float:
    offs, wts = _STENCILS[k]
    return float(np.dot(wts, g(offs * h))) / h**k


def distance_jet(u, v, step: float = FD_STEP, curvature: float = 1.0) -> DistanceJet:
    """Taylor coefficients ``[eta]_k(u, v)``, k = 2, 3, 4, of ``t -> eta(t u, t v)``.

    Central differences at steps ``h`` and ``h/2`` combined by one Richardson
    level (error O(h^4)).  ``closed_form`` holds ``|u|^2``, 0 and
    ``(K/6)(u1 v2 - u2 v1)^2`` for comparison.
    """
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    scale = max(np.linalg.norm(u), np.linalg.norm(v))
    if scale == 0:
        raise GeometryError("u and v are both zero")
    if scale > 0.3:
        raise GeometryError("|u|, |v| must be at most 0.3")

    def g(ts):
        ts = np.asarray(ts, dtype=float)[:, None]
        return eta(ts * u, ts * v)

    coeffs, errs = {}, {}
    gmax = float(np.max(np.abs(g(np.array([2 * step])))))
    for k in (2, 3, 4):
        roundoff = 16 * EPS_MACH * max(gmax, EPS_MACH) / (step / 2) ** k
        D1, D2 = _fd(g, k, step), _fd(g, k, step / 2)
        R = (4 * D2 - D1) / 3
        trunc = abs(R - D2)
        if roundoff > max(1e-3 * abs(R), 1e-6 * scale**k):
            rec = (16 * EPS_MACH * max(gmax, EPS_MACH) / max(1e-6 * scale**k, 1e-300)) ** (1.0 / k) * 2
            raise FiniteDifferenceError(
                f"step {step:g} is ill-conditioned for order {k} (roundoff ~{roundoff:.1e}); try step >= {rec:.2g}", rec)
        fact = math.factorial(k)
        coeffs[k] = R / fact
        errs[k] = (trunc + roundoff) / fact
    wedge = u[0] * v[1] - u[1] * v[0]
    closed = {2: float(u @ u), 3: 0.0, 4: curvature / 6.0 * wedge**2}
    return DistanceJet(u.tolist(), v.tolist(), step, coeffs, errs, closed)


# ---------------------------------------------------------------------------
# signed count
# ---------------------------------------------------------------------------


def euler_characteristic(manifold: str) -> int:
    return 2 if manifold == "sphere" else 0


def gauss_bonnet_signed_count(crit) -> int:
    """``sum (-1)^index`` over a certified critical set.

    Accepts a ``fields.CriticalSet``.  Refuses sets with degenerate points or
    that failed the refinement cross-check.
    """
    if np.any(crit.degenerate):
        raise NotCertified(f"{int(np.sum(crit.degenerate))} degenerate critical point(s)")
    if crit.stable is False:
        raise NotCertified(f"count changed under grid refinement ({crit.count} vs {crit.refined_count})")
    if crit.manifold == "torus" or crit.m % 2 == 0:
        return crit.signed_count
    raise NotCertified("odd-dimensional manifold")
