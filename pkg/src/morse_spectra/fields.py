"""Random eigenfunction superpositions on flat tori and the round 2-sphere.

    u_eps = sum_k X_k sqrt(w(eps sqrt(lambda_k))) Psi_k

with (X_k) independent standard Gaussians and (Psi_k) a real orthonormal
eigenbasis.  Fields are band-limited, so values and derivatives are exact
finite sums.  Critical points are located by grid seeding followed by
Newton iterations and certified by grid refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special
from scipy.spatial import cKDTree

from . import _harmonics as SH
from ._rng import stream
from .gaussian_core import GaussianVector, condition, hat_index, sample_gaussian, sym_to_hat
from .weights import MomentProfile, Weight, log_moment

TWO_PI = 2 * math.pi
MAX_MODES = 2_000_000
KERNEL_SUM_BUDGET = 2e8
LMAX_CAP = 120
CHART_COS = 0.8  # chart domain |cos theta| <= 0.8 (sin theta >= 0.6)


class FieldError(ValueError):
    pass


class CutoffTooLarge(FieldError):
    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


def sphere_area(m: int) -> float:
    """Area of the unit sphere S^{m-1} in R^m."""
    return 2 * math.pi ** (m / 2) / math.gamma(m / 2)


def volume(manifold: str, m: int = 2) -> float:
    if manifold == "torus":
        return TWO_PI**m
    if manifold == "sphere":
        return 4 * math.pi
    raise FieldError(f"unknown manifold {manifold!r}")


# ---------------------------------------------------------------------------
# torus
# ---------------------------------------------------------------------------


def half_lattice(m: int, K: int) -> np.ndarray:
    """Lattice vectors with |k| <= K, one of each +-k pair (first nonzero entry > 0), plus 0."""
    rng = np.arange(-K, K + 1)
    grids = np.meshgrid(*([rng] * m), indexing="ij")
    ks = np.stack([g.ravel() for g in grids], axis=1)
    ks = ks[np.sum(ks * ks, axis=1) <= K * K]
    keep = np.zeros(len(ks), dtype=bool)
    decided = np.zeros(len(ks), dtype=bool)
    for j in range(m):
        pos = (~decided) & (ks[:, j] > 0)
        neg = (~decided) & (ks[:, j] < 0)
        keep |= pos
        decided |= pos | neg
    keep |= np.all(ks == 0, axis=1)
    ks = ks[keep]
    order = np.lexsort(ks.T[::-1])
    return ks[order]


def torus_cutoff(w: Weight, eps: float, trunc_tol: float) -> int:
    return int(math.ceil(w.support_radius(trunc_tol) / eps - 1e-12))


def _tail_mass(w: Weight, eps: float, m: int, K: int) -> float:
    """Estimate of the discarded variance (2 pi)^-m sum_{|k|>K} w(eps|k|)."""
    lo = max(eps * (K - math.sqrt(m) / 2), 0.0)
    hi = lo + 50.0
    val, _ = integrate.quad(lambda t: float(w(t)) * t ** (m - 1), lo, hi, limit=200)
    return sphere_area(m) * val * eps ** (-m) / TWO_PI**m


@dataclass(frozen=True)
class TorusField:
    """``u(x) = Re sum_k C_k exp(i k.x)`` over the half lattice ``ks``."""

    m: int
    eps: float
    weight: Weight
    K: int
    ks: np.ndarray
    coeffs: np.ndarray
    amps: np.ndarray
    trunc_tol: float
    tail_mass: float
    seed: int | None

    @property
    def manifold(self) -> str:
        return "torus"

    @property
    def volume(self) -> float:
        return TWO_PI**self.m

    def variance(self) -> float:
        """Exact pointwise variance of the truncated field."""
        a2 = self.amps**2
        return float(np.sum(np.where(np.all(self.ks == 0, axis=1), a2, 2 * a2)))

    def grad_variance(self) -> float:
        a2 = self.amps**2
        return float(np.sum(2 * a2 * self.ks[:, 0] ** 2))

    def manifest(self) -> dict:
        return {"manifold": "torus", "m": self.m, "eps": self.eps, "K": self.K, "modes": int(len(self.ks)),
                "trunc_tol": self.trunc_tol, "tail_mass": self.tail_mass, "seed": self.seed}


def torus_amplitudes(w: Weight, eps: float, ks: np.ndarray) -> np.ndarray:
    m = ks.shape[1]
    norm = np.sqrt(np.sum(ks.astype(float) ** 2, axis=1))
    return np.sqrt(w(eps * norm)) * TWO_PI ** (-m / 2)


def build_torus(m: int, w: Weight, eps: float, trunc_tol: float = 1e-12, seed=0, max_modes: int = MAX_MODES) -> TorusField:
    if m not in (1, 2, 3):
        raise FieldError("tori of dimension 1, 2 or 3 only")
    if not eps > 0 or not trunc_tol > 0:
        raise FieldError("eps and trunc_tol must be positive")
    K = torus_cutoff(w, eps, trunc_tol)
    est = (2 * K + 1) ** m if m == 1 else math.pi ** (m / 2) / math.gamma(m / 2 + 1) * K**m / 2
    if est > max_modes:
        raise CutoffTooLarge(f"cutoff K={K} needs about {int(est)} modes, budget is {max_modes}", K)
    ks = half_lattice(m, K)
    amps = torus_amplitudes(w, eps, ks)
    rng = stream(seed)
    X = rng.standard_normal(len(ks))
    Y = rng.standard_normal(len(ks))
    zero = np.all(ks == 0, axis=1)
    C = np.where(zero, amps * X, amps * math.sqrt(2) * (X - 1j * Y))
    return TorusField(m, eps, w, K, ks, C, amps, trunc_tol, _tail_mass(w, eps, m, K),
                      None if isinstance(seed, np.random.Generator) else seed)


def torus_from_modes(m: int, modes: dict) -> TorusField:
    """Deterministic field ``sum a_k cos(k.x) + b_k sin(k.x)`` from ``{k: (a_k, b_k)}``."""
    ks = np.array(sorted(modes), dtype=int).reshape(-1, m)
    C = np.array([modes[tuple(k)][0] - 1j * modes[tuple(k)][1] for k in ks])
    K = int(np.max(np.abs(ks)))
    return TorusField(m, 1.0, Weight("gaussian"), K, ks, C, np.abs(C), 0.0, 0.0, None)


def _dense_coeffs(field: TorusField) -> np.ndarray:
    """Coefficients on the full cube ``[-K, K]^m`` (zeros off the half lattice)."""
    K = field.K
    C = np.zeros((2 * K + 1,) * field.m, dtype=complex)
    C[tuple(field.ks[:, j] + K for j in range(field.m))] = field.coeffs
    return C


def _jet_components(m: int, order: int):
    comps = [(0,) * m]
    if order >= 1:
        comps += [tuple(int(i == j) for i in range(m)) for j in range(m)]
    if order >= 2:
        comps += [tuple(int(i == a) + int(i == b) for i in range(m)) for a in range(m) for b in range(a, m)]
    return comps


def torus_jet(field: TorusField, X, order: int = 2, chunk: int = 2048):
    """Value, gradient ``(n, m)`` and Hessian ``(n, m, m)`` at points ``X`` of shape ``(n, m)``.

    The sum over k factorizes over coordinates: the last coordinate is
    contracted with one matrix product, the rest pointwise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, m = X.shape
    K = field.K
    ar = np.arange(-K, K + 1, dtype=float)
    if "_dense" not in field.__dict__:
        object.__setattr__(field, "_dense", _dense_coeffs(field))
    C = field.__dict__["_dense"]
    comps = _jet_components(m, order)
    out = np.empty((n, len(comps)))
    for a in range(0, n, chunk):
        Xb = X[a:a + chunk]
        E = [np.exp(1j * np.outer(Xb[:, j], ar)) for j in range(m)]
        last = {}
        for c in comps:
            e = c[-1]
            if e not in last:
                last[e] = (E[-1] * (1j * ar) ** e) @ C.reshape(-1, 2 * K + 1).T  # (nb, (2K+1)^(m-1))
        for ci, c in enumerate(comps):
            T = last[c[-1]]
            for j in range(m - 2, -1, -1):
                T = T.reshape(T.shape[0], -1, 2 * K + 1)
                T = np.einsum("nik,nk->ni", T, E[j] * (1j * ar) ** c[j])
            out[a:a + chunk, ci] = np.real(T.reshape(-1))
    val = out[:, 0]
    if order == 0:
        return val, None, None
    grad = out[:, 1:1 + m]
    if order == 1:
        return val, grad, None
    hess = np.empty((n, m, m))
    c = 1 + m
    for i in range(m):
        for j in range(i, m):
            hess[:, i, j] = hess[:, j, i] = out[:, c]
            c += 1
    return val, grad, hess


def torus_grid(field: TorusField, N: int):
    """Value and gradient on the uniform ``N^m`` grid via inverse FFT."""
    m = field.m
    shape = (N,) * m
    idx = tuple((field.ks[:, j] % N) for j in range(m))

    def synth(c):
        A = np.zeros(shape, dtype=complex)
        np.add.at(A, idx, c)
        return np.real(sfft.ifftn(A)) * N**m

    u = synth(field.coeffs)
    g = np.stack([synth(1j * field.ks[:, j] * field.coeffs) for j in range(m)], axis=0)
    return u, g


# ---------------------------------------------------------------------------
# sphere
# ---------------------------------------------------------------------------


def sphere_cutoff(w: Weight, eps: float, trunc_tol: float) -> int:
    R = w.support_radius(trunc_tol) / eps
    # largest l with sqrt(l(l+1)) <= R
    return int(math.floor(0.5 * (-1 + math.sqrt(1 + 4 * R * R))))


def sphere_amplitudes(w: Weight, eps: float, L: int) -> np.ndarray:
    ls = np.arange(L + 1, dtype=float)
    return np.sqrt(w(eps * np.sqrt(ls * (ls + 1))))


# chart B coordinates q relate to points p by p = R q with R(x, y, z) = (x, -z, y)
def _rot(q: np.ndarray) -> np.ndarray:
    return np.stack([q[..., 0], -q[..., 2], q[..., 1]], axis=-1)


def _rot_inv(p: np.ndarray) -> np.ndarray:
    return np.stack([p[..., 0], p[..., 2], -p[..., 1]], axis=-1)


def sph_to_xyz(theta, phi) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def xyz_to_sph(p: np.ndarray):
    p = np.asarray(p, dtype=float)
    theta = np.arctan2(np.hypot(p[..., 0], p[..., 1]), p[..., 2])
    phi = np.mod(np.arctan2(p[..., 1], p[..., 0]), TWO_PI)
    return theta, phi


@dataclass
class SphereField:
    L: int
    eps: float
    weight: Weight
    A: np.ndarray
    B: np.ndarray
    amps: np.ndarray
    trunc_tol: float
    tail_mass: float
    seed: int | None
    _chart_b: tuple | None = field(default=None, repr=False)

    m = 2

    @property
    def manifold(self) -> str:
        return "sphere"

    @property
    def volume(self) -> float:
        return 4 * math.pi

    def variance(self) -> float:
        ls = np.arange(self.L + 1)
        return float(np.sum(self.amps**2 * (2 * ls + 1)) / (4 * math.pi))

    def grad_variance(self) -> float:
        ls = np.arange(self.L + 1)
        return float(np.sum(self.amps**2 * (2 * ls + 1) * ls * (ls + 1) / 2) / (4 * math.pi))

    def chart_coeffs(self, chart: int):
        if chart == 0:
            return self.A, self.B
        if self._chart_b is None:
            def vals(theta, phi):
                p = _rot(sph_to_xyz(theta, phi))
                t, f = xyz_to_sph(p)
                return SH.eval_points(self.A, self.B, t, f)["u"]

            self._chart_b = SH.analyze(vals, self.L)
        return self._chart_b

    def manifest(self) -> dict:
        return {"manifold": "sphere", "m": 2, "eps": self.eps, "L": self.L, "trunc_tol": self.trunc_tol,
                "tail_mass": self.tail_mass, "seed": self.seed}


def build_sphere(w: Weight, eps: float, trunc_tol: float = 1e-12, seed=0, lmax_cap: int = LMAX_CAP) -> SphereField:
    if not eps > 0 or not trunc_tol > 0:
        raise FieldError("eps and trunc_tol must be positive")
    L = sphere_cutoff(w, eps, trunc_tol)
    if L > lmax_cap:
        raise CutoffTooLarge(f"degree cutoff L={L} exceeds the cap {lmax_cap}", L)
    amps = sphere_amplitudes(w, eps, L)
    rng = stream(seed)
    X = np.tril(rng.standard_normal((L + 1, L + 1)))
    Y = np.tril(rng.standard_normal((L + 1, L + 1)))
    scale = np.full((L + 1, L + 1), math.sqrt(2.0))
    scale[:, 0] = 1.0
    A = X * scale * amps[:, None]
    B = Y * scale * amps[:, None]
    B[:, 0] = 0.0
    ls = np.arange(L + 1, L + 400)
    tail = float(np.sum(w(eps * np.sqrt(ls * (ls + 1.0))) * (2 * ls + 1)) / (4 * math.pi))
    return SphereField(L, eps, w, np.tril(A), np.tril(B), amps, trunc_tol, tail,
                       None if isinstance(seed, np.random.Generator) else seed)


def sphere_from_coeffs(A, B) -> SphereField:
    A = np.tril(np.asarray(A, dtype=float))
    B = np.tril(np.asarray(B, dtype=float))
    L = A.shape[0] - 1
    return SphereField(L, 1.0, Weight("gaussian"), A, B, np.ones(L + 1), 0.0, 0.0, None)


def sphere_chart_jet(field: SphereField, chart: int, theta, phi, order: int = 2):
    """Jet in the orthonormal frame (e_theta, e_phi) of the chart coordinates."""
    A, B = field.chart_coeffs(chart)
    d = SH.eval_points(A, B, theta, phi, order)
    val = d["u"]
    if order == 0:
        return val, None, None
    st, ct = np.sin(theta), np.cos(theta)
    grad = np.stack([d["t"], d["p"] / st], axis=1)
    if order == 1:
        return val, grad, None
    h = np.empty((len(val), 2, 2))
    h[:, 0, 0] = d["tt"]
    h[:, 0, 1] = h[:, 1, 0] = (d["tp"] - ct / st * d["p"]) / st
    h[:, 1, 1] = (d["pp"] + st * ct * d["t"]) / (st * st)
    return val, grad, h


def sphere_jet(field: SphereField, points, order: int = 2):
    """Jet at unit vectors ``points``; each point uses the chart with the larger sin(theta)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    use_b = np.abs(p[:, 2]) > np.abs(p[:, 1])
    val = np.empty(len(p))
    grad = np.empty((len(p), 2)) if order >= 1 else None
    hess = np.empty((len(p), 2, 2)) if order >= 2 else None
    for chart, sel in ((0, ~use_b), (1, use_b)):
        if not np.any(sel):
            continue
        q = p[sel] if chart == 0 else _rot_inv(p[sel])
        t, f = xyz_to_sph(q)
        v, g, h = sphere_chart_jet(field, chart, t, f, order)
        val[sel] = v
        if order >= 1:
            grad[sel] = g
        if order >= 2:
            hess[sel] = h
    return val, grad, hess


# ---------------------------------------------------------------------------
# unified API
# ---------------------------------------------------------------------------


def build_field(manifold: str, w: Weight, eps: float, trunc_tol: float = 1e-12, seed=0, m: int = 2, **kw):
    """``manifold`` is ``"torus"`` (dimension ``m``) or ``"sphere"``."""
    if manifold == "torus":
        return build_torus(m, w, eps, trunc_tol, seed, **kw)
    if manifold == "sphere":
        return build_sphere(w, eps, trunc_tol, seed, **kw)
    raise FieldError(f"unknown manifold {manifold!r}")


def eval_jet(field, points, order: int = 2):
    """``(u, grad, hess)`` at points; torus points are angle vectors, sphere points unit 3-vectors.

    Sphere derivatives are expressed in an orthonormal tangent frame, and the
    Hessian is the covariant one.
    """
    if isinstance(field, TorusField):
        return torus_jet(field, points, order)
    return sphere_jet(field, points, order)


# ---------------------------------------------------------------------------
# kernel derivatives
# ---------------------------------------------------------------------------


def _multi(alpha, m: int) -> np.ndarray:
    """Multi-index given either as exponent vector or as a list of coordinate labels."""
    a = np.zeros(m, dtype=int)
    for i in alpha:
        a[int(i)] += 1
    return a


def torus_kernel_moment(w: Weight, eps: float, m: int, gamma, trunc_tol: float = 1e-15) -> float:
    """``(2 pi)^-m sum_{k in Z^m} w(eps |k|) k^gamma`` over the full lattice."""
    K = torus_cutoff(w, eps, trunc_tol)
    gamma = np.asarray(gamma, dtype=int)
    if np.any(gamma % 2):
        return 0.0
    if w.family == "gaussian":
        # separable: product of 1-D sums
        out = 1.0
        ar = np.arange(-K, K + 1, dtype=float)
        base = np.exp(-((eps * ar) ** 2))
        for g in gamma:
            out *= float(np.sum(base * ar**g))
        return out / TWO_PI**m
    if float(2 * K + 1) ** m > KERNEL_SUM_BUDGET:
        raise CutoffTooLarge(f"lattice sum with K={K} in dimension {m} exceeds the work budget", K)
    ar = np.arange(-K, K + 1, dtype=float)
    rest = np.meshgrid(*([ar] * (m - 1)), indexing="ij", sparse=True) if m > 1 else []
    r2_rest = sum(g**2 for g in rest) if rest else np.zeros(())
    mono_rest = 1.0
    for j, g in enumerate(rest):
        mono_rest = mono_rest * g ** gamma[j + 1]
    # one slab per value of the first coordinate keeps memory at (2K+1)^(m-1)
    total = 0.0
    for k0 in ar:
        total += (k0 ** gamma[0]) * float(np.sum(w(eps * np.sqrt(k0 * k0 + r2_rest)) * mono_rest))
    return total / TWO_PI**m


def asymptotic_kernel_constant(w: Weight, m: int, gamma) -> float:
    """``(2 pi)^-m I_{m-1+|gamma|} * 2 prod Gamma((gamma_i+1)/2) / Gamma((m+|gamma|)/2)``."""
    gamma = np.asarray(gamma, dtype=int)
    if np.any(gamma % 2):
        return 0.0
    g = int(gamma.sum())
    log_z = math.log(2) + sum(special.gammaln((gi + 1) / 2) for gi in gamma) - special.gammaln((m + g) / 2)
    return math.exp(log_z + log_moment(w, m - 1 + g).log_value) / TWO_PI**m


def _sphere_F_derivs(w: Weight, eps: float, orders=(0, 1, 2, 3, 4), trunc_tol: float = 1e-15) -> dict:
    L = sphere_cutoff(w, eps, trunc_tol)
    ls = np.arange(L + 1, dtype=float)
    c = w(eps * np.sqrt(ls * (ls + 1))) * (2 * ls + 1) / (4 * math.pi)
    return {j: float(np.sum(c * SH.legendre_derivs_at_one(L, j))) for j in orders}


def _poly_mul(p: dict, q: dict, max_deg: int) -> dict:
    out: dict = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            if sum(e) <= max_deg:
                out[e] = out.get(e, 0.0) + ca * cb
    return out


def _poly_add(*ps, scale=None) -> dict:
    out: dict = {}
    for i, p in enumerate(ps):
        s = 1.0 if scale is None else scale[i]
        for e, c in p.items():
            out[e] = out.get(e, 0.0) + s * c
    return out


def _cos_distance_jet() -> dict:
    """Taylor polynomial of ``p(x).p(y) - 1`` to total degree 4 in normal coordinates (x1, x2, y1, y2).

    ``p(x) = (sin|x| x/|x|, cos|x|)``.  Exponent tuples order (x1, x2, y1, y2).
    """
    X1, X2, Y1, Y2 = (1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)
    xy = {_e(X1, Y1): 1.0, _e(X2, Y2): 1.0}
    xx = {_e(X1, X1): 1.0, _e(X2, X2): 1.0}
    yy = {_e(Y1, Y1): 1.0, _e(Y2, Y2): 1.0}
    d2 = _poly_add(xy, xx, yy, scale=[1.0, -0.5, -0.5])
    d4 = _poly_add(
        _poly_mul(xy, _poly_add(xx, yy), 4),
        _poly_mul(xx, xx, 4),
        _poly_mul(yy, yy, 4),
        _poly_mul(xx, yy, 4),
        scale=[-1.0 / 6, 1.0 / 24, 1.0 / 24, 0.25],
    )
    return d2, d4


def _e(a, b):
    return tuple(x + y for x, y in zip(a, b))


def sphere_kernel_poly(w: Weight, eps: float) -> dict:
    """Degree-4 Taylor polynomial of the covariance kernel in normal coordinates at a point."""
    F = _sphere_F_derivs(w, eps, (0, 1, 2))
    d2, d4 = _cos_distance_jet()
    delta = _poly_add(d2, d4)
    out = {(0, 0, 0, 0): F[0]}
    out = _poly_add(out, delta, scale=[1.0, F[1]])
    out = _poly_add(out, _poly_mul(delta, delta, 4), scale=[1.0, 0.5 * F[2]])
    return out


def covariance_derivative(manifold: str, w: Weight, eps: float, alpha=(), beta=(), m: int = 2) -> float:
    """``d^alpha_x d^beta_y E(x, y)`` on the diagonal (normal coordinates on the sphere).

    ``alpha``/``beta`` list coordinate indices, e.g. ``(0, 0)`` for d^2/dx_1^2.
    """
    if len(alpha) + len(beta) > 4:
        raise FieldError("orders above 4 are not supported")
    if manifold == "torus":
        a, b = _multi(alpha, m), _multi(beta, m)
        g = a + b
        if int(g.sum()) % 2:
            return 0.0
        sign = (-1) ** ((int(a.sum()) - int(b.sum())) // 2)
        return sign * torus_kernel_moment(w, eps, m, g)
    if manifold == "sphere":
        a, b = _multi(alpha, 2), _multi(beta, 2)
        key = (int(a[0]), int(a[1]), int(b[0]), int(b[1]))
        poly = sphere_kernel_poly(w, eps)
        c = poly.get(key, 0.0)
        return c * math.prod(math.factorial(k) for k in key)
    raise FieldError(f"unknown manifold {manifold!r}")


def covariance_prediction(w: Weight, eps: float, alpha=(), beta=(), m: int = 2) -> float:
    """Leading small-eps term ``i^{|a|-|b|} Z(a+b) I_{m-1+|a+b|} (2 pi)^-m eps^{-m-|a+b|}``."""
    a, b = _multi(alpha, m), _multi(beta, m)
    g = a + b
    if int(g.sum()) % 2:
        return 0.0
    sign = (-1) ** ((int(a.sum()) - int(b.sum())) // 2)
    return sign * asymptotic_kernel_constant(w, m, g) * eps ** (-m - int(g.sum()))


def jet_covariance(manifold: str, w: Weight, eps: float, m: int = 2) -> GaussianVector:
    """Exact joint law of (u, du, Hess u) at a point; Hessian in hat coordinates."""
    idx = hat_index(m)
    comps = [()] + [(i,) for i in range(m)] + [(i, j) for i, j in idx]
    scale = [1.0] * (1 + m) + [1.0 if i == j else math.sqrt(2.0) for i, j in idx]
    n = len(comps)
    S = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            S[a, b] = S[b, a] = scale[a] * scale[b] * covariance_derivative(manifold, w, eps, comps[a], comps[b], m)
    labels = ("u",) + tuple(f"du{i + 1}" for i in range(m)) + tuple(f"H{i + 1}{j + 1}" for i, j in idx)
    return GaussianVector(np.zeros(n), S, labels)


# ---------------------------------------------------------------------------
# critical points
# ---------------------------------------------------------------------------


@dataclass
class CriticalSet:
    manifold: str
    m: int
    points: np.ndarray  # torus: angles (n, m); sphere: unit vectors (n, 3)
    values: np.ndarray
    indices: np.ndarray
    eigvals: np.ndarray
    residuals: np.ndarray
    degenerate: np.ndarray
    seeds: int
    failed_seeds: int
    grid: int
    refined_count: int | None = None
    chi: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return int(len(self.values))

    @property
    def signed_count(self) -> int:
        return int(np.sum((-1) ** self.indices))

    @property
    def stable(self) -> bool | None:
        return None if self.refined_count is None else self.refined_count == self.count

    @property
    def certified(self) -> bool:
        return bool(self.stable) and not bool(np.any(self.degenerate))

    @property
    def reliable(self) -> bool:
        return self.certified and self.signed_count == self.chi

    def rows(self) -> list[dict]:
        out = []
        for k in range(self.count):
            row = {}
            if self.manifold == "torus":
                for j in range(self.m):
                    row["xyz"[j]] = float(self.points[k, j])
            else:
                row.update(x=float(self.points[k, 0]), y=float(self.points[k, 1]), z=float(self.points[k, 2]))
            row.update(value=float(self.values[k]), index=int(self.indices[k]), grad_residual=float(self.residuals[k]))
            out.append(row)
        return out

    def summary(self) -> dict:
        return {"count": self.count, "signed_count": self.signed_count, "chi": self.chi, "seeds": self.seeds,
                "failed_seeds": self.failed_seeds, "grid": self.grid, "refined_count": self.refined_count,
                "stable": self.stable, "degenerate": int(np.sum(self.degenerate)), "certified": self.certified,
                "reliable": self.reliable}


def _newton(jet_fn, retract, x0, tol_abs: float, max_iter: int):
    """Vectorized damped Newton on the gradient; returns (x, converged)."""
    x = x0.copy()
    _, g, H = jet_fn(x)
    f = np.sum(g * g, axis=1)
    active = np.ones(len(x), dtype=bool)
    conv = f <= tol_abs**2
    active &= ~conv
    for _ in range(max_iter):
        ids = np.nonzero(active)[0]
        if len(ids) == 0:
            break
        try:
            step = -np.linalg.solve(H[ids], g[ids][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([-np.linalg.lstsq(H[i], g[i], rcond=None)[0] for i in ids])
        t = np.ones(len(ids))
        pending = np.ones(len(ids), dtype=bool)
        newx = x[ids].copy()
        newg = g[ids].copy()
        newH = H[ids].copy()
        newf = f[ids].copy()
        for _ls in range(12):
            sel = np.nonzero(pending)[0]
            if len(sel) == 0:
                break
            trial = retract(x[ids[sel]], step[sel] * t[sel, None])
            _, gt, Ht = jet_fn(trial)
            ft = np.sum(gt * gt, axis=1)
            ok = ft < f[ids[sel]] * (1 - 1e-4 * t[sel]) + 1e-300
            # very close to the root the decrease test is at roundoff level: accept tiny residuals
            ok |= ft <= tol_abs**2
            acc = sel[ok]
            newx[acc], newg[acc], newH[acc], newf[acc] = trial[ok], gt[ok], Ht[ok], ft[ok]
            pending[acc] = False
            t[sel[~ok]] *= 0.5
        stalled = pending
        x[ids], g[ids], H[ids], f[ids] = newx, newg, newH, newf
        done = f[ids] <= tol_abs**2
        conv[ids[done]] = True
        active[ids[done | stalled]] = False
    return x, conv


def _local_minima(F: np.ndarray) -> np.ndarray:
    """Boolean mask of periodic-neighbourhood local minima of a grid function."""
    mask = np.ones(F.shape, dtype=bool)
    m = F.ndim
    offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * m), indexing="ij")).reshape(m, -1).T
    for off in offsets:
        if not off.any():
            continue
        mask &= F <= np.roll(F, tuple(off), axis=tuple(range(m)))
    return mask


def _sign_change_cells(G: np.ndarray, axes_periodic=True) -> np.ndarray:
    """Cells (indexed by lower corner) in which every gradient component changes sign."""
    m = G.shape[0]
    corners = np.array(np.meshgrid(*([[0, 1]] * m), indexing="ij")).reshape(m, -1).T
    ok = np.ones(G.shape[1:], dtype=bool)
    for comp in range(m):
        lo = np.full(G.shape[1:], np.inf)
        hi = np.full(G.shape[1:], -np.inf)
        for c in corners:
            sh = np.roll(G[comp], tuple(-c), axis=tuple(range(m)))
            lo = np.minimum(lo, sh)
            hi = np.maximum(hi, sh)
        ok &= (lo <= 0) & (hi >= 0)
    return ok


def _finalize(points_xyz_or_angles, vals, grads, hess, manifold, m, radius, period=None):
    """Deduplicate converged points and classify them."""
    if len(vals) == 0:
        e = np.zeros((0, m))
        return np.zeros((0, points_xyz_or_angles.shape[1])), vals, np.zeros(0, int), e, np.zeros(0)
    if period is not None:
        tree = cKDTree(np.mod(points_xyz_or_angles, period), boxsize=period)
    else:
        tree = cKDTree(points_xyz_or_angles)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    parent = np.arange(len(vals))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(vals))])
    keep = np.unique(roots)
    # representative: smallest residual in each cluster
    res = np.linalg.norm(grads, axis=1)
    best = {}
    for i, rt in enumerate(roots):
        if rt not in best or res[i] < res[best[rt]]:
            best[rt] = i
    sel = np.array([best[r] for r in keep], dtype=int)
    eig = np.linalg.eigvalsh(hess[sel])
    return points_xyz_or_angles[sel], vals[sel], np.sum(eig < 0, axis=1), eig, res[sel]


def _torus_critical(field: TorusField, grid_res: int, newton_tol: float, max_iter: int, dedupe: float | None):
    m = field.m
    N = max(int(grid_res), 6 * field.K)
    N = sfft.next_fast_len(N + (N % 2))
    u, G = torus_grid(field, N)
    h = TWO_PI / N
    seeds = []
    if m == 1:
        g = G[0]
        gn = np.roll(g, -1)
        idx = np.nonzero((g <= 0) & (gn > 0) | (g >= 0) & (gn < 0))[0]
        frac = g[idx] / (g[idx] - gn[idx])
        seeds.append(((idx + frac) * h)[:, None])
    else:
        cells = np.argwhere(_sign_change_cells(G))
        seeds.append((cells + 0.5) * h)
    mins = np.argwhere(_local_minima(np.sum(G * G, axis=0)))
    seeds.append(mins * h)
    X0 = np.concatenate(seeds, axis=0) if seeds else np.zeros((0, m))
    scale = math.sqrt(field.grad_variance()) or 1.0
    tol_abs = newton_tol * scale

    def jet_fn(X):
        return torus_jet(field, X, 2)

    def retract(X, step):
        return np.mod(X + step, TWO_PI)

    X, conv = _newton(jet_fn, retract, X0, tol_abs, max_iter)
    Xc = X[conv]
    v, g, H = torus_jet(field, Xc, 2)
    radius = dedupe if dedupe is not None else 1e-3 * h * math.sqrt(m)
    pts, vals, ind, eig, res = _finalize(Xc, v, g, H, "torus", m, radius, period=TWO_PI)
    return pts, vals, ind, eig, res, len(X0), int(np.sum(~conv)), N


def _sphere_critical(field: SphereField, grid_res: int, newton_tol: float, max_iter: int, dedupe: float | None):
    L = field.L
    t0 = math.acos(CHART_COS)
    span = math.pi - 2 * t0
    per = max(int(grid_res), 6 * max(L, 1))  # samples per 2 pi
    n_theta = int(math.ceil(per * span / TWO_PI)) + 1
    n_phi = sfft.next_fast_len(max(per, 2 * L + 2))
    theta = np.linspace(t0, math.pi - t0, n_theta)
    h = TWO_PI / n_phi
    scale = math.sqrt(field.grad_variance()) or 1.0
    tol_abs = newton_tol * scale
    all_p, all_v, all_g, all_H = [], [], [], []
    n_seeds = n_fail = 0
    for chart in (0, 1):
        A, B = field.chart_coeffs(chart)
        d = SH.eval_grid(A, B, theta, n_phi, 1)
        G = np.stack([d["t"], d["p"] / np.sin(theta)[:, None]], axis=0)
        # theta is not periodic: pad so that np.roll-based stencils ignore the wrap
        cells = _sign_change_cells(G)
        cells[-1, :] = False
        F = np.sum(G * G, axis=0)
        mins = _local_minima(F)
        mins[[0, -1], :] = False
        ci = np.argwhere(cells)
        mi = np.argwhere(mins)
        dth = theta[1] - theta[0]
        th0 = np.concatenate([theta[ci[:, 0]] + 0.5 * dth, theta[mi[:, 0]]])
        ph0 = np.concatenate([(ci[:, 1] + 0.5) * h, mi[:, 1] * h])
        X0 = np.stack([th0, ph0], axis=1)
        n_seeds += len(X0)

        def jet_fn(X, chart=chart):
            return sphere_chart_jet(field, chart, X[:, 0], X[:, 1], 2)

        def retract(X, step):
            th = X[:, 0] + step[:, 0]
            ph = X[:, 1] + step[:, 1] / np.sin(X[:, 0])
            return np.stack([th, np.mod(ph, TWO_PI)], axis=1)

        X, conv = _newton(jet_fn, retract, X0, tol_abs, max_iter)
        # keep points in a safe band of this chart; the other chart covers the rest
        inside = conv & (np.abs(np.cos(X[:, 0])) <= 0.9)
        n_fail += int(np.sum(~conv))
        Xc = X[inside]
        v, g, H = jet_fn(Xc)
        q = sph_to_xyz(Xc[:, 0], Xc[:, 1])
        all_p.append(q if chart == 0 else _rot(q))
        all_v.append(v)
        all_g.append(g)
        all_H.append(H)
    P = np.concatenate(all_p)
    radius = dedupe if dedupe is not None else 1e-3 * h
    pts, vals, ind, eig, res = _finalize(P, np.concatenate(all_v), np.concatenate(all_g), np.concatenate(all_H),
                                         "sphere", 2, radius)
    return pts, vals, ind, eig, res, n_seeds, n_fail, n_phi


def find_critical_points(field, grid_res: int = 0, newton_tol: float = 1e-10, max_iter: int = 50,
                         refine: bool = True, dedupe: float | None = None) -> CriticalSet:
    """All critical points of a field, with a x2 grid-refinement completeness check.

    ``grid_res`` is the number of grid samples per 2 pi; it is raised to at
    least six samples per shortest wavelength.  ``newton_tol`` is relative to
    the standard deviation of a gradient component.
    """
    if isinstance(field, TorusField):
        finder, chi, m = _torus_critical, 0, field.m
    else:
        finder, chi, m = _sphere_critical, 2, 2
    pts, vals, ind, eig, res, ns, nf, N = finder(field, grid_res, newton_tol, max_iter, dedupe)
    refined = None
    if refine:
        refined = finder(field, 2 * N, newton_tol, max_iter, dedupe)[1].size
    band = 1e-8 * (float(np.max(np.abs(eig))) if eig.size else 1.0)
    degenerate = np.any(np.abs(eig) < band, axis=1) if eig.size else np.zeros(0, bool)
    return CriticalSet(field.manifold, m, pts, vals, ind, eig, res, degenerate, ns, nf, N, refined, chi)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass
class EmpiricalMeasure:
    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        order = np.argsort(self.values, kind="stable")
        self.values = self.values[order]
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)[order]
        if not np.all(np.isfinite(self.values)):
            raise FieldError("empirical measure has non-finite values")

    def cdf(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        if self.weights is None:
            return np.searchsorted(self.values, ys, side="right") / len(self.values)
        cw = np.concatenate([[0.0], np.cumsum(self.weights)]) / self.weights.sum()
        return cw[np.searchsorted(self.values, ys, side="right")]

    def ks(self, cdf_fn) -> float:
        """Exact sup |F_n - F| evaluated at the jumps (F continuous)."""
        n = len(self.values)
        F = cdf_fn(self.values)
        if self.weights is None:
            hi = np.arange(1, n + 1) / n
            lo = np.arange(0, n) / n
        else:
            cw = np.cumsum(self.weights) / self.weights.sum()
            hi, lo = cw, np.concatenate([[0.0], cw[:-1]])
        return float(max(np.max(np.abs(hi - F)), np.max(np.abs(F - lo))))

    def variance(self) -> float:
        return float(np.var(self.values))


def empirical_critical_measure(crit_sets, profile: MomentProfile, eps: float, with_perturbation: bool = True,
                               seed=0) -> EmpiricalMeasure:
    """Pooled critical values rescaled by ``(s_check eps^-m)^(-1/2)``.

    With ``with_perturbation`` each value receives an independent
    N(0, omega_m eps^-m) shift (a no-op when omega_m = 0).
    """
    if not crit_sets:
        raise FieldError("no critical-point sets given")
    m = profile.m
    vals = np.concatenate([c.values for c in crit_sets])
    if with_perturbation and profile.omega > 0:
        vals = vals + stream(seed).standard_normal(len(vals)) * math.sqrt(profile.omega * eps ** (-m))
    return EmpiricalMeasure(vals / math.sqrt(profile.s_check * eps ** (-m)))


@dataclass
class CountEstimate:
    mean: float
    stderr: float
    trials: int
    excluded: int
    counts: list

    def to_dict(self) -> dict:
        return {"mean_per_volume": self.mean, "stderr": self.stderr, "trials": self.trials, "excluded": self.excluded}


def expected_count_mc(manifold: str, w: Weight, eps: float, trials: int, seed, m: int = 2, trunc_tol: float = 1e-12,
                      refine: bool = True, runner=None) -> CountEstimate:
    """Mean critical-point count per unit volume over independent fields."""
    from ._rng import child_seeds

    seeds = child_seeds(seed, trials)
    task = _CountTask(manifold, w, eps, m, trunc_tol, refine)
    results = list(runner(task, seeds)) if runner is not None else [task(s) for s in seeds]
    vol = volume(manifold, m)
    good = [c for c, ok in results if ok]
    excluded = trials - len(good)
    arr = np.array(good, dtype=float) / vol
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else math.inf
    return CountEstimate(float(arr.mean()) if len(arr) else math.nan, se, len(arr), excluded, [int(c) for c, _ in results])


@dataclass(frozen=True)
class _CountTask:
    manifold: str
    w: Weight
    eps: float
    m: int
    trunc_tol: float
    refine: bool

    def __call__(self, seed):
        f = build_field(self.manifold, self.w, self.eps, self.trunc_tol, seed, m=self.m)
        cs = find_critical_points(f, refine=self.refine)
        ok = (cs.certified if self.refine else not np.any(cs.degenerate)) and cs.signed_count == cs.chi
        return cs.count, ok


def one_dim_rate_lattice(w: Weight, eps: float, trunc_tol: float = 1e-15) -> float:
    """Stationary Kac-Rice rate (1/pi) sqrt(m4/m2) on the circle, per unit length."""
    m2 = torus_kernel_moment(w, eps, 1, [2], trunc_tol)
    m4 = torus_kernel_moment(w, eps, 1, [4], trunc_tol)
    return math.sqrt(m4 / m2) / math.pi


@dataclass
class KacRiceEstimate:
    value: float
    stderr: float
    samples: int

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "samples": self.samples}


def kac_rice_density(manifold: str, w: Weight, eps: float, B=(-math.inf, math.inf), mc_samples: int = 1_000_000,
                     seed=0, m: int = 2, omega: float = 0.0) -> KacRiceEstimate:
    """``sigma_check^eps(B) / vol`` from the conditional Kac-Rice integrand at one point.

    ``omega`` is the variance of the independent constant added to the field
    (``omega_m eps^-m`` for the perturbed field).
    """
    joint = jet_covariance(manifold, w, eps, m)
    if omega:
        S = joint.cov.copy()
        S[0, 0] += omega
        joint = GaussianVector(joint.mean, S, joint.labels)
    grad_idx = list(range(1, 1 + m))
    Sg = joint.cov[np.ix_(grad_idx, grad_idx)]
    pref = (TWO_PI) ** (-m / 2) / math.sqrt(np.linalg.det(Sg))
    cond = condition(joint, grad_idx, np.zeros(m))
    rng = stream(seed)
    lo, hi = B
    total = 0.0
    total_sq = 0.0
    done = 0
    from .gaussian_core import hat_to_sym

    while done < mc_samples:
        n = min(200_000, mc_samples - done)
        z = sample_gaussian(cond, rng, n)
        H = hat_to_sym(z[:, 1:], m)
        f = np.abs(np.linalg.det(H)) * ((z[:, 0] >= lo) & (z[:, 0] <= hi))
        total += float(f.sum())
        total_sq += float((f * f).sum())
        done += n
    mean = total / done
    var = max(total_sq / done - mean * mean, 0.0)
    return KacRiceEstimate(pref * mean, pref * math.sqrt(var / done), done)


def jet_basis_at(field_like: SphereField | TorusField, point, coeff_mask=None):
    """Jets of every basis function (times its amplitude) at one point.

    Returns ``(n_basis, 1 + m + m(m+1)/2)`` in (u, grad, Hessian hat) order,
    used for cheap sampling of field jets at a single point.
    """
    if isinstance(field_like, TorusField):
        m = field_like.m
        x = np.atleast_2d(point)
        ks = field_like.ks.astype(float)
        ph = ks @ x[0]
        c, s = np.cos(ph), np.sin(ph)
        zero = np.all(field_like.ks == 0, axis=1)
        rows = []
        for basis, (f0, f1) in (("cos", (c, -s)), ("sin", (s, c))):
            amp = np.where(zero, field_like.amps, field_like.amps * math.sqrt(2))
            cols = [amp * f0] + [amp * f1 * ks[:, j] for j in range(m)]
            cols += [-amp * f0 * ks[:, i] * ks[:, j] * (1 if i == j else math.sqrt(2)) for i, j in hat_index(m)]
            J = np.stack(cols, axis=1)
            if basis == "sin":
                J = J[~zero]
            rows.append(J)
        return np.concatenate(rows)
    # sphere: closed-form partials of each real harmonic at the point (chart A)
    L = field_like.L
    theta, phi = xyz_to_sph(np.asarray(point, dtype=float)[None, :])
    theta, phi = float(theta[0]), float(phi[0])
    st, ct = math.sin(theta), math.cos(theta)
    rows = []
    for l, (lam_r, d1_r, d2_r) in SH.legendre_rows(np.array([ct]), np.array([st]), L, 2):
        for mm in range(l + 1):
            a = field_like.amps[l] * (1.0 if mm == 0 else math.sqrt(2.0))
            lam, d1, d2 = lam_r[0, mm], d1_r[0, mm], d2_r[0, mm]
            cm, sm = math.cos(mm * phi), math.sin(mm * phi)
            for trig, dtrig, keep in ((cm, -sm, True), (sm, cm, mm > 0)):
                if not keep:
                    continue
                u = a * lam * trig
                ut = a * d1 * trig
                up = a * mm * lam * dtrig
                utt = a * d2 * trig
                utp = a * mm * d1 * dtrig
                upp = -a * mm * mm * lam * trig
                h12 = (utp - ct / st * up) / st
                h22 = (upp + st * ct * ut) / (st * st)
                rows.append([u, ut, up / st, utt, h22, math.sqrt(2.0) * h12])
    return np.array(rows)
