"""Limit laws of rescaled critical values and the count constant C_m(w).

The critical-value law of the perturbed field converges to a probability
measure ``sigma_check_m`` on R which has two equivalent descriptions:

    (a)  (gamma_{r-1} * theta^+_{m+1,r})(y) gamma_1(y)
    (b)  (theta^-_{m+1,1/r} * gamma_{(r-1)/r})(y)

with ``r = r_m``.  The unperturbed law ``sigma_m`` is recovered by removing a
Gaussian factor of variance ``omega_m / s_check_m``.  Both forms are built
here from independent rho providers so that their agreement is a genuine
numerical check.

For ``m + 1 <= 4`` the one-point functions come from exact quadrature; for
larger m from sampled GOE spectra.  Sampled spectra give the Gaussian
convolutions in closed form (a mixture of Gaussians centred at the
eigenvalues), so no kernel bandwidth enters unless ``r = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, special

from . import rmt
from ._rng import stream
from .weights import MomentProfile

LOG_TINY = -92.0  # e^-92 ~ 1e-40: Gaussian envelopes below this are treated as 0
MAX_R = 1e4
DECONV_FLOOR = 1e-6


class LimitLawError(RuntimeError):
    pass


class DeconvolutionError(LimitLawError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def gamma_pdf(var: float, x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x / var) / math.sqrt(2 * math.pi * var)


def gamma_cdf(var: float, x):
    return special.ndtr(np.asarray(x, dtype=float) / math.sqrt(var))


# ---------------------------------------------------------------------------
# density grids
# ---------------------------------------------------------------------------


@dataclass
class DensityGrid:
    """Density sampled on a uniform grid, with an absolute sup-norm error bound."""

    xs: np.ndarray
    vals: np.ndarray
    error: float = 0.0
    label: str = ""

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.vals = np.asarray(self.vals, dtype=float)
        if self.xs.shape != self.vals.shape:
            raise ValueError("xs and vals must have equal shape")
        if np.any(self.vals < 0):
            lo = float(self.vals.min())
            if lo < -max(self.error, 1e-14 * float(np.max(np.abs(self.vals)))):
                raise LimitLawError(f"density {self.label!r} has negative values (min {lo:.3e})")
            self.vals = np.clip(self.vals, 0.0, None)

    @property
    def dx(self) -> float:
        return float(self.xs[1] - self.xs[0])

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.vals, self.xs))

    def normalize(self) -> "DensityGrid":
        z = self.mass
        return DensityGrid(self.xs, self.vals / z, self.error / z, self.label)

    def cdf(self) -> np.ndarray:
        c = np.concatenate([[0.0], np.cumsum(0.5 * (self.vals[1:] + self.vals[:-1]) * np.diff(self.xs))])
        return c / c[-1]

    def moment(self, k: int) -> float:
        return float(np.trapezoid(self.vals * self.xs**k, self.xs) / self.mass)

    def variance(self) -> float:
        mu = self.moment(1)
        return self.moment(2) - mu * mu

    def sup_diff(self, other: "DensityGrid") -> float:
        if not np.array_equal(self.xs, other.xs):
            raise ValueError("grids differ")
        return float(np.max(np.abs(self.vals - other.vals)))

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.vals - self.vals[::-1])))


def symmetric_grid(half_width: float, points: int) -> np.ndarray:
    if points % 2 == 0:
        points += 1
    return np.linspace(-half_width, half_width, points)


def grid_half_width(r: float) -> float:
    return 6.0 * (1.0 + math.sqrt(r))


# ---------------------------------------------------------------------------
# theta functions
# ---------------------------------------------------------------------------


def theta(n: int, v: float, sign: int, x, method: str = "quad", **kw):
    """``rho_{n,v}(x) exp(sign * x^2 / 4v)``."""
    if sign not in (1, -1, "+", "-"):
        raise ValueError("sign must be +1 or -1")
    s = 1 if sign in (1, "+") else -1
    x = np.asarray(x, dtype=float)
    if method == "quad":
        tp = rmt.theta_plus_quad(n, v, np.atleast_1d(x), kw.get("nodes", 12))
        out = tp if s == 1 else tp * np.exp(-np.atleast_1d(x) ** 2 / (2 * v))
        return float(out[0]) if x.ndim == 0 else out
    if method == "mc":
        est = rmt.rho_mc(n, v, np.atleast_1d(x), samples=kw.get("samples", 100_000), seed=kw.get("seed", 0))
        out = est.values * np.exp(s * np.atleast_1d(x) ** 2 / (4 * v))
        return float(out[0]) if x.ndim == 0 else out
    raise rmt.UnsupportedMethod(f"unknown method {method!r}")


@dataclass
class ThetaInterpolant:
    """Even cubic spline through exact ``theta^+_{n,v}`` values on ``[0, xmax]``.

    ``rel_error`` is the largest relative deviation from the exact function
    observed at interval midpoints, plus the quadrature error of the nodes.
    """

    n: int
    v: float
    xmax: float
    spline: interpolate.CubicSpline
    rel_error: float

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        out = self.spline(np.minimum(x, self.xmax))
        return np.where(x <= self.xmax, out, np.nan)


_INTERP_CACHE: dict = {}


def theta_plus_interpolant(n: int, v: float, xmax: float, spacing: float = 0.06, nodes: int = 12) -> ThetaInterpolant:
    key = (n, float(v), float(xmax), float(spacing), nodes)
    if key in _INTERP_CACHE:
        return _INTERP_CACHE[key]
    step = spacing * math.sqrt(2 * v)
    k = max(8, int(math.ceil(xmax / step)))
    half = np.linspace(0.0, xmax, k + 1)
    vals = rmt.theta_plus_quad(n, v, half, nodes)
    full_x = np.concatenate([-half[:0:-1], half])
    full_y = np.concatenate([vals[:0:-1], vals])
    spl = interpolate.CubicSpline(full_x, full_y)
    # midpoint check on a spread of intervals
    probe = np.unique(np.linspace(0, k - 1, min(k, 24)).astype(int))
    mids = 0.5 * (half[probe] + half[probe + 1])
    exact = rmt.theta_plus_quad(n, v, mids, nodes)
    interp_err = float(np.max(np.abs(spl(mids) - exact) / np.abs(exact)))
    sample = mids[:: max(1, len(mids) // 4)]
    fine = rmt.theta_plus_quad(n, v, sample, nodes + 6)
    quad_err = float(np.max(np.abs(exact[:: max(1, len(mids) // 4)] - fine) / np.abs(fine)))
    out = ThetaInterpolant(n, v, xmax, spl, interp_err + quad_err)
    _INTERP_CACHE[key] = out
    return out


def _gauss_conv(f_vals: np.ndarray, t: np.ndarray, ys: np.ndarray, var: float, chunk: int = 512) -> np.ndarray:
    """Trapezoid sum of ``f(t) gamma_var(y - t)`` over the uniform grid ``t``."""
    dt = t[1] - t[0]
    out = np.empty(len(ys))
    for a in range(0, len(ys), chunk):
        yb = ys[a:a + chunk, None]
        out[a:a + chunk] = gamma_pdf(var, yb - t[None, :]) @ f_vals * dt
    return out


# ---------------------------------------------------------------------------
# sigma_check: quadrature path
# ---------------------------------------------------------------------------


def _check_r(profile: MomentProfile) -> float:
    r = profile.r
    if r < 1:
        raise LimitLawError(f"r_m < 1 ({r}) violates r = max(1, q)")
    if not r <= MAX_R:
        raise LimitLawError(f"r_m = {r:.3g} is beyond the numerically resolvable range (<= {MAX_R:g})")
    return r


def _form_a_quad(n: int, r: float, ys: np.ndarray, spacing: float) -> DensityGrid:
    # gamma_1(y) kills everything past |y| = ya
    ya = min(float(np.max(np.abs(ys))), math.sqrt(-2 * LOG_TINY))
    if r > 1:
        sd = math.sqrt(r - 1)
        reach = ya + math.sqrt(-2 * LOG_TINY) * sd
        th = theta_plus_interpolant(n, r, reach, spacing)
        dt = min(0.25 * sd, 0.25 * math.sqrt(2 * r)) / 4
        t = np.linspace(-reach, reach, 2 * int(math.ceil(reach / dt)) + 1)
        conv = np.zeros(len(ys))
        live = np.abs(ys) <= ya
        conv[live] = _gauss_conv(th(t), t, ys[live], r - 1)
    else:
        th = theta_plus_interpolant(n, r, ya, spacing)
        live = np.abs(ys) <= ya
        conv = np.zeros(len(ys))
        conv[live] = th(ys[live])
    vals = conv * gamma_pdf(1.0, ys)
    return DensityGrid(ys, vals, 2 * th.rel_error * float(vals.max()), "form_a").normalize()


def _form_b_quad(n: int, r: float, ys: np.ndarray, spacing: float) -> DensityGrid:
    v = 1.0 / r
    # theta^-_{n,1/r}(x) = theta^+_{n,1/r}(x) exp(-r x^2 / 2)
    xb = math.sqrt(-2 * LOG_TINY / r)
    if r > 1:
        var = (r - 1) / r
        sd = math.sqrt(var)
        reach = xb + 1.0
        th = theta_plus_interpolant(n, v, reach, spacing)
        dt = min(0.25 * sd, 0.25 * math.sqrt(2 * v)) / 4
        t = np.linspace(-reach, reach, 2 * int(math.ceil(reach / dt)) + 1)
        f = th(t) * np.exp(-r * t * t / 2)
        vals = _gauss_conv(f, t, ys, var)
    else:
        th = theta_plus_interpolant(n, v, min(float(np.max(np.abs(ys))), xb), spacing)
        live = np.abs(ys) <= th.xmax
        vals = np.zeros(len(ys))
        vals[live] = th(ys[live]) * np.exp(-r * ys[live] ** 2 / 2)
    return DensityGrid(ys, vals, 2 * th.rel_error * float(vals.max()), "form_b").normalize()


# ---------------------------------------------------------------------------
# sigma_check: sampled-spectrum path
# ---------------------------------------------------------------------------


@dataclass
class MixtureMeasure:
    """Weighted atoms convolved with ``gamma_var`` (``var = 0``: weighted empirical measure)."""

    atoms: np.ndarray
    weights: np.ndarray
    var: float

    def __post_init__(self):
        self.atoms = np.ravel(np.asarray(self.atoms, dtype=float))
        self.weights = np.ravel(np.asarray(self.weights, dtype=float))
        self.weights = self.weights / self.weights.sum()

    def cdf(self, ys, chunk: int = 50_000) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        if self.var == 0:
            order = np.argsort(self.atoms)
            cw = np.concatenate([[0.0], np.cumsum(self.weights[order])])
            return cw[np.searchsorted(self.atoms[order], ys, side="right")]
        out = np.zeros(len(ys))
        sd = math.sqrt(self.var)
        for a in range(0, len(self.atoms), chunk):
            at = self.atoms[a:a + chunk]
            out += special.ndtr((ys[:, None] - at[None, :]) / sd) @ self.weights[a:a + chunk]
        return out

    def density(self, ys, bandwidth: float | None = None, chunk: int = 50_000) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        var = self.var
        if var == 0:
            if bandwidth is None:
                raise ValueError("a bandwidth is needed for an atomic measure")
            return rmt.kde(self.atoms, ys, bandwidth, weights=self.weights)
        out = np.zeros(len(ys))
        for a in range(0, len(self.atoms), chunk):
            at = self.atoms[a:a + chunk]
            out += gamma_pdf(var, ys[:, None] - at[None, :]) @ self.weights[a:a + chunk]
        return out

    def ks_to(self, cdf_fn, ys) -> float:
        return float(np.max(np.abs(self.cdf(ys) - cdf_fn(ys))))


def sigma_check_mixtures(m: int, profile: MomentProfile, samples: int, seed) -> tuple[MixtureMeasure, MixtureMeasure]:
    """Forms (a) and (b) as Gaussian mixtures over sampled GOE spectra.

    (a) samples rho_{m+1,r} and weights atom l by exp(l^2/4r); the gamma_1
    factor is folded in by completing the square, which leaves a Gaussian of
    variance (r-1)/r centred at l/r with weight exp(l^2/4r - l^2/(2r)).
    (b) samples rho_{m+1,1/r} and weights atom l by exp(-r l^2/4).
    """
    r = _check_r(profile)
    n = m + 1
    rng_a, rng_b = stream(seed, 1), stream(seed, 2)
    la = rmt.goe_eigenvalues(n, r, samples, rng_a).ravel()
    lb = rmt.goe_eigenvalues(n, 1.0 / r, samples, rng_b).ravel()
    # gamma_{r-1}(y - l) gamma_1(y) = gamma_r(l) gamma_{(r-1)/r}(y - l/r)
    wa = np.exp(la**2 / (4 * r) - la**2 / (2 * r))
    form_a = MixtureMeasure(la / r, wa, (r - 1) / r)
    wb = np.exp(-r * lb**2 / 4)
    form_b = MixtureMeasure(lb, wb, (r - 1) / r)
    return form_a, form_b


def _mixture_grid(mix: MixtureMeasure, ys: np.ndarray, n: int, v: float, label: str, batches: int = 20) -> DensityGrid:
    bw = None
    if mix.var == 0:
        bw = rmt.silverman_bandwidth(n, v, len(mix.atoms))
    vals = mix.density(ys, bw)
    parts = []
    for idx in np.array_split(np.arange(len(mix.atoms)), batches):
        sub = MixtureMeasure(mix.atoms[idx], mix.weights[idx], mix.var)
        parts.append(sub.density(ys, bw))
    se = np.std(parts, axis=0, ddof=1) / math.sqrt(batches)
    return DensityGrid(ys, vals, 3 * float(se.max()), label).normalize()


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def default_grid(profile: MomentProfile, points: int = 1201) -> np.ndarray:
    return symmetric_grid(grid_half_width(_check_r(profile)), points)


def sigma_check_density(m: int, profile: MomentProfile, grid=None, method: str = "auto", samples: int = 200_000,
                        seed=0, spacing: float = 0.06) -> tuple[DensityGrid, DensityGrid]:
    """Both descriptions of ``sigma_check_m`` on ``grid``, normalized, with error bounds."""
    if profile.m != m:
        raise ValueError("profile dimension does not match m")
    r = _check_r(profile)
    ys = default_grid(profile) if grid is None else np.asarray(grid, dtype=float)
    n = m + 1
    if method == "auto":
        method = "quad" if n <= rmt.QUAD_MAX_N else "mc"
    if method == "quad":
        return _form_a_quad(n, r, ys, spacing), _form_b_quad(n, r, ys, spacing)
    if method == "mc":
        fa, fb = sigma_check_mixtures(m, profile, samples, seed)
        return _mixture_grid(fa, ys, n, r, "form_a"), _mixture_grid(fb, ys, n, 1.0 / r, "form_b")
    raise rmt.UnsupportedMethod(f"unknown method {method!r}")


def gaussian_convolve(g: DensityGrid, var: float) -> DensityGrid:
    if var == 0:
        return g
    return DensityGrid(g.xs, _gauss_conv(g.vals, g.xs, g.xs, var), g.error, g.label)


def gaussian_deconvolve(g: DensityGrid, var: float, floor: float = DECONV_FLOOR, neg_tol: float = 1e-3) -> DensityGrid:
    """Remove a ``gamma_var`` factor from ``g`` by characteristic-function division.

    Frequencies where ``exp(-var k^2/2) < floor`` are discarded.  Both the
    forward and inverse transforms are direct sums on the grid.  A result
    with negative mass beyond ``neg_tol`` (relative to the peak) is rejected.
    """
    if var == 0:
        return g
    xs, dx = g.xs, g.dx
    half = 0.5 * (xs[-1] - xs[0])
    kc = math.sqrt(2 * math.log(1.0 / floor) / var)
    dk = math.pi / (2 * half)
    kmax = min(kc, math.pi / dx)
    ks = np.arange(0.0, kmax + dk / 2, dk)
    # g is even up to estimator error; use the cosine transform of the symmetrized grid
    sym = 0.5 * (g.vals + g.vals[::-1])
    wx = np.full(len(xs), dx)
    wx[[0, -1]] *= 0.5
    C = np.cos(np.outer(ks, xs))
    phi = C @ (sym * wx)
    gain = np.exp(0.5 * var * ks**2)
    phi_dec = phi * gain
    wk = np.full(len(ks), dk)
    wk[[0, -1]] *= 0.5
    wk[0] *= 1.0  # k = 0 counted once; the cosine transform is even in k
    vals = (C.T @ (phi_dec * wk)) / math.pi
    peak = float(np.max(np.abs(vals)))
    diag = {"var": var, "k_cut": float(kmax), "max_gain": float(gain[-1]), "min_value": float(vals.min()), "peak": peak}
    if vals.min() < -neg_tol * peak:
        raise DeconvolutionError("deconvolution produced a signed density; the grid is too noisy for this variance", diag)
    out = DensityGrid(xs, np.clip(vals, 0.0, None), g.error * float(gain[-1]), "sigma").normalize()
    back = gaussian_convolve(out, var).normalize()
    diag["round_trip"] = back.sup_diff(g.normalize())
    if diag["round_trip"] > 1e-3 * max(1.0, float(g.normalize().vals.max())):
        raise DeconvolutionError("deconvolution round trip failed", diag)
    out.diagnostics = diag
    return out


def sigma_density(m: int, profile: MomentProfile, grid=None, check: DensityGrid | None = None, **kw) -> DensityGrid:
    """``sigma_m``: equal to ``sigma_check_m`` when omega_m = 0, otherwise deconvolved."""
    if check is None:
        check = sigma_check_density(m, profile, grid, **kw)[0]
    if profile.omega == 0:
        return DensityGrid(check.xs, check.vals, check.error, "sigma")
    return gaussian_deconvolve(check, profile.omega / profile.s_check)


# ---------------------------------------------------------------------------
# count constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountConstant:
    log_value: float
    log_stderr: float
    method: str

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value < 709 else math.inf


def _log_c_prefactor(m: int, profile: MomentProfile) -> float:
    return (0.5 * (m + 4) * math.log(2.0) + 0.5 * profile.log_r
            + 0.5 * m * (profile.log_h - math.log(2 * math.pi) - profile.log_d)
            + special.gammaln(0.5 * (m + 3)))


def c_constant(m: int, profile: MomentProfile, method: str = "auto", samples: int = 400_000, seed=0) -> CountConstant:
    """``C_m(w)`` with the integral reduced to ``int theta^+_{m+1,r} gamma_r``.

    (Integrating the gamma_{r-1} convolution against gamma_1 merges the two
    Gaussians.)  Quadrature for m <= 3, otherwise the sample mean of
    ``exp(-l^2/4r) / sqrt(2 pi r)`` over GOE_{m+1}^r eigenvalues.
    """
    r = _check_r(profile)
    n = m + 1
    if method == "auto":
        method = "quad" if n <= rmt.QUAD_MAX_N else "mc"
    if method == "quad":
        X = math.sqrt(2 * r) * (3 * math.sqrt(n) + 10)
        xs = np.linspace(0.0, X, 201)
        f = rmt.rho_quad(n, r, xs) * np.exp(-xs**2 / (4 * r))
        from scipy.integrate import simpson

        J = 2 * simpson(f, x=xs) / math.sqrt(2 * math.pi * r)
        return CountConstant(_log_c_prefactor(m, profile) + math.log(J), 0.0, "quad")
    if method == "mc":
        lam = rmt.goe_eigenvalues(n, r, samples, stream(seed)).ravel()
        g = np.exp(-lam**2 / (4 * r)) / math.sqrt(2 * math.pi * r)
        J = float(g.mean())
        # eigenvalues within a matrix are correlated: use per-matrix means
        per = g.reshape(samples, n).mean(axis=1)
        se = float(per.std(ddof=1) / math.sqrt(samples))
        return CountConstant(_log_c_prefactor(m, profile) + math.log(J), se / J, "mc")
    raise rmt.UnsupportedMethod(f"unknown method {method!r}")


def c_constant_asymptotic(m: int, profile: MomentProfile) -> float:
    """``log`` of ``8/sqrt(pi m) Gamma((m+3)/2) (h/(pi d))^{m/2}``, the large-m form."""
    return (math.log(8.0) - 0.5 * math.log(math.pi * m) + special.gammaln(0.5 * (m + 3))
            + 0.5 * m * (profile.log_h - math.log(math.pi) - profile.log_d))


def one_dim_rate(profile: MomentProfile) -> float:
    """Stationary 1-D critical-point rate ``(1/pi) sqrt(I_4 / I_2)`` for unit eps."""
    from .weights import log_moment

    w = profile.weight
    return math.exp(0.5 * (log_moment(w, 4).log_value - log_moment(w, 2).log_value)) / math.pi


# ---------------------------------------------------------------------------
# CLT
# ---------------------------------------------------------------------------


def clt_target_variance(profile: MomentProfile) -> float:
    """``(r+1)/r``, finite also for r = inf."""
    return 1.0 + math.exp(-profile.log_r)


def clt_distance(m: int, profile: MomentProfile, sigma: DensityGrid | None = None, **kw) -> float:
    """Kolmogorov distance between ``sigma_m`` and ``gamma_{(r+1)/r}``."""
    if sigma is None:
        sigma = sigma_density(m, profile, **kw)
    target = gamma_cdf(clt_target_variance(profile), sigma.xs)
    return float(np.max(np.abs(sigma.cdf() - target)))


def clt_distance_mc(m: int, profile: MomentProfile, samples: int = 200_000, seed=0) -> tuple[float, float]:
    """Kolmogorov distance using the sampled form (a) mixture (omega_m must be 0).

    Returns ``(distance, stderr)`` with the stderr from 10 batch replicates.
    """
    if profile.omega != 0:
        raise LimitLawError("sampled CLT distance needs omega_m = 0 (no deconvolution of atoms)")
    fa, _ = sigma_check_mixtures(m, profile, samples, seed)
    var = clt_target_variance(profile)
    ys = np.linspace(-4 * math.sqrt(var), 4 * math.sqrt(var), 801)

    def ks(mix):
        return mix.ks_to(lambda y: gamma_cdf(var, y), ys)

    full = ks(fa)
    reps = [ks(MixtureMeasure(fa.atoms[i], fa.weights[i], fa.var)) for i in np.array_split(np.arange(len(fa.atoms)), 10)]
    return full, float(np.std(reps, ddof=1) / math.sqrt(10))


# ---------------------------------------------------------------------------
# Monte Carlo surrogate for d mu / dy
# ---------------------------------------------------------------------------


def mu_surrogate(m: int, profile: MomentProfile, samples: int, seed) -> MixtureMeasure:
    """Importance sample of ``d mu/dy = E|det(A - y/sqrt r)| gamma_1(y)``, A in Sym_m^{2 kappa, 1}."""
    r = _check_r(profile)
    rng = stream(seed)
    ens = rmt.SymEnsemble(m, 2 * profile.kappa, 1.0)
    y = np.empty(samples)
    wts = np.empty(samples)
    eye = np.eye(m)
    for a in range(0, samples, 200_000):
        b = min(samples, a + 200_000)
        ya = rng.standard_normal(b - a)
        A = rmt.sample_sym_batch(ens, rng, b - a)
        y[a:b] = ya
        wts[a:b] = np.abs(np.linalg.det(A - (ya / math.sqrt(r))[:, None, None] * eye))
    return MixtureMeasure(y, wts, 0.0)


def grid_cdf_fn(g: DensityGrid):
    c = g.cdf()
    return lambda y: np.interp(y, g.xs, c, left=0.0, right=1.0)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class LimitLawReport:
    m: int
    weight: str
    r: float
    omega: float
    log_C: float
    C: float
    form_a: DensityGrid
    form_b: DensityGrid
    sigma: DensityGrid
    sup_diff: float
    error_bound: float
    ks_target: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "weight": self.weight,
            "r": self.r,
            "omega": self.omega,
            "log_C": self.log_C,
            "C": self.C,
            "sup_diff_forms": self.sup_diff,
            "error_bound": self.error_bound,
            "ks_to_clt_target": self.ks_target,
            "mass_a": self.form_a.mass,
            "mass_b": self.form_b.mass,
            **self.extra,
        }

    def rows(self) -> list[dict]:
        target = gamma_pdf(1.0 + 1.0 / self.r, self.form_a.xs)
        return [
            {"y": float(y), "sigma_check_a": float(a), "sigma_check_b": float(b), "sigma": float(s),
             "gaussian_target": float(t)}
            for y, a, b, s, t in zip(self.form_a.xs, self.form_a.vals, self.form_b.vals, self.sigma.vals, target)
        ]


def limit_law_report(m: int, profile: MomentProfile, grid=None, method: str = "auto", samples: int = 200_000,
                     seed=0) -> LimitLawReport:
    fa, fb = sigma_check_density(m, profile, grid, method=method, samples=samples, seed=seed)
    sig = sigma_density(m, profile, check=fa)
    cc = c_constant(m, profile, seed=seed)
    return LimitLawReport(
        m=m,
        weight=profile.weight.label,
        r=profile.r,
        omega=profile.omega,
        log_C=cc.log_value,
        C=cc.value,
        form_a=fa,
        form_b=fb,
        sigma=sig,
        sup_diff=fa.sup_diff(fb),
        error_bound=fa.error + fb.error,
        ks_target=clt_distance(m, profile, sig),
    )
