"""Gaussian ensembles of real symmetric matrices.

``Sym_n^{u,v}`` is the centered Gaussian law on symmetric n x n matrices with

    E(a_ij a_kl) = u d_ij d_kl + v (d_ik d_jl + d_il d_jk),

so GOE_n^v is the case u = 0.  This module samples it, evaluates the Selberg
normalization, estimates the normalized one-point function rho_{n,v} (exact
quadrature for n <= 4, Monte Carlo otherwise) and evaluates the expected
absolute determinant identities that tie E|det(A - c)| to rho_{n+1,v}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, special

from ._rng import stream

QUAD_MAX_N = 4
_DENSE_EIG_MAX_N = 32
_CHUNK = 200_000


class EnsembleError(ValueError):
    """Inadmissible ensemble parameters."""


class UnsupportedMethod(ValueError):
    """Requested estimator is not available for these arguments."""


@dataclass(frozen=True)
class SymEnsemble:
    n: int
    u: float
    v: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise EnsembleError("n must be a positive integer")
        if not self.v > 0:
            raise EnsembleError(f"v must be positive, got {self.v}")
        if not self.n * self.u + 2 * self.v > 0:
            raise EnsembleError(f"need n*u + 2v > 0, got n={self.n}, u={self.u}, v={self.v}")

    def entry_covariance(self, i: int, j: int, k: int, l: int) -> float:
        return self.u * (i == j) * (k == l) + self.v * ((i == k) * (j == l) + (i == l) * (j == k))

    def upper_covariance(self) -> np.ndarray:
        """Covariance of the upper-triangular entries in ``np.triu_indices`` order."""
        iu, ju = np.triu_indices(self.n)
        p = len(iu)
        S = np.empty((p, p))
        for a in range(p):
            for b in range(p):
                S[a, b] = self.entry_covariance(iu[a], ju[a], iu[b], ju[b])
        return S


def goe(n: int, v: float) -> SymEnsemble:
    return SymEnsemble(n, 0.0, v)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_sym_batch(ens: SymEnsemble, rng, size: int) -> np.ndarray:
    """``size`` independent draws, shape ``(size, n, n)``, exactly symmetric."""
    rng = stream(rng)
    n, u, v = ens.n, ens.u, ens.v
    if u >= 0:
        # GOE_n^v plus an independent N(0, u) multiple of the identity
        A = rng.standard_normal((size, n, n)) * math.sqrt(v)
        A = np.triu(A, 1)
        A = A + np.swapaxes(A, 1, 2)
        idx = np.arange(n)
        A[:, idx, idx] = rng.standard_normal((size, n)) * math.sqrt(2 * v)
        if u > 0:
            A[:, idx, idx] += rng.standard_normal((size, 1)) * math.sqrt(u)
        return A
    # u < 0: factor the covariance of the upper triangle directly
    S = ens.upper_covariance()
    evals, evecs = np.linalg.eigh(S)
    root = evecs * np.sqrt(np.clip(evals, 0, None))
    z = rng.standard_normal((size, S.shape[0])) @ root.T
    iu, ju = np.triu_indices(n)
    A = np.zeros((size, n, n))
    A[:, iu, ju] = z
    A[:, ju, iu] = z
    return A


def sample_sym(ens: SymEnsemble, seed) -> np.ndarray:
    """One draw from ``Sym_n^{u,v}``."""
    return sample_sym_batch(ens, stream(seed), 1)[0]


def goe_eigenvalues(n: int, v: float, samples: int, rng) -> np.ndarray:
    """Eigenvalues of ``samples`` independent GOE_n^v matrices, shape ``(samples, n)``.

    Small n uses batched dense LAPACK solvers; larger n uses the tridiagonal
    beta = 1 Hermite model (same eigenvalue law, O(n) storage per matrix).
    """
    rng = stream(rng)
    if n <= _DENSE_EIG_MAX_N:
        out = np.empty((samples, n))
        for start in range(0, samples, _CHUNK):
            stop = min(samples, start + _CHUNK)
            A = sample_sym_batch(goe(n, v), rng, stop - start)
            out[start:stop] = np.linalg.eigvalsh(A)
        return out
    # H = (1/sqrt 2) tridiag(N(0,2); chi_{n-1}, ..., chi_1) has joint density
    # prop. to prod|l_i - l_j| exp(-sum l^2 / 2), i.e. GOE with v = 1/2
    scale = math.sqrt(2 * v) / math.sqrt(2.0)
    dfs = np.arange(n - 1, 0, -1, dtype=float)
    out = np.empty((samples, n))
    for s in range(samples):
        d = rng.standard_normal(n) * math.sqrt(2.0)
        e = np.sqrt(rng.chisquare(dfs))
        out[s] = linalg.eigvalsh_tridiagonal(d * scale, e * scale, check_finite=False)
    return out


# ---------------------------------------------------------------------------
# normalization constants
# ---------------------------------------------------------------------------


def log_znorm(m: int) -> float:
    """``log Z_m`` with ``Z_m = 2^{m/2} m! prod_{j<=m} Gamma(j/2)``."""
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    j = np.arange(1, m + 1)
    return 0.5 * m * math.log(2.0) + special.gammaln(m + 1) + float(np.sum(special.gammaln(0.5 * j)))


def znorm(m: int) -> float:
    lz = log_znorm(m)
    if lz > 709:
        raise OverflowError(f"Z_{m} overflows; use log_znorm")
    return math.exp(lz)


def log_znorm_v(m: int, v: float) -> float:
    """``log Z_m(v) = m(m+1)/4 log(2v) + log Z_m``."""
    return 0.25 * m * (m + 1) * math.log(2 * v) + log_znorm(m)


# ---------------------------------------------------------------------------
# one-point function: exact quadrature for n <= 4
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _gauss_legendre(nodes: int):
    return np.polynomial.legendre.leggauss(nodes)


def _panel_rule(L: float, panel: float, nodes: int):
    """Composite Gauss-Legendre on [0, L] with panels no longer than ``panel``."""
    k = max(1, int(math.ceil(L / panel)))
    x, w = _gauss_legendre(nodes)
    edges = np.linspace(0.0, L, k + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def _chamber_integral(n: int, v: float, x: float, nodes: int) -> float:
    """``int_{R^{n-1}} prod|x - l_i| Q_{n-1,v}(l) dl`` summed over orderings.

    For each position of x among the sorted l's the l's are written as x plus
    or minus cumulative gaps; every |difference| is then a sum of gaps, so the
    integrand on [0, L]^{n-1} is a polynomial times a Gaussian with no kinks.
    """
    k = n - 1
    sig = math.sqrt(2 * v)
    reach = 9.0 * sig
    panel = 3.0 * sig
    total = 0.0
    for p in range(k + 1):
        below, above = p, k - p
        axes = []
        for _ in range(below):
            axes.append(_panel_rule(max(x, 0.0) + reach, panel, nodes))
        for _ in range(above):
            axes.append(_panel_rule(max(-x, 0.0) + reach, panel, nodes))
        grids = np.meshgrid(*[a[0] for a in axes], indexing="ij", sparse=True)
        wgrid = 1.0
        for i, (_, w) in enumerate(axes):
            shape = [1] * k
            shape[i] = -1
            wgrid = wgrid * w.reshape(shape)
        # offsets of the l's from x
        offs = []
        acc = 0.0
        for i in range(below):
            acc = acc + grids[i]
            offs.append(-acc)
        acc = 0.0
        for i in range(above):
            acc = acc + grids[below + i]
            offs.append(acc)
        pts = [0.0] + offs
        vand = 1.0
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                vand = vand * np.abs(pts[a] - pts[b])
        expo = 0.0
        for o in offs:
            expo = expo + (x + o) ** 2
        f = vand * np.exp(-expo / (4 * v)) * wgrid
        total += float(np.sum(f))
    return math.factorial(k) * total


_THETA_CACHE: dict = {}


def theta_plus_quad(n: int, v: float, xs, nodes: int = 12) -> np.ndarray:
    """``rho_{n,v}(x) e^{x^2/4v}`` by quadrature of the Weyl integrand (n <= 4).

    Working with this reduced function avoids underflow in the Gaussian tails;
    ``rho`` and ``theta^-`` are recovered by multiplying the factor back.
    """
    if n > QUAD_MAX_N:
        raise UnsupportedMethod(f"quadrature rho is limited to n <= {QUAD_MAX_N}, got n={n}")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    key = (int(n), float(v), int(nodes))
    cache = _THETA_CACHE.setdefault(key, {})
    log_z = log_znorm_v(n, v)
    out = np.empty_like(xs)
    for i, x in enumerate(xs):
        ax = abs(float(x))  # rho is even
        val = cache.get(ax)
        if val is None:
            if n == 1:
                val = math.exp(-log_z)
            else:
                val = _chamber_integral(n, v, ax, nodes) * math.exp(-log_z)
            cache[ax] = val
        out[i] = val
    return out


def rho_quad(n: int, v: float, xs, nodes: int = 12) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return theta_plus_quad(n, v, xs, nodes) * np.exp(-(xs**2) / (4 * v))


def quad_error_estimate(n: int, v: float, xs, nodes: int = 12) -> float:
    """Sup of |theta^+| differences between ``nodes`` and ``nodes + 6`` per panel, relative to sup rho."""
    xs = np.asarray(xs, dtype=float)
    a = rho_quad(n, v, xs, nodes)
    b = rho_quad(n, v, xs, nodes + 6)
    return float(np.max(np.abs(a - b)))


# ---------------------------------------------------------------------------
# one-point function: Monte Carlo + kernel smoothing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityEstimate:
    xs: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    bandwidth: float
    method: str


def silverman_bandwidth(n: int, v: float, count: int) -> float:
    """Silverman-type rule with the exact spread sqrt((n+1) v) of rho_{n,v}."""
    return 0.9 * math.sqrt((n + 1) * v) * count ** (-0.2)


def kde(samples: np.ndarray, xs: np.ndarray, h: float, weights=None, bin_frac: float = 0.125) -> np.ndarray:
    """Gaussian KDE evaluated through fine binning (bin width ``h * bin_frac``)."""
    samples = np.ravel(samples)
    wts = None if weights is None else np.ravel(weights)
    lo = min(samples.min(), xs.min()) - 6 * h
    hi = max(samples.max(), xs.max()) + 6 * h
    db = h * bin_frac
    nb = int(math.ceil((hi - lo) / db))
    counts, edges = np.histogram(samples, bins=nb, range=(lo, lo + nb * db), weights=wts)
    centers = 0.5 * (edges[:-1] + edges[1:])
    total = counts.sum()
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        sel = slice(max(0, int((x - 7 * h - lo) / db)), min(nb, int((x + 7 * h - lo) / db) + 1))
        z = (x - centers[sel]) / h
        out[i] = np.dot(counts[sel], np.exp(-0.5 * z * z)) / (total * h * math.sqrt(2 * math.pi))
    return out


def rho_mc(n: int, v: float, xs, samples: int = 100_000, seed=0, bandwidth: float | None = None, batches: int = 20):
    """KDE estimate of rho_{n,v} from GOE eigenvalues, with batch-means standard errors."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    eig = goe_eigenvalues(n, v, samples, stream(seed))
    h = bandwidth if bandwidth is not None else silverman_bandwidth(n, v, eig.size)
    vals = kde(eig, xs, h)
    per = np.array([kde(b, xs, h) for b in np.array_split(eig, batches)])
    se = per.std(axis=0, ddof=1) / math.sqrt(batches)
    return DensityEstimate(xs, vals, se, h, "mc")


def rho(n: int, v: float, x, method: str = "quad", samples: int = 100_000, seed=0, bandwidth=None, nodes: int = 12):
    """Normalized one-point correlation function rho_{n,v}(x).

    ``method='quad'`` integrates the Weyl density directly (n <= 4);
    ``method='mc'`` smooths sampled GOE eigenvalues.
    """
    if not v > 0:
        raise EnsembleError("v must be positive")
    if method == "quad":
        if n > QUAD_MAX_N:
            raise UnsupportedMethod(f"quad rho supports n <= {QUAD_MAX_N}; use method='mc' for n={n}")
        out = rho_quad(n, v, x, nodes)
        return float(out[0]) if np.ndim(x) == 0 else out
    if method == "mc":
        est = rho_mc(n, v, x, samples=samples, seed=seed, bandwidth=bandwidth)
        return est if np.ndim(x) else DensityEstimate(est.xs, est.values, est.stderr, est.bandwidth, "mc")
    raise UnsupportedMethod(f"unknown method {method!r}")


def semicircle(v: float, x):
    """Wigner semicircle density of variance parameter v."""
    if not v > 0:
        raise ValueError("v must be positive")
    x = np.asarray(x, dtype=float)
    inside = np.clip(4 * v - x * x, 0.0, None)
    out = np.sqrt(inside) / (2 * math.pi * v)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# expected |det|
# ---------------------------------------------------------------------------


def _log_det_prefactor(m: int, v: float) -> float:
    # 2^{3/2} (2v)^{(m+1)/2} Gamma((m+3)/2)
    return 1.5 * math.log(2.0) + 0.5 * (m + 1) * math.log(2 * v) + special.gammaln(0.5 * (m + 3))


@dataclass(frozen=True)
class MCResult:
    mean: float
    stderr: float
    samples: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "samples": self.samples}


def abs_det_mc(ens: SymEnsemble, c: float, samples: int, seed) -> MCResult:
    """Monte Carlo mean of |det(A - c)| over ``ens`` with its standard error."""
    rng = stream(seed)
    total = 0.0
    total_sq = 0.0
    eye = np.eye(ens.n)
    for start in range(0, samples, _CHUNK):
        size = min(_CHUNK, samples - start)
        A = sample_sym_batch(ens, rng, size)
        d = np.abs(np.linalg.det(A - c * eye))
        total += float(np.sum(d))
        total_sq += float(np.sum(d * d))
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    return MCResult(mean, math.sqrt(var / samples), samples)


def expected_abs_det_goe(m: int, v: float, c: float, method: str = "formula", samples: int = 1_000_000, seed=0,
                         rho_samples: int = 200_000):
    """``E_{GOE_m^v} |det(A - c)|`` by Monte Carlo or by the rho_{m+1,v} identity.

    The formula path returns a float (quadrature, m <= 3) or an MCResult when it
    has to fall back on a sampled rho_{m+1,v}.
    """
    if method == "mc":
        return abs_det_mc(goe(m, v), c, samples, seed)
    if method != "formula":
        raise UnsupportedMethod(f"unknown method {method!r}")
    pref = math.exp(_log_det_prefactor(m, v))
    if m + 1 <= QUAD_MAX_N:
        return pref * float(theta_plus_quad(m + 1, v, [c])[0])
    est = rho_mc(m + 1, v, [c], samples=rho_samples, seed=seed)
    g = math.exp(c * c / (4 * v))
    return MCResult(pref * g * float(est.values[0]), pref * g * float(est.stderr[0]), rho_samples)


def expected_abs_det_shifted(m: int, u: float, v: float, c: float, method: str = "auto", samples: int = 1_000_000,
                             seed=0, hermite_nodes: int = 80):
    """``E_{Sym_m^{u,v}} |det(A - c)|`` via ``gamma_u * theta^+_{m+1,v}`` at c.

    The convolution is evaluated with Gauss-Hermite nodes against the exact
    theta^+.  It is only attempted for u < 2v; ``method='auto'`` falls back to
    Monte Carlo outside that range and ``method='convolution'`` raises.
    """
    if not u > 0:
        raise EnsembleError("shifted identity needs u > 0")
    ens = SymEnsemble(m, u, v)
    if method == "mc":
        return abs_det_mc(ens, c, samples, seed)
    if u >= 2 * v:
        if method == "convolution":
            raise UnsupportedMethod(
                f"convolution path needs u < 2v (got u={u}, v={v}); the truncated integral is not certified"
            )
        return abs_det_mc(ens, c, samples, seed)
    if m + 1 > QUAD_MAX_N:
        raise UnsupportedMethod("convolution path needs exact theta^+, available for m <= 3")
    z, wz = np.polynomial.hermite_e.hermegauss(hermite_nodes)
    wz = wz / math.sqrt(2 * math.pi)
    vals = theta_plus_quad(m + 1, v, c - math.sqrt(u) * z)
    return math.exp(_log_det_prefactor(m, v)) * float(np.dot(wz, vals))


def identity_record(m: int, u: float, v: float, c: float, samples: int, seed) -> dict:
    """JSON-ready comparison of the Monte Carlo and formula paths."""
    mc = abs_det_mc(SymEnsemble(m, u, v), c, samples, seed)
    if u == 0:
        f = expected_abs_det_goe(m, v, c, "formula")
    else:
        f = expected_abs_det_shifted(m, u, v, c, "convolution")
    f = f.mean if isinstance(f, MCResult) else f
    return {
        "m": m,
        "u": u,
        "v": v,
        "c": c,
        "mc": mc.mean,
        "mc_stderr": mc.stderr,
        "formula": f,
        "z_score": (mc.mean - f) / mc.stderr if mc.stderr > 0 else 0.0,
    }
