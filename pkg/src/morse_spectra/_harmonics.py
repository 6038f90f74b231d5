"""Real spherical harmonics by stable recurrence.

Normalized associated Legendre functions (no Condon-Shortley phase)

    L_lm(theta) = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m(cos theta)

are generated degree by degree, all orders m at once.  A real field is stored as two
``(L+1, L+1)`` arrays ``A, B`` (lower triangle used) with

    u = sum_l sum_m L_lm(theta) (A_lm cos m phi + B_lm sin m phi).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=8)
def _coeff_tables(L: int):
    l = np.arange(L + 1, dtype=float)[:, None]
    m = np.arange(L + 1, dtype=float)[None, :]
    valid = m <= l
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(m < l, np.sqrt((4 * l * l - 1) / (l * l - m * m)), 0.0)
        b = np.where(m < l - 1, np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1)), 0.0)
        fac = np.where(valid & (l > 0), np.sqrt((2 * l + 1) / np.maximum(2 * l - 1, 1) * (l * l - m * m)), 0.0)
        diag = np.where(np.arange(L + 1) > 0, np.sqrt((2 * l[:, 0] + 1) / np.maximum(2 * l[:, 0], 1)), 0.0)
    return np.nan_to_num(a), np.nan_to_num(b), np.nan_to_num(fac), diag


def legendre_rows(cos_t: np.ndarray, sin_t: np.ndarray, L: int, nderiv: int = 0):
    """Yield ``(l, [L_l., dL_l./dtheta, d2L_l./dtheta2][:nderiv+1])``, each of shape ``(n, L+1)`` over m.

    Entries with m > l are zero.  Derivatives divide by sin(theta); callers
    keep away from the poles.
    """
    c = np.asarray(cos_t, dtype=float)[:, None]
    s = np.asarray(sin_t, dtype=float)[:, None]
    n = c.shape[0]
    a, b, fac, diag = _coeff_tables(L)
    ms = np.arange(L + 1, dtype=float)
    prev2 = np.zeros((n, L + 1))
    prev = np.zeros((n, L + 1))
    for l in range(L + 1):
        cur = np.zeros((n, L + 1))
        if l == 0:
            cur[:, 0] = 1.0 / math.sqrt(4 * math.pi)
        else:
            cur[:, :l] = a[l, :l] * (c * prev[:, :l] - b[l, :l] * prev2[:, :l])
            cur[:, l] = diag[l] * s[:, 0] * prev[:, l - 1]
        out = [cur]
        if nderiv >= 1:
            d1 = (l * c * cur - fac[l] * prev) / s
            out.append(d1)
            if nderiv >= 2:
                d2 = -(c / s) * d1 - (l * (l + 1)) * cur + (ms * ms) * cur / (s * s)
                out.append(d2)
        yield l, out
        prev2, prev = prev, cur


def contract(cos_t, sin_t, A: np.ndarray, B: np.ndarray, nderiv: int = 0, chunk: int = 4096):
    """``C_k[:, m] = sum_l d^k L_lm (A_lm - i B_lm)`` for k = 0..nderiv; each ``(n, L+1)`` complex."""
    L = A.shape[0] - 1
    cos_t = np.asarray(cos_t, dtype=float)
    sin_t = np.asarray(sin_t, dtype=float)
    n = cos_t.shape[0]
    Z = np.tril(A - 1j * B)
    outs = [np.zeros((n, L + 1), dtype=complex) for _ in range(nderiv + 1)]
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        for l, blocks in legendre_rows(cos_t[a:b], sin_t[a:b], L, nderiv):
            z = Z[l]
            for k, blk in enumerate(blocks):
                outs[k][a:b] += blk * z
    return outs


def legendre_table(cos_t, sin_t, L: int) -> np.ndarray:
    """Full table ``T[i, l, m]`` of L_lm at each point (small n only)."""
    n = len(cos_t)
    T = np.zeros((n, L + 1, L + 1))
    for l, (row,) in legendre_rows(cos_t, sin_t, L, 0):
        T[:, l, :] = row
    return T


def eval_points(A, B, theta, phi, nderiv: int = 0):
    """Value (and theta/phi partials up to order 2) at arbitrary points.

    Returns a dict with keys among ``u, t, p, tt, tp, pp``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    L = A.shape[0] - 1
    C = contract(np.cos(theta), np.sin(theta), A, B, nderiv)
    ms = np.arange(L + 1)
    E = np.exp(1j * phi[:, None] * ms[None, :])
    out = {"u": np.real(np.sum(C[0] * E, axis=1))}
    if nderiv >= 1:
        out["t"] = np.real(np.sum(C[1] * E, axis=1))
        out["p"] = np.real(np.sum(1j * ms * C[0] * E, axis=1))
    if nderiv >= 2:
        out["tt"] = np.real(np.sum(C[2] * E, axis=1))
        out["tp"] = np.real(np.sum(1j * ms * C[1] * E, axis=1))
        out["pp"] = np.real(np.sum(-(ms * ms) * C[0] * E, axis=1))
    return out


def eval_grid(A, B, theta, n_phi: int, nderiv: int = 1):
    """Values and first partials on ``theta x (2 pi j / n_phi)``; arrays of shape ``(len(theta), n_phi)``."""
    L = A.shape[0] - 1
    if n_phi <= 2 * L:
        raise ValueError("n_phi must exceed 2 L")
    theta = np.asarray(theta, dtype=float)
    C = contract(np.cos(theta), np.sin(theta), A, B, nderiv)
    ms = np.arange(L + 1)

    def synth(Z):
        pad = np.zeros((Z.shape[0], n_phi), dtype=complex)
        pad[:, : L + 1] = Z
        return np.real(np.fft.ifft(pad, axis=1)) * n_phi

    out = {"u": synth(C[0])}
    if nderiv >= 1:
        out["t"] = synth(C[1])
        out["p"] = synth(1j * ms * C[0])
    return out


def analyze(values_fn, L: int):
    """Coefficients ``(A, B)`` of a band-limited function given as ``values_fn(theta, phi)``.

    Uses a Gauss-Legendre grid in cos(theta) with ``L + 1`` nodes and
    ``2L + 2`` equispaced longitudes, which is exact for degree <= L.
    """
    x, wts = np.polynomial.legendre.leggauss(L + 1)
    n_phi = 2 * L + 2
    theta = np.arccos(x)
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    TT, PP = np.meshgrid(theta, phi, indexing="ij")
    vals = values_fn(TT.ravel(), PP.ravel()).reshape(TT.shape)
    G = np.fft.fft(vals, axis=1)[:, : L + 1] * (2 * math.pi / n_phi)
    T = legendre_table(x, np.sqrt(1 - x * x), L)
    Z = np.einsum("i,ilm,im->lm", wts, T, G)
    Z[:, 1:] *= 2.0
    Z = np.tril(Z)
    return np.real(Z), -np.imag(Z)


def legendre_derivs_at_one(L: int, order: int) -> np.ndarray:
    """``P_l^{(j)}(1) = (l+j)! / (2^j j! (l-j)!)`` for l = 0..L (0 when l < j)."""
    ls = np.arange(L + 1)
    out = np.zeros(L + 1)
    from scipy.special import gammaln

    ok = ls >= order
    lv = ls[ok].astype(float)
    out[ok] = np.exp(gammaln(lv + order + 1) - order * math.log(2) - gammaln(order + 1) - gammaln(lv - order + 1))
    return out
