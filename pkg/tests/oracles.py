"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np
from scipy import special


def hermite_functions(N: int, x) -> np.ndarray:
    """Orthonormal Hermite functions phi_0..phi_N at x."""
    x = np.asarray(x, dtype=float)
    h = np.zeros((N + 1,) + x.shape)
    h[0] = np.pi**-0.25
    if N >= 1:
        h[1] = math.sqrt(2) * x * h[0]
    for k in range(1, N):
        h[k + 1] = math.sqrt(2 / (k + 1)) * x * h[k] - math.sqrt(k / (k + 1)) * h[k - 1]
    return h * np.exp(-x * x / 2)


def _antiderivs(N: int, x) -> list:
    phi = hermite_functions(N, x)
    Fs = [np.pi**-0.25 * math.sqrt(2 * np.pi) * special.ndtr(x), -math.sqrt(2) * phi[0]]
    for n in range(1, N):
        Fs.append((math.sqrt(n / 2) * Fs[n - 1] - phi[n]) * math.sqrt(2 / (n + 1)))
    return Fs, phi


def goe_rho_hermite(N: int, v: float, x) -> np.ndarray:
    """Closed-form GOE one-point density rho_{N,v} via skew-orthogonal Hermite sums."""
    s = math.sqrt(2 * v)
    y = np.asarray(x, dtype=float) / s
    Fs, phi = _antiderivs(N, y)
    inf_vals, _ = _antiderivs(N, np.array([40.0]))
    r = (phi[:N] ** 2).sum(0) + math.sqrt(N / 2) * phi[N - 1] * (Fs[N] - inf_vals[N][0] / 2)
    if N % 2:
        r = r + phi[N - 1] / inf_vals[N - 1][0]
    return r / N / s


def trapezoid_moment(w, k: int, a: float, b: float, n: int = 200_001) -> float:
    t = np.linspace(a, b, n)
    return float(np.trapezoid(w(t) * t**k, t))
