"""Spectral weights, their radial moments and the scalar constants built on them.

A weight is an even function ``w`` on the real line; the random field uses the
multipliers ``w(eps * sqrt(lambda_k))``.  Everything downstream only needs the
radial moments

    I_k(w) = int_0^inf w(r) r^k dr

and a handful of dimensional constants derived from ``I_{m-1}``, ``I_{m+1}`` and
``I_{m+3}``.  Some families have moments far beyond double range (the
log-power family has ``log I_k ~ e^k``), so moments are computed and stored in
log form and the plain values are derived when they fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicSpline

FAMILIES = ("gaussian", "log-power", "log-squared", "bump-offset", "custom-table")

# r_m is snapped to 1 inside this band so roundoff never produces a tiny omega_m.
Q_TIE_BAND = 1e-12


class WeightError(ValueError):
    """Invalid weight family or parameters."""


class QuadratureError(RuntimeError):
    """A moment integral could not be certified to the requested tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MomentOverflow(OverflowError):
    """The moment exists but does not fit in a double; use ``log_moment``."""


@dataclass(frozen=True)
class Weight:
    """An even, nonnegative, rapidly decaying weight.

    Parameters by family:

    * ``gaussian``: none, ``w(t) = exp(-t^2)``.
    * ``log-power``: none, ``w(t) = exp(-log t * log log t)`` for ``t >= 1``
      and ``w = 1`` on ``|t| < 1``.
    * ``log-squared``: ``C > 0``, ``alpha > 1``; ``w(t) = exp(-C (log t)^alpha)``
      for ``t >= 1`` and ``w = 1`` on ``|t| < 1``.
    * ``bump-offset``: ``c >= 0`` (default 2); ``w(t) = exp(-1/(1-(|t|-c)^2))``
      on ``||t| - c| < 1`` and 0 elsewhere.
    * ``custom-table``: ``ts`` (increasing, starting at 0), ``ws`` (samples),
      ``decay`` (rate ``a > 0``).  Cubic interpolation on the table and the
      exponential envelope ``w_last * exp(-a (t - t_last))`` beyond it.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise WeightError(f"unknown weight family {self.family!r}; expected one of {FAMILIES}")
        p = dict(self.params)
        if self.family == "log-squared":
            p.setdefault("C", 1.0)
            p.setdefault("alpha", 2.0)
            if not p["C"] > 0:
                raise WeightError("log-squared weight needs C > 0")
            if not p["alpha"] > 1:
                raise WeightError("log-squared weight needs alpha > 1")
        elif self.family == "bump-offset":
            p.setdefault("c", 2.0)
            if not p["c"] >= 0:
                raise WeightError("bump-offset weight needs c >= 0")
        elif self.family == "custom-table":
            for key in ("ts", "ws", "decay"):
                if key not in p:
                    raise WeightError(f"custom-table weight needs {key!r}")
            ts = np.asarray(p["ts"], dtype=float)
            ws = np.asarray(p["ws"], dtype=float)
            if ts.ndim != 1 or ts.shape != ws.shape or ts.size < 4:
                raise WeightError("custom-table needs matching 1-D ts/ws with at least 4 nodes")
            if ts[0] != 0.0 or np.any(np.diff(ts) <= 0):
                raise WeightError("custom-table ts must start at 0 and increase strictly")
            if np.any(ws < 0):
                raise WeightError("custom-table samples must be nonnegative")
            if not float(p["decay"]) > 0:
                raise WeightError("custom-table decay rate must be positive")
            p["ts"] = tuple(float(x) for x in ts)
            p["ws"] = tuple(float(x) for x in ws)
            p["decay"] = float(p["decay"])
        elif self.params:
            raise WeightError(f"{self.family} weight takes no parameters")
        object.__setattr__(self, "params", {k: p[k] for k in sorted(p)})

    # -- identity -----------------------------------------------------------
    @property
    def label(self) -> str:
        if not self.params:
            return self.family
        if self.family == "custom-table":
            return f"custom-table(n={len(self.params['ts'])},decay={self.params['decay']:g})"
        inner = ",".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}({inner})"

    def to_dict(self) -> dict:
        return {"family": self.family, "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, spec: dict) -> "Weight":
        if isinstance(spec, str):
            return cls(spec)
        return cls(spec["family"], dict(spec.get("params", {})))

    # -- evaluation ---------------------------------------------------------
    def __call__(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        fam = self.family
        if fam == "gaussian":
            return np.exp(-t * t)
        if fam == "bump-offset":
            c = self.params["c"]
            z = t - c
            out = np.zeros_like(t)
            inside = np.abs(z) < 1
            out[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
            return out
        if fam == "custom-table":
            return _custom_eval(self, t)
        out = np.ones_like(t)
        big = t > 1
        out[big] = np.exp(self.log_w_of_log_r(np.log(t[big])))
        return out

    def log_w_of_log_r(self, s):
        """``log w(e^s)`` for ``s >= 0`` (log-power and log-squared families)."""
        s = np.asarray(s, dtype=float)
        if self.family == "log-power":
            with np.errstate(divide="ignore"):
                return np.where(s > 0, -s * np.log(np.where(s > 0, s, 1.0)), 0.0)
        if self.family == "log-squared":
            return -self.params["C"] * s ** self.params["alpha"]
        if self.family == "gaussian":
            return -np.exp(2 * s)
        raise WeightError(f"no log-radial form for {self.family}")

    def support_radius(self, rel_tol: float) -> float:
        """Smallest ``T`` with ``w(t) <= rel_tol * max w`` for all ``t >= T``."""
        fam = self.family
        if not 0 < rel_tol < 1:
            raise WeightError("rel_tol must lie in (0, 1)")
        if fam == "gaussian":
            return math.sqrt(-math.log(rel_tol))
        if fam == "bump-offset":
            return self.params["c"] + 1.0
        if fam == "custom-table":
            ts = np.asarray(self.params["ts"])
            grid = np.linspace(0, ts[-1], 4001)
            vals = _custom_eval(self, grid)
            wmax = float(vals.max())
            tail = self.params["ws"][-1]
            if tail > rel_tol * wmax:
                return ts[-1] + math.log(tail / (rel_tol * wmax)) / self.params["decay"]
            above = np.nonzero(vals > rel_tol * wmax)[0]
            return float(grid[above[-1] + 1]) if above.size else 0.0
        # log families: log w(e^s) is decreasing past its maximum
        log_max = self.log_max()
        target = log_max + math.log(rel_tol)
        g = lambda s: float(self.log_w_of_log_r(s)) - target
        lo = 1.0
        hi = 2.0
        while g(hi) > 0:
            lo, hi = hi, hi * 2
        return math.exp(optimize.brentq(g, lo, hi, xtol=1e-12))

    def log_max(self) -> float:
        if self.family == "log-power":
            return math.exp(-1.0)  # attained at log t = 1/e
        if self.family in ("log-squared", "gaussian", "bump-offset"):
            return 0.0 if self.family != "bump-offset" else -1.0
        return math.log(max(self.params["ws"]))


def _custom_eval(w: Weight, t: np.ndarray) -> np.ndarray:
    ts = np.asarray(w.params["ts"])
    ws = np.asarray(w.params["ws"])
    spline = _custom_spline(w.params["ts"], w.params["ws"])
    out = np.empty_like(t)
    inside = t <= ts[-1]
    out[inside] = np.maximum(spline(t[inside]), 0.0)
    out[~inside] = ws[-1] * np.exp(-w.params["decay"] * (t[~inside] - ts[-1]))
    return out


_SPLINES: dict = {}


def _custom_spline(ts: tuple, ws: tuple) -> CubicSpline:
    key = (ts, ws)
    if key not in _SPLINES:
        # clamped at 0 so the even extension is C^1
        _SPLINES[key] = CubicSpline(np.asarray(ts), np.asarray(ws), bc_type=((1, 0.0), "not-a-knot"))
    return _SPLINES[key]


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogMoment:
    """``log I_k`` together with a bound on the relative error of ``I_k``."""

    k: int
    log_value: float
    rel_error: float
    diagnostics: dict

    @property
    def value(self) -> float:
        if self.log_value > 709.0:
            raise MomentOverflow(f"I_{self.k} = exp({self.log_value:.6g}) overflows a double")
        return math.exp(self.log_value)


def _quad(f: Callable, a: float, b: float, points=None, epsrel=1e-13, epsabs=0.0):
    epsrel = max(epsrel, 2e-14)
    val, err, info = integrate.quad(
        f, a, b, points=points, epsabs=epsabs, epsrel=epsrel, limit=400, full_output=1
    )[:3]
    return val, err, info


def log_moment(w: Weight, k: int, rtol: float = 1e-12) -> LogMoment:
    """Compute ``log I_k(w)`` with relative accuracy ``rtol``.

    Infinite-support families are integrated in the variable ``s = log r`` where
    the exponent ``(k+1)s + log w(e^s)`` is concave; the integral is cut where the
    tangent-line bound on the remaining tail drops below ``rtol/10`` of the
    accumulated value, so the truncation is certified rather than guessed.
    """
    if int(k) != k or k < 0:
        raise ValueError("k must be a nonnegative integer")
    if not rtol > 0:
        raise ValueError("rtol must be positive")
    k = int(k)
    fam = w.family
    if fam == "gaussian":
        return _log_moment_gaussian(k, rtol)
    if fam == "bump-offset":
        return _log_moment_bump(w, k, rtol)
    if fam == "custom-table":
        return _log_moment_custom(w, k, rtol)
    return _log_moment_logvar(w, k, rtol)


def moment(w: Weight, k: int, tol: float = 1e-10) -> float:
    """``I_k(w)`` with absolute error at most ``tol``.

    Raises :class:`QuadratureError` when the error bound cannot be met and
    :class:`MomentOverflow` when the value exceeds double range.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    lm = log_moment(w, k, rtol=1e-13)
    value = lm.value
    abs_err = lm.rel_error * value
    if abs_err > tol:
        raise QuadratureError(
            f"I_{k}({w.label}) error bound {abs_err:.3e} exceeds tol {tol:.3e}",
            {"value": value, **lm.diagnostics},
        )
    return value


def _log_moment_gaussian(k: int, rtol: float) -> LogMoment:
    # cut T so that the exact tail 0.5*Gamma((k+1)/2, T^2) is below rtol/10 of the
    # part already integrated; the tail is used only as a certificate
    a = 0.5 * (k + 1)
    T = max(1.0, math.sqrt(a)) + 1.0
    while True:
        tail = 0.5 * special.gammaincc(a, T * T) * special.gamma(a)
        head, err, info = _quad(lambda r: r**k * math.exp(-r * r), 0.0, T, epsrel=min(rtol, 1e-13) * 0.1)
        if tail <= 0.1 * rtol * head:
            break
        T *= 1.25
    total = head + tail
    rel = (err + tail) / total
    diag = {"cutoff": T, "tail_bound": tail, "quad_error": err, "neval": info["neval"]}
    if rel > rtol:
        raise QuadratureError(f"gaussian I_{k}: relative error {rel:.2e} above {rtol:.2e}", diag)
    return LogMoment(k, math.log(total), rel, diag)


def _log_moment_bump(w: Weight, k: int, rtol: float) -> LogMoment:
    c = w.params["c"]
    lo, hi = max(0.0, c - 1.0), c + 1.0
    # normalize by the largest value of r^k so huge k stay in range
    log_scale = k * math.log(hi)
    f = lambda r: math.exp(k * math.log(r) - log_scale) * float(w(r)) if r > 0 else (float(w(0.0)) if k == 0 else 0.0)
    pts = [p for p in (c, c - 0.5, c + 0.5, 1.0) if lo < p < hi]
    val, err, info = _quad(f, lo, hi, points=pts or None, epsrel=rtol * 0.1)
    if val <= 0:
        raise QuadratureError(f"bump-offset I_{k} vanished numerically", {"value": val})
    rel = err / val
    diag = {"interval": [lo, hi], "quad_error": err, "neval": info["neval"]}
    if rel > rtol:
        raise QuadratureError(f"bump-offset I_{k}: relative error {rel:.2e} above {rtol:.2e}", diag)
    return LogMoment(k, log_scale + math.log(val), rel, diag)


def _log_moment_custom(w: Weight, k: int, rtol: float) -> LogMoment:
    ts = np.asarray(w.params["ts"])
    t_last = ts[-1]
    a = w.params["decay"]
    w_last = w.params["ws"][-1]
    f = lambda r: r**k * float(w(r))
    # interior knots as breakpoints; quad's 'points' is capped, so integrate per panel
    head = 0.0
    err = 0.0
    edges = np.unique(np.concatenate([ts[:: max(1, len(ts) // 40)], [t_last]]))
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e, _ = _quad(f, lo, hi, epsrel=rtol * 0.1)
        head += v
        err += e
    # exponential envelope: int_T^inf r^k w_last e^{-a(r-T)} dr, exact
    if w_last > 0:
        log_tail = math.log(w_last) + a * t_last - (k + 1) * math.log(a) + special.gammaln(k + 1) + math.log(
            max(special.gammaincc(k + 1, a * t_last), 1e-300)
        )
    else:
        log_tail = -math.inf
    log_head = math.log(head) if head > 0 else -math.inf
    log_total = np.logaddexp(log_head, log_tail)
    if not np.isfinite(log_total):
        raise QuadratureError(f"custom-table I_{k} is zero or undefined", {"head": head})
    rel = err / head * math.exp(log_head - log_total) if head > 0 else 0.0
    diag = {"table_end": float(t_last), "log_tail": float(log_tail), "quad_error": err}
    if rel > rtol:
        raise QuadratureError(f"custom-table I_{k}: relative error {rel:.2e} above {rtol:.2e}", diag)
    return LogMoment(k, float(log_total), rel, diag)


def _log_moment_logvar(w: Weight, k: int, rtol: float) -> LogMoment:
    # part on [0, 1] where w = 1
    head = 1.0 / (k + 1)

    phi = lambda s: (k + 1) * s + float(w.log_w_of_log_r(s))
    if w.family == "log-power":
        dphi = lambda s: (k + 1) - math.log(s) - 1.0 if s > 0 else math.inf
        s_star = math.exp(k)  # phi'(s) = k - log s
        width = math.sqrt(s_star)
    else:
        C, al = w.params["C"], w.params["alpha"]
        dphi = lambda s: (k + 1) - C * al * s ** (al - 1)
        s_star = ((k + 1) / (C * al)) ** (1.0 / (al - 1))
        width = 1.0 / math.sqrt(C * al * (al - 1) * s_star ** (al - 2)) if s_star > 0 else 1.0
    phi_star = phi(s_star)

    # upper cut: tangent-line bound e^{phi(s1)}/|phi'(s1)| on the concave tail
    s1 = s_star + 4 * width
    for _ in range(200):
        d = dphi(s1)
        if d < 0 and math.exp(phi(s1) - phi_star) / -d < 1e-3 * rtol * width:
            break
        s1 = s_star + 1.5 * (s1 - s_star)
    else:
        raise QuadratureError(f"{w.label} I_{k}: tail bound never certified", {"s_star": s_star})
    tail_rel_to_peak = math.exp(phi(s1) - phi_star) / -dphi(s1)

    g = lambda s: math.exp(phi(s) - phi_star)
    lo = max(0.0, s_star - 40 * width)
    pts = [p for p in (s_star - width, s_star, s_star + width) if lo < p < s1]
    body, err, info = _quad(g, lo, s1, points=pts, epsrel=rtol * 0.05)
    # left remainder [0, lo]: e^{phi} increasing there, bounded by lo * e^{phi(lo)}
    left = lo * math.exp(phi(lo) - phi_star) if lo > 0 else 0.0
    log_body = phi_star + math.log(body)
    log_total = float(np.logaddexp(math.log(head), log_body))
    scale = math.exp(log_body - log_total)
    rel = scale * (err + tail_rel_to_peak + left) / body
    diag = {
        "s_star": s_star,
        "width": width,
        "cutoff_log_r": s1,
        "tail_bound_rel": tail_rel_to_peak / body,
        "quad_error_rel": err / body,
        "neval": info["neval"],
    }
    if rel > rtol:
        raise QuadratureError(f"{w.label} I_{k}: relative error {rel:.2e} above {rtol:.2e}", diag)
    return LogMoment(k, log_total, rel, diag)


def gaussian_moment_exact(k: int) -> float:
    """Closed form ``I_k(e^{-t^2}) = Gamma((k+1)/2) / 2``."""
    return 0.5 * math.gamma(0.5 * (k + 1))


def tail_log_asymptote(w_or_family, k: int, **params) -> float:
    """Leading Laplace-method term for ``log I_k`` as ``k -> inf``.

    Meant for cross-checking quadrature at ``k >= 20``; never used in place of it.
    """
    if isinstance(w_or_family, Weight):
        fam = w_or_family.family
        params = {**w_or_family.params, **params}
    else:
        fam = w_or_family
    if fam == "bump-offset":
        return k * math.log(params.get("c", 2.0) + 1.0)
    if fam == "log-power":
        return math.exp(k) + 0.5 * math.log(2 * math.pi * math.exp(k))
    if fam == "log-squared":
        C, al = params.get("C", 1.0), params.get("alpha", 2.0)
        return log_squared_Z(al, C) * (k + 1) ** (al / (al - 1))
    raise WeightError(f"no tail asymptote for family {fam!r}")


def log_squared_Z(alpha: float, C: float) -> float:
    return (alpha ** (1 / (alpha - 1)) - 1) / (C ** (1 / (alpha - 1)) * alpha ** (alpha / (alpha - 1)))


# ---------------------------------------------------------------------------
# dimensional constants and the moment profile
# ---------------------------------------------------------------------------


def _log_sphere_factor(m: int) -> float:
    # log of 2 pi^{m/2} / Gamma(m/2) - m log(2 pi): area of S^{m-1} over (2 pi)^m
    return math.log(2.0) + 0.5 * m * math.log(math.pi) - special.gammaln(0.5 * m) - m * math.log(2 * math.pi)


@dataclass(frozen=True)
class LogConstants:
    m: int
    log_s: float
    log_d: float
    log_h: float
    log_I: dict


def log_dimensional_constants(w: Weight, m: int, rtol: float = 1e-12) -> LogConstants:
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    m = int(m)
    I = {k: log_moment(w, k, rtol).log_value for k in (m - 1, m + 1, m + 3)}
    base = _log_sphere_factor(m)
    log_s = base + I[m - 1]
    log_d = base + I[m + 1] - math.log(m)
    log_h = base + I[m + 3] - math.log(m * (m + 2))
    return LogConstants(m, log_s, log_d, log_h, I)


def dimensional_constants(w: Weight, m: int) -> tuple[float, float, float]:
    """``(s_m, d_m, h_m)`` from the Gamma-function closed forms, valid for all m >= 1."""
    lc = log_dimensional_constants(w, m)
    out = []
    for name, v in (("s", lc.log_s), ("d", lc.log_d), ("h", lc.log_h)):
        if v > 709:
            raise MomentOverflow(f"{name}_{m} = exp({v:.6g}) overflows; use log_dimensional_constants")
        out.append(math.exp(v))
    return tuple(out)


@dataclass(frozen=True)
class MomentProfile:
    """All scalar constants of a ``(w, m)`` pair.

    ``log_*`` fields are authoritative; plain floats may be ``inf`` for the
    log-power family at moderate m.
    """

    weight: Weight
    m: int
    log_I: dict
    log_s: float
    log_d: float
    log_h: float
    log_q: float
    log_r: float
    omega: float
    kappa: float

    @property
    def s(self) -> float:
        return _safe_exp(self.log_s)

    @property
    def d(self) -> float:
        return _safe_exp(self.log_d)

    @property
    def h(self) -> float:
        return _safe_exp(self.log_h)

    @property
    def q(self) -> float:
        return _safe_exp(self.log_q)

    @property
    def r(self) -> float:
        return _safe_exp(self.log_r)

    @property
    def s_check(self) -> float:
        return self.s + self.omega

    @property
    def I(self) -> dict:
        return {k: _safe_exp(v) for k, v in self.log_I.items()}

    def to_dict(self) -> dict:
        return {
            "weight": self.weight.to_dict(),
            "m": self.m,
            "log_I": {str(k): v for k, v in sorted(self.log_I.items())},
            "log_s": self.log_s,
            "log_d": self.log_d,
            "log_h": self.log_h,
            "log_q": self.log_q,
            "log_r": self.log_r,
            "q": self.q,
            "r": self.r,
            "omega": self.omega,
            "s_check": self.s_check,
            "kappa": self.kappa,
        }


def _safe_exp(x: float) -> float:
    return math.inf if x > 709.78 else math.exp(x)


def shape_params(w: Weight, m: int, rtol: float = 1e-12) -> MomentProfile:
    """Derive ``q_m, r_m, omega_m, s_check_m, kappa_m`` in log form."""
    lc = log_dimensional_constants(w, m, rtol)
    log_q = lc.log_s + lc.log_h - 2 * lc.log_d
    if abs(log_q) < 1.0 and abs(math.expm1(log_q)) <= Q_TIE_BAND:
        log_q_eff = 0.0
    else:
        log_q_eff = log_q
    log_r = max(0.0, log_q_eff)
    # omega = (d^2/h) (r - q) is nonzero only when q < 1
    if log_q_eff < 0:
        omega = math.exp(2 * lc.log_d - lc.log_h) * -math.expm1(log_q_eff)
    else:
        omega = 0.0
    kappa = 0.5 * -math.expm1(-log_r)
    return MomentProfile(
        weight=w,
        m=int(m),
        log_I=lc.log_I,
        log_s=lc.log_s,
        log_d=lc.log_d,
        log_h=lc.log_h,
        log_q=log_q,
        log_r=log_r,
        omega=omega,
        kappa=kappa,
    )


def q_from_moments(w: Weight, m: int) -> float:
    """``log q_m`` straight from the moment ratio ``m/(m+2) * I_{m-1} I_{m+3} / I_{m+1}^2``."""
    lm = {k: log_moment(w, k).log_value for k in (m - 1, m + 1, m + 3)}
    return math.log(m / (m + 2)) + lm[m - 1] + lm[m + 3] - 2 * lm[m + 1]


def moment_rows(w: Weight, ks, tol: float = 1e-10) -> list[dict]:
    """CSV-ready rows ``(family, params, k, I_k, log_I_k, tol)``."""
    rows = []
    for k in ks:
        lm = log_moment(w, k)
        rows.append(
            {
                "family": w.family,
                "params": ";".join(f"{a}={b}" for a, b in w.params.items() if a not in ("ts", "ws")),
                "k": int(k),
                "I_k": lm.value if lm.log_value < 709 else math.inf,
                "log_I_k": lm.log_value,
                "tol": tol,
            }
        )
    return rows
