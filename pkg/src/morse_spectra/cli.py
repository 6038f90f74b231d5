"""Experiment driver.

    morse-spectra <experiment> --config FILE [--seed U64] [--serial] [--jobs N] [--out DIR]

Each run validates the JSON config, computes, writes
``<experiment>-<hash>.csv`` / ``.json`` (plus a ``.manifest.json`` holding
the only timestamp) into the output directory and prints a summary JSON on
stdout.  Exit status: 0 all checks pass, 1 a check failed, 2 invalid config.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import multiprocessing
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import fields as F
from . import geometry as G
from . import limit_law as LL
from . import rmt
from ._rng import MASK64, child_seeds
from .weights import Weight, WeightError, gaussian_moment_exact, log_moment, q_from_moments, shape_params
from .weights import tail_log_asymptote

log = logging.getLogger("morse_spectra")

EXPERIMENTS = ("moments", "constants", "rmt-identities", "limit-law", "clt", "simulate", "kac-rice", "curvature",
               "gauss-bonnet", "report")

DEFAULT_TOL = {
    "moment_rel": 1e-10,
    "tail_rel": 0.05,
    "q_identity": 1e-8,
    "z_max": 3.0,
    "rescale_z": 3.0,
    "semicircle_sup": 0.05,
    "form_factor": 3.0,
    "mu_ks": 0.03,
    "clt_inversions": 1,
    "count_rel": 0.05,
    "exponent": 0.1,
    "ks": 0.05,
    "kr_z": 3.0,
    "order_lo": 1.5,
    "order_hi": 2.5,
    "flat": 1e-12,
    "curv_mc_z": 4.0,
    "eta3": 1e-6,
    "cov_order": 0.3,
}

SECTION3 = ({"family": "gaussian"}, {"family": "log-power"}, {"family": "log-squared", "params": {"C": 1.0, "alpha": 2.0}},
            {"family": "bump-offset", "params": {"c": 2.0}})


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class ExperimentConfig:
    """Validated experiment configuration; ``eps`` is dimensionless, counts are per unit volume."""

    experiment: str
    weight: dict = field(default_factory=lambda: {"family": "gaussian"})
    weights: list = field(default_factory=list)
    manifold: str = "torus"
    m: int = 2
    ms: list = field(default_factory=list)
    eps: list = field(default_factory=lambda: [0.1])
    trials: int = 10
    samples: int = 100_000
    seed: int = 0
    ks: list = field(default_factory=lambda: list(range(13)))
    tail_ks: list = field(default_factory=list)
    vs: list = field(default_factory=lambda: [0.5, 1.0])
    cs: list = field(default_factory=lambda: [0.0, 1.0])
    us: list = field(default_factory=list)
    rescale: dict = field(default_factory=dict)
    semicircle: dict = field(default_factory=dict)
    mc_eps: float | None = 0.1
    mc_samples: int = 100_000
    cov_eps: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    jet_pairs: list = field(default_factory=lambda: [[[1.0, 0.0], [0.0, 1.0]], [[0.1, 0.05], [0.1, 0.05]]])
    jet_scale: float = 0.1
    ks_test: bool = False
    refine: bool = True
    trunc_tol: float = 1e-12
    tolerances: dict = field(default_factory=dict)

    def tol(self, key: str):
        return self.tolerances.get(key, DEFAULT_TOL[key])

    @property
    def w(self) -> Weight:
        return Weight.from_dict(self.weight)

    def canonical(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def validate(raw: dict, experiment: str) -> ExperimentConfig:
    """Build a config, collecting every field-level problem before raising ``ConfigError``."""
    errs: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    raw = dict(raw)
    exp = raw.pop("experiment", experiment)
    if exp != experiment:
        errs.append(f"experiment: config is for {exp!r} but {experiment!r} was requested")
    for k in raw:
        if k not in _FIELDS:
            errs.append(f"{k}: unknown field")
    kw = {k: v for k, v in raw.items() if k in _FIELDS}
    cfg = ExperimentConfig(experiment=experiment)
    for k, v in kw.items():
        setattr(cfg, k, v)

    def need(cond, name, msg):
        if not cond:
            errs.append(f"{name}: {msg}")
        return cond

    for name in ("weight",):
        try:
            Weight.from_dict(cfg.weight)
        except (WeightError, KeyError, TypeError, ValueError) as e:
            errs.append(f"{name}: {e}")
    if need(isinstance(cfg.weights, list), "weights", "must be a list"):
        for i, spec in enumerate(cfg.weights):
            try:
                Weight.from_dict(spec)
            except (WeightError, KeyError, TypeError, ValueError) as e:
                errs.append(f"weights[{i}]: {e}")
    need(cfg.manifold in ("torus", "sphere"), "manifold", "must be 'torus' or 'sphere'")
    if need(_is_int(cfg.m) and cfg.m >= 1, "m", "must be a positive integer"):
        if cfg.manifold == "sphere":
            need(cfg.m == 2, "m", "the sphere is 2-dimensional")
        elif cfg.manifold == "torus" and experiment in ("simulate", "kac-rice", "gauss-bonnet"):
            need(cfg.m <= 3, "m", "tori of dimension above 3 are not supported")
    if need(isinstance(cfg.ms, list), "ms", "must be a list"):
        for i, m in enumerate(cfg.ms):
            need(_is_int(m) and m >= 1, f"ms[{i}]", "must be a positive integer")
    for name in ("eps", "cov_eps"):
        val = getattr(cfg, name)
        if need(isinstance(val, list) and len(val) > 0, name, "must be a non-empty list"):
            for i, e in enumerate(val):
                need(_is_num(e) and 0 < e <= 1, f"{name}[{i}]", "must be a number in (0, 1]")
    for name in ("trials", "samples", "mc_samples"):
        need(_is_int(getattr(cfg, name)) and getattr(cfg, name) >= 1, name, "must be a positive integer")
    if experiment in ("simulate", "kac-rice", "gauss-bonnet") and _is_int(cfg.trials):
        need(cfg.trials >= 2, "trials", "need at least 2 trials for an error bar")
    need(_is_int(cfg.seed) and 0 <= cfg.seed <= MASK64, "seed", "must be an unsigned 64-bit integer")
    for name in ("ks", "tail_ks"):
        val = getattr(cfg, name)
        if need(isinstance(val, list), name, "must be a list"):
            for i, k in enumerate(val):
                need(_is_int(k) and 0 <= k <= 400, f"{name}[{i}]", "must be an integer in [0, 400]")
    for name in ("vs", "cs", "us"):
        val = getattr(cfg, name)
        if need(isinstance(val, list), name, "must be a list"):
            for i, x in enumerate(val):
                if need(_is_num(x), f"{name}[{i}]", "must be a finite number") and name == "vs":
                    need(x > 0, f"vs[{i}]", "variance must be positive")
    if isinstance(cfg.us, list) and isinstance(cfg.vs, list):
        for u in cfg.us:
            for v in cfg.vs:
                if _is_num(u) and _is_num(v) and v > 0 and not 0 < u < 2 * v:
                    errs.append(f"us: u={u} with v={v} is outside 0 < u < 2v, where the convolution path applies")
    for name in ("rescale", "semicircle", "tolerances"):
        need(isinstance(getattr(cfg, name), dict), name, "must be an object")
    if isinstance(cfg.tolerances, dict):
        for k, v in cfg.tolerances.items():
            if need(k in DEFAULT_TOL, f"tolerances.{k}", "unknown tolerance"):
                need(_is_num(v) and v >= 0, f"tolerances.{k}", "must be a nonnegative number")
    if isinstance(cfg.semicircle, dict):
        for k in cfg.semicircle:
            need(k in ("n", "samples"), f"semicircle.{k}", "unknown field")
        for k in ("n", "samples"):
            if k in cfg.semicircle:
                need(_is_int(cfg.semicircle[k]) and cfg.semicircle[k] >= 2, f"semicircle.{k}", "must be an integer >= 2")
    if isinstance(cfg.rescale, dict):
        for k, v in cfg.rescale.items():
            if need(k in ("ns", "cs", "ys", "v"), f"rescale.{k}", "unknown field") and k == "ns":
                need(isinstance(v, list) and all(_is_int(n) and 1 <= n <= rmt.QUAD_MAX_N for n in v), "rescale.ns",
                     f"must list sizes in [1, {rmt.QUAD_MAX_N}]")
    need(cfg.mc_eps is None or (_is_num(cfg.mc_eps) and 0 < cfg.mc_eps <= 1), "mc_eps", "must be null or in (0, 1]")
    need(_is_num(cfg.trunc_tol) and 0 < cfg.trunc_tol < 1, "trunc_tol", "must be in (0, 1)")
    need(_is_num(cfg.jet_scale) and 0 < cfg.jet_scale <= 0.3, "jet_scale", "must be in (0, 0.3]")
    need(isinstance(cfg.refine, bool), "refine", "must be a boolean")
    need(isinstance(cfg.ks_test, bool), "ks_test", "must be a boolean")
    if isinstance(cfg.jet_pairs, list):
        for i, pr in enumerate(cfg.jet_pairs):
            ok = (isinstance(pr, list) and len(pr) == 2 and all(isinstance(a, list) and len(a) == 2 and all(_is_num(x) for x in a)
                                                             for a in pr))
            need(ok, f"jet_pairs[{i}]", "must be [[u1, u2], [v1, v2]]")
    else:
        errs.append("jet_pairs: must be a list")
    if errs:
        raise ConfigError(errs)
    # normalize numbers so equal configs hash equally
    cfg.eps = [float(e) for e in cfg.eps]
    cfg.cov_eps = [float(e) for e in cfg.cov_eps]
    cfg.weight = Weight.from_dict(cfg.weight).to_dict()
    cfg.weights = [Weight.from_dict(s).to_dict() for s in cfg.weights]
    return cfg


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    value: object
    tolerance: object
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "pass": bool(self.passed)}


@dataclass
class Result:
    rows: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    extra_csv: dict = field(default_factory=dict)  # suffix -> rows

    def check(self, name, value, tolerance, passed):
        self.checks.append(Check(name, _clean(value), _clean(tolerance), bool(passed)))


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return x


class Runner:
    """Ordered map over tasks, in-process or on a process pool."""

    def __init__(self, jobs: int):
        self.jobs = max(1, int(jobs))

    def __call__(self, task, items):
        items = list(items)
        if self.jobs == 1 or len(items) < 2:
            return [task(x) for x in items]
        ctx = multiprocessing.get_context("spawn" if sys.platform == "darwin" else "fork")
        with ctx.Pool(min(self.jobs, len(items))) as pool:
            return pool.map(task, items, chunksize=1)


@dataclass(frozen=True)
class _TrialTask:
    manifold: str
    w: Weight
    eps: float
    m: int
    trunc_tol: float
    refine: bool

    def __call__(self, seed):
        f = F.build_field(self.manifold, self.w, self.eps, self.trunc_tol, seed, m=self.m)
        cs = F.find_critical_points(f, refine=self.refine)
        return {"seed": seed, "count": cs.count, "signed_count": cs.signed_count, "chi": cs.chi,
                "certified": cs.certified if self.refine else not bool(np.any(cs.degenerate)),
                "degenerate": int(np.sum(cs.degenerate)), "failed_seeds": cs.failed_seeds,
                "values": cs.values.tolist()}


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def exp_moments(cfg: ExperimentConfig, run: Runner) -> Result:
    w = cfg.w
    res = Result()
    worst = 0.0
    for k in cfg.ks:
        lm = log_moment(w, k)
        row = {"k": k, "I_k": lm.value if lm.log_value < 709 else math.inf, "log_I_k": lm.log_value,
               "closed_form": "", "rel_delta": ""}
        if w.family == "gaussian":
            exact = gaussian_moment_exact(k)
            rel = abs(lm.value - exact) / exact
            row.update(closed_form=exact, rel_delta=rel)
            worst = max(worst, rel)
        res.rows.append(row)
    if w.family == "gaussian" and cfg.ks:
        res.check("gaussian_moment_rel_delta", worst, cfg.tol("moment_rel"), worst <= cfg.tol("moment_rel"))
    for k in cfg.tail_ks:
        q = log_moment(w, k).log_value
        a = tail_log_asymptote(w, k)
        rel = abs(q - a) / abs(q)
        res.data.setdefault("tail", []).append({"k": k, "log_I_k": q, "asymptote": a, "rel": rel})
        res.check(f"tail_asymptote[k={k}]", rel, cfg.tol("tail_rel"), rel <= cfg.tol("tail_rel"))
    res.data["weight"] = w.to_dict()
    return res


def exp_constants(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    specs = cfg.weights or list(SECTION3)
    ms = cfg.ms or list(range(1, 9))
    tol = cfg.tol("q_identity")
    for spec in specs:
        w = Weight.from_dict(spec)
        worst_id, worst_lb, worst_one = 0.0, math.inf, 0.0
        for m in ms:
            p = shape_params(w, m)
            # compared in log form: log-power constants overflow doubles
            lq_mom = q_from_moments(w, m)
            lq = p.log_s + p.log_h - 2 * p.log_d
            ident = abs(lq_mom - lq)
            lb = math.expm1(lq - math.log(m / (m + 2))) if lq < 700 else math.inf
            worst_id, worst_lb = max(worst_id, ident), min(worst_lb, lb)
            if w.family == "gaussian":
                worst_one = max(worst_one, abs(math.expm1(lq)))
            res.rows.append({"weight": w.label, "m": m, "log_s": p.log_s, "log_d": p.log_d, "log_h": p.log_h,
                             "log_q": lq, "log_q_from_moments": lq_mom, "log_r": p.log_r, "omega": p.omega,
                             "kappa": p.kappa, "log_s_check": math.log(p.s_check) if p.s_check > 0 else -math.inf})
        res.check(f"q_identity[{w.label}]", worst_id, tol, worst_id <= tol)
        res.check(f"q_lower_bound[{w.label}]", worst_lb, -tol, worst_lb >= -tol)  # q (m+2)/m - 1 >= 0
        if w.family == "gaussian":
            res.check("gaussian_q_equals_1", worst_one, tol, worst_one <= tol)
    return res


def exp_rmt(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    ms = cfg.ms or [1, 2, 3]
    seeds = iter(child_seeds(cfg.seed, 10_000, 1))
    for m in ms:
        for v in cfg.vs:
            for c in cfg.cs:
                mc = rmt.expected_abs_det_goe(m, v, c, method="mc", samples=cfg.samples, seed=next(seeds))
                fo = rmt.expected_abs_det_goe(m, v, c, method="formula", seed=next(seeds))
                fval = fo.mean if isinstance(fo, rmt.MCResult) else fo
                fse = fo.stderr if isinstance(fo, rmt.MCResult) else 0.0
                se = math.hypot(mc.stderr, fse)
                z = (mc.mean - fval) / se
                res.rows.append({"kind": "goe", "m": m, "u": 0.0, "v": v, "c": c, "mc": mc.mean, "mc_stderr": mc.stderr,
                                 "formula": fval, "z_score": z})
                res.check(f"fyodorov[m={m},v={v:g},c={c:g}]", abs(z), cfg.tol("z_max"), abs(z) <= cfg.tol("z_max"))
                for u in cfg.us:
                    rec = rmt.identity_record(m, u, v, c, cfg.samples, next(seeds))
                    res.rows.append({"kind": "shifted", **rec})
                    res.check(f"shifted[m={m},u={u:g},v={v:g},c={c:g}]", abs(rec["z_score"]), cfg.tol("z_max"),
                              abs(rec["z_score"]) <= cfg.tol("z_max"))
    if cfg.rescale:
        ns = cfg.rescale.get("ns", [2, 3, 4])
        cs = cfg.rescale.get("cs", [0.5, 1.5, 2.0])
        ys = cfg.rescale.get("ys", [0.0, 0.3, 0.8])
        v = cfg.rescale.get("v", 1.0)
        worst = 0.0
        for n in ns:
            for c in cs:
                for y in ys:
                    lhs = c * float(rmt.rho_quad(n, c * c * v, [c * y])[0])
                    rhs = float(rmt.rho_quad(n, v, [y])[0])
                    err = c * rmt.quad_error_estimate(n, c * c * v, [c * y]) + rmt.quad_error_estimate(n, v, [y])
                    z = abs(lhs - rhs) / max(err, 1e-15)
                    worst = max(worst, z)
                    res.data.setdefault("rescale", []).append({"n": n, "c": c, "y": y, "lhs": lhs, "rhs": rhs,
                                                               "error": err})
        res.check("rescaling_identity", worst, cfg.tol("rescale_z"), worst <= cfg.tol("rescale_z"))
    if cfg.semicircle:
        n = cfg.semicircle.get("n", 200)
        samples = cfg.semicircle.get("samples", 100_000)
        xs = np.linspace(-1.9, 1.9, 77)
        est = rmt.rho_mc(n, 1.0 / n, xs, samples=samples, seed=next(seeds))
        sup = float(np.max(np.abs(est.values - rmt.semicircle(1.0, xs))))
        res.data["semicircle"] = {"n": n, "samples": samples, "xs": xs.tolist(), "rho": est.values.tolist(),
                                  "sup": sup, "bandwidth": est.bandwidth}
        res.check(f"semicircle_sup[n={n}]", sup, cfg.tol("semicircle_sup"), sup <= cfg.tol("semicircle_sup"))
    return res


def exp_limit_law(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    w = cfg.w
    for m in cfg.ms or [2, 3]:
        p = shape_params(w, m)
        rep = LL.limit_law_report(m, p, samples=cfg.samples, seed=cfg.seed)
        mu = LL.mu_surrogate(m, p, cfg.samples, child_seeds(cfg.seed, 1, m)[0])
        ys = rep.form_a.xs
        ks_a = mu.ks_to(LL.grid_cdf_fn(rep.form_a), ys)
        ks_b = mu.ks_to(LL.grid_cdf_fn(rep.form_b), ys)
        d = rep.to_dict()
        d.update(mu_ks_a=ks_a, mu_ks_b=ks_b, var_sigma_check=rep.form_a.variance())
        res.data[f"m={m}"] = d
        for row in rep.rows():
            res.rows.append({"m": m, **row})
        bound = cfg.tol("form_factor") * rep.error_bound
        res.check(f"forms_agree[m={m}]", rep.sup_diff, bound, rep.sup_diff <= bound)
        res.check(f"mu_surrogate_ks[m={m}]", max(ks_a, ks_b), cfg.tol("mu_ks"), max(ks_a, ks_b) <= cfg.tol("mu_ks"))
    return res


def exp_clt(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    w = cfg.w
    ms = cfg.ms or list(range(2, 9))
    dists = []
    for m in ms:
        p = shape_params(w, m)
        dist, se = LL.clt_distance_mc(m, p, cfg.samples, child_seeds(cfg.seed, 1, m)[0])
        dists.append(dist)
        res.rows.append({"m": m, "ks": dist, "stderr": se, "target_variance": LL.clt_target_variance(p)})
    inv = int(np.sum(np.diff(dists) > 0))
    res.check("clt_ks_decreasing_inversions", inv, cfg.tol("clt_inversions"), inv <= cfg.tol("clt_inversions"))
    return res


def _trials(cfg, run, eps, key):
    seeds = child_seeds(cfg.seed, cfg.trials, key)
    task = _TrialTask(cfg.manifold, cfg.w, eps, cfg.m if cfg.manifold == "torus" else 2, cfg.trunc_tol, cfg.refine)
    return run(task, seeds)


def exp_simulate(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    w = cfg.w
    m = cfg.m if cfg.manifold == "torus" else 2
    vol = F.volume(cfg.manifold, m)
    prof = shape_params(w, m)
    try:
        C = LL.c_constant(m, prof, seed=cfg.seed).value
    except LL.LimitLawError as e:
        log.warning("no count constant: %s", e)
        C = math.nan
    means, ses = [], []
    pooled = {}
    for i, eps in enumerate(cfg.eps):
        log.info("simulate: eps=%g, %d trials", eps, cfg.trials)
        out = _trials(cfg, run, eps, i)
        good = [t for t in out if t["certified"] and t["signed_count"] == t["chi"]]
        counts = np.array([t["count"] for t in good], dtype=float) / vol
        mean = float(counts.mean()) if len(counts) else math.nan
        se = float(counts.std(ddof=1) / math.sqrt(len(counts))) if len(counts) > 1 else math.inf
        means.append(mean)
        ses.append(se)
        pred = C * eps ** (-m)
        res.rows.append({"eps": eps, "trials": cfg.trials, "used": len(good), "mean_per_volume": mean, "stderr": se,
                         "prediction": pred, "ratio": mean / pred})
        res.data.setdefault("trials", {})[str(eps)] = [{k: v for k, v in t.items() if k != "values"} for t in out]
        pooled[eps] = good
        bad_sign = [t for t in out if t["certified"] and t["signed_count"] != t["chi"]]
        res.check(f"signed_count[eps={eps:g}]", len(bad_sign), 0, not bad_sign)
        if m == 1:
            rel = abs(mean / pred - 1)
            res.check(f"count_constant[eps={eps:g}]", rel, cfg.tol("count_rel"), rel <= cfg.tol("count_rel"))
    if len(cfg.eps) >= 2:
        slope = -float(np.polyfit(np.log(cfg.eps), np.log(means), 1)[0])
        res.data["exponent"] = slope
        res.check("count_exponent", slope, [m - cfg.tol("exponent"), m + cfg.tol("exponent")],
                  abs(slope - m) <= cfg.tol("exponent"))
    if cfg.ks_test:
        eps = min(cfg.eps)
        good = pooled[eps]
        crit = [_ValuesOnly(np.asarray(t["values"])) for t in good]
        emp = F.empirical_critical_measure(crit, prof, eps, True, child_seeds(cfg.seed, 1, 99)[0])
        fa, _ = LL.sigma_check_density(m, prof)
        ks = emp.ks(LL.grid_cdf_fn(fa))
        var_rel = abs(emp.variance() / fa.variance() - 1)
        res.data["critical_values"] = {"eps": eps, "n": len(emp.values), "ks": ks, "variance": emp.variance(),
                                       "variance_theory": fa.variance(), "variance_rel": var_rel}
        res.extra_csv["values"] = [{"rescaled_value": float(v)} for v in emp.values]
        res.check(f"critical_value_ks[eps={eps:g}]", ks, cfg.tol("ks"), ks <= cfg.tol("ks"))
    return res


@dataclass
class _ValuesOnly:
    values: np.ndarray


def exp_kac_rice(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    w = cfg.w
    m = cfg.m if cfg.manifold == "torus" else 2
    for i, eps in enumerate(cfg.eps):
        kr = F.kac_rice_density(cfg.manifold, w, eps, mc_samples=cfg.samples, seed=child_seeds(cfg.seed, 1, i, 1)[0], m=m)
        neg = F.kac_rice_density(cfg.manifold, w, eps, (-math.inf, 0.0), cfg.samples, child_seeds(cfg.seed, 1, i, 2)[0], m)
        pos = F.kac_rice_density(cfg.manifold, w, eps, (0.0, math.inf), cfg.samples, child_seeds(cfg.seed, 1, i, 3)[0], m)
        out = _trials(cfg, run, eps, i)
        vol = F.volume(cfg.manifold, m)
        good = [t for t in out if t["certified"]]
        counts = np.array([t["count"] for t in good], dtype=float) / vol
        mean, se = float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(len(counts)))
        z = (kr.value - mean) / math.hypot(kr.stderr, se)
        zs = (neg.value - pos.value) / math.hypot(neg.stderr, pos.stderr)
        row = {"eps": eps, "kac_rice": kr.value, "kac_rice_stderr": kr.stderr, "mc_count": mean, "mc_stderr": se,
               "z": z, "below_zero": neg.value, "above_zero": pos.value}
        if cfg.manifold == "torus" and m == 1:
            row["lattice_rate"] = F.one_dim_rate_lattice(w, eps)
        res.rows.append(row)
        res.check(f"kac_rice_vs_count[eps={eps:g}]", abs(z), cfg.tol("kr_z"), abs(z) <= cfg.tol("kr_z"))
        res.check(f"kac_rice_sign_symmetry[eps={eps:g}]", abs(zs), cfg.tol("kr_z"), abs(zs) <= cfg.tol("kr_z"))
    return res


def covariance_orders(w: Weight, eps_list, m: int = 2) -> dict:
    """Residual orders of the torus kernel derivatives against their leading terms."""
    pairs = {"(0,0)": ((), ()), "(i,i)": ((0,), (0,)), "(ii,jj)": ((0, 0), (1, 1))}
    out = {}
    for name, (a, b) in pairs.items():
        resid = [F.covariance_derivative("torus", w, e, a, b, m) / F.covariance_prediction(w, e, a, b, m) - 1
                 for e in eps_list]
        out[name] = {"residuals": resid, "order": G.fitted_order(eps_list, resid)}
    return out


def exp_curvature(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    w = cfg.w
    sph = G.curvature_report("sphere", w, cfg.eps, cfg.mc_eps, cfg.mc_samples, child_seeds(cfg.seed, 1, 1)[0])
    tor = G.curvature_report("torus", w, cfg.eps)
    res.rows = [{"manifold": "sphere", **r} for r in sph.rows()] + [{"manifold": "torus", **r} for r in tor.rows()]
    res.data.update(sphere=sph.to_dict(), torus=tor.to_dict())
    lo, hi = cfg.tol("order_lo"), cfg.tol("order_hi")
    res.check("sphere_curvature_order", sph.order, [lo, hi], lo <= sph.order <= hi)
    errs = [sph.abs_err[i] for i in np.argsort(cfg.eps)[::-1]]
    res.check("sphere_curvature_monotone", errs, "decreasing", all(b < a for a, b in zip(errs, errs[1:])))
    flat = max(abs(k) for k in tor.K)
    res.check("torus_flat", flat, cfg.tol("flat"), flat <= cfg.tol("flat"))
    if sph.mc is not None:
        res.check(f"sphere_curvature_mc[eps={cfg.mc_eps:g}]", abs(sph.mc["z"]), cfg.tol("curv_mc_z"),
                  abs(sph.mc["z"]) <= cfg.tol("curv_mc_z"))
    jets = []
    for u, v in cfg.jet_pairs:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        s = cfg.jet_scale / max(np.linalg.norm(u), np.linalg.norm(v))
        j = G.distance_jet(u * s, v * s)
        wedge = (u[0] * v[1] - u[1] * v[0]) * s * s
        d = j.to_dict()
        d["eta4_coefficient"] = j.coeffs[4] / wedge**2 if wedge else None
        jets.append(d)
        scale3 = cfg.tol("eta3") * max(np.linalg.norm(u * s), np.linalg.norm(v * s)) ** 3
        res.check(f"eta3[u={u.tolist()},v={v.tolist()}]", abs(j.coeffs[3]), scale3, abs(j.coeffs[3]) <= scale3)
        gap = abs(j.coeffs[4] - j.closed_form[4])
        res.check(f"eta4[u={u.tolist()},v={v.tolist()}]", j.coeffs[4], j.closed_form[4], gap <= 3 * j.error[4] + 1e-15)
    res.data["distance_jets"] = jets
    cov = covariance_orders(w, cfg.cov_eps)
    res.data["covariance_orders"] = cov
    for name, d in cov.items():
        o = d["order"]
        res.check(f"covariance_order{name}", o, [2 - cfg.tol("cov_order"), 2 + cfg.tol("cov_order")],
                  math.isfinite(o) and abs(o - 2) <= cfg.tol("cov_order"))
    return res


def exp_gauss_bonnet(cfg: ExperimentConfig, run: Runner) -> Result:
    res = Result()
    chi = G.euler_characteristic(cfg.manifold)
    out = _trials(cfg, run, cfg.eps[0], 0)
    certified = [t for t in out if t["certified"]]
    for i, t in enumerate(out):
        res.rows.append({"trial": i, "seed": t["seed"], "count": t["count"], "signed_count": t["signed_count"],
                         "certified": t["certified"]})
    bad = [t for t in certified if t["signed_count"] != chi]
    res.data.update(chi=chi, signed_counts=[t["signed_count"] for t in out], certified=len(certified), trials=len(out))
    res.check("signed_count_equals_chi", len(bad), 0, not bad and len(certified) > 0)
    res.check("certified_fraction", len(certified) / len(out), 1.0, len(certified) == len(out))
    return res


def exp_report(cfg: ExperimentConfig, run: Runner, out_dir: Path) -> Result:
    res = Result()
    found = 0
    for p in sorted(out_dir.glob("*.json")):
        if p.name.endswith(".manifest.json") or p.name.startswith("report-"):
            continue
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if "checks" not in doc:
            continue
        found += 1
        for c in doc["checks"]:
            res.rows.append({"artifact": p.name, "experiment": doc.get("experiment"), "check": c["name"],
                             "value": json.dumps(c["value"]), "tolerance": json.dumps(c["tolerance"]), "pass": c["pass"]})
    res.data["artifacts"] = found
    failed = [r for r in res.rows if not r["pass"]]
    res.check("collected_artifacts", found, ">=1", found >= 1)
    for r in failed:
        res.check(f"{r['experiment']}:{r['check']}", json.loads(r["value"]), json.loads(r["tolerance"]), False)
    return res


RUNNERS = {"moments": exp_moments, "constants": exp_constants, "rmt-identities": exp_rmt, "limit-law": exp_limit_law,
           "clt": exp_clt, "simulate": exp_simulate, "kac-rice": exp_kac_rice, "curvature": exp_curvature,
           "gauss-bonnet": exp_gauss_bonnet}


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, dict)):
        return json.dumps(_clean(v), sort_keys=True)
    return str(v)


def write_csv(path: Path, rows: list[dict], chash: str, seed: int):
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    wr.writerow(["config_hash", "seed"] + cols)
    for r in rows:
        wr.writerow([chash, str(seed)] + [_fmt(r.get(c, "")) for c in cols])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def write_json(path: Path, doc: dict):
    path.write_bytes((json.dumps(_clean(doc), sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode("utf-8"))


def run(experiment: str, raw: dict, out_dir: Path, jobs: int = 1) -> tuple[int, dict]:
    """Validate, execute and write artifacts; returns (exit status, summary)."""
    cfg = validate(raw, experiment)
    chash = cfg.hash()
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{experiment}-{chash}"
    runner = Runner(jobs)
    log.info("%s: config %s, seed %d, jobs %d", experiment, chash, cfg.seed, runner.jobs)
    t0 = time.perf_counter()
    if experiment == "report":
        res = exp_report(cfg, runner, out_dir)
    else:
        res = RUNNERS[experiment](cfg, runner)
    elapsed = time.perf_counter() - t0
    checks = [c.to_dict() for c in res.checks]
    ok = all(c["pass"] for c in checks)
    artifacts = []
    if res.rows:
        write_csv(out_dir / f"{stem}.csv", res.rows, chash, cfg.seed)
        artifacts.append(f"{stem}.csv")
    for suffix, rows in sorted(res.extra_csv.items()):
        write_csv(out_dir / f"{stem}-{suffix}.csv", rows, chash, cfg.seed)
        artifacts.append(f"{stem}-{suffix}.csv")
    doc = {"experiment": experiment, "config_hash": chash, "seed": cfg.seed, "config": cfg.canonical(),
           "checks": checks, "status": "pass" if ok else "fail", "data": res.data}
    write_json(out_dir / f"{stem}.json", doc)
    artifacts.append(f"{stem}.json")
    manifest = {"experiment": experiment, "config_hash": chash, "seed": cfg.seed, "config": cfg.canonical(),
                "artifacts": artifacts, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "elapsed_seconds": elapsed, "jobs": runner.jobs, "python": platform.python_version(),
                "numpy": np.__version__}
    write_json(out_dir / f"{stem}.manifest.json", manifest)
    summary = {"experiment": experiment, "config_hash": chash, "seed": cfg.seed, "status": "pass" if ok else "fail",
               "checks": checks, "artifacts": artifacts + [f"{stem}.manifest.json"]}
    for c in checks:
        if not c["pass"]:
            log.error("FAILED check %s: value %s, tolerance %s", c["name"], c["value"], c["tolerance"])
    return (0 if ok else 1), summary


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("experiment", type=click.Choice(EXPERIMENTS))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True, help="JSON config file.")
@click.option("--seed", type=str, default=None, help="Master seed (unsigned 64-bit); overrides the file.")
@click.option("--serial", is_flag=True, help="Single process, deterministic order.")
@click.option("--jobs", type=int, default=None, help="Upper bound on parallel worker processes.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--manifold", type=str, default=None, help="Override the config's manifold.")
@click.option("--trials", type=str, default=None, help="Override the config's trial count.")
@click.option("-v", "--verbose", count=True, help="More logging on stderr.")
def main(experiment, config_path, seed, serial, jobs, out_dir, manifold, trials, verbose):
    """Run one experiment and print its summary JSON."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")

    def invalid(errors):
        for e in errors:
            click.echo(f"config error: {e}", err=True)
        click.echo(json.dumps({"experiment": experiment, "status": "invalid-config", "errors": errors}, sort_keys=True))
        sys.exit(2)

    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except OSError as e:
        invalid([f"<file>: cannot read {config_path}: {e.strerror}"])
    except json.JSONDecodeError as e:
        invalid([f"<file>: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"])
    if not isinstance(raw, dict):
        invalid(["<root>: config must be a JSON object"])
    errors = []
    out_cfg = raw.pop("out", None)
    if out_cfg is not None and not isinstance(out_cfg, str):
        errors.append("out: must be a directory path string")
    for name, val, conv in (("seed", seed, int), ("trials", trials, int), ("manifold", manifold, str)):
        if val is None:
            continue
        try:
            raw[name] = conv(val)
        except ValueError:
            errors.append(f"{name}: cannot parse {val!r}")
    if jobs is not None and jobs < 1:
        errors.append("jobs: must be at least 1")
    if errors:
        invalid(errors)
    n_jobs = 1 if serial else (jobs or 1)
    target = Path(out_dir or out_cfg or "morse-out")
    try:
        status, summary = run(experiment, raw, target, n_jobs)
    except ConfigError as e:
        invalid(e.errors)
    click.echo(json.dumps(summary, sort_keys=True))
    sys.exit(status)


if __name__ == "__main__":  # pragma: no cover
    main()
