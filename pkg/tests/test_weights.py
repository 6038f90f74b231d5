import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from morse_spectra.weights import (
    FAMILIES,
    QuadratureError,
    Weight,
    WeightError,
    dimensional_constants,
    gaussian_moment_exact,
    log_moment,
    log_squared_Z,
    moment,
    moment_rows,
    q_from_moments,
    shape_params,
    tail_log_asymptote,
)

from .oracles import trapezoid_moment

GAUSS = Weight("gaussian")
LOGSQ = Weight("log-squared", {"C": 1.0, "alpha": 2.0})
BUMP = Weight("bump-offset", {"c": 2.0})
LOGPOW = Weight("log-power")
TABLE = Weight("custom-table", {"ts": [0, 0.5, 1.0, 1.5, 2.0], "ws": [1.0, 0.8, 0.4, 0.1, 0.02], "decay": 3.0})
ALL = [GAUSS, LOGSQ, BUMP, LOGPOW, TABLE]


def test_gaussian_moment_examples():
    assert moment(GAUSS, 1) == pytest.approx(0.5, abs=1e-12)
    assert moment(GAUSS, 0) == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-12)


@pytest.mark.parametrize("k", range(13))
def test_gaussian_moments_closed_form(k):
    assert abs(moment(GAUSS, k) - gaussian_moment_exact(k)) <= 1e-10 * gaussian_moment_exact(k)


def test_bump_moment_vs_trapezoid():
    ref = trapezoid_moment(BUMP, 6, 1.0, 3.0, 400_001)
    assert moment(BUMP, 6) == pytest.approx(ref, rel=1e-9)
    assert moment(BUMP, 6) == pytest.approx(46.68561445325342, rel=1e-10)


def test_table_moment_vs_trapezoid():
    # table part plus the analytic exponential tail
    head = trapezoid_moment(TABLE, 2, 0.0, 2.0, 400_001)
    t0, w0, a = 2.0, 0.02, 3.0
    tail = w0 * math.exp(a * t0) * math.exp(-a * t0) * (t0**2 / a + 2 * t0 / a**2 + 2 / a**3)
    assert moment(TABLE, 2) == pytest.approx(head + tail, rel=1e-7)


def test_dimensional_constants_gaussian():
    s, d, h = dimensional_constants(GAUSS, 2)
    assert s == pytest.approx(1 / (4 * math.pi), rel=1e-12)
    assert d == pytest.approx(1 / (8 * math.pi), rel=1e-12)
    assert h == pytest.approx(1 / (16 * math.pi), rel=1e-12)
    s1, d1, _ = dimensional_constants(GAUSS, 1)
    assert s1 == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-12)
    assert d1 == pytest.approx(1 / (4 * math.sqrt(math.pi)), rel=1e-12)


@pytest.mark.parametrize("w", [LOGSQ, BUMP, TABLE], ids=lambda w: w.family)
def test_s2_is_I1_over_2pi(w):
    s, _, _ = dimensional_constants(w, 2)
    assert s == pytest.approx(moment(w, 1) / (2 * math.pi), rel=1e-12)


@pytest.mark.parametrize("m", range(1, 9))
def test_gaussian_q_is_one(m):
    p = shape_params(GAUSS, m)
    assert abs(p.q - 1) <= 1e-8
    assert p.r == 1.0 and p.omega == 0.0 and p.kappa == 0.0


@pytest.mark.parametrize("w", [GAUSS, LOGSQ, BUMP, LOGPOW], ids=lambda w: w.family)
@pytest.mark.parametrize("m", range(1, 9))
def test_profile_invariants(w, m):
    p = shape_params(w, m)
    assert p.log_q >= math.log(m / (m + 2)) - 1e-8
    assert abs(p.log_q - q_from_moments(w, m)) <= 1e-8
    assert p.omega >= 0
    assert (p.omega == 0) == (p.log_q >= 0)
    assert 0 <= p.kappa <= 0.5  # rounds to 1/2 when r is huge
    # r = s_check h / d^2
    if p.log_r < 700:
        assert math.log(p.s_check) + p.log_h - 2 * p.log_d == pytest.approx(p.log_r, abs=1e-9)


def test_log_power_m3():
    p = shape_params(LOGPOW, 3)
    assert p.log_q > 0 and p.omega == 0 and p.log_r == p.log_q
    assert p.s_check == p.s


def test_frozen_log_squared_r():
    # oracles frozen from the certified quadrature
    assert shape_params(LOGSQ, 1).r == pytest.approx(2.9378683545402717, rel=1e-9)
    assert shape_params(LOGSQ, 2).r == pytest.approx(3.7855121893778088, rel=1e-9)
    assert shape_params(LOGSQ, 3).r == pytest.approx(4.446049063810444, rel=1e-9)


def test_frozen_bump_omega():
    p = shape_params(BUMP, 2)
    assert p.q == pytest.approx(0.5641798968592012, rel=1e-9)
    assert p.omega / p.s_check == pytest.approx(0.4358201031407989, rel=1e-9)
    assert p.r == 1.0


def test_tail_asymptote_examples():
    assert tail_log_asymptote("bump-offset", 60, c=2.0) == pytest.approx(60 * math.log(3), rel=1e-14)
    assert tail_log_asymptote("log-power", 10) == pytest.approx(math.exp(10) + 0.5 * math.log(2 * math.pi * math.exp(10)))
    Z = log_squared_Z(2.0, 1.0)
    assert Z == pytest.approx((2 - 1) / 4)
    assert tail_log_asymptote(LOGSQ, 40) == pytest.approx(Z * 41**2)
    with pytest.raises(WeightError):
        tail_log_asymptote("gaussian", 30)


def test_log_squared_tail_within_5pct():
    q = log_moment(LOGSQ, 40).log_value
    assert abs(q - tail_log_asymptote(LOGSQ, 40)) / q <= 0.05


def test_log_power_tail_within_5pct():
    q = log_moment(LOGPOW, 10).log_value
    assert abs(q - tail_log_asymptote(LOGPOW, 10)) / q <= 0.05


def test_bump_tail_is_only_logarithmically_close():
    # the k log(c+1) term misses a -O(sqrt k) correction; at k=60 the gap is ~15%
    q = log_moment(BUMP, 60).log_value
    rel = abs(q - tail_log_asymptote(BUMP, 60)) / q
    assert rel == pytest.approx(0.14889996745108372, rel=1e-6)
    rel200 = abs(log_moment(BUMP, 200).log_value - tail_log_asymptote(BUMP, 200)) / log_moment(BUMP, 200).log_value
    assert rel200 < rel


def test_invalid_weights():
    with pytest.raises(WeightError):
        Weight("nope")
    with pytest.raises(WeightError):
        Weight("log-squared", {"C": -1.0})
    with pytest.raises(WeightError):
        Weight("log-squared", {"alpha": 1.0})
    with pytest.raises(WeightError):
        Weight("gaussian", {"x": 1})
    with pytest.raises(WeightError):
        Weight("custom-table", {"ts": [0, 1, 0.5, 2], "ws": [1, 1, 1, 1], "decay": 1.0})
    with pytest.raises(WeightError):
        Weight("custom-table", {"ts": [0, 1, 2, 3], "ws": [1, 1, 1, 1], "decay": -1.0})


def test_moment_errors():
    with pytest.raises(ValueError):
        moment(GAUSS, -1)
    with pytest.raises(QuadratureError):
        moment(LOGSQ, 10, tol=1e-30)


def test_moment_rows_csv_shape():
    rows = moment_rows(BUMP, [0, 1, 2])
    assert [r["k"] for r in rows] == [0, 1, 2]
    assert set(rows[0]) == {"family", "params", "k", "I_k", "log_I_k", "tol"}


def test_roundtrip_dict():
    for w in ALL:
        assert Weight.from_dict(w.to_dict()) == w


@given(t=st.floats(min_value=0, max_value=50, allow_nan=False), idx=st.integers(0, len(ALL) - 1))
def test_even_and_nonnegative(t, idx):
    w = ALL[idx]
    a, b = float(w(np.array([t]))[0]), float(w(np.array([-t]))[0])
    assert a == b
    assert a >= 0


@given(n=st.integers(1, 8), idx=st.integers(0, len(ALL) - 1))
def test_rapid_decay(n, idx):
    w = ALL[idx]
    if w.family in ("log-power", "log-squared"):
        # t^n w(t) -> 0 in log form: n s + log w(e^s) < -s once s is large
        s = math.exp(n + 2) + 2 * n
        assert n * s + float(w.log_w_of_log_r(s)) < -s
    else:
        T = w.support_radius(1e-30) * 4 + 10
        assert T**n * float(w(np.array([T]))[0]) < 1e-6


def test_families_listed():
    assert set(FAMILIES) == {"gaussian", "log-power", "log-squared", "bump-offset", "custom-table"}
