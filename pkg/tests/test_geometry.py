import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morse_spectra.fields import CriticalSet, build_sphere, build_torus, find_critical_points
from morse_spectra.geometry import (
    FiniteDifferenceError,
    GeometryError,
    NotCertified,
    curvature_mc,
    curvature_report,
    distance_jet,
    eta,
    euler_characteristic,
    fitted_order,
    gauss_bonnet_signed_count,
    h_metric,
    sectional_curvature,
    sphere_dist2,
)
from morse_spectra.weights import Weight

GAUSS = Weight("gaussian")
small = st.floats(-0.2, 0.2, allow_nan=False)


def test_torus_is_flat():
    for eps in (0.2, 0.1):
        assert sectional_curvature("torus", GAUSS, eps) == 0.0
        assert np.allclose(h_metric("torus", GAUSS, eps), np.eye(2), atol=1e-14)


def test_sphere_curvature_frozen():
    got = [sectional_curvature("sphere", GAUSS, e) - 1 for e in (0.2, 0.1, 0.05)]
    assert got == pytest.approx([1.083e-4, 6.692e-6, 4.171e-7], rel=2e-3)


def test_sphere_curvature_converges_at_fourth_order():
    # the error is O(eps^4), two orders faster than an O(eps^2) bound
    eps = [0.2, 0.1, 0.05]
    errs = [sectional_curvature("sphere", GAUSS, e) - 1 for e in eps]
    assert fitted_order(eps, errs) == pytest.approx(4.0, abs=0.1)


def test_sphere_h_tends_to_identity():
    vals = [h_metric("sphere", GAUSS, e)[0, 0] for e in (0.2, 0.1, 0.05)]
    assert vals == pytest.approx([0.999891683, 0.99999331, 0.99999958], abs=1e-8)
    assert abs(h_metric("sphere", GAUSS, 0.1)[0, 1]) < 1e-14


def test_curvature_errors():
    with pytest.raises(GeometryError):
        sectional_curvature("torus", GAUSS, 0.1, 0, 0)
    with pytest.raises(GeometryError):
        curvature_mc("klein", GAUSS, 0.1, 10)


def test_curvature_mc_is_consistent():
    est = curvature_mc("sphere", GAUSS, 0.2, samples=40_000, seed=1)
    exact = sectional_curvature("sphere", GAUSS, 0.2)
    assert abs(est.value - exact) < 4 * est.stderr
    assert est.samples == 40_000


def test_curvature_report_shape():
    rep = curvature_report("sphere", GAUSS, [0.2, 0.1])
    rows = rep.rows()
    assert [r["epsilon"] for r in rows] == [0.2, 0.1]
    assert set(rows[0]) == {"epsilon", "h11", "h12", "K_eps", "abs_err", "fitted_order"}
    assert rep.to_dict()["target"] == 1.0


def test_fitted_order():
    eps = np.array([0.4, 0.2, 0.1])
    assert fitted_order(eps, 3 * eps**2) == pytest.approx(2.0)
    assert math.isnan(fitted_order(eps, [0.0, 1.0, 2.0]))


@given(x=st.tuples(small, small), y=st.tuples(small, small))
def test_dist2_symmetry_and_flat_limit(x, y):
    a = sphere_dist2(np.array(x), np.array(y))
    b = sphere_dist2(np.array(y), np.array(x))
    assert a == pytest.approx(b, abs=1e-15)
    flat = (x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2
    # normal coordinates: d^2 = |x - y|^2 - (K/3)(x ^ y)^2 + O(r^6)
    wedge = x[0] * y[1] - x[1] * y[0]
    r = max(math.hypot(*x), math.hypot(*y))
    assert abs(a - flat + wedge**2 / 3) <= r**6 + 1e-15


def test_dist2_through_pole_is_exact():
    x = np.array([0.1, 0.0])
    y = np.array([-0.2, 0.0])
    assert sphere_dist2(x, y) == pytest.approx(0.09, rel=1e-13)


@settings(max_examples=25)
@given(u=st.tuples(small, small), v=st.tuples(small, small))
def test_eta_jet_low_orders(u, v):
    u, v = np.array(u), np.array(v)
    if max(np.linalg.norm(u), np.linalg.norm(v)) < 0.02:
        return
    j = distance_jet(u, v, step=0.05)
    assert j.coeffs[2] == pytest.approx(float(u @ u), abs=1e-9)
    # eta(tu, tv) is even in t
    assert abs(j.coeffs[3]) < 1e-9


@settings(max_examples=25)
@given(u=st.tuples(small, small), v=st.tuples(small, small))
def test_eta_quartic_is_minus_wedge_over_12(u, v):
    u, v = np.array(u), np.array(v)
    if max(np.linalg.norm(u), np.linalg.norm(v)) < 0.02:
        return
    j = distance_jet(u, v, step=0.05)
    wedge = u[0] * v[1] - u[1] * v[0]
    assert j.coeffs[4] == pytest.approx(-wedge**2 / 12, abs=5 * j.error[4] + 1e-12)


def test_eta_quartic_frozen():
    j = distance_jet([0.1, 0.0], [0.0, 0.1], step=0.05)
    assert j.coeffs[4] / 1e-4 == pytest.approx(-1 / 12, rel=1e-6)


@pytest.mark.xfail(strict=True, reason="the quartic coefficient is -(u^v)^2 K/12, not +(u^v)^2 K/6")
def test_eta_quartic_stated_form():
    j = distance_jet([0.1, 0.0], [0.0, 0.1], step=0.05)
    assert j.coeffs[4] == pytest.approx(j.closed_form[4], abs=1e-6 * 1e-4)


def test_eta_step_too_small_is_rejected():
    with pytest.raises(FiniteDifferenceError) as exc:
        distance_jet([0.1, 0.0], [0.0, 0.1], step=1e-5)
    assert exc.value.recommended_step > 1e-5
    # the recommended step works
    distance_jet([0.1, 0.0], [0.0, 0.1], step=exc.value.recommended_step * 2)


def test_eta_domain_checks():
    with pytest.raises(GeometryError):
        distance_jet([0, 0], [0, 0])
    with pytest.raises(GeometryError):
        distance_jet([0.5, 0], [0, 0.1])


def test_eta_coordinates():
    u, v = np.array([0.1, 0.02]), np.array([0.03, -0.05])
    assert eta(u, v) == pytest.approx(sphere_dist2((v + u) / 2, (v - u) / 2))


def test_gauss_bonnet_signed_counts():
    assert euler_characteristic("sphere") == 2 and euler_characteristic("torus") == 0
    cs = find_critical_points(build_sphere(GAUSS, 0.3, seed=2))
    assert gauss_bonnet_signed_count(cs) == 2
    ct = find_critical_points(build_torus(2, GAUSS, 0.3, seed=2))
    assert gauss_bonnet_signed_count(ct) == 0


def test_gauss_bonnet_refuses_uncertified():
    cs = find_critical_points(build_sphere(GAUSS, 0.3, seed=2))
    bad = CriticalSet(**{**cs.__dict__, "degenerate": np.ones(cs.count, bool)})
    with pytest.raises(NotCertified):
        gauss_bonnet_signed_count(bad)
    unstable = CriticalSet(**{**cs.__dict__, "refined_count": cs.count + 2})
    with pytest.raises(NotCertified):
        gauss_bonnet_signed_count(unstable)
