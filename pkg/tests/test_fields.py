import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from morse_spectra.fields import (
    CutoffTooLarge,
    EmpiricalMeasure,
    FieldError,
    asymptotic_kernel_constant,
    build_field,
    build_sphere,
    build_torus,
    covariance_derivative,
    covariance_prediction,
    empirical_critical_measure,
    eval_jet,
    expected_count_mc,
    find_critical_points,
    half_lattice,
    jet_basis_at,
    jet_covariance,
    kac_rice_density,
    one_dim_rate_lattice,
    sph_to_xyz,
    sphere_chart_jet,
    sphere_from_coeffs,
    sphere_jet,
    torus_from_modes,
    torus_grid,
    torus_jet,
    torus_kernel_moment,
    volume,
)
from morse_spectra.gaussian_core import sym_to_hat
from morse_spectra.weights import Weight, shape_params

GAUSS = Weight("gaussian")
LOGSQ = Weight("log-squared", {"C": 1.0, "alpha": 2.0})


@pytest.mark.parametrize("m,K", [(1, 4), (2, 3), (3, 2)])
def test_half_lattice_covers_pairs_once(m, K):
    ks = half_lattice(m, K)
    full = {tuple(k) for k in ks} | {tuple(-k) for k in ks}
    grids = np.stack(np.meshgrid(*([np.arange(-K, K + 1)] * m), indexing="ij"), -1).reshape(-1, m)
    expect = {tuple(k) for k in grids if np.sum(k * k) <= K * K}
    assert full == expect
    assert len(ks) == (len(expect) + 1) // 2


def test_torus_variance_matches_kernel():
    f = build_torus(2, GAUSS, 0.2, seed=1)
    assert f.variance() == pytest.approx(torus_kernel_moment(GAUSS, 0.2, 2, [0, 0]), rel=1e-10)
    assert f.grad_variance() == pytest.approx(torus_kernel_moment(GAUSS, 0.2, 2, [2, 0]), rel=1e-10)
    assert f.tail_mass < 1e-10 * f.variance()


def test_torus_jet_finite_differences():
    f = build_torus(2, GAUSS, 0.3, seed=2)
    x = np.array([[0.4, 1.7], [3.0, 5.5]])
    h = 1e-5
    u, g, H = torus_jet(f, x)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        up, gp, _ = torus_jet(f, x + e)
        dn, gm, _ = torus_jet(f, x - e)
        assert np.allclose(g[:, j], (up - dn) / (2 * h), atol=1e-6 * np.abs(g).max())
        assert np.allclose(H[:, :, j], (gp - gm) / (2 * h), atol=1e-5 * np.abs(H).max())


def test_torus_grid_matches_jet():
    f = build_torus(2, GAUSS, 0.3, seed=3)
    N = 48
    u, G = torus_grid(f, N)
    h = 2 * math.pi / N
    pts = np.array([[3, 7], [20, 41]])
    v, g, _ = torus_jet(f, pts * h, 1)
    assert np.allclose(u[pts[:, 0], pts[:, 1]], v, atol=1e-10)
    assert np.allclose(G[:, pts[:, 0], pts[:, 1]].T, g, atol=1e-9)


def test_torus_sampled_covariance():
    eps = 0.5
    u = np.array([torus_jet(build_torus(2, GAUSS, eps, seed=s), [[1.0, 2.0]], 0)[0][0] for s in range(3000)])
    assert np.var(u) == pytest.approx(torus_kernel_moment(GAUSS, eps, 2, [0, 0]), rel=0.08)


@pytest.mark.parametrize("manifold", ["torus", "sphere"])
def test_jet_covariance_matches_basis(manifold):
    w, eps = GAUSS, 0.25
    f = build_field(manifold, w, eps, trunc_tol=1e-15, seed=0)
    point = np.array([0.3, 1.0]) if manifold == "torus" else sph_to_xyz(1.2, 0.4)
    J = jet_basis_at(f, point)
    emp = J.T @ J
    model = jet_covariance(manifold, w, eps).cov
    assert np.allclose(emp, model, rtol=1e-8, atol=1e-8 * np.abs(model).max())


def test_sphere_jet_chart_invariance():
    f = build_sphere(GAUSS, 0.3, seed=4)
    p = sph_to_xyz(np.array([1.2, 0.9]), np.array([0.5, 2.0]))
    u0, g0, H0 = sphere_chart_jet(f, 0, np.array([1.2, 0.9]), np.array([0.5, 2.0]))
    # same points through chart B
    from morse_spectra.fields import _rot_inv, xyz_to_sph

    t, ph = xyz_to_sph(_rot_inv(p))
    u1, g1, H1 = sphere_chart_jet(f, 1, t, ph)
    assert np.allclose(u0, u1, atol=1e-10)
    assert np.allclose(np.linalg.norm(g0, axis=1), np.linalg.norm(g1, axis=1), atol=1e-9)
    assert np.allclose(np.linalg.eigvalsh(H0), np.linalg.eigvalsh(H1), atol=1e-8)


def test_sphere_first_harmonic_has_two_critical_points():
    A = np.zeros((2, 2))
    A[1, 0] = 1.0  # u proportional to z
    f = sphere_from_coeffs(A, np.zeros((2, 2)))
    cs = find_critical_points(f)
    assert cs.count == 2 and cs.signed_count == 2
    assert np.allclose(np.sort(np.abs(cs.points[:, 2])), [1, 1], atol=1e-8)
    assert cs.certified and cs.reliable


def test_torus_cos_sum_critical_points():
    f = torus_from_modes(2, {(1, 0): (1.0, 0.0), (0, 1): (1.0, 0.0)})
    cs = find_critical_points(f)
    assert cs.count == 4
    assert sorted(cs.indices.tolist()) == [0, 1, 1, 2]
    assert cs.signed_count == 0
    row = cs.rows()[0]
    assert set(row) == {"x", "y", "value", "index", "grad_residual"}


def test_random_torus_signed_count_is_zero():
    f = build_torus(2, GAUSS, 0.2, seed=5)
    cs = find_critical_points(f)
    assert cs.signed_count == 0 and cs.stable
    assert np.all(cs.residuals < 1e-8 * math.sqrt(f.grad_variance()))


def test_random_sphere_signed_count_is_two():
    f = build_sphere(GAUSS, 0.25, seed=6)
    cs = find_critical_points(f)
    assert cs.signed_count == 2 and cs.certified


@pytest.mark.slow
def test_one_dim_count_matches_rice():
    est = expected_count_mc("torus", GAUSS, 0.1, 200, seed=1, m=1)
    rate = one_dim_rate_lattice(GAUSS, 0.1)
    assert abs(est.mean - rate) < 4 * est.stderr


def test_kac_rice_m1_is_rice_rate():
    kr = kac_rice_density("torus", GAUSS, 0.2, m=1, mc_samples=400_000, seed=2)
    assert abs(kr.value - one_dim_rate_lattice(GAUSS, 0.2)) < 4 * kr.stderr


def test_gaussian_kernel_constant():
    assert asymptotic_kernel_constant(GAUSS, 2, [2, 0]) == pytest.approx(1 / (8 * math.pi), rel=1e-12)
    assert asymptotic_kernel_constant(GAUSS, 2, [1, 0]) == 0.0


def test_covariance_derivative_limit():
    eps = 0.05
    exact = covariance_derivative("torus", GAUSS, eps, (0,), (0,))
    assert exact == pytest.approx(covariance_prediction(GAUSS, eps, (0,), (0,)), rel=1e-12)
    # non-separable weight through the slab sum
    a = covariance_derivative("torus", LOGSQ, 0.5, (0,), (0,))
    assert a == pytest.approx(covariance_prediction(LOGSQ, 0.5, (0,), (0,)), rel=1e-3)
    # cross term sign: E_{i;j} with i != j vanishes, E_{ii;} = -E_{i;i}
    assert covariance_derivative("torus", LOGSQ, eps, (0,), (1,)) == 0.0
    assert covariance_derivative("torus", GAUSS, 0.3, (0, 0), ()) == pytest.approx(
        -covariance_derivative("torus", GAUSS, 0.3, (0,), (0,)))
    with pytest.raises(FieldError):
        covariance_derivative("torus", GAUSS, 0.3, (0, 0, 0), (0, 0))


def test_cutoff_guard():
    with pytest.raises(CutoffTooLarge) as exc:
        build_torus(3, LOGSQ, 0.01)
    assert exc.value.required > 0
    with pytest.raises(CutoffTooLarge):
        build_sphere(LOGSQ, 0.001)
    with pytest.raises(CutoffTooLarge):
        torus_kernel_moment(LOGSQ, 0.02, 2, [2, 0])
    with pytest.raises(FieldError):
        build_field("klein", GAUSS, 0.1)
    with pytest.raises(FieldError):
        volume("klein")


def test_fields_reproducible():
    a = build_torus(2, GAUSS, 0.2, seed=123)
    b = build_torus(2, GAUSS, 0.2, seed=123)
    assert np.array_equal(a.coeffs, b.coeffs)
    c = build_torus(2, GAUSS, 0.2, seed=124)
    assert not np.array_equal(a.coeffs, c.coeffs)


def test_eval_jet_dispatch():
    f = build_sphere(GAUSS, 0.3, seed=0)
    u, g, H = eval_jet(f, [[0, 0, 1.0], [1.0, 0, 0]])
    assert u.shape == (2,) and g.shape == (2, 2) and H.shape == (2, 2, 2)
    u2, _, _ = sphere_jet(f, [[0, 0, 2.0]])
    assert u2[0] == pytest.approx(u[0])


@settings(max_examples=30)
@given(data=st.lists(st.floats(-10, 10), min_size=2, max_size=200))
def test_empirical_ks_matches_scipy(data):
    em = EmpiricalMeasure(np.array(data))
    ref = stats.kstest(np.array(data), stats.norm.cdf).statistic
    assert em.ks(stats.norm.cdf) == pytest.approx(ref, abs=1e-12)


def test_empirical_critical_measure_scaling():
    class Fake:
        values = np.array([1.0, -2.0, 3.0])

    p = shape_params(GAUSS, 2)
    em = empirical_critical_measure([Fake()], p, 0.1, with_perturbation=False)
    assert np.allclose(np.sort(em.values), np.sort(Fake.values / math.sqrt(p.s_check * 0.1**-2)))
    with pytest.raises(FieldError):
        empirical_critical_measure([], p, 0.1)
