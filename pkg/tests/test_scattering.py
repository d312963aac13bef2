import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from trijastrow.metric import METRIC, metric_apply
from trijastrow.scattering import (QuadratureSpec, ScatteringProfile, cutoff_chi,
                                   energy_excess, energy_integral_limit, grad_f_ell,
                                   mc_energy_integral, modified_laplacian,
                                   modified_laplacian_fd, particle_gradients,
                                   quad_energy_integral, quad_energy_integral_untruncated,
                                   quad_u_integral, radial_profile, s5_value, scattering_f,
                                   truncated_eval)


def _points_at_radius(R, n, seed=0):
    """6-vectors with hyperradius exactly ``R`` (up to rounding)."""
    y = np.random.default_rng(seed).normal(size=(n, 6))
    y *= (np.asarray(R, dtype=float).reshape(-1, 1) / np.linalg.norm(y, axis=1, keepdims=True))
    return metric_apply(y, "M")


def _symbolic_limit():
    r, a = sp.symbols("r a", positive=True)
    w = 4 * a**4 / r**4
    return sp.integrate(r**5 * sp.diff(w, r) ** 2, (r, sp.sqrt(2) * a, sp.oo)) / a**4


def test_symbolic_radial_integral_is_16():
    assert sp.simplify(_symbolic_limit() - 16) == 0


def test_sphere_area_settings():
    assert s5_value("standard") == pytest.approx(float(2 * sp.pi**3 / sp.gamma(3)), rel=1e-15)
    assert s5_value("printed") == pytest.approx(8 * math.pi**2 / 3, rel=1e-15)
    with pytest.raises(ValueError):
        s5_value("other")


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_core_boundary_exact_zero(a):
    v = _points_at_radius(np.full(50, math.sqrt(2) * a), 50)
    # rounding can push a few points inside, where f is also 0
    assert np.all(scattering_f(v, a) == 0.0) or np.abs(scattering_f(v, a)).max() < 1e-14
    F, _, _ = radial_profile(np.array([math.sqrt(2) * a]), ScatteringProfile(a, 10 * a))
    assert F[0] == 0.0
    inner = _points_at_radius(np.full(50, 0.9 * a), 50, seed=1)
    assert np.all(scattering_f(inner, a) == 0.0)


def test_untruncated_values():
    a = 1.3
    for R in (2.0, 3.5, 10.0):
        v = _points_at_radius(np.array([R]), 1)
        assert scattering_f(v, a)[0] == pytest.approx(1 - 4 * a**4 / R**4, rel=1e-13)


@pytest.mark.parametrize("profile", ["smooth", "quintic"])
def test_cutoff_shape(profile):
    s = np.linspace(0, 1.5, 3001)
    v = _points_at_radius(s, len(s))
    c = cutoff_chi(v, 1.0, profile)
    assert np.all(c[s < 0.5 - 1e-9] == 1.0)
    assert np.all(c[s > 1 + 1e-9] == 0.0)
    assert np.all(np.diff(c) <= 1e-12)


@pytest.mark.parametrize("profile", ["smooth", "quintic"])
def test_radial_derivatives_against_finite_differences(profile):
    p = ScatteringProfile(1.0, 10.0, profile)
    R = np.linspace(1.5, 9.9, 400)
    h = 1e-5
    F, F1, F2 = radial_profile(R, p)
    Fp, F1p, _ = radial_profile(R + h, p)
    Fm, F1m, _ = radial_profile(R - h, p)
    np.testing.assert_allclose((Fp - Fm) / (2 * h), F1, atol=1e-8)
    np.testing.assert_allclose((F1p - F1m) / (2 * h), F2, atol=1e-7)


def test_truncated_values_and_support():
    p = ScatteringProfile(1.0, 10.0)
    v = _points_at_radius(np.array([1.0, 3.0, 4.9, 7.0, 10.0, 12.0]), 6)
    t = truncated_eval(v, p)
    assert t.f_ell[0] == 0.0 and t.f_ell[-1] == 1.0 and t.f_ell[-2] == 1.0
    assert t.f_ell[1] == pytest.approx(1 - 4 / 81, rel=1e-13)
    assert t.f_ell[2] == pytest.approx(1 - 4 / 4.9**4, rel=1e-13)
    np.testing.assert_allclose(t.omega_ell, 1 - t.f_ell)
    np.testing.assert_allclose(t.u_ell, 1 - t.f_ell**2)
    assert np.all((t.f_ell >= 0) & (t.f_ell <= 1))


def test_profile_rejects_overlap():
    with pytest.raises(ValueError):
        ScatteringProfile(1.0, 2.0)
    with pytest.raises(ValueError):
        ScatteringProfile(1.0, 10.0, "cubic")
    ScatteringProfile(1.0, 2 * math.sqrt(2))
    assert ScatteringProfile(0.0, 1.0).ell_tilde == pytest.approx(math.sqrt(1.5))


def test_fd_laplacian_second_order():
    a = 1.0
    R = np.random.default_rng(3).uniform(1.6, 5.0, 10_000)
    v = _points_at_radius(R, len(R), seed=3)
    steps = [4e-2, 2e-2, 1e-2]
    res = [np.abs(modified_laplacian_fd(v, a, h)).max() for h in steps]
    order = np.polyfit(np.log(steps), np.log(res), 1)[0]
    assert abs(order - 2) < 0.3


def test_truncated_laplacian_matches_fd_of_radial_formula():
    # outside the cutoff window the truncated factor is harmonic
    p = ScatteringProfile(1.0, 10.0)
    v = _points_at_radius(np.array([2.0, 3.0, 4.5]), 3)
    np.testing.assert_allclose(modified_laplacian(v, p), 0.0, atol=1e-13)
    R = np.linspace(5.1, 9.9, 20)
    F, F1, F2 = radial_profile(R, p)
    np.testing.assert_allclose(modified_laplacian(_points_at_radius(R, 20), p),
                               F2 + 5 * F1 / R, rtol=1e-10, atol=1e-15)


@pytest.mark.parametrize("profile", ["smooth", "quintic"])
def test_gradient_central_differences(profile):
    p = ScatteringProfile(1.0, 8.0, profile)
    rng = np.random.default_rng(4)
    v = _points_at_radius(rng.uniform(1.5, 7.9, 2000), 2000, seed=4)
    g = grad_f_ell(v, p)
    h = 1e-6
    fd = np.empty_like(v)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        fd[:, k] = (truncated_eval(v + e, p).f_ell - truncated_eval(v - e, p).f_ell) / (2 * h)
    err = np.abs(fd - g.grad6).max(axis=1) / np.maximum(np.abs(g.grad6).max(axis=1), 1e-3)
    assert err.max() < 1e-5
    np.testing.assert_allclose(g.mgrad6, metric_apply(g.grad6, "M"), atol=1e-15)
    np.testing.assert_allclose(g.grad_particle1, g.grad6[:, :3] + g.grad6[:, 3:])


@settings(max_examples=100, deadline=None)
@given(st.floats(1.5, 7.9), st.integers(0, 2**32 - 1))
def test_particle_gradients_sum_to_zero_and_match(R, seed):
    p = ScatteringProfile(1.0, 8.0)
    x = np.random.default_rng(seed).normal(size=3)
    v = _points_at_radius(np.array([R]), 1, seed=seed)[0]
    y, z = x - v[:3], x - v[3:]
    gx, gy, gz = particle_gradients(x, y, z, p)
    assert np.abs(gx + gy + gz).max() < 1e-12 * max(1.0, np.abs(gx).max())
    g = grad_f_ell(v, p)
    np.testing.assert_allclose(gx, g.grad_particle1, rtol=1e-9, atol=1e-14)
    # kinetic identity: sum of squared particle gradients equals 2 |M grad|^2
    lhs = (gx @ gx) + (gy @ gy) + (gz @ gz)
    assert lhs == pytest.approx(2 * g.mgrad6 @ g.mgrad6, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("s5", ["standard", "printed"])
def test_limit_constant(s5):
    assert energy_integral_limit(1.0, s5) == pytest.approx(
        float((sp.sqrt(3) / 2) ** 3) * s5_value(s5) * 16, rel=1e-15)
    q = quad_energy_integral_untruncated(1.0, s5=s5)
    assert q.value == pytest.approx(energy_integral_limit(1.0, s5), rel=1e-10)
    assert quad_energy_integral(ScatteringProfile(1.0, 1e4), s5=s5).value == pytest.approx(
        energy_integral_limit(1.0, s5), rel=1e-3)


def test_energy_integral_scales_as_a4():
    a1 = quad_energy_integral(ScatteringProfile(1.0, 10.0)).value
    a2 = quad_energy_integral(ScatteringProfile(2.0, 20.0)).value
    assert a2 == pytest.approx(16 * a1, rel=1e-10)


def test_quadrature_matches_cartesian_mc():
    p = ScatteringProfile(1.0, 3.0)
    est, err = mc_energy_integral(p, 400_000, seed=1)
    ref = quad_energy_integral(p).value
    assert abs(est - ref) < 5 * err


def test_excess_scales_as_inverse_fourth_power():
    ell = np.array([10, 20, 40, 80, 160.0])
    ex = np.array([energy_excess(ScatteringProfile(1.0, l)).value for l in ell])
    assert np.all(ex > 0)
    slope = np.polyfit(np.log(1 / ell), np.log(ex), 1)[0]
    assert abs(slope - 4) < 0.05
    direct = quad_energy_integral(ScatteringProfile(1.0, 10.0)).value - energy_integral_limit(1.0)
    assert ex[0] == pytest.approx(direct, rel=1e-6)


def test_u_integral_against_mc():
    p = ScatteringProfile(1.0, 3.0)
    rng = np.random.default_rng(5)
    half = math.sqrt(1.5) * p.ell
    n = 400_000
    v = rng.uniform(-half, half, size=(n, 6))
    vals = truncated_eval(v, p).u_ell * (2 * half) ** 6
    assert abs(vals.mean() - quad_u_integral(p).value) < 5 * vals.std() / math.sqrt(n)


def test_u_integral_exceeds_core_volume():
    p = ScatteringProfile(1.0, 10.0)
    core = METRIC.jacobian * math.pi**3 * (math.sqrt(2)) ** 6 / 6
    assert quad_u_integral(p).value > core
    assert quad_u_integral(ScatteringProfile(0.0, 1.0)).value == 0.0


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(atol=0)
    with pytest.raises(ValueError):
        QuadratureSpec(max_subdivisions=0)
