import json
import math

import numpy as np
import pytest

from trijastrow.estimators import FitRefused
from trijastrow.mc import ChainAccumulators, McParams, run_chains
from trijastrow.metric import BoxGeometry
from trijastrow.model import build_configuration
from trijastrow.observables import (HALF_B_M, THEOREM_CONSTANT, EnergyEstimate, SweepPoint,
                                    analyse_sweep, constant_ratio_report, ell_rule,
                                    energy_from_chains, finite_size_extrapolation, fit_nu,
                                    leading_order_reference)
from trijastrow.scattering import ScatteringProfile, quad_energy_integral

P = ScatteringProfile(0.2, 1.0)


@pytest.fixture(scope="module")
def dense():
    box = BoxGeometry(2.6, True)
    c = build_configuration(20, box, P)
    return box, run_chains(c, McParams(800, 100, 0.3, seed=1, chains=2))


def test_constants():
    assert THEOREM_CONSTANT == pytest.approx(20.26033, rel=1e-6)
    assert HALF_B_M == pytest.approx(3 * THEOREM_CONSTANT, rel=1e-15)


def test_channel_sums(dense):
    box, acc = dense
    for est in ("gradient", "laplacian"):
        e = energy_from_chains(acc, 20, box, P, est)
        assert e.e == pytest.approx(e.e1 + e.e2 + e.e3, rel=1e-10)
        assert e.rho == pytest.approx(20 / 2.6**3)
        assert e.samples == 1400 and e.estimator == est
    g = energy_from_chains(acc, 20, box, P, "gradient")
    assert g.e == g.e_gradient
    assert energy_from_chains(acc, 20, box, P).estimator == "laplacian"
    json.dumps(g.to_dict())


def test_laplacian_and_gradient_forms_agree(dense):
    box, _ = dense
    c = build_configuration(20, box, P)
    acc = run_chains(c, McParams(6000, 200, 0.3, seed=2, chains=2))
    lap = energy_from_chains(acc, 20, box, P, "laplacian")
    grad = energy_from_chains(acc, 20, box, P, "gradient")
    assert abs(lap.e - grad.e) < 4 * math.hypot(lap.stderr, grad.stderr)


def test_estimator_validation(dense):
    box, acc = dense
    with pytest.raises(ValueError):
        energy_from_chains(acc, 20, box, P, "other")
    with pytest.raises(ValueError):
        energy_from_chains(acc, 20, BoxGeometry(2.6, False), P, "laplacian")
    with pytest.raises(ValueError):
        energy_from_chains(ChainAccumulators(), 20, box, P)


def test_leading_order_reference():
    p = ScatteringProfile(1.0, 10.0)
    assert leading_order_reference(p, 1e-3) == pytest.approx(
        1e-6 / 3 * quad_energy_integral(p).value, rel=1e-15)
    assert leading_order_reference(ScatteringProfile(0.0, 1.0), 1.0) == 0.0


def test_constant_report_ratios():
    rows = constant_ratio_report(None, ScatteringProfile(1.0, 10.0))
    by = {r["s5"]: r for r in rows}
    std = by["standard"]
    # symbolic: (3 sqrt 3 / 8) pi^3 16 / 3 = 2 sqrt 3 pi^3
    assert std["quad_constant_limit"] == pytest.approx(2 * math.sqrt(3) * math.pi**3)
    assert std["limit_over_theorem"] == pytest.approx(9 * math.pi / 16 * 3, rel=1e-12)
    assert std["limit_over_half_b_M"] == pytest.approx(9 * math.pi / 16, rel=1e-12)
    assert by["printed"]["limit_over_theorem"] == pytest.approx(4.5, rel=1e-12)
    assert by["printed"]["limit_over_half_b_M"] == pytest.approx(1.5, rel=1e-12)
    assert std["measured_constant"] is None


def test_fit_nu_and_refusal():
    x = np.logspace(-5, -3.5, 5)
    fit = fit_nu(x, 0.3 * x ** (4 / 7), 0.01 * x ** (4 / 7), n_boot=200)
    assert fit.slope == pytest.approx(4 / 7, abs=0.02)
    assert fit.ci_low <= 4 / 7 <= fit.ci_high and fit.points == 5
    with pytest.raises(FitRefused):
        fit_nu(x, np.full(5, 1e-6), np.full(5, 1e-5))


def test_finite_size_wrapper():
    n = np.array([64, 128, 256, 512.0])
    r = finite_size_extrapolation(n, 1 + 2 / n, np.full(4, 1e-4))
    assert r.e_inf == pytest.approx(1.0, abs=1e-8)
    r = finite_size_extrapolation(n, 1 + 2 * n ** (-1 / 3), np.full(4, 1e-4), periodic=False)
    assert r.e_inf == pytest.approx(1.0, abs=1e-8)


def test_ell_rule():
    assert ell_rule(1.0, 1e-7) == pytest.approx(10.0)
    assert ell_rule(2.0, 1e-7) == pytest.approx(20.0)


def _fake_point(rho, ratio):
    e1 = 1.0
    est = EnergyEstimate(e=e1 * (1 + ratio), stderr=0.01, e1=e1, e1_stderr=0.01,
                         e2=ratio / 2, e2_stderr=0.01 * ratio, e3=ratio / 2,
                         e3_stderr=0.01 * ratio, e_gradient=1.0, e_gradient_stderr=0.01,
                         n=64, length=10.0, rho=0.064, a=1.0, ell=ell_rule(1.0, rho),
                         periodic=True, estimator="laplacian", samples=100,
                         acceptance=0.5, converged=True)
    return SweepPoint(rho, ell_rule(1.0, rho), 64, 10.0, est, e1 * (1 + ratio) / 1.1)


def test_analyse_sweep_synthetic():
    rhos = np.logspace(-5, -3.5, 5)
    pts = [_fake_point(r, 2.0 * r ** (4 / 7)) for r in rhos]
    res = analyse_sweep(pts[::-1], n_boot=200)
    assert [p.rho_a3 for p in res.points] == sorted(rhos)
    assert res.nu_channel.slope == pytest.approx(4 / 7, abs=1e-6)
    assert res.nu_relative is None or res.nu_relative_error is None
    d = json.loads(res.to_json())
    assert len(d["points"]) == 5 and d["constants"]
    lines = res.to_csv().splitlines()
    assert lines[0] == "rho_a3,ell_over_a,N,L,e,stderr,e1,e2,e3,e_ref,ratio"
    assert len(lines) == 6
