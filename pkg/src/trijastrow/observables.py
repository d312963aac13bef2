"""Energy estimates from chains, quadrature references and density sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .blocking import BlockingWarning, blocking_error_sparse, combine
from .estimators import FiniteSizeExtrapolator, FitRefused, PowerLawFit
from .mc import COLUMNS, ChainAccumulators, McParams, run_chains, tune_step
from .metric import BoxGeometry
from .model import build_configuration
from .scattering import (QuadratureSpec, S5_SETTINGS, ScatteringProfile,
                         energy_integral_limit, quad_energy_integral)

THEOREM_CONSTANT = 32.0 * math.pi ** 2 / (9.0 * math.sqrt(3.0))
HALF_B_M = 32.0 * math.pi ** 2 / (3.0 * math.sqrt(3.0))

#: linear combinations of recorded channels, per estimator
_CHANNELS = {
    "gradient": {
        "e": {"T": 1.0},
        "e1": {"T_diag": 1.0},
        "e2": {"T_share": 1.0},
        "e3": {"T_disj": 1.0},
    },
    "laplacian": {
        "e": {"L_diag": 1.0, "T_share": -1.0, "T_disj": -1.0},
        "e1": {"L_diag": 1.0, "T_share": -2.0, "T_disj": -2.0},
        "e2": {"T_share": 1.0},
        "e3": {"T_disj": 1.0},
    },
}


@dataclass(frozen=True)
class EnergyEstimate:
    """Energy per particle and its channel split, with blocking errors.

    ``e = e1 + e2 + e3`` holds sample by sample.  ``estimator`` names the
    form used for ``e`` and ``e1``; ``e_gradient`` always holds the plain
    ``mean(T)/N`` for comparison.
    """

    e: float
    stderr: float
    e1: float
    e1_stderr: float
    e2: float
    e2_stderr: float
    e3: float
    e3_stderr: float
    e_gradient: float
    e_gradient_stderr: float
    n: int
    length: float
    rho: float
    a: float
    ell: float
    periodic: bool
    estimator: str
    samples: int
    acceptance: float
    converged: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _combo(acc: ChainAccumulators, weights: dict, chain: int):
    """Sparse series of a linear combination of channels for one chain."""
    rows = acc.rows[chain]
    vals = np.zeros(rows.shape[0])
    for name, w in weights.items():
        vals = vals + w * rows[:, 2 + COLUMNS.index(name)]
    return rows[:, 0].astype(np.int64), vals, acc.n_records[chain]


def _estimate(acc: ChainAccumulators, weights: dict):
    results = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BlockingWarning)
        for c in range(len(acc.rows)):
            pos, val, n = _combo(acc, weights, c)
            results.append(blocking_error_sparse(pos, val, n))
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=3)
    return combine(results, acc.n_records)


def energy_from_chains(acc: ChainAccumulators, n: int, box: BoxGeometry,
                       profile: ScatteringProfile, estimator: str = "auto") -> EnergyEstimate:
    """Energy per particle from merged chains.

    ``estimator="auto"`` uses the local-energy (Laplacian) form in periodic
    boxes, where it has finite variance, and the gradient form in open
    boxes, where the wall would add a surface term to the Laplacian form.
    """
    if acc.n_samples == 0:
        raise ValueError("no post-burn-in samples")
    if estimator == "auto":
        estimator = "laplacian" if box.periodic else "gradient"
    if estimator not in _CHANNELS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if estimator == "laplacian" and not box.periodic:
        raise ValueError("the Laplacian form is only valid in periodic boxes")
    res = {k: _estimate(acc, w) for k, w in _CHANNELS[estimator].items()}
    grad = _estimate(acc, {"T": 1.0}) if estimator != "gradient" else res["e"]
    scale = 1.0 / n if n else 0.0
    return EnergyEstimate(
        e=res["e"].mean * scale, stderr=res["e"].stderr * scale,
        e1=res["e1"].mean * scale, e1_stderr=res["e1"].stderr * scale,
        e2=res["e2"].mean * scale, e2_stderr=res["e2"].stderr * scale,
        e3=res["e3"].mean * scale, e3_stderr=res["e3"].stderr * scale,
        e_gradient=grad.mean * scale, e_gradient_stderr=grad.stderr * scale,
        n=n, length=box.length, rho=n / box.volume, a=profile.a, ell=profile.ell,
        periodic=box.periodic, estimator=estimator, samples=acc.n_samples,
        acceptance=acc.acceptance,
        converged=all(r.converged for r in res.values()) and grad.converged)


def leading_order_reference(p: ScatteringProfile, rho: float,
                            q: QuadratureSpec | None = None, s5: str = "standard") -> float:
    """``(rho^2 / 3) int |M grad f_l|^2``: the same-triple energy to leading order."""
    if p.a == 0:
        return 0.0
    return rho * rho / 3.0 * quad_energy_integral(p, q, s5).value


def constant_ratio_report(e: EnergyEstimate | None, p: ScatteringProfile,
                          q: QuadratureSpec | None = None) -> list[dict]:
    """One row per S5 setting comparing quadrature and measured constants.

    Columns: the theorem constant ``32 pi^2 / (9 sqrt 3)``, ``b_M / 2``,
    the quadrature constant ``int |M grad f|^2 / (3 a^4)`` at the given
    ``l`` and in the limit ``l -> inf``, the measured ``e / (rho^2 a^4)``,
    and ratios.  Ratios with a zero denominator are reported as ``None``.
    """
    rows = []
    measured = None
    if e is not None and p.a > 0 and e.rho > 0:
        measured = e.e / (e.rho ** 2 * p.a ** 4)
    for s5 in S5_SETTINGS:
        if p.a > 0:
            at_ell = quad_energy_integral(p, q, s5).value / (3.0 * p.a ** 4)
            limit = energy_integral_limit(p.a, s5) / (3.0 * p.a ** 4)
        else:
            at_ell = limit = None

        def ratio(x, y):
            return None if x is None or y in (None, 0) else x / y

        rows.append({
            "s5": s5,
            "theorem_constant": THEOREM_CONSTANT,
            "half_b_M": HALF_B_M,
            "quad_constant_at_ell": at_ell,
            "quad_constant_limit": limit,
            "measured_constant": measured,
            "limit_over_theorem": ratio(limit, THEOREM_CONSTANT),
            "limit_over_half_b_M": ratio(limit, HALF_B_M),
            "measured_over_quad_at_ell": ratio(measured, at_ell),
            "measured_over_theorem": ratio(measured, THEOREM_CONSTANT),
        })
    return rows


@dataclass(frozen=True)
class NuFit:
    slope: float
    ci_low: float
    ci_high: float
    intercept: float
    points: int


def fit_nu(rho_a3, values, stderr=None, n_boot=2000, seed=0) -> NuFit:
    """Slope of ``log values`` against ``log rho a^3`` with a bootstrap CI.

    Needs at least four points spanning 1.5 decades.  If every value is
    within two standard errors of zero the fit is refused.
    """
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise FitRefused("undefined value at some density (no active triples sampled)")
    if stderr is not None:
        se = np.asarray(stderr, dtype=float)
        if v.size and np.all(np.abs(v) <= 2.0 * se):
            raise FitRefused("correction consistent with zero at every point")
    est = PowerLawFit(n_boot=n_boot, random_state=seed).fit(rho_a3, v, stderr)
    return NuFit(est.slope_, est.slope_ci_[0], est.slope_ci_[1], est.intercept_,
                 int(np.size(v)))


@dataclass(frozen=True)
class FiniteSizeResult:
    e_inf: float
    stderr: float
    ci_low: float
    ci_high: float
    slope: float
    mismatch: bool


def finite_size_extrapolation(n_values, e_values, stderr=None,
                              periodic: bool = True) -> FiniteSizeResult:
    """Fit ``e_inf + c/N`` (periodic) or ``e_inf + c/N^(1/3)`` (open)."""
    est = FiniteSizeExtrapolator(power=1.0 if periodic else 1.0 / 3.0)
    est.fit(n_values, e_values, stderr)
    return FiniteSizeResult(est.e_inf_, est.e_inf_stderr_, est.e_inf_ci_[0],
                            est.e_inf_ci_[1], est.slope_, est.mismatch_)


# ---------------------------------------------------------------- sweeps

def ell_rule(a: float, rho_a3: float) -> float:
    return a * rho_a3 ** (-1.0 / 7.0)


@dataclass(frozen=True)
class SweepPoint:
    rho_a3: float
    ell_over_a: float
    n: int
    length: float
    estimate: EnergyEstimate
    e_ref: float

    @property
    def channel_ratio(self):
        e = self.estimate
        if e.e1 == 0:
            return math.nan, math.nan
        r = (e.e2 + e.e3) / e.e1
        err = abs(r) * math.sqrt(((e.e2_stderr ** 2 + e.e3_stderr ** 2)
                                  / max((e.e2 + e.e3) ** 2, 1e-300))
                                 + (e.e1_stderr / e.e1) ** 2)
        return r, err

    @property
    def relative_correction(self):
        e = self.estimate
        if self.e_ref == 0:
            return math.nan, math.nan
        return e.e / self.e_ref - 1.0, e.stderr / self.e_ref


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


@dataclass
class SweepResult:
    points: list
    nu_channel: NuFit | None = None
    nu_channel_error: str | None = None
    nu_relative: NuFit | None = None
    nu_relative_error: str | None = None
    constants: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "points": [{
                "rho_a3": pt.rho_a3, "ell_over_a": pt.ell_over_a, "N": pt.n,
                "L": pt.length, "e_ref": pt.e_ref,
                "channel_ratio": _finite_or_none(pt.channel_ratio[0]),
                "channel_ratio_stderr": _finite_or_none(pt.channel_ratio[1]),
                "estimate": pt.estimate.to_dict(),
            } for pt in self.points],
            "nu_channel": asdict(self.nu_channel) if self.nu_channel else None,
            "nu_channel_error": self.nu_channel_error,
            "nu_relative": asdict(self.nu_relative) if self.nu_relative else None,
            "nu_relative_error": self.nu_relative_error,
            "constants": self.constants,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho_a3", "ell_over_a", "N", "L", "e", "stderr", "e1", "e2", "e3",
                    "e_ref", "ratio"])
        for pt in self.points:
            e = pt.estimate
            w.writerow([repr(v) for v in (pt.rho_a3, pt.ell_over_a)] + [pt.n]
                       + [repr(float(v)) for v in (pt.length, e.e, e.stderr, e.e1, e.e2,
                                                   e.e3, pt.e_ref, e.e / pt.e_ref)])
        return buf.getvalue()


def run_sweep_point(rho_a3: float, a: float, n: int, sweeps: int, burn_in: int,
                    seed: int, chains: int = 1, periodic: bool = True,
                    profile: str = "smooth", step: float | None = None,
                    q: QuadratureSpec | None = None, threads: int = 1,
                    estimator: str = "auto") -> SweepPoint:
    """Sample one density with the ``l``-rule and compare with quadrature."""
    ell = ell_rule(a, rho_a3)
    length = (n * a ** 3 / rho_a3) ** (1.0 / 3.0)
    p = ScatteringProfile(a, ell, profile)
    box = BoxGeometry(length, periodic)
    c0 = build_configuration(n, box, p)
    if step is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            step = tune_step(c0, McParams(2, 0, 1.0, seed=seed)).step
    mc = McParams(sweeps, burn_in, step, seed=seed, chains=chains)
    acc = run_chains(c0, mc, threads=threads)
    est = energy_from_chains(acc, n, box, p, estimator)
    return SweepPoint(rho_a3, ell / a, n, length, est,
                      leading_order_reference(p, n / box.volume, q))


def analyse_sweep(points, n_boot=2000, seed=0) -> SweepResult:
    """Fit both correction exponents and tabulate constants."""
    pts = sorted(points, key=lambda pt: pt.rho_a3)
    res = SweepResult(pts)
    x = [pt.rho_a3 for pt in pts]
    for attr, name in (("channel_ratio", "nu_channel"),
                       ("relative_correction", "nu_relative")):
        vals = [getattr(pt, attr) for pt in pts]
        try:
            fit = fit_nu(x, [v[0] for v in vals], [v[1] for v in vals], n_boot, seed)
            setattr(res, name, fit)
        except FitRefused as exc:
            setattr(res, name + "_error", str(exc))
    if pts:
        mid = pts[len(pts) // 2]
        res.constants = constant_ratio_report(
            mid.estimate, ScatteringProfile(mid.estimate.a, mid.estimate.ell))
    return res
