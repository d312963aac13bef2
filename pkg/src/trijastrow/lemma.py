"""Pointwise verification of the scattering-profile inequalities.

Each check draws random points, evaluates both sides and records the worst
witness.  Constants for the two envelope inequalities are computed from a
dense radial scan combined with the extreme singular values of ``M``; the
random sample then has to respect them, which makes a counterexample a real
failure rather than a refit.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import optimize

from . import _radial
from .metric import METRIC, SQRT2, hyperradius, metric_apply, triple_hyperradius
from .scattering import (
    ScatteringProfile, g_and_v, grad_f_ell, modified_laplacian_fd,
    particle_gradients, radial_profile, scattering_f, truncated_eval,
)

_CHUNK = 200_000
# bounds on |M^-1 y| / |y| and |M y| / |y|
_MINV_MAX = METRIC.eigenvalues_inverse[1]
_M_MAX = METRIC.eigenvalues[1]


def _radial_sup(fun, lo, hi, n=200_001):
    r = np.linspace(lo, hi, n)
    vals = fun(r)
    k = int(np.argmax(vals))
    best = vals[k]
    a, b = r[max(k - 1, 0)], r[min(k + 1, n - 1)]
    if b > a:
        res = optimize.minimize_scalar(lambda t: -fun(np.array([t]))[0],
                                       bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-14 * hi})
        best = max(best, -res.fun)
    return float(best)


def envelope_constants(p: ScatteringProfile) -> dict:
    """Constants for the gradient and ``u_l`` envelopes.

    Gradient: ``|grad f_l(x)| <= C a^4 / (l |x|^4)`` on ``C1 l <= |x| <= C2 l``.
    ``u_l``:  ``u_l(x) <= C a^4 / |x|^4`` on ``C1 a <= |x| <= C2 l``.

    The lower edge of the ``u_l`` window is necessarily 0 because ``u_l = 1``
    on the whole core, which contains the origin.
    """
    a, ell = p.a, p.ell
    r0 = np.nextafter(SQRT2 * a, np.inf)

    def grad_rad(r):
        _, F1, _ = radial_profile(r, p)
        return np.abs(F1) * r ** 4

    def u_rad(r):
        F, _, _ = radial_profile(r, p)
        return (1.0 - F * F) * r ** 4

    sup_grad = _radial_sup(grad_rad, r0, ell)
    sup_u = max(_radial_sup(u_rad, r0, ell), (SQRT2 * a) ** 4)
    safety = 1.0 + 1e-9
    return {
        "gradient": {
            "C": safety * _MINV_MAX * _M_MAX ** 4 * sup_grad * ell / a ** 4,
            "C1": a / ell,
            "C2": _M_MAX,
        },
        "u": {
            "C": safety * _M_MAX ** 4 * sup_u / a ** 4,
            "C1": 0.0,
            "C2": _M_MAX,
        },
    }


def _random_directions(rng, n, dim):
    z = rng.standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _sample_points(rng, n, p: ScatteringProfile):
    """6-vectors spread over core, near-core, cutoff annulus and beyond."""
    half = n // 2
    R = np.concatenate([
        rng.uniform(0.0, 1.2 * p.ell, half),
        np.exp(rng.uniform(np.log(0.1 * p.a), np.log(1.5 * p.ell), n - half)),
    ])
    y = _random_directions(rng, n, 6) * R[:, None]
    return metric_apply(y, "M")


def _witness(points, ratios, k):
    return {"point": [float(t) for t in points[k]], "ratio": float(ratios[k])}


def _check_gradient_bound(rng, n, p, consts):
    C, C1, C2 = consts["C"], consts["C1"], consts["C2"]
    a, ell = p.a, p.ell
    count = 0
    worst = None
    tight = {"C": 0.0, "C1": np.inf, "C2": 0.0}
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        v = _sample_points(rng, m, p)
        g = np.linalg.norm(grad_f_ell(v, p).grad6, axis=1)
        x = np.linalg.norm(v, axis=1)
        inside = (x >= C1 * ell) & (x <= C2 * ell)
        rhs = np.where(inside, C * a ** 4 / (ell * np.maximum(x, 1e-300) ** 4), 0.0)
        bad = g > rhs * (1.0 + 1e-12)
        count += int(bad.sum())
        ratio = np.where(g > 0, g / np.where(rhs > 0, rhs, np.inf), 0.0)
        ratio[bad & (rhs == 0)] = np.inf
        k = int(np.argmax(ratio))
        if worst is None or ratio[k] > worst["ratio"]:
            worst = _witness(v, ratio, k)
        nz = g > 0
        if nz.any():
            tight["C"] = max(tight["C"], float(np.max(g[nz] * x[nz] ** 4 * ell / a ** 4)))
            tight["C1"] = min(tight["C1"], float(np.min(x[nz]) / ell))
            tight["C2"] = max(tight["C2"], float(np.max(x[nz]) / ell))
        done += m
    return count, worst, tight


def _check_u_bound(rng, n, p, consts):
    C, C2 = consts["C"], consts["C2"]
    a, ell = p.a, p.ell
    count = 0
    negative = 0
    worst = None
    tight = {"C": 0.0, "C2": 0.0}
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        v = _sample_points(rng, m, p)
        u = truncated_eval(v, p).u_ell
        x = np.linalg.norm(v, axis=1)
        negative += int(np.sum(u < 0))
        with np.errstate(divide="ignore"):
            rhs = np.where(x <= C2 * ell, C * a ** 4 / x ** 4, 0.0)
        bad = u > rhs * (1.0 + 1e-12)
        count += int(bad.sum())
        ratio = np.where(u > 0, u / np.where(rhs > 0, rhs, np.inf), 0.0)
        ratio[bad & (rhs == 0)] = np.inf
        k = int(np.argmax(ratio))
        if worst is None or ratio[k] > worst["ratio"]:
            worst = _witness(v, ratio, k)
        nz = u > 0
        if nz.any():
            tight["C"] = max(tight["C"], float(np.max(u[nz] * x[nz] ** 4 / a ** 4)))
            tight["C2"] = max(tight["C2"], float(np.max(x[nz]) / ell))
        done += m
    return count + negative, worst, tight


def _check_g_lower_bound(rng, n, p):
    count = 0
    witness = None
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        rad = 2.0 * p.ell_tilde
        x1 = _random_directions(rng, m, 3) * (rad * rng.uniform(0, 1, m) ** (1 / 3))[:, None]
        x2 = _random_directions(rng, m, 3) * (rad * rng.uniform(0, 1, m) ** (1 / 3))[:, None]
        f = truncated_eval(np.concatenate([x1, x2], axis=1), p).f_ell
        g1, _ = g_and_v(x1, p)
        g2, _ = g_and_v(x2, p)
        bad = f < np.maximum(g1, g2)
        if bad.any() and witness is None:
            k = int(np.argmax(bad))
            witness = {"x1": x1[k].tolist(), "x2": x2[k].tolist(), "f": float(f[k])}
        count += int(bad.sum())
        done += m
    return count, witness


def _check_harmonicity(rng, n, a, h, tolerance):
    R = rng.uniform(2.0 * SQRT2 * a, 10.0 * a, n)
    y = _random_directions(rng, n, 6) * R[:, None]
    v = metric_apply(y, "M")
    res = np.abs(modified_laplacian_fd(v, a, h))
    k = int(np.argmax(res))
    return float(res[k]), bool(res[k] <= tolerance), v[k].tolist()


def _check_kinetic_identity(rng, n, p):
    scale = p.ell
    x = rng.uniform(-scale, scale, (n, 3))
    # relative coordinates drawn to cover the support
    v = _sample_points(rng, n, p)
    y = x - v[:, :3]
    z = x - v[:, 3:]
    v = np.concatenate([x - y, x - z], axis=1)
    R = hyperradius(v[:, :3], v[:, 3:])
    gx, gy, gz = particle_gradients(x, y, z, p, radius=R)
    lhs = np.sum(gx * gx + gy * gy + gz * gz, axis=1)
    mg = grad_f_ell(v, p).mgrad6
    rhs = 2.0 * np.sum(mg * mg, axis=1)
    denom = np.maximum(np.abs(rhs), 1e-300)
    rel = np.where((lhs == 0) & (rhs == 0), 0.0, np.abs(lhs - rhs) / denom)
    k = int(np.argmax(rel))
    return float(rel[k]), [x[k].tolist(), y[k].tolist(), z[k].tolist()]


def _check_symmetry(rng, n, p):
    scale = p.ell
    x, y, z = (rng.uniform(-scale, scale, (n, 3)) for _ in range(3))
    # swap of the two relative arguments, f(r2, r3) = f(r3, r2)
    f23 = truncated_eval(np.concatenate([x - y, x - z], axis=1), p).f_ell
    f32 = truncated_eval(np.concatenate([x - z, x - y], axis=1), p).f_ell
    swap_dev = float(np.max(np.abs(f23 - f32)))
    # relabelling of the triple, evaluated from positions
    base = triple_hyperradius(x, y, z)
    perm_dev = 0.0
    for q in ((x, z, y), (y, x, z), (y, z, x), (z, x, y), (z, y, x)):
        perm_dev = max(perm_dev, float(np.max(np.abs(triple_hyperradius(*q) - base))))
    # relabelling through 6D arguments: f(x-y, x-z) = f(y-x, y-z) = f(z-x, z-y)
    fy = truncated_eval(np.concatenate([y - x, y - z], axis=1), p).f_ell
    fz = truncated_eval(np.concatenate([z - x, z - y], axis=1), p).f_ell
    rel6 = float(max(np.max(np.abs(fy - f23)), np.max(np.abs(fz - f23))))
    return swap_dev, perm_dev, rel6


def lemma_suite(p: ScatteringProfile, sample_count: int, seed: int = 0,
                harmonic_count: int | None = None, fd_step: float | None = None,
                identity_count: int | None = None,
                symmetry_count: int | None = None) -> dict:
    """Run every pointwise check and return a JSON-serialisable report.

    ``sample_count`` points are used for each of the three inequalities;
    the harmonicity, kinetic-identity and symmetry checks default to smaller
    samples (``1e5``, ``1e5`` and ``1e4`` at most).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if p.a == 0:
        raise ValueError("the lemma suite needs a > 0")
    harmonic_count = harmonic_count or min(sample_count, 100_000)
    identity_count = identity_count or min(sample_count, 100_000)
    symmetry_count = symmetry_count or min(sample_count, 10_000)
    fd_step = fd_step if fd_step is not None else 1e-4 * p.a
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]

    consts = envelope_constants(p)
    report = {
        "profile": {"a": p.a, "ell": p.ell, "profile": p.profile},
        "sample_count": sample_count,
        "seed": seed,
        "checks": {},
    }
    checks = report["checks"]

    n_bad, worst, tight = _check_gradient_bound(streams[0], sample_count, p, consts["gradient"])
    checks["gradient_bound"] = {
        "status": "pass" if n_bad == 0 else "fail",
        "counterexamples": n_bad,
        "constants": consts["gradient"],
        "sample_tight": tight,
        "worst": worst,
        "note": "C grows like l/a: the gradient of the untruncated part near "
                "the core is not controlled by a^4/l.",
    }

    n_bad, worst, tight = _check_u_bound(streams[1], sample_count, p, consts["u"])
    checks["u_bound"] = {
        "status": "pass" if n_bad == 0 else "fail",
        "counterexamples": n_bad,
        "constants": consts["u"],
        "sample_tight": tight,
        "worst": worst,
        "note": "lower window edge forced to 0: u_l = 1 on the core.",
    }

    n_bad, witness = _check_g_lower_bound(streams[2], sample_count, p)
    checks["g_lower_bound"] = {
        "status": "pass" if n_bad == 0 else "fail",
        "counterexamples": n_bad,
        "witness": witness,
        "note": "implemented as f_l = 1 when |M^-1 (x1, x2)| >= l "
                "(non-inverted reading).",
    }

    tol = 1e-4 / p.a ** 2
    resid, ok, where = _check_harmonicity(streams[3], harmonic_count, p.a, fd_step, tol)
    checks["harmonicity"] = {
        "status": "pass" if ok else "fail",
        "max_residual": resid,
        "tolerance": tol,
        "fd_step": fd_step,
        "points": harmonic_count,
        "worst": where,
    }

    rel, where = _check_kinetic_identity(streams[4], identity_count, p)
    checks["kinetic_identity"] = {
        "status": "pass" if rel <= 1e-10 else "fail",
        "max_relative_deviation": rel,
        "tolerance": 1e-10,
        "points": identity_count,
        "worst": where,
    }

    swap_dev, perm_dev, rel6 = _check_symmetry(streams[5], symmetry_count, p)
    checks["symmetry"] = {
        "status": "pass" if swap_dev == 0 and perm_dev == 0 and rel6 <= 1e-12 else "fail",
        "argument_swap_max_deviation": swap_dev,
        "relabel_positions_max_deviation": perm_dev,
        "relabel_relative_args_max_deviation": rel6,
        "points": symmetry_count,
    }

    report["passed"] = all(c["status"] == "pass" for c in checks.values())
    return report


def merge_reports(reports: list[dict]) -> dict:
    """Combine shard reports of the same profile (associative, commutative)."""
    if not reports:
        raise ValueError("nothing to merge")
    out = {
        "profile": reports[0]["profile"],
        "sample_count": sum(r["sample_count"] for r in reports),
        "seed": [r["seed"] for r in reports],
        "checks": {},
    }
    for name in reports[0]["checks"]:
        parts = [r["checks"][name] for r in reports]
        merged = dict(parts[0])
        if "counterexamples" in merged:
            merged["counterexamples"] = sum(c["counterexamples"] for c in parts)
        for key in ("max_residual", "max_relative_deviation",
                    "argument_swap_max_deviation",
                    "relabel_positions_max_deviation",
                    "relabel_relative_args_max_deviation"):
            if key in merged:
                merged[key] = max(c[key] for c in parts)
        if "worst" in merged and isinstance(merged["worst"], dict):
            merged["worst"] = max((c["worst"] for c in parts), key=lambda w: w["ratio"])
        if "sample_tight" in merged:
            tight = {}
            for k in merged["sample_tight"]:
                vals = [c["sample_tight"][k] for c in parts]
                tight[k] = min(vals) if k == "C1" else max(vals)
            merged["sample_tight"] = tight
        merged["status"] = "pass" if all(c["status"] == "pass" for c in parts) else "fail"
        out["checks"][name] = merged
    out["passed"] = all(c["status"] == "pass" for c in out["checks"].values())
    return out
