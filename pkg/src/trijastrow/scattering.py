"""Explicit three-body scattering solution, its truncation and radial integrals.

The scattering solution is radial in ``M^-1`` coordinates,
``f(v) = 1 - 4 a^4 / |M^-1 v|^4`` outside the core ``|M^-1 v| <= sqrt(2) a``
and 0 inside.  The truncated factor is ``f_l = 1 - chi(|M^-1 v| / l) (1 - f)``.
All six-dimensional integrals reduce to one-dimensional radial quadratures
``jacobian * S5 * int r^5 (...) dr``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

from . import _radial
from .metric import METRIC, SQRT2, hyperradius, metric_apply, split6

#: surface area of the unit sphere in R^6 under each setting
S5_SETTINGS = {
    "standard": math.pi ** 3,
    "printed": 8.0 * math.pi ** 2 / 3.0,
}


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, estimate, error):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class ScatteringProfile:
    """Hard-core radius ``a``, cutoff length ``ell`` and cutoff shape.

    ``ell`` must exceed ``2 sqrt(2) a``: below that the cutoff reaches into
    the core and the truncated factor no longer vanishes there.  ``a = 0``
    is accepted and describes the free gas (``f_l == 1``).
    """

    a: float
    ell: float
    profile: str = "smooth"

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a >= 0):
            raise ValueError(f"hard-core radius must be >= 0, got {self.a!r}")
        if not (np.isfinite(self.ell) and self.ell > 0):
            raise ValueError(f"cutoff length must be positive, got {self.ell!r}")
        if self.profile not in _radial.PROFILE_IDS:
            raise ValueError(f"unknown cutoff profile {self.profile!r}")
        if self.a > 0 and self.a >= self.ell:
            raise ValueError(
                f"need ell in (a, L): got a={self.a!r} >= ell={self.ell!r}")
        if self.a > 0 and self.ell < 2.0 * SQRT2 * self.a:
            raise ValueError(
                f"ell={self.ell!r} < 2*sqrt(2)*a={2 * SQRT2 * self.a!r}: "
                "cutoff would overlap the hard core")

    @property
    def ell_tilde(self) -> float:
        return math.sqrt(1.5) * self.ell

    @property
    def core_radius(self) -> float:
        """Hyperradius of the core boundary, ``sqrt(2) a``."""
        return SQRT2 * self.a

    @property
    def profile_id(self) -> int:
        return _radial.PROFILE_IDS[self.profile]


@dataclass(frozen=True)
class QuadratureSpec:
    atol: float = 1e-15
    rtol: float = 1e-12
    max_subdivisions: int = 200

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


class Integral(NamedTuple):
    value: float
    error: float


class TruncatedValues(NamedTuple):
    f_ell: np.ndarray
    omega_ell: np.ndarray
    u_ell: np.ndarray


class Gradient(NamedTuple):
    grad6: np.ndarray
    mgrad6: np.ndarray
    grad_particle1: np.ndarray


def _radius(v):
    r2, r3 = split6(v)
    return hyperradius(r2, r3)


def s5_value(setting: str = "standard") -> float:
    try:
        return S5_SETTINGS[setting]
    except KeyError:
        raise ValueError(f"unknown S5 setting {setting!r}") from None


# ---------------------------------------------------------------- pointwise

def scattering_f(v, a: float):
    """Untruncated scattering solution at 6-vectors ``v``."""
    R = np.atleast_1d(_radius(v))
    F, _, _ = _radial.untruncated_array(R, float(a))
    return F.reshape(np.shape(_radius(v)))


def cutoff_chi(v, ell: float, profile: str = "smooth"):
    R = np.atleast_1d(_radius(v))
    c, _, _ = _radial.chi_array(R / ell, _radial.PROFILE_IDS[profile])
    return c.reshape(np.shape(_radius(v)))


def radial_profile(R, p: ScatteringProfile):
    """``(F, F', F'')`` of the truncated factor as functions of hyperradius."""
    R = np.asarray(R, dtype=float)
    F, F1, F2 = _radial.profile_array(np.atleast_1d(R), p.a, p.ell, p.profile_id)
    return F.reshape(R.shape), F1.reshape(R.shape), F2.reshape(R.shape)


def truncated_eval(v, p: ScatteringProfile) -> TruncatedValues:
    F, _, _ = radial_profile(_radius(v), p)
    omega = 1.0 - F
    return TruncatedValues(F, omega, 1.0 - F * F)


def grad_f_ell(v, p: ScatteringProfile) -> Gradient:
    """Analytic gradient of ``f_l`` at 6-vectors ``v`` of shape ``(..., 6)``.

    ``grad6`` is the plain gradient, ``mgrad6 = M grad6`` and
    ``grad_particle1`` is the gradient with respect to the first particle of
    the triple, ``d/dr2 + d/dr3``.
    """
    v = np.asarray(v, dtype=float)
    R = _radius(v)
    _, F1, _ = radial_profile(R, p)
    scale = np.divide(F1, R, out=np.zeros_like(F1), where=R > 0)[..., None]
    y = metric_apply(v, "M_inverse")
    mgrad = scale * y
    grad = metric_apply(mgrad, "M_inverse")
    g2, g3 = split6(grad)
    return Gradient(grad, mgrad, g2 + g3)


def modified_laplacian(v, p: ScatteringProfile):
    """``div(M^2 grad f_l)``, i.e. the radial Laplacian ``F'' + 5 F'/R`` in R^6."""
    R = _radius(v)
    _, F1, F2 = radial_profile(R, p)
    return F2 + 5.0 * np.divide(F1, R, out=np.zeros_like(F1), where=R > 0)


def particle_gradients(x, y, z, p: ScatteringProfile, radius=None):
    """Gradients of ``f_l(x - y, x - z)`` with respect to each of ``x, y, z``.

    Evaluated through the symmetric form ``R^2 = (2/3) sum |pair|^2`` rather
    than through ``M``; used to cross-check the kinetic identity.  A
    precomputed hyperradius may be passed so two evaluation paths share the
    same radial factor.
    """
    x, y, z = (np.asarray(q, dtype=float) for q in (x, y, z))
    dxy, dxz, dyz = x - y, x - z, y - z
    if radius is None:
        R = np.sqrt((2.0 / 3.0) * (np.sum(dxy * dxy, -1) + np.sum(dxz * dxz, -1)
                                    + np.sum(dyz * dyz, -1)))
    else:
        R = np.asarray(radius, dtype=float)
    _, F1, _ = radial_profile(R, p)
    c = (2.0 / 3.0) * np.divide(F1, R, out=np.zeros_like(F1), where=R > 0)
    c = c[..., None]
    return c * (dxy + dxz), c * (dyz - dxy), c * (-dxz - dyz)


def g_and_v(x, p: ScatteringProfile):
    """``g_l = 1{|x| >= l_tilde}`` and ``v_l = 1 - g_l`` for 3-vectors."""
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    g = (r >= p.ell_tilde).astype(float)
    return g, 1.0 - g


def modified_laplacian_fd(v, a: float, h: float):
    """Central-difference ``div(M^2 grad f)`` of the untruncated solution.

    ``M^2`` has eigenvalue 3/2 on the directions ``(e_k, e_k)/sqrt(2)`` and
    1/2 on ``(e_k, -e_k)/sqrt(2)``; the operator is the weighted sum of the
    six second directional derivatives.
    """
    v = np.asarray(v, dtype=float).reshape(-1, 6)
    f0 = scattering_f(v, a)
    out = np.zeros(len(v))
    for k in range(3):
        for weight, sign in ((1.5, 1.0), (0.5, -1.0)):
            q = np.zeros(6)
            q[k] = 1.0 / SQRT2
            q[3 + k] = sign / SQRT2
            fp = scattering_f(v + h * q, a)
            fm = scattering_f(v - h * q, a)
            out += weight * ((fp - f0) + (fm - f0)) / (h * h)
    return out


# ---------------------------------------------------------------- integrals

def _quad(fun, lo, hi, q: QuadratureSpec):
    if hi <= lo:
        return 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(fun, lo, hi, epsabs=q.atol, epsrel=q.rtol,
                             limit=q.max_subdivisions, full_output=1)
    value, error, info = res[0], res[1], res[2]
    if len(res) > 3 and res[3]:
        tol = max(q.atol, q.rtol * abs(value))
        if not error <= 10.0 * tol:
            raise QuadratureError(
                f"radial quadrature on [{lo}, {hi}] did not converge "
                f"(estimate {value!r} +- {error!r})", value, error)
    return value, error


def _scalar_profile(p: ScatteringProfile):
    a, ell, pid = p.a, p.ell, p.profile_id
    return lambda r: _radial.profile_derivs(r, a, ell, pid)


def _breakpoints(p: ScatteringProfile):
    return [p.core_radius, 0.5 * p.ell, p.ell]


def radial_energy_integral(p: ScatteringProfile, q: QuadratureSpec | None = None):
    """``int r^5 F'(r)^2 dr`` over the support of the gradient."""
    q = q or QuadratureSpec()
    if p.a == 0:
        return Integral(0.0, 0.0)
    prof = _scalar_profile(p)
    fun = lambda r: r ** 5 * prof(r)[1] ** 2  # noqa: E731
    pts = _breakpoints(p)
    total, err = 0.0, 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        v, e = _quad(fun, lo, hi, q)
        total += v
        err += e
    return Integral(total, err)


def quad_energy_integral(p: ScatteringProfile, q: QuadratureSpec | None = None,
                         s5: str = "standard") -> Integral:
    """``int_{R^6} |M grad f_l|^2`` by radial quadrature."""
    r = radial_energy_integral(p, q)
    scale = METRIC.jacobian * s5_value(s5)
    return Integral(scale * r.value, scale * r.error)


def energy_integral_limit(a: float, s5: str = "standard") -> float:
    """Closed form of the untruncated integral, ``jacobian * S5 * 16 a^4``."""
    return METRIC.jacobian * s5_value(s5) * 16.0 * a ** 4


def quad_energy_integral_untruncated(a: float, q: QuadratureSpec | None = None,
                                     s5: str = "standard") -> Integral:
    """Untruncated integral by quadrature out to infinity."""
    q = q or QuadratureSpec()
    if a == 0:
        return Integral(0.0, 0.0)
    fun = lambda r: r ** 5 * _radial.untruncated_derivs(r, a)[1] ** 2  # noqa: E731
    v, e = _quad(fun, SQRT2 * a, np.inf, q)
    scale = METRIC.jacobian * s5_value(s5)
    return Integral(scale * v, scale * e)


def energy_excess(p: ScatteringProfile, q: QuadratureSpec | None = None,
                  s5: str = "standard") -> Integral:
    """Truncated minus untruncated energy integral.

    Both share the integrand on ``[sqrt(2) a, l/2]``, so only the tails are
    integrated; this keeps the difference accurate when it is tiny.
    """
    q = q or QuadratureSpec()
    if p.a == 0:
        return Integral(0.0, 0.0)
    prof = _scalar_profile(p)
    a = p.a
    trunc, e1 = _quad(lambda r: r ** 5 * prof(r)[1] ** 2, 0.5 * p.ell, p.ell, q)
    # int_{l/2}^inf r^5 (16 a^4 / r^5)^2 dr
    tail = 64.0 * a ** 8 / (0.5 * p.ell) ** 4
    scale = METRIC.jacobian * s5_value(s5)
    return Integral(scale * (trunc - tail), scale * e1)


def quad_u_integral(p: ScatteringProfile, q: QuadratureSpec | None = None,
                    s5: str = "standard") -> Integral:
    """``int_{R^6} u_l`` with ``u_l = 1 - f_l^2``."""
    q = q or QuadratureSpec()
    if p.a == 0:
        return Integral(0.0, 0.0)
    prof = _scalar_profile(p)

    def fun(r):
        F = prof(r)[0]
        return r ** 5 * (1.0 - F * F)

    pts = [0.0] + _breakpoints(p)
    total, err = 0.0, 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        v, e = _quad(fun, lo, hi, q)
        total += v
        err += e
    scale = METRIC.jacobian * s5_value(s5)
    return Integral(scale * total, scale * err)


def v_integral(p: ScatteringProfile) -> float:
    """``int_{R^3} v_l``: volume of the ball of radius ``l_tilde``."""
    return 4.0 * math.pi / 3.0 * p.ell_tilde ** 3


def mc_energy_integral(p: ScatteringProfile, n: int, seed: int = 0):
    """Plain Monte Carlo over a 6D box enclosing the support (low precision).

    Returns ``(estimate, standard_error)``.  Independent of the radial
    reduction: points are uniform in Cartesian ``(r2, r3)``.
    """
    rng = np.random.default_rng(seed)
    half = math.sqrt(1.5) * p.ell  # |v| <= ||M|| * l
    volume = (2.0 * half) ** 6
    chunk = 200_000
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        v = rng.uniform(-half, half, size=(m, 6))
        g = grad_f_ell(v, p).mgrad6
        val = np.einsum("ij,ij->i", g, g)
        total += val.sum()
        total_sq += (val * val).sum()
        done += m
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return volume * mean, volume * math.sqrt(var / n)
