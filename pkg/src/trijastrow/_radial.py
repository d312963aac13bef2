"""Radial profiles in ``M^-1`` coordinates, compiled with numba.

Everything the Jastrow factor needs reduces to a function of the hyperradius
``R = |M^-1 v|``: the truncated profile ``F(R) = 1 - chi(R/l) * w(R)`` with
``w(R) = 4 a^4 / R^4`` outside the core, and its first two derivatives.
"""
import math

import numpy as np
from numba import njit

SMOOTH = 0
QUINTIC = 1
PROFILE_IDS = {"smooth": SMOOTH, "quintic": QUINTIC}


@njit(cache=True)
def chi_derivs(s, profile):
    """Cutoff ``chi(s)`` with derivatives; 1 on ``[0, 1/2]``, 0 on ``[1, inf)``."""
    if s <= 0.5:
        return 1.0, 0.0, 0.0
    if s >= 1.0:
        return 0.0, 0.0, 0.0
    if profile == QUINTIC:
        t = 2.0 * s - 1.0
        c = 1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        c1 = -60.0 * t * t * (1.0 - t) * (1.0 - t)
        c2 = -240.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
        return c, c1, c2
    # partition of unity built from exp(-1/t)
    t1 = 1.0 - s
    t2 = s - 0.5
    A = math.exp(-1.0 / t1)
    B = math.exp(-1.0 / t2)
    Ap = -A / (t1 * t1)
    Bp = B / (t2 * t2)
    App = A * (1.0 / t1 ** 4 - 2.0 / t1 ** 3)
    Bpp = B * (1.0 / t2 ** 4 - 2.0 / t2 ** 3)
    D = A + B
    num = Ap * B - A * Bp
    c = A / D
    c1 = num / (D * D)
    c2 = (App * B - A * Bpp) / (D * D) - 2.0 * num * (Ap + Bp) / (D * D * D)
    return c, c1, c2


@njit(cache=True)
def profile_derivs(R, a, ell, profile):
    """``(F, F', F'')`` of the truncated profile at hyperradius ``R``.

    Assumes ``ell >= 2 sqrt(2) a`` so the cutoff equals 1 on the whole core.
    """
    if a == 0.0:
        return 1.0, 0.0, 0.0
    if R <= math.sqrt(2.0) * a:
        return 0.0, 0.0, 0.0
    s = R / ell
    if s >= 1.0:
        return 1.0, 0.0, 0.0
    w = 4.0 * a ** 4 / R ** 4
    w1 = -4.0 * w / R
    w2 = 20.0 * w / (R * R)
    c, c1, c2 = chi_derivs(s, profile)
    c1 /= ell
    c2 /= ell * ell
    F = 1.0 - c * w
    F1 = -(c1 * w + c * w1)
    F2 = -(c2 * w + 2.0 * c1 * w1 + c * w2)
    return F, F1, F2


@njit(cache=True)
def untruncated_derivs(R, a):
    if a == 0.0:
        return 1.0, 0.0, 0.0
    if R <= math.sqrt(2.0) * a:
        return 0.0, 0.0, 0.0
    w = 4.0 * a ** 4 / R ** 4
    return 1.0 - w, 4.0 * w / R, -20.0 * w / (R * R)


@njit(cache=True)
def chi_array(s, profile):
    flat = s.ravel()
    c = np.empty(flat.size)
    c1 = np.empty(flat.size)
    c2 = np.empty(flat.size)
    for n in range(flat.size):
        c[n], c1[n], c2[n] = chi_derivs(flat[n], profile)
    return c.reshape(s.shape), c1.reshape(s.shape), c2.reshape(s.shape)


@njit(cache=True)
def profile_array(R, a, ell, profile):
    flat = R.ravel()
    F = np.empty(flat.size)
    F1 = np.empty(flat.size)
    F2 = np.empty(flat.size)
    for n in range(flat.size):
        F[n], F1[n], F2[n] = profile_derivs(flat[n], a, ell, profile)
    return F.reshape(R.shape), F1.reshape(R.shape), F2.reshape(R.shape)


@njit(cache=True)
def untruncated_array(R, a):
    flat = R.ravel()
    F = np.empty(flat.size)
    F1 = np.empty(flat.size)
    F2 = np.empty(flat.size)
    for n in range(flat.size):
        F[n], F1[n], F2[n] = untruncated_derivs(flat[n], a)
    return F.reshape(R.shape), F1.reshape(R.shape), F2.reshape(R.shape)
