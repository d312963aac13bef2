"""Randomized quasi-Monte Carlo energy for three or four particles.

Both ``int sum_i |grad_i Psi|^2`` and ``int (1 - Psi^2)`` vanish unless some
triple has hyperradius below ``l``.  Points are drawn from a mixture over
triples: the triple's pivot is uniform in the box, its relative vector is
``M y`` with ``|y|`` uniform on ``(0, l)`` and a uniform direction on the
five-sphere, and the other particles are uniform.  The importance weights
are bounded, so both integrals have finite variance.  Gradients use the
product rule on ``f_l`` directly and do not go through the Jastrow model.
"""
from __future__ import annotations

import itertools
import math
from typing import NamedTuple

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .metric import METRIC, BoxGeometry, metric_apply, triple_hyperradius
from .scattering import ScatteringProfile, radial_profile


class OracleError(RuntimeError):
    pass


class OracleResult(NamedTuple):
    energy_per_particle: float
    stderr: float
    numerator: float
    denominator: float
    randomizations: int
    points: int


def _triple_terms(x, box: BoxGeometry, p: ScatteringProfile, t):
    """``f`` and the gradients of ``f`` for the three members of triple ``t``."""
    i, j, k = t
    xi, xj, xk = x[:, i], x[:, j], x[:, k]
    r2 = box.displacement(xi - xj)
    r3 = box.displacement(xi - xk)
    if box.periodic:
        djk = r3 - r2
    else:
        djk = xj - xk
    R = triple_hyperradius(xi, xi - r2, xi - r3) if box.periodic else \
        triple_hyperradius(xi, xj, xk)
    F, F1, _ = radial_profile(R, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(R > 0, (2.0 / 3.0) * F1 / R, 0.0)[:, None]
    return R, F, (c * (r2 + r3), c * (djk - r2), c * (-djk - r3))


def _integrands(x, box, p, triples):
    """``(sum_i |grad_i Psi|^2, 1 - Psi^2, q-relevant radii)`` per point."""
    m, n = x.shape[0], x.shape[1]
    Fs, grads, radii = [], [], []
    for t in triples:
        R, F, g = _triple_terms(x, box, p, t)
        Fs.append(F)
        grads.append(g)
        radii.append(R)
    Fs = np.array(Fs)
    psi = np.prod(Fs, axis=0)
    G = np.zeros((m, n, 3))
    for a_, t in enumerate(triples):
        others = np.prod(np.delete(Fs, a_, axis=0), axis=0) if len(triples) > 1 \
            else np.ones(m)
        for slot, idx in enumerate(t):
            G[:, idx] += grads[a_][slot] * others[:, None]
    inside = np.all((x >= 0) & (x < box.length), axis=(1, 2))
    kin = np.where(inside, np.einsum("mnd,mnd->m", G, G), 0.0)
    hole = np.where(inside, 1.0 - psi ** 2, 0.0)
    return kin, hole, np.array(radii)


def _sample(u, box, p, triples, n):
    """Map unit-cube points to configurations drawn from the triple mixture."""
    m = u.shape[0]
    L = box.length
    T = len(triples)
    comp = np.minimum((u[:, 0] * T).astype(int), T - 1)
    pivot = u[:, 1:4] * L
    R = u[:, 4] * p.ell
    z = ndtri(np.clip(u[:, 5:11], 1e-300, 1 - 1e-16))
    y = z / np.linalg.norm(z, axis=1, keepdims=True) * R[:, None]
    v = metric_apply(y, "M")
    rest = u[:, 11:].reshape(m, -1, 3) * L
    x = np.empty((m, n, 3))
    for c_, t in enumerate(triples):
        sel = comp == c_
        i, j, k = t
        x[sel, i] = pivot[sel]
        x[sel, j] = box.wrap(pivot[sel] - v[sel, :3])
        x[sel, k] = box.wrap(pivot[sel] - v[sel, 3:])
        others = [q for q in range(n) if q not in t]
        if others:
            x[np.ix_(sel, others)] = rest[sel]
    return x


def _mixture_density(radii, box, p, n):
    """Density of the mixture at each point, given all triples' radii."""
    T = radii.shape[0]
    with np.errstate(divide="ignore"):
        qv = np.where(radii < p.ell,
                      1.0 / (METRIC.jacobian * math.pi ** 3 * radii ** 5 * p.ell), 0.0)
    return qv.sum(axis=0) / T / box.length ** (3 * (n - 2))


def qmc_oracle(n: int, box: BoxGeometry, p: ScatteringProfile, points: int,
               seed: int = 0, randomizations: int = 16,
               chunk: int = 1 << 15) -> OracleResult:
    """Energy per particle ``int sum|grad Psi|^2 / (N int Psi^2)``.

    ``points`` (rounded up to a power of two) scrambled Sobol points are
    used in each of ``randomizations`` independent scramblings; the error
    bar is the delta-method propagation of the spread between them.
    """
    if not 3 <= n <= 4:
        raise ValueError("the oracle handles 3 <= N <= 4")
    if randomizations < 2:
        raise ValueError("need at least two randomizations")
    if box.periodic and p.ell_tilde >= box.length / 2:
        raise ValueError("periodic mode needs ell_tilde < L/2")
    vol = box.length ** (3 * n)
    if p.a == 0:
        return OracleResult(0.0, 0.0, 0.0, vol, randomizations, 0)
    triples = list(itertools.combinations(range(n), 3))
    dim = 11 + 3 * (n - 3)
    mexp = max(int(math.ceil(math.log2(max(points, 2)))), 1)
    npts = 1 << mexp
    seqs = np.random.SeedSequence(seed).spawn(randomizations)
    A = np.empty(randomizations)
    B = np.empty(randomizations)
    for r, ss in enumerate(seqs):
        sob = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(ss))
        sa = sb = 0.0
        left = npts
        while left:
            m = min(chunk, left)
            u = sob.random(m)
            x = _sample(u, box, p, triples, n)
            kin, hole, radii = _integrands(x, box, p, triples)
            w = 1.0 / _mixture_density(radii, box, p, n)
            sa += math.fsum(kin * w)
            sb += math.fsum(hole * w)
            left -= m
        A[r] = sa / npts
        B[r] = vol - sb / npts
    a_m, b_m = A.mean(), B.mean()
    cov = np.cov(A, B, ddof=1) / randomizations
    if b_m <= 3.0 * math.sqrt(cov[1, 1]):
        raise OracleError("denominator estimate consistent with zero")
    ratio = a_m / b_m
    var = (cov[0, 0] / b_m ** 2 + ratio ** 2 * cov[1, 1] / b_m ** 2
           - 2.0 * ratio * cov[0, 1] / b_m ** 2)
    return OracleResult(ratio / n, math.sqrt(max(var, 0.0)) / n, a_m, b_m,
                        randomizations, npts)
