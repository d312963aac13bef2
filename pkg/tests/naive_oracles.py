"""Brute-force reference implementations used only by the tests."""
import itertools
import math

import numpy as np

from trijastrow.metric import triple_hyperradius
from trijastrow.model import naive_log_psi
from trijastrow.scattering import particle_gradients, radial_profile


def _images(pos, t, box):
    x, y, z = pos[list(t)]
    if box.periodic:
        y = x - box.displacement(x - y)
        z = x - box.displacement(x - z)
    return x, y, z


def naive_channels(pos, box, profile):
    """``(T, T_diag, T_share, T_disj, L_diag)`` from a full triple scan.

    Gradients come from the pairwise form of the hyperradius and the
    Laplacian from central differences of ``f`` in all nine coordinates.
    """
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    terms = {}
    L_diag = 0.0
    h = 1e-4 * profile.ell
    for t in itertools.combinations(range(n), 3):
        x, y, z = _images(pos, t, box)
        F = radial_profile(triple_hyperradius(x, y, z), profile)[0]
        if F >= 1:
            continue
        gi, gj, gk = particle_gradients(x, y, z, profile)
        terms[t] = [gi / F, gj / F, gk / F]
        flat = np.concatenate([x, y, z])
        lap = 0.0
        for k in range(9):
            e = np.zeros(9)
            e[k] = h
            fp = radial_profile(triple_hyperradius(*(flat + e).reshape(3, 3)), profile)[0]
            fm = radial_profile(triple_hyperradius(*(flat - e).reshape(3, 3)), profile)[0]
            lap += (fp - 2 * F + fm) / h**2
        L_diag -= lap / F
    D = S = X = 0.0
    G = np.zeros((n, 3))
    for i in range(n):
        own = [(t, g[t.index(i)]) for t, g in terms.items() if i in t]
        for t1, g1 in own:
            G[i] += g1
            D += g1 @ g1
            for t2, g2 in own:
                if t1 == t2:
                    continue
                if (set(t1) - {i}) & (set(t2) - {i}):
                    S += g1 @ g2
                else:
                    X += g1 @ g2
    return float((G**2).sum()), D, S, X, L_diag


def fd_grad_log_psi(pos, box, profile, h=1e-6):
    """Central differences of the naive ``log Psi``."""
    pos = np.asarray(pos, dtype=float)
    out = np.zeros_like(pos)
    for i in range(len(pos)):
        for d in range(3):
            p, m = pos.copy(), pos.copy()
            p[i, d] += h
            m[i, d] -= h
            out[i, d] = (naive_log_psi(p, box, profile) - naive_log_psi(m, box, profile)) / (2 * h)
    return out


def random_admissible(rng, n, box, profile, max_tries=100_000):
    for _ in range(max_tries):
        pos = rng.uniform(0, box.length, (n, 3))
        if naive_log_psi(pos, box, profile) > -math.inf:
            return pos
    raise RuntimeError("no admissible configuration found")


def naive_grad_log_psi(pos, box, profile):
    """``grad_i log Psi`` over every triple, via the pairwise-distance formula."""
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    G = np.zeros_like(pos)
    if n < 3:
        return G
    idx = np.array(list(itertools.combinations(range(n), 3)))
    x, y, z = pos[idx[:, 0]], pos[idx[:, 1]], pos[idx[:, 2]]
    if box.periodic:
        y = x - box.displacement(x - y)
        z = x - box.displacement(x - z)
    F = radial_profile(triple_hyperradius(x, y, z), profile)[0]
    act = F < 1
    grads = particle_gradients(x[act], y[act], z[act], profile)
    for slot, g in enumerate(grads):
        np.add.at(G, idx[act, slot], g / F[act, None])
    return G
