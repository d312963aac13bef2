"""Compiled kernels for configurations of N particles.

Conventions shared by every kernel:

* a triple is always evaluated with its particles in increasing index order
  and the smallest index as pivot: ``r2 = x_i - x_j``, ``r3 = x_i - x_k``;
* in periodic mode the minimum image is applied to ``r2`` and ``r3`` and the
  third side is derived as ``x_j - x_k = r3 - r2``; in open mode all three
  sides are raw position differences;
* the squared sides are summed in sorted order.

A triple can only differ from 1 when every pair distance is below ``l``
(the hyperradius bounds each side from above), so pair searches with radius
``l_tilde > l`` find all active triples.
"""
import math

import numpy as np
from numba import njit

from ._radial import profile_derivs

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------- cell list

@njit(cache=True)
def cell_coord(x, L, nc):
    c = int(x / L * nc)
    if c < 0:
        c = 0
    elif c >= nc:
        c = nc - 1
    return c


@njit(cache=True)
def cell_of_point(p0, p1, p2, L, nc):
    return (cell_coord(p0, L, nc) * nc + cell_coord(p1, L, nc)) * nc + cell_coord(p2, L, nc)


@njit(cache=True)
def build_cells(pos, L, nc):
    n = pos.shape[0]
    head = -np.ones(nc * nc * nc, dtype=np.int64)
    nxt = -np.ones(n, dtype=np.int64)
    prv = -np.ones(n, dtype=np.int64)
    cell = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = cell_of_point(pos[i, 0], pos[i, 1], pos[i, 2], L, nc)
        cell[i] = c
        h = head[c]
        nxt[i] = h
        if h >= 0:
            prv[h] = i
        head[c] = i
    return head, nxt, prv, cell


@njit(cache=True)
def cell_remove(i, head, nxt, prv, cell):
    p = prv[i]
    q = nxt[i]
    if p >= 0:
        nxt[p] = q
    else:
        head[cell[i]] = q
    if q >= 0:
        prv[q] = p
    nxt[i] = -1
    prv[i] = -1


@njit(cache=True)
def cell_insert(i, c, head, nxt, prv, cell):
    h = head[c]
    nxt[i] = h
    prv[i] = -1
    if h >= 0:
        prv[h] = i
    head[c] = i
    cell[i] = c


@njit(cache=True)
def min_image(d, L, periodic):
    if periodic:
        return d - L * math.floor(d / L + 0.5)
    return d


@njit(cache=True)
def neighbors(q0, q1, q2, exclude, pos, L, periodic, nc, head, nxt, rc2, out):
    """Indices ``j != exclude`` with ``|q - x_j| < rc``; returns their count.

    The result is sorted so downstream sums do not depend on list order.
    """
    cnt = 0
    cx = cell_coord(q0, L, nc)
    cy = cell_coord(q1, L, nc)
    cz = cell_coord(q2, L, nc)
    span = 1 if nc >= 3 else 0
    if not periodic and nc < 3:
        span = 1
    for dx in range(-span, span + 1):
        ix = cx + dx
        if periodic:
            ix %= nc
        elif ix < 0 or ix >= nc:
            continue
        for dy in range(-span, span + 1):
            iy = cy + dy
            if periodic:
                iy %= nc
            elif iy < 0 or iy >= nc:
                continue
            for dz in range(-span, span + 1):
                iz = cz + dz
                if periodic:
                    iz %= nc
                elif iz < 0 or iz >= nc:
                    continue
                j = head[(ix * nc + iy) * nc + iz]
                while j >= 0:
                    if j != exclude:
                        d0 = min_image(q0 - pos[j, 0], L, periodic)
                        d1 = min_image(q1 - pos[j, 1], L, periodic)
                        d2 = min_image(q2 - pos[j, 2], L, periodic)
                        if d0 * d0 + d1 * d1 + d2 * d2 < rc2:
                            out[cnt] = j
                            cnt += 1
                    j = nxt[j]
    out[:cnt].sort()
    return cnt


# ---------------------------------------------------------------- triples

@njit(cache=True)
def sorted_sum3(p, q, s):
    if p > q:
        p, q = q, p
    if q > s:
        q, s = s, q
    if p > q:
        p, q = q, p
    return (p + q) + s


@njit(cache=True)
def triple_geometry(xi, xj, xk, L, periodic):
    """``(r2, r3, d_jk)`` for a triple in index order with pivot ``i``."""
    r2 = np.empty(3)
    r3 = np.empty(3)
    djk = np.empty(3)
    for c in range(3):
        r2[c] = min_image(xi[c] - xj[c], L, periodic)
        r3[c] = min_image(xi[c] - xk[c], L, periodic)
        if periodic:
            djk[c] = r3[c] - r2[c]
        else:
            djk[c] = xj[c] - xk[c]
    return r2, r3, djk


@njit(cache=True)
def triple_radius(r2, r3, djk):
    s2 = r2[0] * r2[0] + r2[1] * r2[1] + r2[2] * r2[2]
    s3 = r3[0] * r3[0] + r3[1] * r3[1] + r3[2] * r3[2]
    s23 = djk[0] * djk[0] + djk[1] * djk[1] + djk[2] * djk[2]
    return math.sqrt(sorted_sum3(s2, s3, s23) * (2.0 / 3.0))


@njit(cache=True)
def triple_log_f(xi, xj, xk, L, periodic, a, ell, prof):
    """``(log f, admissible)`` for one triple given in index order."""
    r2, r3, djk = triple_geometry(xi, xj, xk, L, periodic)
    R = triple_radius(r2, r3, djk)
    if R >= ell:
        return 0.0, True
    if a > 0.0 and R <= SQRT2 * a:
        return -np.inf, False
    F, _, _ = profile_derivs(R, a, ell, prof)
    if F <= 0.0:
        return -np.inf, False
    return math.log(F), True


@njit(cache=True)
def ordered3(i, j, k):
    if i > j:
        i, j = j, i
    if j > k:
        j, k = k, j
    if i > j:
        i, j = j, i
    return i, j, k


@njit(cache=True)
def _pos_of(idx, mover, xm, pos):
    if idx == mover:
        return xm
    return pos[idx]


@njit(cache=True)
def local_log_psi(mover, xm, pos, L, periodic, a, ell, prof, nc, head, nxt, rc2, buf):
    """Sum of ``log f`` over triples containing ``mover`` placed at ``xm``."""
    cnt = neighbors(xm[0], xm[1], xm[2], mover, pos, L, periodic, nc, head, nxt, rc2, buf)
    total = 0.0
    for p in range(cnt):
        j = buf[p]
        for q in range(p + 1, cnt):
            k = buf[q]
            i0, i1, i2 = ordered3(mover, j, k)
            lf, ok = triple_log_f(_pos_of(i0, mover, xm, pos), _pos_of(i1, mover, xm, pos),
                                  _pos_of(i2, mover, xm, pos), L, periodic, a, ell, prof)
            if not ok:
                return -np.inf, False
            total += lf
    return total, True


@njit(cache=True)
def move_delta(i, xnew, pos, L, periodic, a, ell, prof, nc, head, nxt, rc2, buf):
    old, _ = local_log_psi(i, pos[i], pos, L, periodic, a, ell, prof, nc, head, nxt, rc2, buf)
    new, ok = local_log_psi(i, xnew, pos, L, periodic, a, ell, prof, nc, head, nxt, rc2, buf)
    if not ok:
        return -np.inf, False
    return new - old, True


@njit(cache=True)
def new_workspace(n):
    return (np.empty(max(n, 1), dtype=np.int64), np.empty((16, 3), dtype=np.int64),
            np.empty((16, 4)), np.empty((16, 9)))


@njit(cache=True)
def collect_into(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2, buf, idx, vals, geo):
    """Active triples ``(i < j < k, f < 1)`` written into growable workspaces.

    Returns ``(m, idx, vals, geo, admissible)``; rows of ``vals`` are
    ``(R, F, F', F'')`` and rows of ``geo`` are ``(r2, r3, d_jk)``.
    """
    n = pos.shape[0]
    m = 0
    admissible = True
    for i in range(n):
        cnt = neighbors(pos[i, 0], pos[i, 1], pos[i, 2], i, pos, L, periodic,
                        nc, head, nxt, rc2, buf)
        if cnt < 2:
            continue
        for p in range(cnt):
            j = buf[p]
            if j < i:
                continue
            for q in range(p + 1, cnt):
                k = buf[q]
                if k < i:
                    continue
                r2, r3, djk = triple_geometry(pos[i], pos[j], pos[k], L, periodic)
                R = triple_radius(r2, r3, djk)
                if R >= ell:
                    continue
                if a > 0.0 and R <= SQRT2 * a:
                    admissible = False
                F, F1, F2 = profile_derivs(R, a, ell, prof)
                if F >= 1.0:
                    continue
                if m == idx.shape[0]:
                    cap = 2 * m
                    idx2 = np.empty((cap, 3), dtype=np.int64)
                    vals2 = np.empty((cap, 4))
                    geo2 = np.empty((cap, 9))
                    idx2[:m] = idx[:m]
                    vals2[:m] = vals[:m]
                    geo2[:m] = geo[:m]
                    idx, vals, geo = idx2, vals2, geo2
                idx[m, 0] = i
                idx[m, 1] = j
                idx[m, 2] = k
                vals[m, 0] = R
                vals[m, 1] = F
                vals[m, 2] = F1
                vals[m, 3] = F2
                for c in range(3):
                    geo[m, c] = r2[c]
                    geo[m, 3 + c] = r3[c]
                    geo[m, 6 + c] = djk[c]
                m += 1
    return m, idx, vals, geo, admissible


@njit(cache=True)
def collect_triples(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2):
    """Allocating wrapper of :func:`collect_into` returning trimmed arrays."""
    buf, idx, vals, geo = new_workspace(pos.shape[0])
    m, idx, vals, geo, ok = collect_into(pos, L, periodic, a, ell, prof, nc, head,
                                         nxt, rc2, buf, idx, vals, geo)
    return idx[:m], vals[:m], geo[:m], ok


@njit(cache=True)
def log_psi(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2):
    idx, vals, geo, ok = collect_triples(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2)
    if not ok:
        return -np.inf
    total = 0.0
    comp = 0.0
    for t in range(idx.shape[0]):
        y = math.log(vals[t, 1]) - comp
        s = total + y
        comp = (s - total) - y
        total = s
    return total


@njit(cache=True)
def _triple_grads(vals, geo, t):
    """Per-member gradients of ``log f`` (rows: i, j, k) and ``-sum lap f / f``."""
    R = vals[t, 0]
    F = vals[t, 1]
    F1 = vals[t, 2]
    F2 = vals[t, 3]
    g = np.zeros((3, 3))
    if R > 0.0:
        c = (2.0 / 3.0) * F1 / R / F
        for d in range(3):
            r2 = geo[t, d]
            r3 = geo[t, 3 + d]
            djk = geo[t, 6 + d]
            g[0, d] = c * (r2 + r3)
            g[1, d] = c * (djk - r2)
            g[2, d] = c * (-djk - r3)
        lap = -2.0 * (F2 + 5.0 * F1 / R) / F
    else:
        lap = 0.0
    return g, lap


@njit(cache=True)
def _neumaier(total, comp, x):
    s = total + x
    if abs(total) >= abs(x):
        comp += (total - s) + x
    else:
        comp += (x - s) + total
    return s, comp


@njit(cache=True)
def grad_log_psi(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2):
    """``grad_i log Psi`` for every particle, shape ``(N, 3)``."""
    n = pos.shape[0]
    idx, vals, geo, ok = collect_triples(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2)
    G = np.zeros((n, 3))
    comp = np.zeros((n, 3))
    for t in range(idx.shape[0]):
        g, _ = _triple_grads(vals, geo, t)
        for s in range(3):
            p = idx[t, s]
            for d in range(3):
                G[p, d], comp[p, d] = _neumaier(G[p, d], comp[p, d], g[s, d])
    return G + comp


@njit(cache=True)
def estimator(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2):
    """Kinetic-energy channels of one configuration.

    Returns ``(T, T_diag, T_share, T_disj, L_diag)`` where ``T`` is
    ``sum_i |grad_i log Psi|^2`` split into same-triple, one-shared-index and
    disjoint cross terms, and ``L_diag = sum_t -sum_{i in t} lap_i f_t / f_t``.
    """
    buf, idx, vals, geo = new_workspace(pos.shape[0])
    T, D, S, X, Ld, _, _, _ = estimator_ws(pos, L, periodic, a, ell, prof, nc, head,
                                           nxt, rc2, buf, idx, vals, geo)
    return T, D, S, X, Ld


@njit(cache=True)
def estimator_ws(pos, L, periodic, a, ell, prof, nc, head, nxt, rc2, buf, idx, vals, geo):
    """:func:`estimator` on caller-owned workspaces (returned, possibly grown)."""
    n = pos.shape[0]
    m, idx, vals, geo, ok = collect_into(pos, L, periodic, a, ell, prof, nc, head,
                                         nxt, rc2, buf, idx, vals, geo)
    if m == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, idx, vals, geo
    grads = np.empty((m, 3, 3))
    L_diag = 0.0
    L_comp = 0.0
    for t in range(m):
        g, lap = _triple_grads(vals, geo, t)
        grads[t] = g
        L_diag, L_comp = _neumaier(L_diag, L_comp, lap)
    # incidence lists: particle -> (triple, slot)
    count = np.zeros(n + 1, dtype=np.int64)
    for t in range(m):
        for s in range(3):
            count[idx[t, s] + 1] += 1
    for p in range(n):
        count[p + 1] += count[p]
    fill = count[:-1].copy()
    inc_t = np.empty(3 * m, dtype=np.int64)
    inc_s = np.empty(3 * m, dtype=np.int64)
    for t in range(m):
        for s in range(3):
            p = idx[t, s]
            inc_t[fill[p]] = t
            inc_s[fill[p]] = s
            fill[p] += 1
    T = 0.0
    Tc = 0.0
    D = 0.0
    Dc = 0.0
    S = 0.0
    Sc = 0.0
    X = 0.0
    Xc = 0.0
    for p in range(n):
        lo = count[p]
        hi = count[p + 1]
        if hi == lo:
            continue
        G0 = 0.0
        G1 = 0.0
        G2 = 0.0
        for u in range(lo, hi):
            t1 = inc_t[u]
            s1 = inc_s[u]
            g0 = grads[t1, s1, 0]
            g1 = grads[t1, s1, 1]
            g2 = grads[t1, s1, 2]
            G0 += g0
            G1 += g1
            G2 += g2
            D, Dc = _neumaier(D, Dc, g0 * g0 + g1 * g1 + g2 * g2)
            # the two partners of p in t1
            a1 = idx[t1, (s1 + 1) % 3]
            b1 = idx[t1, (s1 + 2) % 3]
            for w in range(u + 1, hi):
                t2 = inc_t[w]
                s2 = inc_s[w]
                dot = (g0 * grads[t2, s2, 0] + g1 * grads[t2, s2, 1]
                       + g2 * grads[t2, s2, 2])
                a2 = idx[t2, (s2 + 1) % 3]
                b2 = idx[t2, (s2 + 2) % 3]
                if a1 == a2 or a1 == b2 or b1 == a2 or b1 == b2:
                    S, Sc = _neumaier(S, Sc, 2.0 * dot)
                else:
                    X, Xc = _neumaier(X, Xc, 2.0 * dot)
        T, Tc = _neumaier(T, Tc, G0 * G0 + G1 * G1 + G2 * G2)
    return T + Tc, D + Dc, S + Sc, X + Xc, L_diag + L_comp, idx, vals, geo


@njit(cache=True)
def run_sweeps(pos, L, periodic, a, ell, prof, nc, head, nxt, prv, cell, rc2,
               step, rand, thin, record, out, sweep_offset, counts):
    """Metropolis sweeps over ``|Psi|^2`` with single-particle cube moves.

    ``rand`` has shape ``(n_sweeps, N, 4)``: three displacement uniforms and
    one acceptance uniform per particle.  When ``record`` is set the
    estimator is evaluated every ``thin`` sweeps and rows with a nonzero
    channel are written to ``out`` as ``(record index, sweep, T, T_diag,
    T_share, T_disj, L_diag, cumulative acceptance)``.  ``counts`` holds running
    ``(accepted, proposed, records)`` and is updated in place.  Returns the
    number of rows written and the (possibly grown) ``out``.
    """
    n = pos.shape[0]
    n_sweeps = rand.shape[0]
    buf, idx, vals, geo = new_workspace(n)
    xnew = np.empty(3)
    rows = 0
    for s in range(n_sweeps):
        for i in range(n):
            inside = True
            for d in range(3):
                x = pos[i, d] + step * (2.0 * rand[s, i, d] - 1.0)
                if periodic:
                    x = x - L * math.floor(x / L)
                    if x >= L:
                        x = 0.0
                elif x < 0.0 or x >= L:
                    inside = False
                xnew[d] = x
            counts[1] += 1
            if not inside:
                continue
            delta, ok = move_delta(i, xnew, pos, L, periodic, a, ell, prof,
                                   nc, head, nxt, rc2, buf)
            if not ok:
                continue
            if delta >= 0.0 or rand[s, i, 3] < math.exp(2.0 * delta):
                c = cell_of_point(xnew[0], xnew[1], xnew[2], L, nc)
                if c != cell[i]:
                    cell_remove(i, head, nxt, prv, cell)
                    cell_insert(i, c, head, nxt, prv, cell)
                pos[i, 0] = xnew[0]
                pos[i, 1] = xnew[1]
                pos[i, 2] = xnew[2]
                counts[0] += 1
        if record and (sweep_offset + s + 1) % thin == 0:
            counts[2] += 1
            T, D, S, X, Ld, idx, vals, geo = estimator_ws(
                pos, L, periodic, a, ell, prof, nc, head, nxt, rc2, buf, idx, vals, geo)
            if T != 0.0 or D != 0.0 or S != 0.0 or X != 0.0 or Ld != 0.0:
                if rows == out.shape[0]:
                    out2 = np.empty((2 * rows + 16, 8))
                    out2[:rows] = out[:rows]
                    out = out2
                out[rows, 0] = counts[2] - 1
                out[rows, 1] = sweep_offset + s + 1
                out[rows, 2] = T
                out[rows, 3] = D
                out[rows, 4] = S
                out[rows, 5] = X
                out[rows, 6] = Ld
                out[rows, 7] = counts[0] / counts[1]
                rows += 1
    return rows, out
