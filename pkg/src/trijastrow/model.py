"""N-particle configurations and the three-body Jastrow state.

``Psi(x_1..x_N) = prod_{i<j<k} f_l(x_i - x_j, x_i - x_k)``.  Triples are
found through a cell list with cell side at least ``l_tilde``, and
every mutation of a :class:`Configuration` goes through an admissibility
gate so a stored configuration never has ``Psi = 0``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._radial import profile_array
from .metric import SQRT2, BoxGeometry, triple_hyperradius
from .scattering import ScatteringProfile


class InadmissibleConfiguration(ValueError):
    """A triple of particles violates the hard core.

    ``triple`` holds the zero-based indices; the message uses one-based labels.
    """

    def __init__(self, triple, message=None):
        self.triple = tuple(int(t) for t in triple)
        labels = ",".join(str(t + 1) for t in self.triple)
        super().__init__(message or f"hard-core violation in triple ({labels})")


class TripleTerm(NamedTuple):
    indices: tuple
    f: float
    gradients: np.ndarray  # (3, 3): grad of f for particles i, j, k


class MoveResult(NamedTuple):
    delta_log_psi: float
    admissible: bool


def _cells_per_side(box: BoxGeometry, ell_tilde: float) -> int:
    nc = int(math.floor(box.length / ell_tilde)) if ell_tilde > 0 else 1
    nc = max(nc, 1)
    if box.periodic and nc < 3:
        nc = 1  # a 3x3x3 stencil would visit some cells twice
    return nc


class CellList:
    """Linked cells of side ``>= l_tilde`` over the box."""

    def __init__(self, positions, box: BoxGeometry, ell_tilde: float):
        self.box = box
        self.ell_tilde = float(ell_tilde)
        self.nc = _cells_per_side(box, self.ell_tilde)
        self.rebuild(positions)

    def rebuild(self, positions):
        self.head, self.next, self.prev, self.cell = _kernels.build_cells(
            positions, self.box.length, self.nc)

    def move(self, i, new_position):
        c = _kernels.cell_of_point(new_position[0], new_position[1], new_position[2],
                                   self.box.length, self.nc)
        if c != self.cell[i]:
            _kernels.cell_remove(i, self.head, self.next, self.prev, self.cell)
            _kernels.cell_insert(i, c, self.head, self.next, self.prev, self.cell)

    def buckets(self):
        """Particle indices per cell (for inspection and tests)."""
        out = []
        for c in range(self.nc ** 3):
            members = []
            j = self.head[c]
            while j >= 0:
                members.append(int(j))
                j = self.next[j]
            out.append(sorted(members))
        return out


class Configuration:
    """Positions of N particles in a box, always admissible.

    Parameters
    ----------
    positions : array_like, shape (N, 3)
        Particle positions inside ``[0, L)^3``.
    box : BoxGeometry
    profile : ScatteringProfile
        Defines ``f_l``.  In periodic mode ``l_tilde < L/2`` is required.

    Raises
    ------
    InadmissibleConfiguration
        If any triple lies in the hard core; the exception names the triple.
    """

    def __init__(self, positions, box: BoxGeometry, profile: ScatteringProfile):
        pos = np.array(positions, dtype=float, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if np.any(pos < 0) or np.any(pos >= box.length):
            raise ValueError("positions must lie inside [0, L)^3")
        if box.periodic and profile.ell_tilde >= box.length / 2:
            raise ValueError(
                f"periodic mode needs ell_tilde={profile.ell_tilde:.6g} < L/2="
                f"{box.length / 2:.6g}")
        self.positions = pos
        self.box = box
        self.profile = profile
        self.generation = 0
        self.cells = CellList(pos, box, profile.ell_tilde)
        bad = self._first_violation()
        if bad is not None:
            raise InadmissibleConfiguration(bad)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def _args(self):
        p = self.profile
        return (self.positions, self.box.length, self.box.periodic, p.a, p.ell,
                p.profile_id, self.cells.nc, self.cells.head, self.cells.next,
                p.ell_tilde ** 2)

    def _first_violation(self):
        if self.profile.a == 0 or self.n < 3:
            return None
        idx, vals, _, ok = _kernels.collect_triples(*self._args())
        if ok:
            return None
        core = SQRT2 * self.profile.a
        for t in range(idx.shape[0]):
            if vals[t, 0] <= core:
                return tuple(idx[t])
        return None  # pragma: no cover

    def copy(self) -> "Configuration":
        new = object.__new__(Configuration)
        new.positions = self.positions.copy()
        new.box = self.box
        new.profile = self.profile
        new.generation = self.generation
        new.cells = CellList(new.positions, self.box, self.profile.ell_tilde)
        return new

    def log_psi(self) -> float:
        return log_psi(self)

    def move_delta(self, i, proposal) -> MoveResult:
        return move_delta(self, i, proposal)

    def apply_move(self, i, proposal) -> MoveResult:
        """Move particle ``i`` if the result is admissible; report the change."""
        res = move_delta(self, i, proposal)
        if res.admissible:
            q = self.box.wrap(np.asarray(proposal, dtype=float))
            self.cells.move(i, q)
            self.positions[i] = q
            self.generation += 1
        return res


def lattice_positions(n: int, box: BoxGeometry) -> np.ndarray:
    """First ``n`` sites of a simple cubic lattice with ``ceil(n^(1/3))`` sites per side."""
    if n == 0:
        return np.zeros((0, 3))
    side = 1
    while side ** 3 < n:
        side += 1
    spacing = box.length / side
    g = (np.arange(side) + 0.5) * spacing
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[:n]


def build_configuration(n: int, box: BoxGeometry, profile: ScatteringProfile,
                        init="lattice") -> Configuration:
    """Lattice start (``init="lattice"``) or explicit positions.

    A lattice start needs spacing ``L / ceil(N^(1/3)) > 2a``; every pair is
    then farther than ``2a`` apart and no triple can reach the core.
    """
    if n < 0:
        raise ValueError("N must be >= 0")
    if isinstance(init, str):
        if init != "lattice":
            raise ValueError(f"unknown init {init!r}")
        side = 1
        while side ** 3 < n:
            side += 1
        spacing = box.length / side
        if n >= 3 and spacing <= 2.0 * profile.a:
            raise ValueError(
                f"N={n} too large for L={box.length} at a={profile.a}: "
                f"lattice spacing {spacing:.6g} <= 2a")
        return Configuration(lattice_positions(n, box), box, profile)
    pos = np.asarray(init, dtype=float)
    if pos.shape != (n, 3):
        raise ValueError(f"expected positions of shape ({n}, 3), got {pos.shape}")
    return Configuration(pos, box, profile)


# ---------------------------------------------------------------- evaluation

def active_triples(c: Configuration) -> list[TripleTerm]:
    """Triples with ``f < 1``, sorted by index, each with its gradients."""
    idx, vals, geo, _ = _kernels.collect_triples(*c._args())
    out = []
    for t in range(idx.shape[0]):
        R, F, F1, _ = vals[t]
        r2, r3, djk = geo[t, :3], geo[t, 3:6], geo[t, 6:]
        cfac = (2.0 / 3.0) * F1 / R if R > 0 else 0.0
        g = cfac * np.array([r2 + r3, djk - r2, -djk - r3])
        out.append(TripleTerm(tuple(int(v) for v in idx[t]), float(F), g))
    return out


def log_psi(c: Configuration) -> float:
    """``log Psi``; ``-inf`` signals a hard-core violation."""
    if c.n < 3:
        return 0.0
    return float(_kernels.log_psi(*c._args()))


def grad_log_psi(c: Configuration, i=None) -> np.ndarray:
    """``grad_i log Psi`` for particle ``i`` or, with ``i=None``, for all particles."""
    if c.n < 3:
        G = np.zeros((c.n, 3))
    else:
        G = _kernels.grad_log_psi(*c._args())
    return G if i is None else G[i]


def move_delta(c: Configuration, i: int, proposal) -> MoveResult:
    """``log Psi(after) - log Psi(before)`` for moving particle ``i``.

    Only triples containing ``i`` are evaluated.  In periodic mode the
    proposal is wrapped into the box first.
    """
    q = c.box.wrap(np.asarray(proposal, dtype=float)).reshape(3)
    if np.any(q < 0) or np.any(q >= c.box.length):
        raise ValueError("proposal outside the box")
    if c.n < 3:
        return MoveResult(0.0, True)
    buf = np.empty(c.n, dtype=np.int64)
    args = c._args()
    d, ok = _kernels.move_delta(i, q, *args, buf)
    return MoveResult(float(d), bool(ok))


class EstimatorSample(NamedTuple):
    T: float
    T_diag: float
    T_share: float
    T_disj: float
    L_diag: float


def sample_estimator(c: Configuration) -> EstimatorSample:
    """Kinetic channels of one configuration.

    ``T = sum_i |grad_i log Psi|^2 = T_diag + T_share + T_disj``, where the
    cross terms at a particle are split by whether the two triples share a
    second particle.  ``L_diag`` is ``sum_t sum_{i in t} -lap_i f_t / f_t``;
    under periodic boundaries ``L_diag - T_share - T_disj`` is the local
    energy and has finite variance.
    """
    if c.n < 3:
        return EstimatorSample(0.0, 0.0, 0.0, 0.0, 0.0)
    return EstimatorSample(*(float(v) for v in _kernels.estimator(*c._args())))


# ---------------------------------------------------------------- naive O(N^3)

def _naive_triples(positions, box: BoxGeometry):
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    if n < 3:
        return np.zeros((0, 3), dtype=int), np.zeros(0)
    idx = np.array(list(itertools.combinations(range(n), 3)))
    x, y, z = pos[idx[:, 0]], pos[idx[:, 1]], pos[idx[:, 2]]
    return idx, triple_hyperradius(x, y, z, box)


def naive_active_triples(positions, box: BoxGeometry, profile: ScatteringProfile):
    """Set of index triples with ``f < 1`` from a full scan."""
    idx, R = _naive_triples(positions, box)
    F, _, _ = profile_array(R, profile.a, profile.ell, profile.profile_id)
    return {tuple(int(v) for v in t) for t, f in zip(idx, F) if f < 1.0}


def naive_log_psi(positions, box: BoxGeometry, profile: ScatteringProfile) -> float:
    """``log prod f`` over all triples, ``-inf`` if any factor vanishes."""
    idx, R = _naive_triples(positions, box)
    if idx.shape[0] == 0:
        return 0.0
    F, _, _ = profile_array(R, profile.a, profile.ell, profile.profile_id)
    if np.any(F <= 0):
        return -math.inf
    return float(math.fsum(np.log(F)))


# ---------------------------------------------------------------- import/export

def save_positions_text(path, positions):
    np.savetxt(path, np.asarray(positions, dtype=float).reshape(-1, 3), fmt="%.17g")


def load_positions_text(path) -> np.ndarray:
    return np.loadtxt(path, dtype=float, ndmin=2).reshape(-1, 3)


def configuration_to_json(c: Configuration) -> str:
    return json.dumps({
        "box_length": c.box.length,
        "periodic": c.box.periodic,
        "positions": c.positions.tolist(),
    }, indent=1)


def positions_from_json(text: str):
    """Return ``(positions, BoxGeometry)`` from :func:`configuration_to_json` output."""
    d = json.loads(text)
    box = BoxGeometry(float(d["box_length"]), bool(d.get("periodic", False)))
    return np.asarray(d["positions"], dtype=float).reshape(-1, 3), box


# ---------------------------------------------------------------- sandwich bound

def sandwich_terms(positions, profile: ScatteringProfile):
    """``(lower, product)`` of the two-particle decoupling bound.

    ``product = prod_{3<=j<k} f_1jk^2 f_2jk^2 prod_k f_12k^2`` (particles 1
    and 2 are indices 0 and 1) and ``lower = 1 - sum_j v_1j - sum_j v_2j -
    sum_k u_12k`` with ``u = 1 - f^2`` and ``v`` the indicator of a pair
    closer than ``l_tilde``.  Open-box differences are used.
    """
    x = np.asarray(positions, dtype=float)
    n = x.shape[0]
    if n < 3:
        return 1.0, 1.0
    rest = np.arange(2, n)

    def f2(i, j, k):
        R = triple_hyperradius(x[i], x[j], x[k])
        F, _, _ = profile_array(np.atleast_1d(R), profile.a, profile.ell, profile.profile_id)
        return F ** 2

    log_terms = []
    if n >= 4:
        jk = np.array(list(itertools.combinations(rest, 2)))
        for pivot in (0, 1):
            log_terms.append(f2(np.full(len(jk), pivot), jk[:, 0], jk[:, 1]))
    f12 = f2(np.zeros(n - 2, dtype=int), np.ones(n - 2, dtype=int), rest)
    log_terms.append(f12)
    product = float(np.prod(np.concatenate(log_terms)))
    d1 = np.linalg.norm(x[0] - x[rest], axis=1)
    d2 = np.linalg.norm(x[1] - x[rest], axis=1)
    v = np.sum(d1 < profile.ell_tilde) + np.sum(d2 < profile.ell_tilde)
    lower = 1.0 - float(v) - float(np.sum(1.0 - f12))
    return lower, product


def sandwich_suite(profile: ScatteringProfile, configurations: int, max_n: int = 20,
                   seed: int = 0, box_scale: float = 2.0) -> dict:
    """Check ``lower <= product <= 1`` on random admissible configurations.

    Configurations have ``3 <= N <= max_n`` particles uniform in a cube of
    side ``box_scale * l_tilde`` (rejecting hard-core violations), so most
    of them contain active triples.
    """
    rng = np.random.default_rng(seed)
    side = box_scale * profile.ell_tilde
    violations = []
    active = 0
    tightest = math.inf
    done = 0
    while done < configurations:
        n = int(rng.integers(3, max_n + 1))
        x = rng.uniform(0.0, side, size=(n, 3))
        if profile.a > 0 and naive_log_psi(x, BoxGeometry(side), profile) == -math.inf:
            continue
        lower, prod = sandwich_terms(x, profile)
        if prod < 1.0:
            active += 1
        tightest = min(tightest, prod - lower)
        if not (lower <= prod * (1 + 1e-12) and prod <= 1.0):
            violations.append({"positions": x.tolist(), "lower": lower, "product": prod})
        done += 1
    return {
        "configurations": configurations,
        "with_active_triples": active,
        "violations": len(violations),
        "min_gap": tightest,
        "witnesses": violations[:3],
        "passed": not violations,
    }
