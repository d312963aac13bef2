"""Metropolis sampling of ``|Psi|^2`` and per-chain accumulators.

Each chain draws its random numbers from
``PCG64(SeedSequence(seed, spawn_key=(chain,)))``, so results depend only on
the parameters, the seed and the chain index.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .model import Configuration, log_psi

COLUMNS = ("T", "T_diag", "T_share", "T_disj", "L_diag")
_BATCH_NUMBERS = 1 << 20  # random doubles generated per batch


class LowAcceptanceError(RuntimeError):
    """The chain accepted fewer than 1% of its proposals."""


@dataclass(frozen=True)
class McParams:
    """Chain settings.

    ``sweeps`` counts all sweeps including ``burn_in``; a sweep proposes one
    move per particle.  ``step`` is the half-width of the cubic proposal.
    """

    sweeps: int
    burn_in: int
    step: float
    seed: int = 0
    chains: int = 1
    thin: int = 1

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError("need 0 <= burn_in < sweeps")
        if not (math.isfinite(self.step) and self.step > 0):
            raise ValueError("step must be positive")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


def chain_rng(seed: int, chain: int, *extra) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(chain,) + tuple(extra))))


@dataclass
class ChainAccumulators:
    """Recorded estimator samples, one entry per chain.

    Most configurations of a dilute gas have no active triple, so only
    records with a nonzero channel are stored.  ``rows[c]`` has columns
    ``record, sweep, T, T_diag, T_share, T_disj, L_diag, acceptance`` where
    ``record`` is the position in the chain's record sequence and
    acceptance is cumulative up to that sweep.  ``n_records[c]`` counts all
    records, zero or not.
    """

    chain_ids: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    n_records: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    proposed: list = field(default_factory=list)

    def merge(self, other: "ChainAccumulators") -> "ChainAccumulators":
        ids = self.chain_ids + other.chain_ids
        if len(set(ids)) != len(ids):
            raise ValueError("cannot merge accumulators sharing a chain index")
        order = np.argsort(ids, kind="stable")

        def pick(a, b):
            both = a + b
            return [both[i] for i in order]

        return ChainAccumulators(
            pick(self.chain_ids, other.chain_ids), pick(self.rows, other.rows),
            pick(self.n_records, other.n_records), pick(self.accepted, other.accepted),
            pick(self.proposed, other.proposed))

    @classmethod
    def merge_all(cls, accs) -> "ChainAccumulators":
        out = cls()
        for a in accs:
            out = out.merge(a)
        return out

    def sparse(self, name: str, chain: int):
        """``(positions, values, n)`` of one channel of chain number ``chain``."""
        r = self.rows[chain]
        col = 2 + COLUMNS.index(name)
        return r[:, 0].astype(np.int64), r[:, col], self.n_records[chain]

    def series(self, name: str) -> np.ndarray:
        """Dense channel series with all chains concatenated."""
        out = []
        for c in range(len(self.rows)):
            pos, val, n = self.sparse(name, c)
            x = np.zeros(n)
            x[pos] = val
            out.append(x)
        return np.concatenate(out) if out else np.zeros(0)

    def chain_mean(self, name: str, chain: int) -> float:
        _, val, n = self.sparse(name, chain)
        return float(np.sum(val)) / n if n else 0.0

    def mean(self, name: str) -> float:
        n = sum(self.n_records)
        return sum(float(np.sum(self.sparse(name, c)[1]))
                   for c in range(len(self.rows))) / n if n else 0.0

    @property
    def n_samples(self) -> int:
        return sum(self.n_records)

    @property
    def acceptance(self) -> float:
        prop = sum(self.proposed)
        return sum(self.accepted) / prop if prop else 0.0

    def to_csv(self, target):
        """Write nonzero records to a path or text stream.

        Every omitted record has all channels equal to zero.
        """
        if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
            with open(target, "w", newline="", encoding="utf-8") as fh:
                return self.to_csv(fh)
        w = csv.writer(target, lineterminator="\n")
        w.writerow(["sweep", "T", "T_diag", "T_share", "T_disj", "acceptance",
                    "chain", "record", "L_diag"])
        for cid, r in zip(self.chain_ids, self.rows):
            for row in r:
                w.writerow([int(row[1])] + [repr(float(v)) for v in row[2:6]]
                           + [repr(float(row[7])), cid, int(row[0]), repr(float(row[6]))])


class StepTuning(NamedTuple):
    step: float
    acceptance: float
    converged: bool


def _sweep_batch(c: Configuration, rng, n_sweeps, step, record, thin, offset, counts):
    n = c.n
    per = max(1, _BATCH_NUMBERS // max(4 * n, 1))
    p = c.profile
    cl = c.cells
    acc0 = counts[0]
    rows = []
    done = 0
    while done < n_sweeps:
        b = min(per, n_sweeps - done)
        rand = rng.random((b, n, 4))
        m, out = _kernels.run_sweeps(
            c.positions, c.box.length, c.box.periodic, p.a, p.ell, p.profile_id,
            cl.nc, cl.head, cl.next, cl.prev, cl.cell, p.ell_tilde ** 2,
            float(step), rand, thin, record, np.empty((16, 8)), offset + done, counts)
        if m:
            rows.append(out[:m].copy())
        done += b
    c.generation += int(counts[0] - acc0)
    return rows


def run_chain(c0: Configuration, mc: McParams, chain: int = 0,
              debug: bool = False) -> ChainAccumulators:
    """Run one Metropolis chain from a copy of ``c0``.

    Samples are recorded after burn-in every ``mc.thin`` sweeps.  With
    ``debug`` set, admissibility of the full configuration is re-checked
    after every sweep.

    Raises
    ------
    LowAcceptanceError
        If fewer than 1% of proposals were accepted.
    """
    if not math.isfinite(log_psi(c0)):
        raise ValueError("initial configuration is not admissible")
    c = c0.copy()
    rng = chain_rng(mc.seed, chain)
    counts = np.zeros(3, dtype=np.int64)
    rows = []
    for offset, count, record in ((0, mc.burn_in, False),
                                  (mc.burn_in, mc.sweeps - mc.burn_in, True)):
        if debug:
            for s in range(count):
                rows += _sweep_batch(c, rng, 1, mc.step, record, mc.thin, offset + s, counts)
                if not math.isfinite(log_psi(c)):
                    raise AssertionError("chain entered an inadmissible state")
        else:
            rows += _sweep_batch(c, rng, count, mc.step, record, mc.thin, offset, counts)
    acc, prop, nrec = (int(v) for v in counts)
    if c.n > 0 and prop and acc / prop < 0.01:
        raise LowAcceptanceError(
            f"acceptance {acc / prop:.4f} < 1% (step={mc.step:.4g}); reduce the step")
    samples = np.concatenate(rows) if rows else np.zeros((0, 8))
    return ChainAccumulators([chain], [samples], [nrec], [acc], [prop])


def run_chains(c0: Configuration, mc: McParams, threads: int = 1,
               debug: bool = False) -> ChainAccumulators:
    """Run ``mc.chains`` independent chains and merge them in chain order."""
    if threads > 1 and mc.chains > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as ex:
            accs = list(ex.map(run_chain, [c0] * mc.chains, [mc] * mc.chains,
                               range(mc.chains), [debug] * mc.chains))
    else:
        accs = [run_chain(c0, mc, k, debug) for k in range(mc.chains)]
    return ChainAccumulators.merge_all(accs)


def pilot_acceptance(c0: Configuration, step: float, sweeps: int, seed: int) -> float:
    c = c0.copy()
    rng = chain_rng(seed, 0, 0x7E5)
    counts = np.zeros(3, dtype=np.int64)
    _sweep_batch(c, rng, sweeps, step, False, 1, 0, counts)
    return counts[0] / counts[1] if counts[1] else 1.0


def tune_step(c0: Configuration, mc: McParams, target: float = 0.5,
              pilot_sweeps: int = 50, iterations: int = 30) -> StepTuning:
    """Bisect the step size until pilot acceptance is within 0.05 of ``target``.

    The search runs over ``[1e-6 L, L/2]`` on a log scale.  When even the
    largest step is accepted too often, ``L/2`` is returned with
    ``converged=False`` and a warning.
    """
    if not 0.2 <= target <= 0.8:
        raise ValueError("target acceptance must lie in [0.2, 0.8]")
    L = c0.box.length
    hi = L / 2
    acc_hi = pilot_acceptance(c0, hi, pilot_sweeps, mc.seed)
    if abs(acc_hi - target) <= 0.05:
        return StepTuning(hi, acc_hi, True)
    if acc_hi > target:
        warnings.warn(f"target acceptance {target} unattainable; using L/2",
                      RuntimeWarning, stacklevel=2)
        return StepTuning(hi, acc_hi, False)
    lo = 1e-6 * L
    best = (hi, acc_hi)
    for _ in range(iterations):
        mid = math.sqrt(lo * hi)
        acc = pilot_acceptance(c0, mid, pilot_sweeps, mc.seed)
        if abs(acc - target) < abs(best[1] - target):
            best = (mid, acc)
        if abs(acc - target) <= 0.05:
            return StepTuning(mid, acc, True)
        if acc > target:
            lo = mid
        else:
            hi = mid
    warnings.warn("step tuning did not reach the target acceptance",
                  RuntimeWarning, stacklevel=2)
    return StepTuning(best[0], best[1], False)


def default_burn_in(c0: Configuration, step: float, seed: int,
                    pilot_sweeps: int = 1024) -> int:
    """Ten times the blocking plateau depth (in sweeps) of a pilot chain."""
    from .blocking import blocking_error_sparse

    acc = run_chain(c0, McParams(pilot_sweeps, 0, step, seed=seed), chain=2 ** 31)
    pos, val, n = acc.sparse("T", 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        level = blocking_error_sparse(pos, val, n).plateau_level
    return max(10, 10 * 2 ** level)
