import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trijastrow.blocking import (BlockingWarning, blocking_error, blocking_error_sparse,
                                 blocking_levels, combine, sparse_blocking_levels)


def _ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_iid_error_matches_naive():
    x = np.random.default_rng(0).normal(size=2**14)
    r = blocking_error(x)
    assert r.converged and r.plateau_level <= 2
    assert r.stderr == pytest.approx(x.std() / math.sqrt(x.size), rel=0.1)
    assert r.mean == x.mean()


def test_ar1_matches_analytic_error():
    phi, n = 0.9, 2**16
    # var of the mean for unit innovations: 1 / ((1 - phi)^2 n)
    want = 1 / ((1 - phi) * math.sqrt(n))
    errs = [blocking_error(_ar1(phi, n, s)).stderr for s in range(4)]
    assert np.mean(errs) == pytest.approx(want, rel=0.1)


def test_constant_series_has_zero_error():
    r = blocking_error(np.full(100, 3.5))
    assert r == (3.5, 0.0, 0, True)


def test_too_short():
    with pytest.raises(ValueError):
        blocking_error(np.ones(15))
    with pytest.raises(ValueError):
        blocking_error_sparse([], [], 10)


def test_levels_drop_odd_tail():
    lv = blocking_levels(np.arange(7.0))
    assert [n for n, _, _ in lv] == [7, 3]


def test_strong_correlation_goes_deep():
    x = np.cumsum(np.random.default_rng(1).normal(size=2**12))  # random walk
    r = blocking_error(x)
    assert r.plateau_level >= 6
    assert r.stderr > 5 * x.std() / math.sqrt(x.size)


def test_no_plateau_warns(monkeypatch):
    import trijastrow.blocking as b
    monkeypatch.setattr(b.chi2, "ppf", lambda q, df: 0.0)
    x = np.random.default_rng(1).normal(size=256)
    with pytest.warns(BlockingWarning):
        r = blocking_error(x)
    assert not r.converged


@settings(max_examples=50, deadline=None)
@given(st.integers(16, 3000), st.floats(0.0, 0.3), st.integers(0, 2**32 - 1))
def test_sparse_equals_dense(n, density, seed):
    rng = np.random.default_rng(seed)
    x = np.where(rng.random(n) < density, rng.exponential(size=n), 0.0)
    pos = np.flatnonzero(x)
    dense = blocking_levels(x)
    sparse = sparse_blocking_levels(pos, x[pos], n)
    assert len(dense) == len(sparse)
    for (n1, s1, g1), (n2, s2, g2) in zip(dense, sparse):
        assert n1 == n2
        assert s2 == pytest.approx(s1, rel=1e-9, abs=1e-15)
        assert g2 == pytest.approx(g1, rel=1e-9, abs=1e-15)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BlockingWarning)
        a, b = blocking_error(x), blocking_error_sparse(pos, x[pos], n)
    assert b.plateau_level == a.plateau_level
    assert b.mean == pytest.approx(a.mean, rel=1e-12, abs=1e-300)
    assert b.stderr == pytest.approx(a.stderr, rel=1e-9, abs=1e-15)


def test_sparse_rejects_unsorted():
    with pytest.raises(ValueError):
        sparse_blocking_levels([3, 1], [1.0, 2.0], 10)
    with pytest.raises(ValueError):
        sparse_blocking_levels([10], [1.0], 10)


def test_combine():
    from trijastrow.blocking import BlockingResult
    r = combine([BlockingResult(1.0, 0.1, 1, True), BlockingResult(3.0, 0.2, 2, False)],
                [1, 1])
    assert r.mean == 2.0
    assert r.stderr == pytest.approx(math.sqrt(0.01 + 0.04) / 2)
    assert r.plateau_level == 2 and not r.converged
