import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from naive_oracles import fd_grad_log_psi, naive_channels, random_admissible
from trijastrow.metric import BoxGeometry
from trijastrow.model import (CellList, Configuration, InadmissibleConfiguration,
                              active_triples, build_configuration, configuration_to_json,
                              grad_log_psi, lattice_positions, load_positions_text, log_psi,
                              move_delta, naive_active_triples, naive_log_psi,
                              positions_from_json, sample_estimator, sandwich_suite,
                              sandwich_terms, save_positions_text)
from trijastrow.scattering import ScatteringProfile

P = ScatteringProfile(0.2, 1.0)


def _config(seed, n=20, periodic=False, length=2.5, profile=P):
    box = BoxGeometry(length, periodic)
    rng = np.random.default_rng(seed)
    return Configuration(random_admissible(rng, n, box, profile), box, profile)


def test_equilateral_core_triple_is_named():
    a = 1.0
    side = 0.99 * a  # R = sqrt(2) * side < sqrt(2) a
    base = np.array([5.0, 5.0, 5.0])
    pos = base + side * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(0.75), 0]])
    with pytest.raises(InadmissibleConfiguration) as info:
        Configuration(pos, BoxGeometry(20.0), ScatteringProfile(a, 10.0))
    assert info.value.triple == (0, 1, 2)
    assert "(1,2,3)" in str(info.value)


def test_core_boundary_is_inadmissible():
    a = 1.0
    side = 1.0
    pos = 5 + side * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(0.75), 0]])
    R_dev = abs(math.sqrt(2 / 3 * 3 * side**2) - math.sqrt(2))
    assert R_dev < 1e-15
    # exact boundary: either rejected or f == 0 both signal inadmissibility
    assert naive_log_psi(pos, BoxGeometry(20.0), ScatteringProfile(a, 10.0)) == -math.inf


def test_single_triple_value():
    # equilateral triple with side s has R = sqrt(2) s; s = 2 gives f = 1 - 4/16
    a = 1.0
    pos = 5 + 2.0 * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(0.75), 0]])
    c = Configuration(pos, BoxGeometry(20.0), ScatteringProfile(a, 10.0))
    assert log_psi(c) == pytest.approx(math.log(15 / 16), rel=1e-14)
    assert len(active_triples(c)) == 1


@pytest.mark.parametrize("n", [0, 1, 2])
def test_fewer_than_three_particles(n):
    box = BoxGeometry(5.0, True)
    c = build_configuration(n, box, P)
    assert log_psi(c) == 0.0
    assert grad_log_psi(c).shape == (n, 3)
    assert sample_estimator(c) == (0.0,) * 5
    if n:
        assert move_delta(c, 0, [1.0, 1.0, 1.0]) == (0.0, True)


def test_free_gas_is_constant():
    box = BoxGeometry(4.0, True)
    c = build_configuration(30, box, ScatteringProfile(0.0, 1.0))
    assert log_psi(c) == 0.0
    assert not grad_log_psi(c).any()


@pytest.mark.parametrize("periodic", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_matches_naive_scan(periodic, seed):
    c = _config(seed, periodic=periodic, length=3.0 if periodic else 2.5)
    assert {t.indices for t in active_triples(c)} == naive_active_triples(
        c.positions, c.box, P)
    ref = naive_log_psi(c.positions, c.box, P)
    assert abs(log_psi(c) - ref) <= 1e-10 * max(1.0, abs(ref))


@pytest.mark.parametrize("periodic", [False, True])
def test_gradient_matches_finite_differences(periodic):
    c = _config(11, n=12, periodic=periodic, length=3.0 if periodic else 2.0)
    fd = fd_grad_log_psi(c.positions, c.box, P)
    G = grad_log_psi(c)
    assert np.abs(G - fd).max() < 1e-6 * max(1.0, np.abs(G).max())
    np.testing.assert_array_equal(grad_log_psi(c, 3), G[3])


@pytest.mark.parametrize("periodic", [False, True])
def test_channels_match_naive(periodic):
    c = _config(2, n=20, periodic=periodic, length=2.6 if periodic else 2.2)
    e = sample_estimator(c)
    ref = naive_channels(c.positions, c.box, P)
    assert e.T_share != 0.0
    for got, want in zip(e[:4], ref[:4]):
        assert got == pytest.approx(want, rel=1e-10, abs=1e-12)
    assert e.L_diag == pytest.approx(ref[4], rel=1e-5)
    assert e.T == pytest.approx(e.T_diag + e.T_share + e.T_disj, rel=1e-10)
    assert e.T == pytest.approx(float((grad_log_psi(c) ** 2).sum()), rel=1e-12)


@pytest.mark.parametrize("periodic", [False, True])
def test_move_delta_matches_full_recompute(periodic):
    c = _config(5, periodic=periodic, length=3.0 if periodic else 2.5)
    rng = np.random.default_rng(0)
    for _ in range(200):
        i = int(rng.integers(c.n))
        q = c.positions[i] + rng.uniform(-0.3, 0.3, 3)
        if not periodic:
            q = np.clip(q, 0, c.box.length - 1e-9)
        q = c.box.wrap(q)
        after = c.positions.copy()
        after[i] = q
        ref = naive_log_psi(after, c.box, P)
        res = move_delta(c, i, q)
        if ref == -math.inf:
            assert not res.admissible
            continue
        assert res.admissible
        want = ref - naive_log_psi(c.positions, c.box, P)
        assert abs(res.delta_log_psi - want) < 1e-10 * max(1.0, abs(want))
        before = c.generation
        c.apply_move(i, q)
        assert c.generation == before + 1
        assert abs(log_psi(c) - ref) < 1e-10 * max(1.0, abs(ref))


def test_rejected_move_leaves_state():
    tri = 1.2 * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(0.75), 0]])
    base = np.vstack([tri + 1.0, [8, 8, 8.0]])
    p = ScatteringProfile(1.0, 10.0)
    c = Configuration(base, BoxGeometry(30.0), p)
    before = c.positions.copy()
    res = c.apply_move(3, tri.mean(axis=0) + 1.0)
    assert not res.admissible
    np.testing.assert_array_equal(c.positions, before)
    assert c.generation == 0
    with pytest.raises(ValueError):
        move_delta(c, 0, [-1.0, 0, 0])


def test_cell_list_buckets_consistent():
    c = _config(3, n=40, periodic=False, length=5.0)
    cells = c.cells
    assert cells.nc == int(5.0 // P.ell_tilde)
    members = sorted(j for b in cells.buckets() for j in b)
    assert members == list(range(40))
    rng = np.random.default_rng(1)
    for _ in range(300):
        i = int(rng.integers(40))
        c.apply_move(i, rng.uniform(0, 5.0, 3))
    fresh = CellList(c.positions, c.box, P.ell_tilde)
    assert fresh.buckets() == cells.buckets()


def test_small_periodic_box_collapses_cells():
    box = BoxGeometry(2.6, True)
    c = build_configuration(8, box, P)
    assert c.cells.nc == 1


def test_validation():
    box = BoxGeometry(2.0, True)
    with pytest.raises(ValueError):
        Configuration(np.zeros((3, 3)), box, ScatteringProfile(0.2, 1.0))
    with pytest.raises(ValueError):
        Configuration([[0, 0, 2.5]], BoxGeometry(2.5), P)
    with pytest.raises(ValueError):
        Configuration([[0, 0, np.nan]], BoxGeometry(2.5), P)
    with pytest.raises(ValueError):
        build_configuration(1000, BoxGeometry(5.0), ScatteringProfile(1.0, 3.0))
    with pytest.raises(ValueError):
        build_configuration(3, BoxGeometry(5.0), P, init=np.zeros((2, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 200), st.floats(1.0, 100.0))
def test_lattice_positions_inside_and_distinct(n, L):
    x = lattice_positions(n, BoxGeometry(L))
    assert x.shape == (n, 3)
    assert np.all((x > 0) & (x < L))
    assert len({tuple(r) for r in x}) == n


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relabelling_invariance(seed):
    c = _config(seed % 1000, n=10, length=2.0)
    perm = np.random.default_rng(seed).permutation(10)
    d = Configuration(c.positions[perm], c.box, P)
    assert log_psi(d) == pytest.approx(log_psi(c), rel=1e-12, abs=1e-14)
    np.testing.assert_allclose(grad_log_psi(d), grad_log_psi(c)[perm], rtol=1e-10, atol=1e-13)


def test_periodic_translation_invariance():
    c = _config(7, n=15, periodic=True, length=3.0)
    shifted = c.box.wrap(c.positions + np.array([1.234, -0.7, 2.9]))
    d = Configuration(shifted, c.box, P)
    assert log_psi(d) == pytest.approx(log_psi(c), rel=1e-11)


def test_io_roundtrip(tmp_path):
    c = _config(4, n=7)
    path = tmp_path / "x.txt"
    save_positions_text(path, c.positions)
    np.testing.assert_array_equal(load_positions_text(path), c.positions)
    pos, box = positions_from_json(configuration_to_json(c))
    np.testing.assert_array_equal(pos, c.positions)
    assert box == c.box
    json.loads(configuration_to_json(c))


def test_copy_is_independent():
    c = _config(9, n=10)
    d = c.copy()
    d.apply_move(0, [0.5, 0.5, 0.5])
    assert not np.array_equal(c.positions[0], d.positions[0]) or d.generation == 0
    assert c.generation == 0


def test_sandwich_small_cases():
    p = ScatteringProfile(1.0, 10.0)
    lower, prod = sandwich_terms(np.zeros((2, 3)), p)
    assert (lower, prod) == (1.0, 1.0)
    far = np.array([[0, 0, 0], [100, 0, 0], [0, 100, 0], [0, 0, 100.0]])
    assert sandwich_terms(far, p) == (1.0, 1.0)
    close = 2.0 * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(0.75), 0]])
    lower, prod = sandwich_terms(close, p)
    assert prod == pytest.approx((15 / 16) ** 2, rel=1e-14)
    assert lower <= prod <= 1


def test_sandwich_suite_no_violations():
    rep = sandwich_suite(P, 500, max_n=12, seed=3)
    assert rep["passed"] and rep["violations"] == 0
    assert rep["with_active_triples"] > 50
    assert rep["min_gap"] >= -1e-12
