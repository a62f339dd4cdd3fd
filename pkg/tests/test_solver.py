import numpy as np
import pytest
import scipy.linalg as la

from qbxdirect.assembly import OperatorSpec, apply_dense, assemble_dense
from qbxdirect.geometry import attach_qbx_centers, build_circle, build_starfish
from qbxdirect.solver import (apply, compress, compress_multilevel, compress_single_level,
                              solve, write_stats)
from qbxdirect.tree import build_tree

rng = np.random.default_rng(9)


def setup(panels=100, layer="double", cap=8, arms=16):
    d = attach_qbx_centers(build_starfish(0.25, arms, panels, 4))
    spec = OperatorSpec.preset(2, layer)
    return d, build_tree(d, cap), spec


@pytest.fixture(scope="module")
def tiny():
    d, t, spec = setup(100, arms=5)
    return d, t, spec, assemble_dense(spec, d)


@pytest.fixture(scope="module")
def small():
    d, t, spec = setup(256)
    return d, t, spec, assemble_dense(spec, d)


def reconstruct(factor, n):
    return np.column_stack([apply(factor, e) for e in np.eye(n)])


def test_single_level_reconstruction(tiny):
    d, t, spec, a = tiny
    f = compress_single_level(spec, d, t, 1e-15, q=64)
    assert f.nlevels == 2
    err = np.linalg.norm(a - reconstruct(f, d.n), 2) / np.linalg.norm(a, 2)
    assert err <= 1e-10


def test_multilevel_reconstruction(tiny):
    d, t, spec, a = tiny
    f = compress_multilevel(spec, d, t, 1e-15, q=64)
    assert f.nlevels == t.nlevels
    err = np.linalg.norm(a - reconstruct(f, d.n), 2) / np.linalg.norm(a, 2)
    assert err <= 1e-10


def test_one_cluster_rejected():
    d, t, spec = setup(100, cap=1000, arms=5)
    assert len(t.leaves) == 1
    with pytest.raises(ValueError):
        compress(spec, d, t, 1e-8)


def test_bad_arguments(tiny):
    d, t, spec, _ = tiny
    with pytest.raises(ValueError):
        compress(spec, d, t, 0.0)
    with pytest.raises(ValueError):
        compress(spec, d, t, 1e-8, q="auto")
    with pytest.raises(ValueError):
        compress(spec, d, t, 1e-8, alpha=0.9)


@pytest.mark.parametrize("two_level", [True, False])
def test_solve_matches_dense_lu(small, two_level):
    d, t, spec, a = small
    f = compress(spec, d, t, 1e-15, q=128, two_level=two_level)
    b = rng.uniform(-1, 1, d.n)
    x = solve(f, b)
    ref = la.lu_solve(la.lu_factor(a), b)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_unit_vector_recovery(small):
    d, t, spec, a = small
    f = compress_multilevel(spec, d, t, 1e-10, q=64)
    kappa = np.linalg.cond(a)
    for j in (0, d.n // 3):
        e = np.zeros(d.n)
        e[j] = 1.0
        assert np.linalg.norm(solve(f, a @ e) - e) <= 1e-6 * kappa


def test_zero_rhs(small):
    d, t, spec, _ = small
    f = compress_multilevel(spec, d, t, 1e-8, q=64)
    assert np.all(solve(f, np.zeros(d.n)) == 0)
    assert np.all(apply(f, np.zeros(d.n)) == 0)


@pytest.mark.parametrize("tol", [1e-4, 1e-8, 1e-12])
def test_forward_error_tracks_tolerance(small, tol):
    d, t, spec, a = small
    f = compress_multilevel(spec, d, t, tol, q=128)
    sigma = rng.uniform(-1, 1, d.n)
    err = np.linalg.norm(a @ sigma - apply(f, sigma)) / np.linalg.norm(sigma)
    assert err <= 100 * tol


def test_round_trip(small):
    d, t, spec, a = small
    tol = 1e-10
    f = compress_multilevel(spec, d, t, tol, q=64)
    sigma = rng.uniform(-1, 1, d.n)
    kappa = np.linalg.cond(a)
    assert np.linalg.norm(solve(f, apply(f, sigma)) - sigma) <= 10 * tol * kappa * \
        np.linalg.norm(sigma)


def test_two_level_tree_equals_single_level():
    d = attach_qbx_centers(build_circle(1.0, 32, 4))
    t = build_tree(d, 8)
    assert t.nlevels == 2
    spec = OperatorSpec.preset(2, "double")
    f1 = compress(spec, d, t, 1e-10, q=32, two_level=True)
    f2 = compress(spec, d, t, 1e-10, q=32)
    for c1, c2 in zip(f1.levels[0], f2.levels[0]):
        np.testing.assert_array_equal(c1.row_skel, c2.row_skel)
        np.testing.assert_allclose(c1.L, c2.L)
    b = np.ones(d.n)
    np.testing.assert_allclose(solve(f1, b), solve(f2, b))


def test_level_tuples_nest(small):
    d, t, spec, _ = small
    f = compress_multilevel(spec, d, t, 1e-8, q=64)
    assert sorted(np.concatenate(f.level_tuples(0))) == list(range(d.n))
    for l in range(f.nlevels - 1):
        below = set(np.concatenate(f.level_tuples(l)))
        above = np.concatenate(f.level_tuples(l + 1))
        assert set(above) <= below
    assert len(f.level_tuples(f.nlevels - 1)) == 1


def test_deterministic(small):
    d, t, spec, _ = small
    f1 = compress_multilevel(spec, d, t, 1e-8, q=64)
    f2 = compress_multilevel(spec, d, t, 1e-8, q=64)
    assert [s["k"] for s in f1.cluster_stats()] == [s["k"] for s in f2.cluster_stats()]
    b = np.ones(d.n)
    np.testing.assert_array_equal(solve(f1, b), solve(f2, b))


def test_single_layer_solve(small):
    d, t, _, _ = small
    spec = OperatorSpec.preset(2, "single")
    a = assemble_dense(spec, d)
    f = compress_multilevel(spec, d, t, 1e-12, q=128)
    sigma = rng.uniform(-1, 1, d.n)
    b = apply_dense(spec, d, sigma)
    assert np.linalg.norm(a @ sigma - b) <= 1e-12 * np.linalg.norm(b)
    assert np.linalg.norm(solve(f, b) - sigma) <= 1e-6 * np.linalg.norm(sigma)


def test_write_stats(tmp_path, small):
    d, t, spec, _ = small
    f = compress_multilevel(spec, d, t, 1e-8, q=32)
    path = tmp_path / "stats.csv"
    write_stats(f, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("level,clusters")
    assert len(lines) == 1 + f.nlevels
