import math

import numpy as np
import pytest

from qbxdirect import error_model as em
from qbxdirect.assembly import OperatorSpec
from qbxdirect.geometry import attach_qbx_centers, build_starfish
from qbxdirect.solver import compress_multilevel
from qbxdirect.tree import build_tree

rng = np.random.default_rng(4)


@pytest.fixture(scope="module")
def factor():
    d = attach_qbx_centers(build_starfish(0.25, 16, 256, 4))
    f = compress_multilevel(OperatorSpec.preset(2, "double"), d, build_tree(d, 8), 1e-8, q=33)
    return d, f


def test_cluster_terms(factor):
    _, f = factor
    for s in f.cluster_stats():
        a0, a1, b0, b1 = em.cluster_terms(s)
        assert b0 == 1.0
        assert a0 == pytest.approx(s["w_far_max"] / s["w_pxy"])


def test_c1_against_stored_factors(factor):
    d, f = factor
    c = em.measure_constants(f.cluster_stats(), f.alpha)
    direct = max((1 + np.linalg.norm(cl.R, 2)) * d.weights[cl.cols].max()
                 for lvl in f.levels for cl in lvl)
    assert c.c1 >= direct * (1 - 1e-12)
    assert c.c0 >= 1.0
    assert c.norm_L == pytest.approx(max(np.linalg.norm(cl.L, 2) for lvl in f.levels
                                         for cl in lvl))


def test_model_limits():
    c = em.ModelConstants(2.0, 3.0)
    assert em.model_error(10 ** 6, 1.5, 1.0, 0.0, c, dim=2) < 1e-100
    assert em.model_error(2 * 60 * 61, 1.5, 1.0, 0.0, c, dim=3) < 1e-9


@pytest.mark.parametrize("dim", [2, 3])
def test_proxy_term_ratio(dim):
    c = em.ModelConstants(2.0, 3.0)
    alpha = 1.3
    for p in (3, 6, 10):
        q1 = 2 * p + 1 if dim == 2 else em.realizable_count(2 * p * (p + 1))
        q2 = 4 * p + 1 if dim == 2 else em.realizable_count(2 * 2 * p * (2 * p + 1))
        p1, p2 = em.proxy_order(q1, dim), em.proxy_order(q2, dim)
        assert p2 == 2 * p1
        t1 = em.model_terms(q1, alpha, 1.0, 0.0, c, dim)[1]
        t2 = em.model_terms(q2, alpha, 1.0, 0.0, c, dim)[1]
        # the 3D prefactor does not depend on q; the 2D one neither
        assert t2 / t1 == pytest.approx(alpha ** -p1, rel=1e-12)


def test_estimate_reference_arithmetic():
    C0, C1 = 5.315e-3, 1.582e-5
    c0, c1, R, alpha, eps = 1.0, 1.0, 1.0, 1.15, 1e-15
    c = em.ModelConstants(c0, c1, R_pxy=R).with_reference(3, "double")
    assert (c.C0, c.C1) == (C0, C1)
    # scripted balance of the two terms
    arg = (alpha - 1) * 4 * math.pi * R * (1 + 4 * math.pi * C0 * c0 * R ** 2) / (C1 * c1) * eps
    p_expected = math.ceil(-math.log(arg) / math.log(alpha))
    p, q = em.estimate_proxy_order(eps, alpha, R, c, dim=3, p_max=10 ** 6)
    assert p == p_expected
    assert q == em.realizable_count(2 * p * (p + 1))
    assert 2 * p * (p + 1) <= q < 2 * (p + 1) * (p + 2)


def test_estimate_monotone_in_alpha():
    c = em.ModelConstants(1.0, 1.0)
    ps = [em.estimate_proxy_order(1e-10, a, 1.0, c, dim=3, p_max=10 ** 6)[0]
          for a in (1.1, 1.5, 2.0, 3.0)]
    assert ps == sorted(ps, reverse=True) and ps[0] > ps[-1]


def test_estimate_clamped():
    c = em.ModelConstants(1.0, 1.0)
    assert em.estimate_proxy_order(1e-300, 1.01, 1.0, c, dim=3)[0] == em.P_MAX
    assert em.estimate_proxy_order(1e-300, 1.01, 1.0, c, dim=2)[0] == em.P_MAX_2D
    assert em.estimate_proxy_order(1.0, 3.0, 1.0, c, dim=3)[0] == em.P_MIN


def synthetic(C0, C1, base, dim, noise=0.0):
    rows = []
    for eps in (1e-4, 1e-6, 1e-8, 1e-10, 1e-12):
        for q in ((9, 17, 33, 65, 129) if dim == 2 else (12, 40, 84, 144, 220)):
            c = em.ModelConstants(base.c0, base.c1, C0, C1, base.R_pxy, 1.5)
            m = em.model_error(q, 1.5, base.R_pxy, eps, c, dim) * math.exp(noise * rng.normal())
            rows.append((eps, q, 1.5, m))
    return rows


@pytest.mark.parametrize("dim", [2, 3])
def test_fit_recovers_constants(dim):
    base = em.ModelConstants(2.0, 0.5, R_pxy=0.8, alpha=1.5)
    fit = em.fit_constants(synthetic(3e-2, 4e-3, base, dim), base, dim)
    assert not fit.degenerate
    assert fit.C0 == pytest.approx(3e-2, rel=1e-2)
    assert fit.C1 == pytest.approx(4e-3, rel=1e-2)


def test_fit_two_regimes_beats_one():
    base = em.ModelConstants(2.0, 0.5, R_pxy=0.8, alpha=1.5)
    data = synthetic(3e-2, 4e-3, base, 3, noise=0.05)
    full = em.fit_constants(data, base, 3)
    only_id = em.fit_constants(data, base, 3, dominance=0.0)
    assert full.residual < only_id.residual


def test_fit_degenerate_single_regime():
    base = em.ModelConstants(2.0, 0.5, R_pxy=0.8, alpha=1.5)
    # huge q: only the ID term is visible
    data = [(e, 2001, 1.5, 3.0 * e) for e in (1e-4, 1e-6, 1e-8)]
    fit = em.fit_constants(data, base, 2)
    assert fit.degenerate and fit.C1 == base.C1


def test_fit_rejects_bad_data():
    base = em.ModelConstants(1.0, 1.0)
    with pytest.raises(ValueError):
        em.fit_constants([(1e-4, 10, 1.5, 1e-3)], base)
    with pytest.raises(ValueError):
        em.fit_constants([(1e-4, 10, 1.5, 0.0), (1e-6, 10, 1.5, 1e-5)], base)


def test_constants_validation():
    with pytest.raises(ValueError):
        em.ModelConstants(0.0, 1.0)
    with pytest.raises(ValueError):
        em.ModelConstants(1.0, 1.0, alpha=1.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_proxy_bound_center_source_exact(dim):
    c = np.zeros(dim)
    x = np.full(dim, 3.0)
    for p in (0, 2, 7):
        measured, _ = em.lemma1_check(x, c, c, 1.0, p, dim)
        assert measured < 1e-14


@pytest.mark.parametrize("dim", [2, 3])
def test_proxy_bound_random(dim):
    violations = 0
    for _ in range(300):
        c = rng.normal(size=dim)
        r_pxy = rng.uniform(0.5, 2.0)
        u, v = rng.normal(size=dim), rng.normal(size=dim)
        y = c + rng.uniform(0.05, 0.9) * r_pxy * u / np.linalg.norm(u)
        x = c + rng.uniform(1.05, 4.0) * r_pxy * v / np.linalg.norm(v)
        p = int(rng.integers(0, 13))
        measured, bound = em.lemma1_check(x, y, c, r_pxy, p, dim)
        scale = abs(em.green(dim, x, y)) + 1.0 / (4 * math.pi * r_pxy)
        violations += measured > bound + 1e-14 * scale
    assert violations == 0


def test_proxy_bound_rejects_bad_geometry():
    with pytest.raises(ValueError):
        em.lemma1_check([0.5, 0, 0], [0.1, 0, 0], np.zeros(3), 1.0, 3)


def test_transfer_norm_ratio_finite():
    far = rng.normal(size=(30, 3))
    far = 3.0 * far / np.linalg.norm(far, axis=1)[:, None]
    r = em.transfer_norm_ratio(far, np.zeros(3), 1.0, 6, 3)
    assert 0 < r < 1e3


def test_write_sweep(tmp_path):
    path = tmp_path / "s.csv"
    em.write_sweep(path, [{"q": 8, "error": 1e-3}], {"alpha": 1.15, "seed": 0})
    text = path.read_text().splitlines()
    assert text[:2] == ["# alpha: 1.15", "# seed: 0"]
    assert text[2:] == ["q,error", "8,0.001"]
