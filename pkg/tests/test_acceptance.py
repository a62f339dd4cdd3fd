"""Acceptance criteria at desk scale.

Each test prints one PASS/FAIL line with the measured quantity next to its
threshold; the lines are repeated in the terminal summary. The full module
takes about a quarter of an hour on one core.
"""

import math
import time

import numpy as np
import pytest
import scipy.linalg as la

from qbxdirect import error_model as em
from qbxdirect import experiments as ex
from qbxdirect.assembly import OperatorSpec, assemble_dense
from qbxdirect.geometry import attach_qbx_centers, build_starfish
from qbxdirect.idecomp import id_columns
from qbxdirect.kernels import (dlp_kernel, green, legendre, sph_harm_all, sphere_rule)
from qbxdirect.solver import compress_multilevel, solve
from qbxdirect.tree import build_tree

STARFISH = {"kind": "starfish", "amplitude": 0.25, "arms": 16, "panels": 1280, "order": 4}
TORUS = {"kind": "torus", "major_radius": 10, "minor_radius": 2, "panels_u": 40,
         "panels_v": 10, "order": 4}
SPHERE = {"kind": "sphere", "radius": 1, "panels_per_face": 4, "order": 4}
GRID = (1e-4, 1e-8, 1e-12)


def _median_by_eps(rows, key="error"):
    eps = sorted({r["eps"] for r in rows}, reverse=True)
    return eps, [float(np.median([r[key] for r in rows if r["eps"] == e])) for e in eps]


# {{{ 1-3: building blocks

def test_c1_id_bound(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        m, n = 50, 80
        sig = np.exp(-rng.uniform(0.1, 1.0) * np.arange(m))
        u, _ = np.linalg.qr(rng.normal(size=(m, m)))
        v, _ = np.linalg.qr(rng.normal(size=(n, m)))
        a = (u * sig) @ v.T
        s = np.linalg.svd(a, compute_uv=False)
        for k in range(1, m - 1, 3):
            res = id_columns(a, rank=k)
            err = np.linalg.norm(a - a[:, res.skel] @ res.interp, 2)
            bound = s[k] * math.sqrt(1 + k * (n - k)) * 10
            worst = max(worst, err / max(bound, 1e-300))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and elapsed < 10
    report(1, ok, f"max residual/bound {worst:.3g} (<= 1), {elapsed:.1f} s (< 10 s)")
    assert ok


def _proxy_bound_configs(dim, count, rng):
    for _ in range(count):
        c = rng.normal(size=dim)
        r_pxy = rng.uniform(0.5, 2.0)
        u, v = rng.normal(size=dim), rng.normal(size=dim)
        y = c + rng.uniform(0.05, 0.9) * r_pxy * u / np.linalg.norm(u)
        x = c + rng.uniform(1.05, 4.0) * r_pxy * v / np.linalg.norm(v)
        yield x, y, c, r_pxy, int(rng.integers(0, 13))


def test_c2_pointwise_proxy_bound(report):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    counts, worst = {}, {}
    for dim in (2, 3):
        bad, w = 0, 0.0
        for x, y, c, r_pxy, p in _proxy_bound_configs(dim, 10_000, rng):
            measured, bound = em.lemma1_check(x, y, c, r_pxy, p, dim)
            scale = abs(float(green(dim, x, y))) + 1.0 / (4 * math.pi * r_pxy)
            if measured > bound + 1e-14 * scale:
                bad += 1
                w = max(w, measured / bound)
        counts[dim], worst[dim] = bad, w
    elapsed = time.perf_counter() - t0
    ok = counts[2] == 0 and counts[3] == 0 and elapsed < 30
    report(2, ok, f"violations 2D {counts[2]}, 3D {counts[3]} of 10^4 each (need 0); "
                  f"worst violating measured/bound 2D {worst[2]:.3g}, 3D {worst[3]:.3g}; "
                  f"{elapsed:.1f} s (< 30 s)")
    assert ok


def test_c3_sphere_rule_and_addition(report):
    worst_rule = 0.0
    for p in range(1, 11):
        rule = sphere_rule(p)
        y = sph_harm_all(2 * p, rule.points)
        for ell in range(1, 2 * p + 1):
            ints = y[ell, 2 * p - ell:2 * p + ell + 1] @ rule.weights
            worst_rule = max(worst_rule, float(np.abs(ints).max()))
    rng = np.random.default_rng(303)
    a = rng.normal(size=(50, 3))
    b = rng.normal(size=(50, 3))
    a /= np.linalg.norm(a, axis=1)[:, None]
    b /= np.linalg.norm(b, axis=1)[:, None]
    lmax = 20
    ya, yb = sph_harm_all(lmax, a), sph_harm_all(lmax, b)
    t = np.sum(a * b, axis=1)
    worst_add = 0.0
    for ell in range(lmax + 1):
        lhs = np.sum(ya[ell] * np.conj(yb[ell]), axis=0)
        rhs = (2 * ell + 1) / (4 * math.pi) * legendre(ell, t)
        worst_add = max(worst_add, float(np.abs(lhs - rhs).max()))
    ok = worst_rule <= 1e-11 and worst_add <= 1e-12
    report(3, ok, f"max |rule integral| {worst_rule:.2e} (<= 1e-11), "
                  f"addition theorem {worst_add:.2e} (<= 1e-12)")
    assert ok

# }}}


# {{{ 4-5: accuracy on a fixed proxy count per geometry

def _accuracy(geometry, q):
    cfg = ex.ExperimentConfig(geometry=geometry, q=q, tolerances=GRID + (1e-15,))
    t0 = time.perf_counter()
    prob = ex.build_problem(cfg)
    sig = ex.random_densities(prob.n, cfg.samples, cfg.seed)
    rhs = ex.dense_rhs(prob, sig)
    fwd, sol = [], []
    for tol in cfg.tolerances:
        f = ex.compress_for(prob, tol)
        fwd += [{"eps": tol, "error": e} for e in ex.forward_errors(f, sig, rhs)]
        sol += [{"eps": tol, "error": e} for e in ex.solution_errors(f, sig, rhs)]
    return prob.n, fwd, sol, time.perf_counter() - t0


@pytest.fixture(scope="module")
def accuracy():
    return {"2D": _accuracy(STARFISH, 129), "3D": _accuracy(TORUS, 400)}


def _worst(rows, eps):
    return max(r["error"] for r in rows if r["eps"] == eps)


def test_c4_forward_accuracy(report, accuracy):
    ok, parts = True, []
    for name, (n, fwd, _, secs) in accuracy.items():
        ratios = [_worst(fwd, e) / e for e in GRID]
        floor = _worst(fwd, 1e-15)
        ok &= max(ratios) <= 100 and floor <= 1e-11 and secs < 600
        parts.append(f"{name} n={n} max err/eps {max(ratios):.3g} (<= 100), "
                     f"eps=1e-15 err {floor:.2e} (<= 1e-11), {secs:.0f} s (< 600 s)")
    report(4, ok, "; ".join(parts))
    assert ok


def test_c5_solution_accuracy(report, accuracy):
    ok, parts = True, []
    for name, (n, _, sol, _) in accuracy.items():
        ratio = max(_worst(sol, e) / e for e in GRID)
        ok &= ratio <= 1e3
        parts.append(f"{name} double layer max err/eps {ratio:.3g} (<= 1e3)")
    cfg = ex.ExperimentConfig(geometry=SPHERE, layer="single", q=200, tolerances=GRID)
    eps, med = _median_by_eps(ex.run_solve_error(ex.build_problem(cfg)))
    mono = all(a > b for a, b in zip(med, med[1:]))
    ok &= mono
    offset = np.median([m / e for m, e in zip(med, eps)])
    parts.append("3D single layer medians " + ", ".join(f"{m:.1e}" for m in med)
                 + f" monotone={mono}, offset ~{offset:.1e}")
    report(5, ok, "; ".join(parts))
    assert ok

# }}}


# {{{ 6, 11: dense oracles

def test_c6_dense_lu_equivalence(report):
    t0 = time.perf_counter()
    d = attach_qbx_centers(build_starfish(0.25, 16, 240, 4))
    spec = OperatorSpec.preset(2, "double")
    f = compress_multilevel(spec, d, build_tree(d, 8), 1e-15, q=129)
    b = np.random.default_rng(606).uniform(-1, 1, d.n)
    ref = la.lu_solve(la.lu_factor(assemble_dense(spec, d)), b)
    err = np.linalg.norm(solve(f, b) - ref) / np.linalg.norm(ref)
    elapsed = time.perf_counter() - t0
    ok = d.n <= 1000 and err <= 1e-7 and elapsed < 60
    report(6, ok, f"n={d.n}, relative difference {err:.2e} (<= 1e-7), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_c11_green_identity_bvp(report):
    # 12 nodes per panel: accurate enough without oversampling while the
    # discrete operator stays invertible in double precision
    d = attach_qbx_centers(build_starfish(0.25, 16, 256, 12))
    spec = OperatorSpec.preset(2, "double", "interior", qbx_order=4)
    src = np.array([3.0, 1.0])
    f = compress_multilevel(spec, d, build_tree(d, 8), 1e-12, q=129)
    sigma = solve(f, green(2, d.nodes, src))
    targets = 0.5 * np.random.default_rng(1111).uniform(-1, 1, size=(50, 2))
    u = (dlp_kernel(2, targets[:, None], d.nodes[None], d.normals[None]) * d.weights) @ sigma
    err = float(np.abs(u - green(2, targets, src)).max())
    ok = err <= 1e-6
    report(11, ok, f"n={d.n}, max interior error {err:.2e} (<= 1e-6)")
    assert ok

# }}}


# {{{ 7-10: studies

def test_c7_weight_ablation(report):
    cfg = ex.ExperimentConfig(geometry=TORUS, q=192, alpha=1.15,
                              tolerances=(1e-3, 1e-5, 1e-7, 1e-9, 1e-11))
    rows = ex.run_ablate_weight(ex.build_problem(cfg), seeds=(0, 1, 2), q=192)
    w = np.median([r["weighted"] for r in rows])
    u = np.median([r["unweighted"] for r in rows])
    share = np.mean([r["weighted"] <= r["unweighted"] for r in rows])
    ok = w <= u
    report(7, ok, f"median weighted {w:.2e} <= unweighted {u:.2e}; "
                  f"weighted better in {100 * share:.0f}% of {len(rows)} rows")
    assert ok


def test_c8_proxy_sweep_slope(report):
    cfg = ex.ExperimentConfig(geometry=STARFISH, q=129)
    _, slopes = ex.run_sweep_proxy(ex.build_problem(cfg), tol=1e-15)
    within = [s for s in slopes
              if abs(s["slope"] - s["model_slope"]) <= 0.25 * abs(s["model_slope"])]
    ok = len(within) >= 2
    detail = ", ".join(f"alpha {s['alpha']}: {s['slope']:.3f} vs {s['model_slope']:.3f}"
                       for s in slopes)
    report(8, ok, f"2D slopes {detail}; {len(within)} within 25% (need >= 2)")
    assert ok


def test_c9_proxy_count_estimator(report):
    cfg = ex.ExperimentConfig(geometry=STARFISH, q="auto",
                              tolerances=(1e-4, 1e-6, 1e-8, 1e-10, 1e-12))
    rows, _, _ = ex.run_estimate_q(ex.build_problem(cfg))
    ok = all(0.25 <= r["ratio"] <= 4 for r in rows)
    detail = ", ".join(f"{r['eps']:.0e}: {r['q_model']}/{r['q_empirical']}" for r in rows)
    report(9, ok, f"2D model/empirical q {detail} (each within a factor 4)")
    assert ok


def test_c10_scaling(report):
    t0 = time.perf_counter()
    cfg2 = ex.ExperimentConfig(geometry=STARFISH, q=129, tolerances=(1e-8,))
    _, s2 = ex.run_scaling(cfg2, ex.default_sizes("starfish"), tol=1e-8, q=129)
    cfg3 = ex.ExperimentConfig(geometry=SPHERE, q=200, tolerances=(1e-6,))
    _, s3 = ex.run_scaling(cfg3, ex.default_sizes("sphere"), tol=1e-6, q=200)
    elapsed = time.perf_counter() - t0
    ok = 0.8 <= s2 <= 1.3 and 1.2 <= s3 <= 1.7 and elapsed < 1800
    report(10, ok, f"2D slope {s2:.3f} in [0.8, 1.3], 3D sphere slope {s3:.3f} in [1.2, 1.7], "
                   f"5 sizes each, {elapsed:.0f} s (< 1800 s)")
    assert ok

# }}}
