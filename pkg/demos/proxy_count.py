"""Pick the proxy count from the error model and compare with measured errors.

A pilot leaf-level skeletonization measures the cluster constants. The model
then proposes a proxy count for each tolerance, and the compressed operator
built with that count is checked against the dense QBX matvec.

    python demos/proxy_count.py [--panels 640]
"""

import argparse

from qbxdirect import error_model as em
from qbxdirect import experiments as ex


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--panels", type=int, default=640)
    parser.add_argument("--alpha", type=float, default=1.15)
    args = parser.parse_args()

    geometry = {"kind": "starfish", "amplitude": 0.25, "arms": 16,
                "panels": args.panels, "order": 4}
    cfg = ex.ExperimentConfig(geometry=geometry, alpha=args.alpha, q="auto")
    prob = ex.build_problem(cfg)
    consts = ex.pilot_constants(prob, args.alpha)
    print(f"{prob.n} unknowns; c0 {consts.c0:.3g}, c1 {consts.c1:.3g}, "
          f"R_pxy {consts.R_pxy:.3g}, |L| {consts.norm_L:.3g}, |R| {consts.norm_R:.3g}")

    sig = ex.random_densities(prob.n, 1, seed=0)
    rhs = ex.dense_rhs(prob, sig)
    print(f"{'eps':>8} {'q':>5} {'predicted':>10} {'measured':>10}")
    for tol in (1e-4, 1e-6, 1e-8, 1e-10):
        _, q = em.estimate_proxy_order(tol, args.alpha, consts.R_pxy, consts, dim=2)
        f = ex.compress_for(prob, tol, q=q)
        err = ex.forward_errors(f, sig, rhs)[0]
        pred = em.model_error(q, args.alpha, consts.R_pxy, tol, consts, dim=2)
        print(f"{tol:8.0e} {q:5d} {pred:10.2e} {err:10.2e}")


if __name__ == "__main__":
    main()
