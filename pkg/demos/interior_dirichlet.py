"""Solve an interior Dirichlet problem on a starfish with the compressed solver.

The boundary data comes from a point source outside the curve, so the exact
interior solution is known. The script prints the skeleton sizes per level,
the timings and the interior error.

    python demos/interior_dirichlet.py [--panels 256] [--tol 1e-12]
"""

import argparse
import time

import numpy as np

from qbxdirect import (OperatorSpec, attach_qbx_centers, build_starfish, build_tree,
                       compress_multilevel, solve_multilevel)
from qbxdirect.kernels import dlp_kernel, green


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--panels", type=int, default=256)
    parser.add_argument("--order", type=int, default=12, help="nodes per panel")
    parser.add_argument("--tol", type=float, default=1e-12)
    parser.add_argument("--q", type=int, default=129, help="proxy points per cluster")
    args = parser.parse_args()

    disc = attach_qbx_centers(build_starfish(0.25, 16, args.panels, args.order), "interior")
    spec = OperatorSpec.preset(2, "double", "interior")
    tree = build_tree(disc, max_panels_per_leaf=8)
    print(f"{disc.n} unknowns, {tree.nlevels} tree levels")

    t0 = time.perf_counter()
    factor = compress_multilevel(spec, disc, tree, args.tol, alpha=1.15, q=args.q)
    t1 = time.perf_counter()
    for l, clusters in enumerate(factor.levels):
        ks = [c.k for c in clusters]
        print(f"  level {l}: {len(ks):4d} clusters, skeleton mean {np.mean(ks):6.1f} max {max(ks)}")
    print(f"  root: {factor.root.n} unknowns")

    source = np.array([3.0, 1.0])
    sigma = solve_multilevel(factor, green(2, disc.nodes, source))
    t2 = time.perf_counter()
    print(f"compress {t1 - t0:.2f} s, solve {t2 - t1:.3f} s")

    targets = 0.5 * np.random.default_rng(0).uniform(-1, 1, size=(200, 2))
    u = (dlp_kernel(2, targets[:, None], disc.nodes[None], disc.normals[None])
         * disc.weights) @ sigma
    err = np.abs(u - green(2, targets, source)).max()
    print(f"max interior error {err:.2e}")


if __name__ == "__main__":
    main()
