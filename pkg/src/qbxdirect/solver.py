"""Telescoping proxy-skeletonization factorization: compression, solve and apply.

Each level ``l`` holds clusters with active rows ``I`` and columns ``J``
(the retained skeletons of the level below) and the factors

    A^(l) ~= D^(l) + L^(l) (A^(l+1) - Dhat^(l)) R^(l),
    Dhat^(l) = (R^(l) D^(l)^-1 L^(l))^-1,

where ``D^(l)`` holds the diagonal blocks of ``A^(l)`` and ``A^(l+1)`` is
``A`` restricted to the skeletons with each child diagonal block replaced by
that child's ``Dhat``. The last level is a single dense block.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg as la
from scipy.spatial import cKDTree

from . import error_model
from .assembly import OperatorSpec, block_entries
from .geometry import Discretization
from .idecomp import id_from_qr, pivoted_qr, tolerance_rank
from .skeleton import (cluster_geometry, proxy_ball, source_proxy_matrix, split_near_far,
                       target_proxy_matrix)
from .tree import ClusterTree

DEFAULT_ALPHA = 1.15


class SingularBlockError(np.linalg.LinAlgError):
    """A diagonal block or the root system is numerically singular."""


@dataclass
class ClusterFactor:
    """Factors of one cluster at one level.

    ``rows``/``cols`` are original node indices; ``row_skel``/``col_skel`` are
    positions into them. ``children`` lists ``(child, offset)`` pairs into the
    level below; the child's skeleton occupies ``[offset, offset + k)``.
    """

    rows: np.ndarray
    cols: np.ndarray
    children: list
    diag: Optional[np.ndarray] = None
    lu: Optional[tuple] = None
    L: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    dhat: Optional[np.ndarray] = None
    row_skel: Optional[np.ndarray] = None
    col_skel: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def k(self) -> int:
        return 0 if self.row_skel is None else len(self.row_skel)


@dataclass
class MultiLevelFactor:
    spec: OperatorSpec
    n: int
    levels: list
    root: ClusterFactor
    alpha: float
    tol: float
    proxy_counts: list
    timings: dict = field(default_factory=dict)

    @property
    def nlevels(self) -> int:
        return len(self.levels) + 1

    def cluster_stats(self, level: Optional[int] = None) -> list:
        lv = range(len(self.levels)) if level is None else [level]
        return [c.stats for l in lv for c in self.levels[l]]

    def level_tuples(self, level: int, side: str = "rows") -> list:
        """Active row (or column) indices of every cluster at ``level``."""
        clusters = self.levels[level] if level < len(self.levels) else [self.root]
        return [c.rows if side == "rows" else c.cols for c in clusters]

    def memory_bytes(self, level: int) -> int:
        return sum(sum(a.nbytes for a in (c.diag, c.L, c.R, c.dhat) if a is not None)
                   for c in self.levels[level])


# a single-level factor is the two-level special case
SingleLevelFactor = MultiLevelFactor


# {{{ compression

def _level_groups(tree: ClusterTree, two_level: bool):
    """Per level, the list of cluster box ids and the parent position of each."""
    if two_level:
        leaves = tree.levels[0]
        return [leaves, [0]], [[0] * len(leaves)]
    parents = []
    for l in range(tree.nlevels - 1):
        nxt = {b: i for i, b in enumerate(tree.levels[l + 1])}
        parents.append([nxt[tree.level_parent(l, b)] for b in tree.levels[l]])
    return tree.levels, parents


def _diag_block(spec, disc, cluster: ClusterFactor, below):
    d = block_entries(spec, disc, cluster.rows, cluster.cols)
    for child, off in cluster.children:
        ch = below[child]
        d[off:off + ch.k, off:off + ch.k] = ch.dhat
    return d


def _lu(matrix, what):
    lu, piv = la.lu_factor(matrix, check_finite=False)
    u = np.abs(np.diag(lu))
    if len(u) and (not np.all(np.isfinite(lu)) or u.min() <= 1e-15 * u.max() or u.max() == 0):
        raise SingularBlockError(f"{what} is numerically singular")
    return lu, piv


def _proxy_q(q, level, tol, alpha, rpxy, constants, dim):
    if q != "auto":
        return int(q)
    return error_model.estimate_proxy_order(tol, alpha, rpxy, constants, dim=dim)[1]


def compress(spec: OperatorSpec, disc: Discretization, tree: ClusterTree, tol: float,
             alpha: float = DEFAULT_ALPHA, q: Union[int, str] = 64,
             constants: Optional["error_model.ModelConstants"] = None,
             weighted: bool = True, qbx_proxy: bool = True, ball_overlap: bool = True,
             two_level: bool = False, max_levels: Optional[int] = None,
             skip_root: bool = False) -> MultiLevelFactor:
    """Build the telescoping factorization.

    ``q`` is the proxy count per cluster or ``"auto"`` to choose it per level
    from the error model (``constants`` required). ``weighted`` toggles the
    proxy weight of the target proxy matrix, ``qbx_proxy`` evaluates the
    target-proxy block through QBX, and ``ball_overlap`` marks targets whose
    QBX ball touches a source proxy ball as near. ``two_level`` merges all
    leaves directly into the root (single-level compression). ``skip_root``
    leaves the root unfactored, which is enough for cluster statistics.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if q == "auto" and constants is None:
        raise ValueError("automatic proxy counts need model constants")
    if len(tree.leaves) < 2:
        raise ValueError("need at least two clusters to compress")

    groups, parents = _level_groups(tree, two_level)
    if max_levels is not None:
        groups, parents = groups[:max_levels], parents[:max_levels - 1]
        groups[-1] = [0]
        parents[-1] = [0] * len(parents[-1])

    t0 = time.perf_counter()
    current = []
    for b in groups[0]:
        idx = tree.box_nodes(b)
        current.append(ClusterFactor(idx, idx, []))
    levels, qs = [], []

    center_tree = cKDTree(disc.qbx_centers) if ball_overlap else None
    for l in range(len(groups) - 1):
        row_active = _mask(disc.n, [c.rows for c in current])
        cols = np.concatenate([c.cols for c in current])
        col_active = _mask(disc.n, [cols])
        by_weight = cols[np.argsort(-disc.weights[cols], kind="stable")]
        geo_r = [cluster_geometry(disc, c.rows) for c in current]
        geo_c = [cluster_geometry(disc, c.cols) for c in current]
        rmax = max(alpha * (g[1] + g[2]) for g in geo_r + geo_c)
        ql = _proxy_q(q, l, tol, alpha, rmax, constants, disc.dim)
        qs.append(ql)

        for c, gr, gc in zip(current, geo_r, geo_c):
            c.diag = _diag_block(spec, disc, c, levels[-1] if levels else [])
            c.lu = _lu(c.diag, f"diagonal block at level {l}")
            _skeletonize(spec, disc, tree, c, gr, gc, ql, alpha, tol, row_active,
                         col_active, by_weight, weighted, qbx_proxy, ball_overlap,
                         center_tree)
        levels.append(current)

        nxt = [ClusterFactor(None, None, []) for _ in groups[l + 1]]
        rows = [[] for _ in nxt]
        cols = [[] for _ in nxt]
        for i, (c, par) in enumerate(zip(current, parents[l])):
            off = sum(len(r) for r in rows[par])
            nxt[par].children.append((i, off))
            rows[par].append(c.rows[c.row_skel])
            cols[par].append(c.cols[c.col_skel])
        for cl, r, cc in zip(nxt, rows, cols):
            cl.rows = np.concatenate(r)
            cl.cols = np.concatenate(cc)
        current = nxt

    root = current[0]
    if not skip_root:
        root.diag = _diag_block(spec, disc, root, levels[-1])
        root.lu = _lu(root.diag, "root system")
    t1 = time.perf_counter()
    return MultiLevelFactor(spec, disc.n, levels, root, alpha, tol, qs,
                            {"compress": t1 - t0})


def _mask(n, parts):
    m = np.zeros(n, dtype=bool)
    for p in parts:
        m[p] = True
    return m


def _far_weight_max(weights, by_weight, exclude) -> float:
    """Largest weight among ``by_weight`` (sorted descending) outside ``exclude``."""
    skip = set(exclude.tolist())
    for i in by_weight:
        if i not in skip:
            return float(weights[i])
    return 0.0


def _skeletonize(spec, disc, tree, c: ClusterFactor, geo_r, geo_c, q, alpha, tol,
                 row_active, col_active, by_weight, weighted, qbx_proxy, ball_overlap,
                 center_tree=None):
    n = c.n
    pr = proxy_ball(*geo_r, alpha, q, disc.dim)
    pc = proxy_ball(*geo_c, alpha, q, disc.dim)
    split_t = split_near_far(tree, pr, c.cols, active=col_active)
    split_s = split_near_far(tree, pc, c.rows, active=row_active,
                             ball_overlap=ball_overlap, disc=disc, center_tree=center_tree)
    bt, w_pxy = target_proxy_matrix(spec, disc, c.rows, pr, split_t.near, weighted,
                                    qbx_proxy)
    bs = source_proxy_matrix(spec, disc, c.cols, pc, split_s.near)
    qr_t = pivoted_qr(bt.T)
    qr_s = pivoted_qr(bs)
    kt = tolerance_rank(qr_t, tol)
    ks = tolerance_rank(qr_s, tol)
    k = min(max(kt, ks, 1), n)
    idt = id_from_qr(qr_t, k, rcond=tol)
    ids = id_from_qr(qr_s, k, rcond=tol)
    c.row_skel, c.L = idt.skel, idt.interp.T
    c.col_skel, c.R = ids.skel, ids.interp

    x = la.lu_solve(c.lu, c.L, check_finite=False)
    try:
        c.dhat = la.inv(c.R @ x, check_finite=False)
    except la.LinAlgError as exc:
        raise SingularBlockError("reduced cluster matrix R D^-1 L is singular") from exc

    w = disc.weights
    c.stats = {
        "n": n, "k": k, "k_target": kt, "k_source": ks,
        "r_pxy_target": pr.radius, "r_pxy_source": pc.radius,
        "near_target": len(split_t.near), "near_source": len(split_s.near),
        "q": pr.q, "w_pxy": w_pxy,
        "w_far_max": _far_weight_max(w, by_weight, np.concatenate([split_t.near, c.cols])),
        "w_cluster_max": float(w[c.cols].max()),
        "norm_L": float(np.linalg.norm(c.L, 2)),
        "norm_R": float(np.linalg.norm(c.R, 2)),
    }


def compress_single_level(spec, disc, tree, tol, alpha=DEFAULT_ALPHA, q=64, **kw):
    """Leaf-level skeletonization with a dense skeleton system."""
    return compress(spec, disc, tree, tol, alpha, q, two_level=True, **kw)


def compress_multilevel(spec, disc, tree, tol, alpha=DEFAULT_ALPHA, q=64, **kw):
    return compress(spec, disc, tree, tol, alpha, q, **kw)

# }}}


# {{{ solve and apply

def _split_parent(vec, parent: ClusterFactor, below):
    return [vec[off:off + below[ch].k] for ch, off in parent.children]


def solve(factor: MultiLevelFactor, b) -> np.ndarray:
    """Apply the inverse of the compressed operator to ``b``."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise ValueError(f"right-hand side has length {b.shape[0]}, expected {factor.n}")
    levels = factor.levels
    rhs = [b[c.rows] for c in levels[0]]
    saved = []
    for l, clusters in enumerate(levels):
        ys, bhats, up = [], [], []
        for c, r in zip(clusters, rhs):
            y = la.lu_solve(c.lu, r, check_finite=False)
            bh = c.R @ y
            ys.append(y)
            bhats.append(bh)
            up.append(c.dhat @ bh)
        saved.append((ys, bhats))
        parents = levels[l + 1] if l + 1 < len(levels) else [factor.root]
        rhs = [np.concatenate([up[ch] for ch, _ in p.children]) for p in parents]

    x = [la.lu_solve(factor.root.lu, rhs[0], check_finite=False)]
    parents = [factor.root]
    for l in range(len(levels) - 1, -1, -1):
        clusters = levels[l]
        xhat = [None] * len(clusters)
        for p, xp in zip(parents, x):
            for (ch, off) in p.children:
                xhat[ch] = xp[off:off + clusters[ch].k]
        ys, bhats = saved[l]
        x = [y + la.lu_solve(c.lu, c.L @ (c.dhat @ (xh - bh)), check_finite=False)
             for c, y, bh, xh in zip(clusters, ys, bhats, xhat)]
        parents = clusters

    sigma = np.zeros_like(b)
    for c, xc in zip(levels[0], x):
        sigma[c.cols] = xc
    return sigma


def apply(factor: MultiLevelFactor, sigma) -> np.ndarray:
    """Multiply by the compressed operator."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape[0] != factor.n:
        raise ValueError(f"density has length {sigma.shape[0]}, expected {factor.n}")
    levels = factor.levels
    v = [sigma[c.cols] for c in levels[0]]
    saved = []
    for l, clusters in enumerate(levels):
        w = [c.R @ vc for c, vc in zip(clusters, v)]
        saved.append((v, w))
        parents = levels[l + 1] if l + 1 < len(levels) else [factor.root]
        v = [np.concatenate([w[ch] for ch, _ in p.children]) for p in parents]

    out = [factor.root.diag @ v[0]]
    parents = [factor.root]
    for l in range(len(levels) - 1, -1, -1):
        clusters = levels[l]
        ohat = [None] * len(clusters)
        for p, op in zip(parents, out):
            for (ch, off) in p.children:
                ohat[ch] = op[off:off + clusters[ch].k]
        vs, ws = saved[l]
        out = [c.diag @ vc + c.L @ (oh - c.dhat @ wc)
               for c, vc, wc, oh in zip(clusters, vs, ws, ohat)]
        parents = clusters

    b = np.zeros_like(sigma)
    for c, oc in zip(levels[0], out):
        b[c.rows] = oc
    return b


solve_multilevel = solve
solve_single_level = solve
apply_multilevel = apply

# }}}


def write_stats(factor: MultiLevelFactor, path) -> None:
    """Per-level CSV: clusters, mean/max skeleton size, proxy count, memory."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "clusters", "mean_n", "mean_k", "max_k", "q", "bytes"])
        for l, clusters in enumerate(factor.levels):
            ks = [c.k for c in clusters]
            writer.writerow([l, len(clusters), np.mean([c.n for c in clusters]),
                             np.mean(ks), max(ks), factor.proxy_counts[l],
                             factor.memory_bytes(l)])
        writer.writerow([len(factor.levels), 1, factor.root.n, factor.root.n, factor.root.n,
                         "", factor.root.diag.nbytes])
