"""Proxy balls, near/far splitting and target/source skeletonization of one cluster."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .assembly import OperatorSpec, block_entries, plain_kernel_block
from .geometry import Discretization
from .idecomp import IdResult, PivotedQR, id_from_qr, pivoted_qr, tolerance_rank
from .kernels import (KernelKind, Layer, circle_rule, kernel_matrix, qbx_kernel_matrix,
                      sphere_rule, sphere_rule_order)
from .tree import ClusterTree, area_query


@dataclass(frozen=True)
class ProxyBall:
    """Proxy circle/sphere around a cluster; ``weights`` are its quadrature weights."""

    center: np.ndarray
    cluster_radius: float
    qbx_radius: float
    radius: float
    alpha: float
    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def q(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NearFarSplit:
    """Near nodes of a cluster; ``far`` is formed on first access (it costs O(n))."""

    near: np.ndarray
    active: np.ndarray
    cluster: np.ndarray

    @cached_property
    def far(self) -> np.ndarray:
        keep = self.active.copy()
        keep[self.near] = False
        keep[self.cluster] = False
        return np.nonzero(keep)[0]


@dataclass(frozen=True)
class ClusterSkeleton:
    """ID of one cluster.

    Targets: ``A[indices, far] ~= interp @ A[skel, far]`` with ``interp`` of
    shape ``n_i x k``. Sources: ``A[far, indices] ~= A[far, skel] @ interp``
    with ``interp`` of shape ``k x n_i``.
    """

    side: str
    indices: np.ndarray
    skel: np.ndarray
    interp: np.ndarray
    proxy: ProxyBall
    near_size: int
    proxy_weight: float

    @property
    def n(self) -> int:
        return len(self.indices)

    @property
    def rank(self) -> int:
        return len(self.skel)


def cluster_geometry(disc: Discretization, idx):
    """Bounding-box center, radius and max QBX radius of the nodes ``idx``."""
    pts = disc.nodes[idx]
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    radius = float(np.max(np.linalg.norm(pts - center, axis=1)))
    qbx = float(disc.qbx_radii[idx].max()) if disc.has_qbx() else 0.0
    return center, radius, qbx


def proxy_ball(center, cluster_radius: float, qbx_radius: float, alpha: float, q: int,
               dim: int) -> ProxyBall:
    """Proxy ball of radius ``alpha (cluster_radius + qbx_radius)``.

    In 3D the ``q`` requested points are rounded down to the largest product
    sphere rule that fits.
    """
    if alpha <= 1:
        raise ValueError("proxy factor alpha must exceed 1")
    if q < 1:
        raise ValueError("need at least one proxy point")
    center = np.asarray(center, dtype=float)
    r = alpha * (cluster_radius + qbx_radius)
    if r <= 0:
        # single node without a QBX ball: any positive radius separates it
        r = alpha
    if dim == 2:
        rule = circle_rule(q)
        order = (q - 1) // 2
        weights = rule.weights * r
    else:
        order = sphere_rule_order(q)
        rule = sphere_rule(order)
        weights = rule.weights * r * r
    return ProxyBall(center, cluster_radius, qbx_radius, r, alpha,
                     center + r * rule.points, weights, order)


def make_proxy(disc: Discretization, idx, alpha: float, q: int) -> ProxyBall:
    center, radius, qbx = cluster_geometry(disc, idx)
    return proxy_ball(center, radius, qbx, alpha, q, disc.dim)


def split_near_far(tree: ClusterTree, proxy: ProxyBall, idx, active=None,
                   ball_overlap: bool = False, disc: Optional[Discretization] = None,
                   center_tree: Optional[cKDTree] = None) -> NearFarSplit:
    """Nodes within the proxy ball (near) and outside it (far), excluding ``idx``.

    ``active`` restricts both sets to a subset of nodes, given as indices or
    as a boolean mask over all nodes. With ``ball_overlap`` a node also
    counts as near when its QBX ball reaches into the proxy ball;
    ``center_tree`` is a kd-tree over ``disc.qbx_centers`` reused across calls.
    """
    n = len(tree.nodes)
    near = area_query(tree, proxy.center, proxy.radius)
    if ball_overlap:
        if center_tree is None:
            center_tree = cKDTree(disc.qbx_centers)
        reach = proxy.radius + float(disc.qbx_radii.max())
        cand = np.array(center_tree.query_ball_point(proxy.center, reach), dtype=int)
        if len(cand):
            dist = np.linalg.norm(disc.qbx_centers[cand] - proxy.center, axis=1)
            cand = cand[dist <= proxy.radius + disc.qbx_radii[cand]]
        near = np.union1d(near, cand)
    if active is None:
        mask = np.ones(n, dtype=bool)
    else:
        active = np.asarray(active)
        if active.dtype == bool:
            mask = active
        else:
            mask = np.zeros(n, dtype=bool)
            mask[active] = True
    cluster = np.asarray(idx, dtype=int)
    near = near[mask[near] & ~np.isin(near, cluster)]
    return NearFarSplit(near, mask, cluster)


def proxy_weight(disc: Discretization, idx, near, weighted: bool = True) -> float:
    """Scalar multiple of the identity applied to the proxy columns."""
    if not weighted:
        return 1.0
    if len(near):
        return float(disc.weights[near].max())
    return float(disc.weights[idx].mean())


def target_proxy_matrix(spec: OperatorSpec, disc: Discretization, idx, proxy: ProxyBall,
                        near, weighted: bool = True, qbx_proxy: bool = True):
    """``[G(X_i, P) W(P) | A(X_i, Y_near)]`` and the proxy weight used."""
    w = proxy_weight(disc, idx, near, weighted)
    single = KernelKind(spec.kind.dim, Layer.SINGLE)
    if qbx_proxy:
        g = qbx_kernel_matrix(single, disc.nodes[idx], disc.qbx_centers[idx], proxy.points,
                              order=spec.qbx_order)
    else:
        g = kernel_matrix(single, disc.nodes[idx], proxy.points)
    return np.hstack([g * w, block_entries(spec, disc, idx, near)]), w


def source_proxy_matrix(spec: OperatorSpec, disc: Discretization, idx, proxy: ProxyBall,
                        near):
    """``[K(P, Y_j) W(Y_j); A(X_near, Y_j)]``."""
    return np.vstack([plain_kernel_block(spec, proxy.points, disc, idx),
                      block_entries(spec, disc, near, idx)])


def skeletonize_target(spec: OperatorSpec, disc: Discretization, idx, proxy: ProxyBall,
                       split: NearFarSplit, tol: Optional[float] = None,
                       rank: Optional[int] = None, weighted: bool = True,
                       qbx_proxy: bool = True) -> ClusterSkeleton:
    """Row ID of the target proxy matrix, giving ``L_i`` and the target skeleton."""
    if len(idx) == 0:
        raise ValueError("empty cluster")
    b, w = target_proxy_matrix(spec, disc, idx, proxy, split.near, weighted, qbx_proxy)
    qr = pivoted_qr(b.T)
    res = id_from_qr(qr, _rank(qr, tol, rank), rcond=tol)
    return ClusterSkeleton("target", np.asarray(idx), np.asarray(idx)[res.skel],
                           res.interp.T, proxy, len(split.near), w)


def skeletonize_source(spec: OperatorSpec, disc: Discretization, idx, proxy: ProxyBall,
                       split: NearFarSplit, tol: Optional[float] = None,
                       rank: Optional[int] = None) -> ClusterSkeleton:
    """Column ID of the source proxy matrix, giving ``R_j`` and the source skeleton."""
    if len(idx) == 0:
        raise ValueError("empty cluster")
    b = source_proxy_matrix(spec, disc, idx, proxy, split.near)
    qr = pivoted_qr(b)
    res = id_from_qr(qr, _rank(qr, tol, rank), rcond=tol)
    return ClusterSkeleton("source", np.asarray(idx), np.asarray(idx)[res.skel],
                           res.interp, proxy, len(split.near), 1.0)


def _rank(qr: PivotedQR, tol, rank):
    if (tol is None) == (rank is None):
        raise ValueError("give exactly one of tol and rank")
    return tolerance_rank(qr, tol) if rank is None else rank


def write_diagnostics(rows, path) -> None:
    """Per-cluster CSV: level, cluster, side, n, k, r_pxy, near size, error."""
    header = ["level", "cluster", "side", "n", "k", "r_pxy", "near", "error"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow([r.get(h, "") for h in header])
