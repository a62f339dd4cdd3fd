"""2:1-balanced quadtree/octree over panel centroids and its cluster levels."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Discretization

MAX_DEPTH = 24


class TreeDepthError(RuntimeError):
    """Refinement hit the depth cap without separating the centroids."""


@dataclass
class Box:
    id: int
    level: int
    lower: np.ndarray
    size: float
    parent: int
    children: list = field(default_factory=list)
    panels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.size


@dataclass
class ClusterTree:
    """Boxes, node renumbering and the merge levels used by the solver.

    ``perm[new] = old`` maps the renumbered (tree) order to original node
    indices; every box owns the contiguous range ``box_range[id]`` of it.
    ``levels[l]`` lists the box ids acting as clusters at level ``l``;
    ``levels[0]`` are the nonempty leaves and ``levels[-1]`` holds one box.
    """

    boxes: list
    perm: np.ndarray
    box_range: dict
    levels: list
    node_tree: cKDTree
    nodes: np.ndarray
    dim: int

    @property
    def nlevels(self) -> int:
        return len(self.levels)

    @property
    def leaves(self) -> list:
        return self.levels[0]

    @property
    def inverse_perm(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    def box_nodes(self, box_id: int) -> np.ndarray:
        """Original node indices owned by a box."""
        a, b = self.box_range[box_id]
        return self.perm[a:b]

    def level_parent(self, level: int, box_id: int) -> int:
        """Cluster at ``level + 1`` that absorbs ``box_id``."""
        nxt = self.levels[level + 1]
        if box_id in nxt:
            return box_id
        return self.boxes[box_id].parent


def _split(box: Box, centroids, boxes: list) -> None:
    dim = len(box.lower)
    half = 0.5 * box.size
    mid = box.lower + half
    pts = centroids[box.panels]
    # a centroid on a split plane goes to the lower child
    upper_side = pts > mid
    code = np.zeros(len(pts), dtype=int)
    for k in range(dim):
        code |= upper_side[:, k].astype(int) << k
    for c in range(2 ** dim):
        offs = np.array([(c >> k) & 1 for k in range(dim)], dtype=float)
        child = Box(len(boxes), box.level + 1, box.lower + offs * half, half, box.id,
                    panels=box.panels[code == c])
        boxes.append(child)
        box.children.append(child.id)
    box.panels = np.zeros(0, dtype=int)


def _touching_pairs(leaves, boxes):
    lo = np.array([boxes[i].lower for i in leaves])
    size = np.array([boxes[i].size for i in leaves])
    hi = lo + size[:, None]
    eps = 1e-12 * size.max()
    overlap = np.all((lo[:, None, :] <= hi[None, :, :] + eps)
                     & (lo[None, :, :] <= hi[:, None, :] + eps), axis=-1)
    np.fill_diagonal(overlap, False)
    return overlap, size


def build_tree(disc: Discretization, max_panels_per_leaf: int = 8,
               max_depth: int = MAX_DEPTH, strict: bool = False) -> ClusterTree:
    """Bin the panel centroids into a 2:1-balanced quadtree/octree.

    Refinement stops at ``max_depth``; with ``strict`` an unseparated leaf at
    the cap raises :class:`TreeDepthError` instead of being kept oversized.
    """
    if max_panels_per_leaf < 1:
        raise ValueError("max_panels_per_leaf must be at least 1")
    cen = disc.centroids
    dim = disc.dim
    lo = cen.min(axis=0)
    extent = float(np.max(cen.max(axis=0) - lo))
    size = extent * (1 + 1e-10) if extent > 0 else 1.0
    lo = lo - 0.5 * (size - (cen.max(axis=0) - lo))

    boxes = [Box(0, 0, lo, size, -1, panels=np.arange(disc.npanels))]
    stack = [0]
    while stack:
        b = boxes[stack.pop()]
        if len(b.panels) > max_panels_per_leaf:
            if b.level >= max_depth:
                if strict:
                    raise TreeDepthError(
                        f"box {b.id} still holds {len(b.panels)} panels at depth {b.level}")
                continue
            _split(b, cen, boxes)
            stack.extend(b.children)

    # 2:1 balance among touching leaves
    while True:
        leaves = [b.id for b in boxes if b.is_leaf]
        touch, sizes = _touching_pairs(leaves, boxes)
        too_big = np.any(touch & (sizes[:, None] > 2.0 * sizes[None, :] * (1 + 1e-9)), axis=1)
        if not np.any(too_big):
            break
        for i in np.nonzero(too_big)[0]:
            _split(boxes[leaves[i]], cen, boxes)

    # depth-first renumbering makes every box contiguous
    perm, box_range = [], {}
    panels = disc.panels

    def visit(bid):
        start = len(perm)
        b = boxes[bid]
        if b.is_leaf:
            for p in b.panels:
                perm.extend(range(panels[p, 0], panels[p, 1]))
        for c in b.children:
            visit(c)
        box_range[bid] = (start, len(perm))

    visit(0)
    perm = np.array(perm, dtype=int)

    leaves = [b.id for b in boxes if b.is_leaf and len(b.panels)]
    levels = [leaves]
    current = list(leaves)
    while len(current) > 1:
        deepest = max(boxes[i].level for i in current)
        nxt = []
        for i in current:
            j = boxes[i].parent if boxes[i].level == deepest else i
            if j not in nxt:
                nxt.append(j)
        nxt.sort(key=lambda j: box_range[j][0])
        levels.append(nxt)
        current = nxt

    return ClusterTree(boxes, perm, box_range, levels, cKDTree(disc.nodes), disc.nodes, dim)


def level_tuples(tree: ClusterTree, level: int, side: str = "rows") -> list:
    """Original node indices of each cluster at ``level`` (rows and columns coincide)."""
    if side not in ("rows", "columns"):
        raise ValueError("side must be 'rows' or 'columns'")
    if not 0 <= level < tree.nlevels:
        raise IndexError(f"level {level} outside [0, {tree.nlevels - 1}]")
    return [tree.box_nodes(b) for b in tree.levels[level]]


def area_query(tree: ClusterTree, center, radius: float) -> np.ndarray:
    """Sorted indices of all nodes ``y`` with ``|y - center| <= radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    idx = np.array(tree.node_tree.query_ball_point(np.asarray(center, float), radius),
                   dtype=int)
    if len(idx):
        d = np.linalg.norm(tree.nodes[idx] - center, axis=1)
        idx = idx[d <= radius]
    return np.sort(idx)


def dump_tree(tree: ClusterTree, path) -> None:
    """One line per box: id, level, lower corner, size, children, panels."""
    with open(path, "w") as fh:
        fh.write("# id level lower size children panels\n")
        for b in tree.boxes:
            lower = ",".join(f"{v:.17g}" for v in b.lower)
            kids = ",".join(map(str, b.children)) or "-"
            pans = ",".join(map(str, b.panels)) or "-"
            fh.write(f"{b.id} {b.level} {lower} {b.size:.17g} {kids} {pans}\n")


def leaf_adjacency_violations(tree: ClusterTree) -> list:
    """Pairs of touching leaves whose sizes differ by more than a factor 2 (brute force)."""
    leaves = [b for b in tree.boxes if b.is_leaf]
    bad = []
    for a, b in itertools.combinations(leaves, 2):
        tol = 1e-12 * max(a.size, b.size)
        touch = np.all(a.lower <= b.upper + tol) and np.all(b.lower <= a.upper + tol)
        if touch and max(a.size, b.size) > 2 * min(a.size, b.size) * (1 + 1e-9):
            bad.append((a.id, b.id))
    return bad
