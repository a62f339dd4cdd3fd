"""QBX-mediated Nystrom matrix blocks and a reference dense matvec."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Discretization
from .kernels import KernelKind, Layer, dlp_kernel, green, kernel_matrix, qbx_kernel_matrix

# number of matrix entries formed at once by the chunked dense routines
CHUNK_ENTRIES = 2_000_000


@dataclass(frozen=True)
class OperatorSpec:
    """Layer potential operator ``a I + K`` discretized with one-sided QBX.

    ``identity`` is the coefficient ``a`` multiplying the identity, so that the
    double-layer operator is ``a I + D`` with ``D`` the principal value
    operator. ``plain_far`` replaces QBX by the plain kernel for sources
    farther than ``far_factor`` expansion radii from the center.
    """

    kind: KernelKind
    identity: float = 0.0
    qbx_order: int = 4
    side: int = -1
    plain_far: bool = False
    far_factor: float = 3.0

    def __post_init__(self):
        if self.side not in (-1, 1):
            raise ValueError("side must be -1 (interior) or +1 (exterior)")
        if self.qbx_order < 0:
            raise ValueError("QBX order must be nonnegative")

    @classmethod
    def preset(cls, dim: int, layer: str, side: str = "interior", qbx_order: int = 4,
               **kw) -> "OperatorSpec":
        """Second-kind double layer ``-+1/2 I + D`` or first-kind single layer ``S``."""
        sign = {"interior": -1, "exterior": 1}[side]
        layer = Layer(layer)
        a = 0.0 if layer == Layer.SINGLE else 0.5 * sign
        return cls(KernelKind(dim, layer), a, qbx_order, sign, **kw)

    @property
    def diagonal_shift(self) -> float:
        """Value added on coincident (target, source) pairs.

        One-sided QBX of the double layer already carries the jump ``side / 2``,
        which is removed to leave the principal value.
        """
        if self.kind.layer == Layer.DOUBLE:
            return self.identity - 0.5 * self.side
        return self.identity


@dataclass(frozen=True)
class DenseBlock:
    rows: np.ndarray
    cols: np.ndarray
    entries: np.ndarray


def _check_disc(disc: Discretization):
    if not disc.has_qbx():
        raise ValueError("discretization has no QBX centers; call attach_qbx_centers")


def block_entries(spec: OperatorSpec, disc: Discretization, rows, cols) -> np.ndarray:
    """``A[rows][:, cols]`` as a dense array."""
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    out = np.zeros((len(rows), len(cols)))
    if len(rows) == 0 or len(cols) == 0:
        return out
    _check_disc(disc)
    step = max(1, CHUNK_ENTRIES // len(cols))
    for s in range(0, len(rows), step):
        r = rows[s:s + step]
        out[s:s + step] = _entries(spec, disc, r, cols)
    return out


def _entries(spec, disc, rows, cols):
    k = qbx_kernel_matrix(spec.kind, disc.nodes[rows], disc.qbx_centers[rows],
                          disc.nodes[cols], disc.normals[cols], spec.qbx_order)
    if spec.plain_far:
        dist = np.linalg.norm(disc.qbx_centers[rows][:, None, :]
                              - disc.nodes[cols][None, :, :], axis=-1)
        far = dist > spec.far_factor * disc.qbx_radii[rows][:, None]
        # coincident points are never far, so the plain kernel is safe here
        ri, ci = np.nonzero(far)
        k[ri, ci] = _plain_pairs(spec, disc, rows[ri], cols[ci])
    a = k * disc.weights[cols][None, :]
    shift = spec.diagonal_shift
    if shift != 0.0:
        same = rows[:, None] == cols[None, :]
        a[same] += shift
    return a


def _plain_pairs(spec, disc, ri, ci):
    x = disc.nodes[ri]
    y = disc.nodes[ci]
    if spec.kind.layer == Layer.SINGLE:
        return green(spec.kind.dim, x, y)
    return dlp_kernel(spec.kind.dim, x, y, disc.normals[ci])


def assemble_block(spec: OperatorSpec, disc: Discretization, rows, cols) -> DenseBlock:
    """Dense block of the system matrix for row tuple ``rows`` and column tuple ``cols``."""
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    return DenseBlock(rows, cols, block_entries(spec, disc, rows, cols))


def assemble_dense(spec: OperatorSpec, disc: Discretization) -> np.ndarray:
    idx = np.arange(disc.n)
    return block_entries(spec, disc, idx, idx)


def apply_dense(spec: OperatorSpec, disc: Discretization, sigma) -> np.ndarray:
    """``A sigma`` by direct point-to-point QBX evaluation, without storing ``A``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape[0] != disc.n:
        raise ValueError(f"density has length {sigma.shape[0]}, expected {disc.n}")
    cols = np.arange(disc.n)
    out = np.zeros(sigma.shape)
    step = max(1, CHUNK_ENTRIES // disc.n)
    for s in range(0, disc.n, step):
        rows = cols[s:s + step]
        out[s:s + step] = _entries(spec, disc, rows, cols) @ sigma
    return out


def plain_kernel_block(spec: OperatorSpec, targets, disc: Discretization, cols) -> np.ndarray:
    """Plain (non-QBX) kernel times weights from sources ``cols`` to arbitrary targets."""
    cols = np.asarray(cols, dtype=int)
    return (kernel_matrix(spec.kind, targets, disc.nodes[cols], disc.normals[cols])
            * disc.weights[cols][None, :])


# {{{ binary export

def export_matrix(path, matrix) -> None:
    """Write ``int64 rows, int64 cols`` followed by row-major float64 entries."""
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError("expected a 2D matrix")
    with open(path, "wb") as fh:
        np.array(m.shape, dtype="<i8").tofile(fh)
        m.tofile(fh)


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        shape = np.fromfile(fh, dtype="<i8", count=2)
        data = np.fromfile(fh, dtype="<f8")
    if len(shape) != 2 or data.size != shape[0] * shape[1]:
        raise ValueError(f"{path}: size does not match header")
    return data.reshape(shape)

# }}}
