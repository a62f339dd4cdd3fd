"""Interpolative decomposition by column-pivoted QR."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la


@dataclass(frozen=True)
class IdResult:
    """``M ~= M[:, skel] @ interp`` (columns) or ``M ~= interp @ M[skel, :]`` (rows).

    ``interp`` is ``k x n`` for a column ID and ``n x k`` for a row ID.
    """

    skel: np.ndarray
    interp: np.ndarray
    rank: int
    residual: float


@dataclass(frozen=True)
class PivotedQR:
    r: np.ndarray
    perm: np.ndarray
    ncols: int

    @property
    def diag(self) -> np.ndarray:
        return np.abs(np.diag(self.r))


def pivoted_qr(m) -> PivotedQR:
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    n = m.shape[1]
    if m.size == 0:
        return PivotedQR(np.zeros((0, n)), np.arange(n), n)
    r, perm = la.qr(m, mode="r", pivoting=True)
    return PivotedQR(r, perm, n)


def tolerance_rank(qr: PivotedQR, tol: float) -> int:
    """Smallest ``k`` with ``|R_kk| <= tol * |R_00|``."""
    d = qr.diag
    if len(d) == 0 or d[0] == 0.0:
        return 0
    small = np.nonzero(d <= tol * d[0])[0]
    return int(small[0]) if len(small) else len(d)


def id_from_qr(qr: PivotedQR, k: int, rcond: Optional[float] = None) -> IdResult:
    """Column ID of rank ``k`` from a pivoted QR.

    When ``k`` exceeds the numerical rank, the interpolation block is a
    minimum-norm least-squares solution (``rcond``) rather than a triangular solve.
    """
    n = qr.ncols
    kmax = min(qr.r.shape[0], n)
    if not 0 <= k <= n:
        raise ValueError(f"rank {k} outside [0, {n}]")
    perm = qr.perm
    interp = np.zeros((k, n))
    if k > kmax:
        # more skeleton columns than rows: every column is reproduced by itself
        # on the first kmax, the rest carry zero weight
        kk = kmax
    else:
        kk = k
    r11 = qr.r[:kk, :kk]
    r12 = qr.r[:kk, kk:]
    if kk > 0 and kk < n:
        d = np.abs(np.diag(r11))
        if rcond is not None and d.min() <= rcond * d.max():
            t = la.lstsq(r11, r12, cond=rcond)[0]
        else:
            t = la.solve_triangular(r11, r12)
    else:
        t = np.zeros((kk, n - kk))
    interp[:kk, perm[:kk]] = np.eye(kk)
    if k > kk:
        interp[kk:k, perm[kk:k]] = np.eye(k - kk)
        t = t[:, k - kk:]
        interp[:kk, perm[k:]] = t
    else:
        interp[:, perm[kk:]] = t
    residual = float(np.linalg.norm(qr.r[kk:, kk:], 2)) if kk < kmax else 0.0
    return IdResult(np.array(perm[:k]), interp, k, residual)


def _check_args(tol, rank):
    if (tol is None) == (rank is None):
        raise ValueError("give exactly one of tol and rank")
    if tol is not None and tol < 0:
        raise ValueError("tolerance must be nonnegative")


def id_columns(m, tol: Optional[float] = None, rank: Optional[int] = None) -> IdResult:
    """Column ID ``M ~= M[:, skel] @ interp`` to relative tolerance ``tol`` or fixed ``rank``."""
    _check_args(tol, rank)
    qr = pivoted_qr(m)
    k = tolerance_rank(qr, tol) if rank is None else int(rank)
    return id_from_qr(qr, k)


def id_rows(m, tol: Optional[float] = None, rank: Optional[int] = None) -> IdResult:
    """Row ID ``M ~= interp @ M[skel, :]``."""
    res = id_columns(np.asarray(m, dtype=float).T, tol=tol, rank=rank)
    return IdResult(res.skel, res.interp.T, res.rank, res.residual)
