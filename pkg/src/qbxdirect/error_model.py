"""Proxy skeletonization error model, constant fitting and proxy-count selection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .kernels import (circle_rule, green, poisson_kernel, poisson_series, sphere_rule,
                      sphere_rule_order, sphere_rule_size)

P_MIN = 2
# order caps: q = 2p(p+1) in 3D, q = 2p + 1 in 2D
P_MAX = 32
P_MAX_2D = 256

# empirical multipliers (C0, C1) by (dimension, layer), reference magnitudes
REFERENCE_CONSTANTS = {
    (2, "single"): (3.689, 1.147e-2),
    (2, "double"): (1.005, 4.678e-4),
    (3, "single"): (7.719e-3, 2.147e-3),
    (3, "double"): (5.315e-3, 1.582e-5),
}


@dataclass(frozen=True)
class ModelConstants:
    """Geometry constants ``c0, c1``, fitted multipliers ``C0, C1`` and norms."""

    c0: float
    c1: float
    C0: float = 1.0
    C1: float = 1.0
    R_pxy: float = 1.0
    alpha: float = 1.15
    norm_L: float = 1.0
    norm_R: float = 1.0

    def __post_init__(self):
        if min(self.c0, self.c1, self.C0, self.C1) <= 0:
            raise ValueError("model constants must be positive")
        if self.R_pxy <= 0:
            raise ValueError("proxy radius must be positive")
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")

    def with_reference(self, dim: int, layer: str) -> "ModelConstants":
        C0, C1 = REFERENCE_CONSTANTS[(dim, str(getattr(layer, "value", layer)))]
        return replace(self, C0=C0, C1=C1)


def cluster_terms(stats: dict):
    """``(a0, a1, b0, b1)`` of one cluster from its skeletonization record."""
    a0 = stats["w_far_max"] / stats["w_pxy"]
    a1 = (1.0 + stats["norm_L"]) * stats["w_far_max"]
    b0 = 1.0
    b1 = (1.0 + stats["norm_R"]) * stats["w_cluster_max"]
    return a0, a1, b0, b1


def measure_constants(stats: Sequence[dict], alpha: float) -> ModelConstants:
    """``c0 = max(a0, b0)`` and ``c1 = max(a1, b1)`` over all clusters."""
    if not stats:
        raise ValueError("no cluster records")
    terms = np.array([cluster_terms(s) for s in stats])
    c0 = float(max(terms[:, 0].max(), terms[:, 2].max()))
    c1 = float(max(terms[:, 1].max(), terms[:, 3].max()))
    rpxy = max(max(s["r_pxy_target"], s["r_pxy_source"]) for s in stats)
    # L and R are block diagonal, so their norms are the largest block norms
    norm_l = max(s["norm_L"] for s in stats)
    norm_r = max(s["norm_R"] for s in stats)
    return ModelConstants(c0, c1, R_pxy=rpxy, alpha=alpha, norm_L=norm_l, norm_R=norm_r)


def proxy_order(q: int, dim: int = 3) -> int:
    """Order ``p`` whose proxy rule integrates harmonics of degree ``2p`` with ``q`` points."""
    if dim == 2:
        return max((q - 1) // 2, 0)
    return sphere_rule_order(q)


def _geometry_factors(R, q, dim):
    """(proxy weight, far-field prefactor) in 3D or their circle analogues in 2D."""
    if dim == 2:
        return 2.0 * math.pi * R / q, 1.0 / (2.0 * math.pi)
    return 4.0 * math.pi * R * R / q, 1.0 / (4.0 * math.pi * R)


def model_terms(q: int, alpha: float, R_pxy: float, eps: float, constants: ModelConstants,
                dim: int = 3):
    """The ID term and the proxy term of the model, without the norm prefactor."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    p = proxy_order(q, dim)
    wq, far = _geometry_factors(R_pxy, q, dim)
    id_term = (1.0 + constants.C0 * constants.c0 * wq) * eps
    proxy_term = constants.C1 * constants.c1 * far / (alpha - 1.0) * alpha ** (-p)
    return id_term, proxy_term


def model_error(q: int, alpha: float, R_pxy: float, eps: float, constants: ModelConstants,
                dim: int = 3) -> float:
    """Predicted relative forward error including the ``(2 + |L| + |R|) / 2`` prefactor."""
    id_term, proxy_term = model_terms(q, alpha, R_pxy, eps, constants, dim)
    pre = 0.5 * (2.0 + constants.norm_L + constants.norm_R)
    return pre * (id_term + proxy_term)


def realizable_count(target: int, dim: int = 3) -> int:
    """Smallest product-rule size (3D) holding at least ``target`` points."""
    if dim == 2:
        return int(target)
    p = 0
    while sphere_rule_size(p) < target:
        p += 1
    return sphere_rule_size(p)


def balanced_order(eps: float, alpha: float, R_pxy: float, constants: ModelConstants,
                   dim: int = 3) -> float:
    """Unrounded, unclamped order that balances the two model terms."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    c0 = constants.C0 * constants.c0
    c1 = constants.C1 * constants.c1
    if dim == 2:
        arg = (alpha - 1.0) * 2.0 * math.pi * (1.0 + 2.0 * math.pi * c0 * R_pxy) / c1 * eps
    else:
        arg = (alpha - 1.0) * 4.0 * math.pi * R_pxy * (1.0 + 4.0 * math.pi * c0 * R_pxy ** 2) \
            / c1 * eps
    if arg <= 0:
        return math.inf
    return -math.log(arg) / math.log(alpha)


def estimate_proxy_order(eps: float, alpha: float, R_pxy: float, constants: ModelConstants,
                         dim: int = 3, p_min: int = P_MIN, p_max: Optional[int] = None):
    """``(p, q)`` balancing both model terms; ``p`` is rounded up and clamped.

    In 3D ``q`` targets ``2p(p+1)`` points, rounded up to a realizable rule size,
    in 2D ``q = 2p + 1``.
    """
    if p_max is None:
        p_max = P_MAX_2D if dim == 2 else P_MAX
    p_real = balanced_order(eps, alpha, R_pxy, constants, dim)
    p = p_max if not math.isfinite(p_real) else int(math.ceil(p_real - 1e-12))
    p = min(max(p, p_min), p_max)
    if dim == 2:
        return p, 2 * p + 1
    return p, realizable_count(2 * p * (p + 1), 3)


@dataclass(frozen=True)
class FitResult:
    C0: float
    C1: float
    degenerate: bool
    residual: float


def fit_constants(data, constants: ModelConstants, dim: int = 3,
                  dominance: float = 0.95) -> FitResult:
    """Least-squares fit of ``(C0, C1)`` in log space.

    ``data`` holds ``(eps, q, alpha, measured)`` tuples. When a single term
    dominates every point (share above ``dominance`` at the two-constant fit),
    the sweep cannot identify the other constant: it is kept at its input
    value and only the dominant one is fitted.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 4 or len(data) < 2:
        raise ValueError("need at least two (eps, q, alpha, measured) rows")
    if np.any(data[:, 3] <= 0):
        raise ValueError("measured errors must be positive")
    pre = 0.5 * (2.0 + constants.norm_L + constants.norm_R)
    base = replace(constants, C0=1.0, C1=1.0)
    rows = []
    for eps, q, alpha, _ in data:
        p = proxy_order(int(q), dim)
        wq, far = _geometry_factors(constants.R_pxy, int(q), dim)
        rows.append((eps, eps * base.c0 * wq, base.c1 * far / (alpha - 1.0) * alpha ** (-p)))
    rows = np.array(rows) * pre
    logm = np.log(data[:, 3])

    def resid(theta, mask=(True, True)):
        c = np.array([constants.C0, constants.C1], dtype=float)
        c[np.array(mask)] = np.exp(theta)
        return np.log(rows[:, 0] + c[0] * rows[:, 1] + c[1] * rows[:, 2]) - logm

    x0 = np.log([constants.C0, constants.C1])
    full = least_squares(resid, x0)
    C0, C1 = np.exp(full.x)
    share_id = (rows[:, 0] + C0 * rows[:, 1]) / (rows[:, 0] + C0 * rows[:, 1] + C1 * rows[:, 2])
    if np.all(share_id > dominance) or np.all(share_id < 1.0 - dominance):
        mask = (True, False) if np.all(share_id > dominance) else (False, True)
        single = least_squares(lambda t: resid(t, mask), x0[np.array(mask)])
        C = np.array([constants.C0, constants.C1])
        C[np.array(mask)] = np.exp(single.x)
        r = resid(single.x, mask)
        return FitResult(float(C[0]), float(C[1]), True, float(np.sqrt(np.mean(r ** 2))))
    r = full.fun
    return FitResult(float(C0), float(C1), False, float(np.sqrt(np.mean(r ** 2))))


# {{{ pointwise proxy representation

def lemma_bound(r_pxy: float, alpha: float, p: int, dim: int = 3) -> float:
    """Pointwise bound on the proxy representation error of the Green function.

    In 2D the series tail and the trapezoidal aliasing each contribute
    ``alpha^-(p+1) / (2 pi (p + 1) (1 - 1/alpha))``.
    """
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    pre = 1.0 / (4.0 * math.pi * r_pxy) if dim == 3 else 1.0 / (math.pi * (p + 1))
    return pre * alpha ** (-p) / (alpha - 1.0)


def proxy_rule(center, radius: float, p: int, dim: int = 3):
    """Points and weights of a rule exact to degree ``2p`` on the proxy sphere (circle)."""
    if dim == 3:
        rule = sphere_rule(p)
        return center + radius * rule.points, rule.weights * radius ** 2
    rule = circle_rule(2 * p + 1)
    return center + radius * rule.points, rule.weights * radius


def proxy_transfer(x, center, radius: float, p: int, points, weights, dim: int = 3,
                   truncated: bool = True):
    """``T(x, p_k) = P(x, p_k) w_k`` with the Poisson kernel truncated at order ``p``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if dim == 3:
        if truncated:
            pk = poisson_series(x[:, None, :], points[None, :, :], center, radius, p)
        else:
            pk = poisson_kernel(x[:, None, :], points[None, :, :], center, radius, 3)
        return pk * weights[None, :]
    # circle: exterior Poisson kernel series 1/(2 pi R) (1 + 2 sum (R/r)^l cos(l t))
    u = x - center
    rx = np.linalg.norm(u, axis=-1)
    tx = np.arctan2(u[:, 1], u[:, 0])
    v = points - center
    tp = np.arctan2(v[:, 1], v[:, 0])
    if not truncated:
        return poisson_kernel(x[:, None, :], points[None, :, :], center, radius, 2) * weights
    acc = np.ones((len(x), len(points)))
    for ell in range(1, p + 1):
        acc += 2.0 * (radius / rx[:, None]) ** ell * np.cos(ell * (tx[:, None] - tp[None, :]))
    return acc / (2.0 * math.pi * radius) * weights[None, :]


def lemma1_check(x, y, center, r_pxy: float, p: int, dim: int = 3,
                 truncated: bool = True):
    """Measured proxy-mediated error of the Green function and the corresponding bound.

    ``alpha`` in the bound is ``r_pxy / |y - c|``. In 2D the monopole part
    ``-log(r_x / R) / (2 pi)`` of the far potential is not carried by harmonic
    proxies and is added back.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    center = np.asarray(center, dtype=float)
    ry = np.linalg.norm(y - center)
    rx = np.linalg.norm(x - center)
    if not ry < r_pxy < rx:
        raise ValueError("need |y - c| < r_pxy < |x - c|")
    points, weights = proxy_rule(center, r_pxy, p, dim)
    t = proxy_transfer(x, center, r_pxy, p, points, weights, dim, truncated)[0]
    approx = t @ green(dim, points, y)
    if dim == 2:
        approx += -math.log(rx / r_pxy) / (2.0 * math.pi)
    measured = abs(float(green(dim, x, y)) - float(approx))
    if ry == 0:
        return measured, 0.0
    return measured, lemma_bound(r_pxy, r_pxy / ry, p, dim)


def transfer_norm_ratio(far_points, center, r_pxy: float, p: int, dim: int = 3) -> float:
    """``|T(X_far, P)|_2`` divided by the equal-weight size ``4 pi R^2 / q``."""
    points, weights = proxy_rule(center, r_pxy, p, dim)
    t = proxy_transfer(far_points, center, r_pxy, p, points, weights, dim, truncated=False)
    wq = _geometry_factors(r_pxy, len(points), dim)[0]
    return float(np.linalg.norm(t, 2) / wq)

# }}}


def write_sweep(path, rows: Sequence[dict], meta: Optional[dict] = None) -> None:
    """CSV with ``# key: value`` metadata lines followed by a header row."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
