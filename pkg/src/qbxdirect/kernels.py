"""Laplace kernels, harmonic expansions and QBX local expansions.

Conventions
-----------
* 2D Green function ``G(x, y) = -log|x - y| / (2 pi)``, 3D ``1 / (4 pi |x - y|)``.
* The double-layer kernel is ``n_y . grad_y G(x, y)``.
* Spherical harmonics use ``|m|`` in the associated Legendre factor so that
  ``Y_l^{-m} = conj(Y_l^m)``; with this choice the addition theorem reads
  ``P_l(x . y) = 4 pi / (2l + 1) sum_m Y_l^m(x) Y_l^{-m}(y)``.

All point arrays are ``(..., d)`` shaped.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import roots_legendre

MAX_HARMONIC_DEGREE = 64


class SingularEvaluationError(ValueError):
    """Raised when a kernel is evaluated at coincident points."""


class ExpansionDomainError(ValueError):
    """Raised when an expansion is used outside its region of validity."""


class Layer(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"


@dataclass(frozen=True)
class KernelKind:
    dim: int
    layer: Layer

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        object.__setattr__(self, "layer", Layer(self.layer))

    @classmethod
    def all(cls) -> list["KernelKind"]:
        return [cls(d, lay) for d in (2, 3) for lay in Layer]


# {{{ point kernels

def _check_distinct(r2):
    if np.any(r2 == 0.0):
        raise SingularEvaluationError("kernel evaluated at coincident points")


def green(dim: int, x, y):
    """Laplace free-space Green function (broadcasts over leading axes)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = np.sum((x - y) ** 2, axis=-1)
    _check_distinct(r2)
    if dim == 2:
        return -np.log(r2) / (4.0 * np.pi)
    elif dim == 3:
        return 1.0 / (4.0 * np.pi * np.sqrt(r2))
    raise ValueError(f"unsupported dimension: {dim}")


def dlp_kernel(dim: int, x, y, n_y):
    """Double-layer kernel ``n_y . grad_y G(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    r2 = np.sum(d ** 2, axis=-1)
    _check_distinct(r2)
    ndot = np.sum(np.asarray(n_y, dtype=float) * d, axis=-1)
    if dim == 2:
        return -ndot / (2.0 * np.pi * r2)
    elif dim == 3:
        return -ndot / (4.0 * np.pi * r2 ** 1.5)
    raise ValueError(f"unsupported dimension: {dim}")


def point_kernel(kind: KernelKind, x, y, n_y=None):
    if kind.layer == Layer.SINGLE:
        return green(kind.dim, x, y)
    return dlp_kernel(kind.dim, x, y, n_y)


def kernel_matrix(kind: KernelKind, targets, sources, normals=None):
    """Dense plain-kernel matrix ``K[i, j] = K(targets[i], sources[j])``."""
    t = np.asarray(targets, dtype=float)[:, None, :]
    s = np.asarray(sources, dtype=float)[None, :, :]
    if kind.layer == Layer.SINGLE:
        return green(kind.dim, t, s)
    return dlp_kernel(kind.dim, t, s, np.asarray(normals, dtype=float)[None, :, :])

# }}}


# {{{ Legendre functions and spherical harmonics

def legendre_all(lmax: int, t):
    """Legendre polynomials ``P_0..P_lmax`` at ``t``; shape ``(lmax + 1, *t.shape)``."""
    t = np.asarray(t, dtype=float)
    out = np.empty((lmax + 1,) + t.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = t
    for ell in range(1, lmax):
        out[ell + 1] = ((2 * ell + 1) * t * out[ell] - ell * out[ell - 1]) / (ell + 1)
    return out


def legendre(ell: int, t):
    """Legendre polynomial ``P_ell(t)``."""
    if ell < 0:
        raise ValueError("degree must be nonnegative")
    return legendre_all(ell, t)[ell]


def legendre_and_derivative(lmax: int, t):
    """``(P_l(t), P_l'(t))`` for ``l = 0..lmax``.

    The derivative uses ``P'_{l+1} = P'_{l-1} + (2l + 1) P_l``, which stays
    finite at ``t = +-1``.
    """
    p = legendre_all(lmax, t)
    dp = np.zeros_like(p)
    if lmax >= 1:
        dp[1] = 1.0
    for ell in range(1, lmax):
        dp[ell + 1] = dp[ell - 1] + (2 * ell + 1) * p[ell]
    return p, dp


def normalized_assoc_legendre(lmax: int, t):
    """Orthonormal associated Legendre values ``Pbar[l, m]`` for ``0 <= m <= l``.

    ``Pbar[l, m] = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m(t)`` with the
    Condon-Shortley phase; computed by the standard stable recurrence in ``l``.
    """
    if lmax > MAX_HARMONIC_DEGREE:
        raise ValueError(f"degree {lmax} exceeds cap {MAX_HARMONIC_DEGREE}")
    t = np.asarray(t, dtype=float)
    s = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    out = np.zeros((lmax + 1, lmax + 1) + t.shape)
    out[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, lmax + 1):
        out[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * out[m - 1, m - 1]
    for m in range(0, lmax):
        out[m + 1, m] = np.sqrt(2.0 * m + 3.0) * t * out[m, m]
    for m in range(0, lmax + 1):
        for ell in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - m * m))
            b = np.sqrt(((ell - 1.0) ** 2 - m * m) / (4.0 * (ell - 1.0) ** 2 - 1.0))
            out[ell, m] = a * (t * out[ell - 1, m] - b * out[ell - 2, m])
    return out


def _angles(direction):
    d = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(nrm - 1.0) > 1e-10):
        raise ValueError("directions must be unit vectors")
    cos_theta = np.clip(d[..., 2], -1.0, 1.0)
    phi = np.arctan2(d[..., 1], d[..., 0])
    return cos_theta, phi


def sph_harm_all(lmax: int, direction):
    """All ``Y_l^m`` for ``l <= lmax`` at unit ``direction``.

    Returns a complex array of shape ``(lmax + 1, 2 lmax + 1, ...)`` indexed
    ``[l, m + lmax]``; entries with ``|m| > l`` are zero. Negative orders use
    ``Y_l^-m = conj(Y_l^m)``, so ``sum_m Y_l^m(x) Y_l^-m(x) = (2l + 1) / (4 pi)``.
    """
    cos_theta, phi = _angles(direction)
    pbar = normalized_assoc_legendre(lmax, cos_theta)
    out = np.zeros((lmax + 1, 2 * lmax + 1) + cos_theta.shape, dtype=complex)
    for m in range(0, lmax + 1):
        e = np.exp(1j * m * phi)
        for ell in range(m, lmax + 1):
            out[ell, lmax + m] = pbar[ell, m] * e
            if m > 0:
                out[ell, lmax - m] = pbar[ell, m] * np.conj(e)
    return out


def sph_harm(ell: int, m: int, direction):
    """Orthonormal spherical harmonic ``Y_ell^m`` at a unit direction."""
    if abs(m) > ell:
        raise ValueError(f"|m| = {abs(m)} exceeds degree {ell}")
    return sph_harm_all(ell, direction)[ell, ell + m]

# }}}


# {{{ sphere quadrature

@dataclass(frozen=True)
class SphereRule:
    """Quadrature on the unit sphere (or circle) exact to ``exact_degree``."""

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    @property
    def q(self) -> int:
        return len(self.weights)


def sphere_rule_size(p: int) -> int:
    """Number of points of the product rule of order ``p``."""
    return (p + 1) * (2 * p + 1)


def sphere_rule_order(q: int) -> int:
    """Largest ``p`` whose product rule has at most ``q`` points."""
    if q < 1:
        raise ValueError("need at least one point")
    p = 0
    while sphere_rule_size(p + 1) <= q:
        p += 1
    return p


def sphere_rule(p: int) -> SphereRule:
    """Product Gauss-Legendre x trapezoidal rule exact for harmonics of degree ``2p``.

    Uses ``p + 1`` nodes in ``cos(theta)`` and ``2p + 1`` equispaced azimuths.
    """
    if p < 0:
        raise ValueError("order must be nonnegative")
    t, wt = roots_legendre(p + 1)
    nphi = 2 * p + 1
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    st = np.sqrt(1.0 - tt ** 2)
    points = np.stack([st * np.cos(pp), st * np.sin(pp), tt], axis=-1).reshape(-1, 3)
    weights = np.repeat(wt, nphi) * (2.0 * np.pi / nphi)
    return SphereRule(points, weights, 2 * p)


def circle_rule(q: int) -> SphereRule:
    """Trapezoidal rule with ``q`` points on the unit circle."""
    if q < 1:
        raise ValueError("need at least one point")
    theta = 2.0 * np.pi * np.arange(q) / q
    points = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return SphereRule(points, np.full(q, 2.0 * np.pi / q), q - 1)

# }}}


# {{{ Poisson kernel and multipole series

def poisson_kernel(x, p, center, radius: float, dim: int = 3):
    """Exterior Dirichlet Poisson kernel of the sphere (circle) of ``radius``.

    Positive outside the sphere: ``(|x-c|^2 - R^2) / (4 pi R |x - p|^3)`` in
    3D and ``(|x-c|^2 - R^2) / (2 pi R |x - p|^2)`` in 2D.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    rx2 = np.sum((x - center) ** 2, axis=-1)
    if np.any(rx2 <= radius ** 2):
        raise ExpansionDomainError("Poisson kernel needs targets outside the sphere")
    d2 = np.sum((x - p) ** 2, axis=-1)
    if dim == 3:
        return (rx2 - radius ** 2) / (4.0 * np.pi * radius * d2 ** 1.5)
    return (rx2 - radius ** 2) / (2.0 * np.pi * radius * d2)


def poisson_series(x, p, center, radius: float, order: int):
    """Spherical-harmonic series of the 3D exterior Poisson kernel, truncated at ``order``."""
    u = np.asarray(x, dtype=float) - center
    v = np.asarray(p, dtype=float) - center
    rx = np.linalg.norm(u, axis=-1)
    if np.any(rx <= radius):
        raise ExpansionDomainError("Poisson series needs targets outside the sphere")
    t = np.sum(u * v, axis=-1) / (rx * np.linalg.norm(v, axis=-1))
    pl = legendre_all(order, t)
    ell = np.arange(order + 1).reshape((-1,) + (1,) * np.ndim(t))
    terms = (2 * ell + 1) / (4 * np.pi) * radius ** (ell - 1.0) / rx ** (ell + 1.0) * pl
    return terms.sum(axis=0)


def truncated_multipole(x, y, center, p: int, dim: int = 3):
    """Green function expanded about ``center`` for ``|y - c| < |x - c|``, terms ``l <= p``."""
    u = np.asarray(x, dtype=float) - center
    v = np.asarray(y, dtype=float) - center
    rx = np.linalg.norm(u, axis=-1)
    ry = np.linalg.norm(v, axis=-1)
    if np.any(ry >= rx):
        raise ExpansionDomainError("multipole expansion requires |y - c| < |x - c|")
    if dim == 3:
        t = np.where(ry > 0, np.sum(u * v, axis=-1) / (rx * np.where(ry > 0, ry, 1.0)), 1.0)
        pl = legendre_all(p, t)
        ell = np.arange(p + 1).reshape((-1,) + (1,) * np.ndim(rx))
        return (ry ** ell / rx ** (ell + 1.0) * pl).sum(axis=0) / (4.0 * np.pi)
    zx = u[..., 0] + 1j * u[..., 1]
    zy = v[..., 0] + 1j * v[..., 1]
    ratio = zy / zx
    acc = np.log(np.abs(zx)).astype(complex)
    term = np.ones_like(ratio)
    for j in range(1, p + 1):
        term = term * ratio
        acc = acc - term / j
    return -acc.real / (2.0 * np.pi)


def multipole_error_bound(rx, ry, p: int, dim: int = 3):
    """Tail bound of the truncated multipole series."""
    rx = np.asarray(rx, dtype=float)
    ry = np.asarray(ry, dtype=float)
    if dim == 3:
        return (ry / rx) ** (p + 1) / (4.0 * np.pi * (rx - ry))
    return (ry / rx) ** (p + 1) / (2.0 * np.pi * (p + 1) * (1.0 - ry / rx))

# }}}


# {{{ QBX

def qbx_kernel_matrix(kind: KernelKind, targets, centers, sources, normals=None,
                      order: int = 4):
    """QBX-mediated kernel matrix.

    Entry ``(k, l)`` is the order-``order`` local expansion of the potential
    of source ``l`` about ``centers[k]``, evaluated at ``targets[k]``.
    """
    targets = np.asarray(targets, dtype=float)
    centers = np.asarray(centers, dtype=float)
    sources = np.asarray(sources, dtype=float)
    if kind.dim == 2:
        return _qbx_matrix_2d(kind.layer, targets, centers, sources, normals, order)
    return _qbx_matrix_3d(kind.layer, targets, centers, sources, normals, order)


def _qbx_matrix_2d(layer, targets, centers, sources, normals, order):
    c = (centers[:, 0] + 1j * centers[:, 1])[:, None]
    d = (targets[:, 0] + 1j * targets[:, 1])[:, None] - c
    s = (sources[:, 0] + 1j * sources[:, 1])[None, :] - c
    if np.any(s == 0):
        raise SingularEvaluationError("source coincides with an expansion center")
    ratio = d / s
    term = np.ones(ratio.shape, dtype=complex)
    if layer == Layer.SINGLE:
        acc = np.log(np.abs(s)).astype(complex)
        for j in range(1, order + 1):
            term *= ratio
            acc -= term / j
        return -acc.real / (2.0 * np.pi)
    nu = (normals[:, 0] + 1j * normals[:, 1])[None, :]
    acc = term.copy()
    for _ in range(order):
        term *= ratio
        acc += term
    return -(nu * acc / s).real / (2.0 * np.pi)


def _qbx_matrix_3d(layer, targets, centers, sources, normals, order):
    u = targets - centers
    rho = np.linalg.norm(u, axis=-1)[:, None]
    uhat = u / np.where(rho > 0, rho, 1.0)
    v = sources[None, :, :] - centers[:, None, :]
    r = np.linalg.norm(v, axis=-1)
    if np.any(r == 0):
        raise SingularEvaluationError("source coincides with an expansion center")
    vhat = v / r[..., None]
    t = np.clip(np.einsum("kd,kld->kl", uhat, vhat), -1.0, 1.0)
    ratio = rho / r
    if layer == Layer.SINGLE:
        pl = legendre_all(order, t)
        acc = np.zeros_like(t)
        pw = 1.0 / r
        for ell in range(order + 1):
            acc += pw * pl[ell]
            pw = pw * ratio
        return acc / (4.0 * np.pi)
    n = np.asarray(normals, dtype=float)[None, :, :]
    n_v = np.sum(n * vhat, axis=-1)
    n_u = np.einsum("ld,kd->kl", n[0], uhat)
    pl, dpl = legendre_and_derivative(order, t)
    acc = np.zeros_like(t)
    pw = 1.0 / r ** 2
    tang = n_u - t * n_v
    for ell in range(order + 1):
        acc += pw * (-(ell + 1) * pl[ell] * n_v + dpl[ell] * tang)
        pw = pw * ratio
    return acc / (4.0 * np.pi)


@dataclass(frozen=True)
class LocalExpansion:
    """Local (regular) expansion of a layer potential about ``center``.

    2D: ``coeffs[j]`` multiplies ``(z - c)^j`` and the potential is the real
    part. 3D: ``coeffs[l, m + p]`` multiplies ``|x - c|^l Y_l^m(xhat)``.
    """

    center: np.ndarray
    radius: float
    order: int
    coeffs: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.center)


def qbx_expand(kind: KernelKind, sources, weights, density, center, radius: float,
               order: int, normals=None, check: bool = True) -> LocalExpansion:
    """Form the local expansion of ``sum_l K(., y_l) w_l sigma_l`` about ``center``."""
    sources = np.asarray(sources, dtype=float)
    center = np.asarray(center, dtype=float)
    strength = np.asarray(weights, dtype=float) * np.asarray(density, dtype=float)
    dist = np.linalg.norm(sources - center, axis=-1)
    if check and np.any(dist <= radius):
        raise ExpansionDomainError("a source lies inside the expansion ball")

    if kind.dim == 2:
        s = (sources[:, 0] - center[0]) + 1j * (sources[:, 1] - center[1])
        coeffs = np.zeros(order + 1, dtype=complex)
        if kind.layer == Layer.SINGLE:
            coeffs[0] = np.sum(strength * np.log(np.abs(s)))
            for j in range(1, order + 1):
                coeffs[j] = -np.sum(strength / s ** j) / j
            coeffs *= -1.0 / (2.0 * np.pi)
        else:
            nu = np.asarray(normals, dtype=float)
            nu = nu[:, 0] + 1j * nu[:, 1]
            for j in range(order + 1):
                coeffs[j] = np.sum(strength * nu / s ** (j + 1))
            coeffs *= -1.0 / (2.0 * np.pi)
        return LocalExpansion(center, radius, order, coeffs)

    v = sources - center
    r = np.linalg.norm(v, axis=-1)
    vhat = v / r[:, None]
    ylm = sph_harm_all(order, vhat)
    coeffs = np.zeros((order + 1, 2 * order + 1), dtype=complex)
    if kind.layer == Layer.SINGLE:
        for ell in range(order + 1):
            radial = strength / r ** (ell + 1)
            coeffs[ell] = 4 * np.pi / (2 * ell + 1) * np.conj(ylm[ell]) @ radial
        coeffs /= 4.0 * np.pi
        return LocalExpansion(center, radius, order, coeffs)

    # degree-l part of the kernel is a degree-l harmonic in the target
    # direction; project it with a rule exact to degree 2l
    rule = sphere_rule(order + 1)
    pl_dirs = rule.points
    n = np.asarray(normals, dtype=float)
    ylm_rule = sph_harm_all(order, pl_dirs)
    for ell in range(order + 1):
        t = np.clip(pl_dirs @ vhat.T, -1.0, 1.0)
        pl, dpl = legendre_and_derivative(ell, t)
        n_v = np.sum(n * vhat, axis=-1)[None, :]
        n_u = pl_dirs @ n.T
        val = (-(ell + 1) * pl[ell] * n_v + dpl[ell] * (n_u - t * n_v)) / r[None, :] ** (ell + 2)
        f = val @ strength / (4.0 * np.pi)
        coeffs[ell] = np.conj(ylm_rule[ell]) @ (rule.weights * f)
    return LocalExpansion(center, radius, order, coeffs)


def qbx_eval(expansion: LocalExpansion, x) -> np.ndarray:
    """Evaluate a local expansion at ``x`` (inside its ball)."""
    x = np.asarray(x, dtype=float)
    u = x - expansion.center
    if expansion.dim == 2:
        z = u[..., 0] + 1j * u[..., 1]
        acc = np.zeros(z.shape, dtype=complex)
        for j in range(expansion.order, -1, -1):
            acc = acc * z + expansion.coeffs[j]
        return acc.real
    rho = np.linalg.norm(u, axis=-1)
    if np.all(rho == 0):
        return np.full(rho.shape, expansion.coeffs[0, expansion.order].real
                       / np.sqrt(4 * np.pi))
    uhat = np.where(rho[..., None] > 0, u / np.where(rho > 0, rho, 1.0)[..., None],
                    np.array([0.0, 0.0, 1.0]))
    p = expansion.order
    ylm = sph_harm_all(p, uhat)
    acc = 0.0
    for ell in range(p + 1):
        acc = acc + rho ** ell * np.tensordot(expansion.coeffs[ell], ylm[ell], axes=(0, 0))
    return np.real(acc)

# }}}
