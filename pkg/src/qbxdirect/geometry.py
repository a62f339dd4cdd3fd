"""Parametric closed curves/surfaces, panel quadrature and QBX centers."""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import roots_legendre


class GeometryError(ValueError):
    """Invalid shape parameters (outside their domain)."""


class CenterCollisionError(RuntimeError):
    """A QBX expansion center lies too close to a foreign panel."""


@dataclass(frozen=True)
class ParametricShape:
    kind: str
    amplitude: float = 0.0
    arms: int = 0
    major_radius: float = 0.0
    minor_radius: float = 0.0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("starfish", "circle", "torus", "sphere"):
            raise GeometryError(f"unknown shape kind: {self.kind!r}")
        if self.kind == "starfish" and not 0 <= self.amplitude < 1:
            raise GeometryError("starfish amplitude must satisfy 0 <= A < 1")
        if self.kind == "torus" and not 0 < self.minor_radius < self.major_radius:
            raise GeometryError("torus radii must satisfy 0 < b < a")
        if self.kind in ("circle", "sphere") and self.radius <= 0:
            raise GeometryError("radius must be positive")

    @property
    def dim(self) -> int:
        return 2 if self.kind in ("starfish", "circle") else 3


@dataclass(frozen=True)
class Discretization:
    """Nystrom discretization shared by targets and sources.

    ``panels[i]`` is the half-open node range of panel ``i``; ``panel_size``
    is arc length (2D) or diameter (3D).
    """

    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    panels: np.ndarray
    centroids: np.ndarray
    panel_size: np.ndarray
    panel_radius: np.ndarray
    qbx_centers: Optional[np.ndarray] = None
    qbx_radii: Optional[np.ndarray] = None
    side: int = -1

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def npanels(self) -> int:
        return len(self.panels)

    @property
    def node_panel(self) -> np.ndarray:
        counts = self.panels[:, 1] - self.panels[:, 0]
        return np.repeat(np.arange(self.npanels), counts)

    def has_qbx(self) -> bool:
        return self.qbx_centers is not None


def _panel_data(nodes, weights, panels):
    centroids = np.empty((len(panels), nodes.shape[1]))
    radius = np.empty(len(panels))
    for i, (a, b) in enumerate(panels):
        w = weights[a:b]
        centroids[i] = w @ nodes[a:b] / w.sum()
        radius[i] = np.max(np.linalg.norm(nodes[a:b] - centroids[i], axis=1))
    return centroids, radius


# {{{ 2D curves

def _starfish_curve(theta, amplitude, arms):
    rad = 1.0 + amplitude * np.sin((arms + 1) * theta)
    drad = amplitude * (arms + 1) * np.cos((arms + 1) * theta)
    c, s = np.cos(theta), np.sin(theta)
    x = np.stack([rad * c, rad * s], axis=-1)
    dx = np.stack([drad * c - rad * s, drad * s + rad * c], axis=-1)
    return x, dx


def build_starfish(amplitude: float, arms: int, n_panels: int, q: int = 4) -> Discretization:
    """Panelize ``r(t) = 1 + A sin((n + 1) t)`` with ``q`` Gauss-Legendre nodes per panel.

    The curve is traversed counterclockwise; normals point outward.
    """
    ParametricShape("starfish", amplitude=amplitude, arms=arms)
    if n_panels < 4:
        raise GeometryError("need at least 4 panels")
    if q < 2:
        raise GeometryError("need at least 2 nodes per panel")

    gl_x, gl_w = roots_legendre(q)
    edges = np.linspace(0.0, 2.0 * np.pi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    theta = (edges[:-1, None] + half[:, None] * (gl_x[None, :] + 1.0)).ravel()
    wtheta = (half[:, None] * gl_w[None, :]).ravel()

    x, dx = _starfish_curve(theta, amplitude, arms)
    speed = np.linalg.norm(dx, axis=1)
    normals = np.stack([dx[:, 1], -dx[:, 0]], axis=-1) / speed[:, None]
    weights = wtheta * speed
    panels = np.stack([np.arange(n_panels) * q, np.arange(1, n_panels + 1) * q], axis=1)

    centroids, pradius = _panel_data(x, weights, panels)
    arclen = weights.reshape(n_panels, q).sum(axis=1)
    return Discretization(x, weights, normals, panels, centroids, arclen, pradius)


def build_circle(radius: float, n_panels: int, q: int = 4) -> Discretization:
    ParametricShape("circle", radius=radius)
    disc = build_starfish(0.0, 0, n_panels, q)
    return replace(disc, nodes=disc.nodes * radius, weights=disc.weights * radius,
                   centroids=disc.centroids * radius,
                   panel_size=disc.panel_size * radius,
                   panel_radius=disc.panel_radius * radius)

# }}}


# {{{ 3D surfaces

def _tensor_panels(mapping, u_edges, v_edges, q):
    """Tensor-product Gauss-Legendre nodes on each ``(u, v)`` rectangle.

    ``mapping(u, v)`` returns ``(x, x_u, x_v)``.
    """
    gl_x, gl_w = roots_legendre(q)
    nodes, weights, normals, panels, diam = [], [], [], [], []
    start = 0
    for i in range(len(u_edges) - 1):
        for j in range(len(v_edges) - 1):
            hu = 0.5 * (u_edges[i + 1] - u_edges[i])
            hv = 0.5 * (v_edges[j + 1] - v_edges[j])
            uu = u_edges[i] + hu * (gl_x + 1.0)
            vv = v_edges[j] + hv * (gl_x + 1.0)
            U, V = np.meshgrid(uu, vv, indexing="ij")
            x, xu, xv = mapping(U.ravel(), V.ravel())
            cross = np.cross(xu, xv)
            jac = np.linalg.norm(cross, axis=1)
            nodes.append(x)
            normals.append(cross / jac[:, None])
            weights.append(np.outer(gl_w, gl_w).ravel() * hu * hv * jac)
            cu = np.array([u_edges[i], u_edges[i + 1], u_edges[i], u_edges[i + 1]])
            cv = np.array([v_edges[j], v_edges[j], v_edges[j + 1], v_edges[j + 1]])
            corners = mapping(cu, cv)[0]
            diam.append(max(np.linalg.norm(corners[0] - corners[3]),
                            np.linalg.norm(corners[1] - corners[2])))
            panels.append((start, start + q * q))
            start += q * q
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    normals = np.concatenate(normals)
    panels = np.array(panels)
    return nodes, weights, normals, panels, np.array(diam)


def build_torus(a: float, b: float, n_u: int, n_v: int, q: int = 4) -> Discretization:
    """Torus ``((a + b cos t) cos p, (a + b cos t) sin p, b sin t)``.

    ``n_u`` panels run along the major circle (``p``), ``n_v`` along the tube
    (``t``); each panel carries ``q x q`` Gauss-Legendre nodes.
    """
    ParametricShape("torus", major_radius=a, minor_radius=b)
    if q < 2 or n_u < 2 or n_v < 2:
        raise GeometryError("need q >= 2 and at least 2 panels per direction")

    def mapping(phi, theta):
        ring = a + b * np.cos(theta)
        x = np.stack([ring * np.cos(phi), ring * np.sin(phi), b * np.sin(theta)], axis=-1)
        x_phi = np.stack([-ring * np.sin(phi), ring * np.cos(phi), 0 * phi], axis=-1)
        x_theta = np.stack([-b * np.sin(theta) * np.cos(phi),
                            -b * np.sin(theta) * np.sin(phi),
                            b * np.cos(theta)], axis=-1)
        return x, x_phi, x_theta

    edges_u = np.linspace(0.0, 2.0 * np.pi, n_u + 1)
    edges_v = np.linspace(0.0, 2.0 * np.pi, n_v + 1)
    nodes, weights, normals, panels, diam = _tensor_panels(mapping, edges_u, edges_v, q)
    centroids, pradius = _panel_data(nodes, weights, panels)
    return Discretization(nodes, weights, normals, panels, centroids, diam, pradius)


_CUBE_FACES = [
    (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0])),
    (np.array([-1.0, 0, 0]), np.array([0, 0, 1.0]), np.array([0, 1.0, 0])),
    (np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), np.array([1.0, 0, 0])),
    (np.array([0, -1.0, 0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0])),
    (np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0])),
    (np.array([0, 0, -1.0]), np.array([0, 1.0, 0]), np.array([1.0, 0, 0])),
]


def build_sphere(radius: float, n_per_face: int, q: int = 4) -> Discretization:
    """Cubed-sphere panelization: six gnomonic faces of ``n_per_face^2`` panels."""
    ParametricShape("sphere", radius=radius)
    if q < 2 or n_per_face < 1:
        raise GeometryError("need q >= 2 and at least one panel per face")
    parts = []
    edges = np.linspace(-1.0, 1.0, n_per_face + 1)
    for e0, e1, e2 in _CUBE_FACES:
        def mapping(u, v, e0=e0, e1=e1, e2=e2):
            y = e0[None, :] + u[:, None] * e1[None, :] + v[:, None] * e2[None, :]
            r = np.linalg.norm(y, axis=1)[:, None]
            x = radius * y / r
            x_u = radius * (e1[None, :] / r - y * (u[:, None] / r ** 3))
            x_v = radius * (e2[None, :] / r - y * (v[:, None] / r ** 3))
            return x, x_u, x_v
        parts.append(_tensor_panels(mapping, edges, edges, q))

    nodes = np.concatenate([p[0] for p in parts])
    weights = np.concatenate([p[1] for p in parts])
    normals = np.concatenate([p[2] for p in parts])
    # outward orientation is face dependent; fix it against the position
    flip = np.sign(np.sum(normals * nodes, axis=1))
    normals = normals * flip[:, None]
    offsets = np.cumsum([0] + [len(p[1]) for p in parts[:-1]])
    panels = np.concatenate([p[3] + off for p, off in zip(parts, offsets)])
    diam = np.concatenate([p[4] for p in parts])
    centroids, pradius = _panel_data(nodes, weights, panels)
    return Discretization(nodes, weights, normals, panels, centroids, diam, pradius)

# }}}


# {{{ QBX centers

def attach_qbx_centers(disc: Discretization, side: str = "interior", scale: float = 0.5,
                       safety: float = 1.0, check: bool = True) -> Discretization:
    """Place one expansion center per node at ``x -+ r n`` with ``r = scale * panel size``.

    With ``check``, a :class:`CenterCollisionError` is raised when a center falls
    inside a foreign panel's bounding ball inflated by ``safety``.
    """
    if scale <= 0:
        raise GeometryError("QBX scale must be positive")
    sign = {"interior": -1, "exterior": 1}.get(side)
    if sign is None:
        raise GeometryError(f"side must be 'interior' or 'exterior', got {side!r}")

    radii = scale * disc.panel_size[disc.node_panel]
    centers = disc.nodes + sign * radii[:, None] * disc.normals
    out = replace(disc, qbx_centers=centers, qbx_radii=radii, side=sign)
    if check:
        bad = find_center_collisions(out, safety)
        if len(bad):
            raise CenterCollisionError(
                f"{len(bad)} QBX centers lie inside neighboring panels "
                f"(first at node {bad[0][0]}); refine the panels or reduce the scale")
    return out


def find_center_collisions(disc: Discretization, safety: float = 1.0):
    """Pairs ``(node, panel)`` whose center lies in the panel's inflated bounding ball."""
    tree = cKDTree(disc.centroids)
    rmax = safety * disc.panel_radius.max()
    own = disc.node_panel
    hits = tree.query_ball_point(disc.qbx_centers, rmax)
    bad = []
    for k, cand in enumerate(hits):
        for j in cand:
            if j == own[k]:
                continue
            d = np.linalg.norm(disc.qbx_centers[k] - disc.centroids[j])
            if d < safety * disc.panel_radius[j]:
                bad.append((k, j))
    return bad

# }}}


# {{{ config and export

def shape_from_config(section) -> ParametricShape:
    kind = section.get("kind")
    if kind == "starfish":
        return ParametricShape(kind, amplitude=float(section.get("amplitude", 0.25)),
                               arms=int(section.get("arms", 16)))
    if kind == "torus":
        return ParametricShape(kind, major_radius=float(section.get("major_radius", 10.0)),
                               minor_radius=float(section.get("minor_radius", 2.0)))
    return ParametricShape(kind, radius=float(section.get("radius", 1.0)))


def build_from_config(section) -> Discretization:
    """Build a discretization with centers from a ``[geometry]`` config mapping.

    Recognized keys: ``kind``, shape parameters, ``panels`` (2D), ``panels_u``,
    ``panels_v`` (torus), ``panels_per_face`` (sphere), ``order``,
    ``qbx_side``, ``qbx_scale``.
    """
    shape = shape_from_config(section)
    q = int(section.get("order", 4))
    if shape.kind == "starfish":
        disc = build_starfish(shape.amplitude, shape.arms, int(section.get("panels", 256)), q)
    elif shape.kind == "circle":
        disc = build_circle(shape.radius, int(section.get("panels", 64)), q)
    elif shape.kind == "torus":
        disc = build_torus(shape.major_radius, shape.minor_radius,
                           int(section.get("panels_u", 40)), int(section.get("panels_v", 10)), q)
    else:
        disc = build_sphere(shape.radius, int(section.get("panels_per_face", 6)), q)
    return attach_qbx_centers(disc, section.get("qbx_side", "interior"),
                              float(section.get("qbx_scale", 0.5)))


def read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return parser


def export_csv(disc: Discretization, path) -> None:
    """Write nodes, weights, normals (and QBX data when present) as CSV."""
    d = disc.dim
    axes = "xyz"[:d]
    header = list(axes) + ["weight"] + [f"n{a}" for a in axes] + ["panel"]
    cols = [disc.nodes, disc.weights[:, None], disc.normals, disc.node_panel[:, None]]
    if disc.has_qbx():
        header += [f"c{a}" for a in axes] + ["qbx_radius"]
        cols += [disc.qbx_centers, disc.qbx_radii[:, None]]
    data = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])

# }}}
