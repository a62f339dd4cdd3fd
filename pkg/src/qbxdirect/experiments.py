"""Accuracy, ablation, proxy-sweep and timing studies shared by the CLI and tests."""

from __future__ import annotations

import configparser
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import error_model, solver
from .assembly import OperatorSpec, apply_dense
from .geometry import Discretization, build_from_config
from .tree import ClusterTree, build_tree

DEFAULT_TOLERANCES = (1e-4, 1e-8, 1e-12)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to rebuild a problem and rerun a study bit for bit."""

    geometry: dict = field(default_factory=lambda: {"kind": "starfish"})
    layer: str = "double"
    side: str = "interior"
    qbx_order: int = 4
    tolerances: tuple = DEFAULT_TOLERANCES
    alpha: float = 1.15
    q: object = "auto"
    seed: int = 0
    samples: int = 3
    leaf_size: int = 8
    alphas: tuple = (1.15, 1.5, 2.0)
    proxy_counts: tuple = ()
    sizes: tuple = ()
    output: str = "."

    def __post_init__(self):
        if self.layer not in ("single", "double"):
            raise ConfigError(f"layer must be single or double, got {self.layer!r}")
        if self.side not in ("interior", "exterior"):
            raise ConfigError(f"side must be interior or exterior, got {self.side!r}")
        if self.alpha <= 1:
            raise ConfigError("alpha must exceed 1")
        if self.q != "auto" and (not isinstance(self.q, int) or self.q < 1):
            raise ConfigError("q must be a positive integer or 'auto'")
        if any(t <= 0 for t in self.tolerances):
            raise ConfigError("tolerances must be positive")
        if self.samples < 1 or self.leaf_size < 1 or self.qbx_order < 0:
            raise ConfigError("samples, leaf_size must be positive and qbx_order nonnegative")
        if self.geometry.get("kind") not in ("starfish", "circle", "torus", "sphere"):
            raise ConfigError(f"unknown geometry kind {self.geometry.get('kind')!r}")

    @property
    def dim(self) -> int:
        return 2 if self.geometry["kind"] in ("starfish", "circle") else 3

    def spec(self) -> OperatorSpec:
        return OperatorSpec.preset(self.dim, self.layer, self.side, self.qbx_order)

    def metadata(self) -> dict:
        from . import __version__
        geo = " ".join(f"{k}={v}" for k, v in sorted(self.geometry.items()))
        return {"geometry": geo, "operator": f"{self.dim}D {self.layer} layer {self.side}",
                "qbx_order": self.qbx_order, "alpha": self.alpha, "q": self.q,
                "seed": self.seed, "version": __version__}


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def load_config(path) -> ExperimentConfig:
    """Read a key-value (INI) file with ``[geometry]``, ``[operator]`` and ``[experiment]``."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    if not parser.has_section("geometry"):
        raise ConfigError("config needs a [geometry] section")
    geo = dict(parser["geometry"])
    op = parser["operator"] if parser.has_section("operator") else {}
    ex = parser["experiment"] if parser.has_section("experiment") else {}
    kw = {"geometry": geo}
    try:
        if "layer" in op:
            kw["layer"] = op["layer"]
        if "side" in op:
            kw["side"] = op["side"]
        if "qbx_order" in op:
            kw["qbx_order"] = int(op["qbx_order"])
        for key, conv in (("tolerances", _floats), ("alphas", _floats),
                          ("proxy_counts", _ints), ("sizes", _ints)):
            if key in ex:
                kw[key] = conv(ex[key])
        for key, conv in (("alpha", float), ("seed", int), ("samples", int),
                          ("leaf_size", int), ("output", str)):
            if key in ex:
                kw[key] = conv(ex[key])
        if "q" in ex:
            kw["q"] = "auto" if ex["q"].strip() == "auto" else int(ex["q"])
    except ValueError as exc:
        raise ConfigError(f"bad value in config: {exc}") from exc
    return ExperimentConfig(**kw)


# {{{ problems

@dataclass
class Problem:
    config: ExperimentConfig
    disc: Discretization
    spec: OperatorSpec
    tree: ClusterTree

    @property
    def n(self) -> int:
        return self.disc.n


def build_discretization(geometry: dict, size: Optional[int] = None) -> Discretization:
    """Discretization with QBX centers; ``size`` overrides the panel-count key."""
    g = dict(geometry)
    key = {"starfish": "panels", "circle": "panels", "torus": "panels_u",
           "sphere": "panels_per_face"}[g["kind"]]
    if g["kind"] == "starfish":
        g.setdefault("panels", 1280)
    if size is not None:
        g[key] = size
    if g["kind"] == "torus" and "panels_v" not in g:
        # keep panels roughly square
        ratio = float(g.get("minor_radius", 2.0)) / float(g.get("major_radius", 10.0))
        g["panels_v"] = max(2, round(int(g.get("panels_u", 40)) * ratio))
    return build_from_config(g)


def build_problem(config: ExperimentConfig, size: Optional[int] = None) -> Problem:
    disc = build_discretization(config.geometry, size)
    return Problem(config, disc, config.spec(), build_tree(disc, config.leaf_size))


def random_densities(n: int, count: int, seed: int) -> np.ndarray:
    """``count`` densities uniform on ``[-1, 1]`` (columns)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(n, count))


def pilot_constants(problem: Problem, alpha: float, tol: float = 1e-10,
                    q: Optional[int] = None, reference: bool = False
                    ) -> error_model.ModelConstants:
    """Measure ``c0, c1`` from a leaf-level skeletonization.

    The multipliers ``C0, C1`` stay at 1 unless ``reference`` selects the
    tabulated values, which were fitted under a different normalization and
    predict too few proxies for these discretizations.
    """
    dim = problem.disc.dim
    if q is None:
        q = 33 if dim == 2 else error_model.realizable_count(2 * 8 * 9)
    factor = solver.compress(problem.spec, problem.disc, problem.tree, tol, alpha, q,
                             max_levels=2, skip_root=True)
    c = error_model.measure_constants(factor.cluster_stats(0), alpha)
    return c.with_reference(dim, problem.spec.kind.layer) if reference else c


def compress_for(problem: Problem, tol: float, q=None, alpha=None, constants=None, **kw):
    q = problem.config.q if q is None else q
    alpha = problem.config.alpha if alpha is None else alpha
    if q == "auto" and constants is None:
        constants = pilot_constants(problem, alpha)
    return solver.compress(problem.spec, problem.disc, problem.tree, tol, alpha, q,
                           constants=constants, **kw)

# }}}


# {{{ studies

def forward_errors(factor, sigmas, rhs) -> np.ndarray:
    """Relative forward error ``|b - A_eps sigma| / |sigma|`` per column."""
    out = []
    for s, b in zip(sigmas.T, rhs.T):
        ns = np.linalg.norm(s)
        err = np.linalg.norm(b - solver.apply(factor, s))
        out.append(err / ns if ns > 0 else err)
    return np.array(out)


def solution_errors(factor, sigmas, rhs) -> np.ndarray:
    """Relative solution error ``|sigma - A_eps^-1 b| / |b|`` per column."""
    out = []
    for s, b in zip(sigmas.T, rhs.T):
        nb = np.linalg.norm(b)
        err = np.linalg.norm(s - solver.solve(factor, b))
        out.append(err / nb if nb > 0 else err)
    return np.array(out)


def dense_rhs(problem: Problem, sigmas) -> np.ndarray:
    return apply_dense(problem.spec, problem.disc, sigmas)


def run_forward_error(problem: Problem, constants=None) -> list:
    cfg = problem.config
    sig = random_densities(problem.n, cfg.samples, cfg.seed)
    sig = np.hstack([sig, np.zeros((problem.n, 1))])
    rhs = dense_rhs(problem, sig)
    rows = []
    for tol in cfg.tolerances:
        t0 = time.perf_counter()
        f = compress_for(problem, tol, constants=constants)
        t1 = time.perf_counter() - t0
        errs = forward_errors(f, sig, rhs)
        for j, e in enumerate(errs):
            rows.append({"eps": tol, "sample": j if j < cfg.samples else "zero",
                         "q": f.proxy_counts[0], "error": e, "compress_s": t1})
    return rows


def run_solve_error(problem: Problem, constants=None) -> list:
    cfg = problem.config
    sig = random_densities(problem.n, cfg.samples, cfg.seed)
    rhs = dense_rhs(problem, sig)
    rows = []
    for tol in cfg.tolerances:
        f = compress_for(problem, tol, constants=constants)
        errs = solution_errors(f, sig, rhs)
        for j, e in enumerate(errs):
            rows.append({"eps": tol, "sample": j, "q": f.proxy_counts[0], "error": e})
    return rows


def run_ablate_weight(problem: Problem, seeds: Sequence[int] = (0, 1, 2), q: int = 192) -> list:
    """Forward error with and without the target proxy weight."""
    cfg = problem.config
    rows = []
    sig = np.hstack([random_densities(problem.n, 1, s) for s in seeds])
    rhs = dense_rhs(problem, sig)
    for tol in cfg.tolerances:
        errs = {}
        for weighted in (True, False):
            f = compress_for(problem, tol, q=q, weighted=weighted)
            errs[weighted] = dict(zip(seeds, forward_errors(f, sig, rhs)))
        for s in seeds:
            rows.append({"eps": tol, "seed": s, "q": q, "weighted": errs[True][s],
                         "unweighted": errs[False][s]})
    return rows


def default_proxy_counts(dim: int) -> tuple:
    if dim == 2:
        return tuple(2 * p + 1 for p in range(2, 25, 2))
    return tuple(error_model.realizable_count(2 * p * (p + 1)) for p in range(2, 13))


def fit_slope(x, y) -> float:
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def run_sweep_proxy(problem: Problem, tol: float = 1e-15, floor: float = 1e-12) -> tuple:
    """Error against proxy order for several ``alpha``; returns ``(rows, slopes)``.

    The slope for each ``alpha`` is fitted to ``log(error)`` against ``p`` over
    points above ``floor``, where the proxy term dominates.
    """
    cfg = problem.config
    dim = problem.disc.dim
    counts = cfg.proxy_counts or default_proxy_counts(dim)
    sig = random_densities(problem.n, 1, cfg.seed)
    rhs = dense_rhs(problem, sig)
    rows, slopes = [], []
    for alpha in cfg.alphas:
        ps, errs = [], []
        for q in counts:
            f = compress_for(problem, tol, q=q, alpha=alpha)
            e = forward_errors(f, sig, rhs)[0]
            p = error_model.proxy_order(f.proxy_counts[0], dim)
            c = error_model.measure_constants(f.cluster_stats(), alpha)
            rows.append({"alpha": alpha, "q": f.proxy_counts[0], "p": p, "error": e,
                         "R_pxy": c.R_pxy, "c0": c.c0, "c1": c.c1,
                         "norm_L": c.norm_L, "norm_R": c.norm_R})
            ps.append(p)
            errs.append(e)
        keep = np.array(errs) > floor
        slope = fit_slope(np.array(ps)[keep], np.log(np.array(errs)[keep])) \
            if keep.sum() >= 2 else float("nan")
        slopes.append({"alpha": alpha, "slope": slope, "model_slope": -math.log(alpha),
                       "points": int(keep.sum())})
    return rows, slopes


def empirical_proxy_count(problem: Problem, tol: float, sigma, rhs, q0: int = 8,
                          q_max: int = 4096, factor_of: float = 10.0):
    """Double ``q`` from ``q0`` until the forward error is below ``factor_of * tol``."""
    q = q0
    trail = []
    while True:
        f = compress_for(problem, tol, q=q)
        e = forward_errors(f, sigma, rhs)[0]
        trail.append((tol, f.proxy_counts[0], problem.config.alpha, e))
        if e <= factor_of * tol or q >= q_max:
            return q, e, trail, f
        q *= 2


def run_estimate_q(problem: Problem) -> tuple:
    """Empirical ``q`` by doubling and the model ``q`` with constants fitted to the trail."""
    cfg = problem.config
    dim = problem.disc.dim
    sig = random_densities(problem.n, 1, cfg.seed)
    rhs = dense_rhs(problem, sig)
    records, trail = [], []
    base = None
    for tol in cfg.tolerances:
        q_emp, e, tr, f = empirical_proxy_count(problem, tol, sig, rhs)
        trail.extend(tr)
        if base is None:
            base = error_model.measure_constants(f.cluster_stats(0), cfg.alpha)
        records.append((tol, q_emp, e, f))
    fit = error_model.fit_constants(trail, base, dim)
    fitted = replace(base, C0=fit.C0, C1=fit.C1)
    rows = []
    for tol, q_emp, e, f in records:
        rpxy = max(max(s["r_pxy_target"], s["r_pxy_source"]) for s in f.cluster_stats())
        p, q_model = error_model.estimate_proxy_order(tol, cfg.alpha, rpxy, fitted, dim)
        rows.append({"eps": tol, "q_empirical": q_emp, "error_empirical": e,
                     "p_model": p, "q_model": q_model, "ratio": q_model / q_emp,
                     "C0": fit.C0, "C1": fit.C1, "degenerate_fit": fit.degenerate})
    return rows, trail, fit


DEFAULT_SIZES = {"starfish": (240, 480, 760, 1280, 2560), "circle": (240, 480, 760, 1280, 2560),
                 "torus": (20, 25, 30, 35, 40), "sphere": (4, 5, 6, 7, 8)}


def default_sizes(kind: str) -> tuple:
    """Five desk-scale panel counts for the scaling study (per face on the sphere)."""
    return DEFAULT_SIZES[kind]


def run_scaling(config: ExperimentConfig, sizes: Sequence[int], tol: float = 1e-8,
                q=None, repeats: int = 2) -> tuple:
    """Compression plus one solve wall time per size; returns ``(rows, slope)``.

    Each size is timed ``repeats`` times and the fastest run is kept, which
    filters scheduler noise out of the fitted exponent.
    """
    rows = []
    for size in sizes:
        prob = build_problem(config, size)
        b = np.ones(prob.n)
        best = None
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            f = compress_for(prob, tol, q=q)
            t1 = time.perf_counter()
            solver.solve(f, b)
            t2 = time.perf_counter()
            if best is None or t2 - t0 < best[2] - best[0]:
                best = (t0, t1, t2)
        t0, t1, t2 = best
        rows.append({"size": size, "n": prob.n, "levels": f.nlevels, "root": f.root.n,
                     "compress_s": t1 - t0, "solve_s": t2 - t1, "total_s": t2 - t0})
    slope = fit_slope(np.log([r["n"] for r in rows]), np.log([r["total_s"] for r in rows]))
    return rows, slope

# }}}
