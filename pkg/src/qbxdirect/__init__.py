"""Fast direct solver for QBX-discretized Laplace layer potentials by proxy skeletonization."""

__version__ = "0.1.0"

from .assembly import OperatorSpec, apply_dense, assemble_block, assemble_dense
from .error_model import ModelConstants, estimate_proxy_order, fit_constants, model_error
from .geometry import (Discretization, attach_qbx_centers, build_circle, build_sphere,
                       build_starfish, build_torus)
from .idecomp import id_columns, id_rows
from .kernels import KernelKind, Layer
from .solver import (MultiLevelFactor, apply_multilevel, compress_multilevel,
                     compress_single_level, solve_multilevel, solve_single_level)
from .tree import area_query, build_tree, level_tuples

__all__ = [
    "Discretization", "KernelKind", "Layer", "ModelConstants", "MultiLevelFactor",
    "OperatorSpec", "apply_dense", "apply_multilevel", "area_query", "assemble_block",
    "assemble_dense", "attach_qbx_centers", "build_circle", "build_sphere", "build_starfish",
    "build_torus", "build_tree", "compress_multilevel", "compress_single_level",
    "estimate_proxy_order", "fit_constants", "id_columns", "id_rows", "level_tuples",
    "model_error", "solve_multilevel", "solve_single_level",
]
