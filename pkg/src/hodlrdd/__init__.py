"""Hierarchical low-rank kernel matrices in arbitrary dimension."""

from .errors import (
    ConvergenceError,
    GeometryError,
    GuardError,
    HodlrError,
    KernelEvaluationError,
    NumericalError,
)
from .geometry import AdmissibilityPolicy, BoxIndex, ClusterTree, HyperCube, build_tree, classify_pair
from .kernels import KernelSpec, assemble_dense, get_kernel
from .aca import ACAFactor, BlockSpec, compress
from .hmatrix import BuildReport, HMatrix, initialize, relative_error

__version__ = "0.1.0"

__all__ = [
    "ACAFactor",
    "AdmissibilityPolicy",
    "BlockSpec",
    "BoxIndex",
    "BuildReport",
    "ClusterTree",
    "ConvergenceError",
    "GeometryError",
    "GuardError",
    "HMatrix",
    "HodlrError",
    "HyperCube",
    "KernelEvaluationError",
    "KernelSpec",
    "NumericalError",
    "assemble_dense",
    "build_tree",
    "classify_pair",
    "compress",
    "get_kernel",
    "initialize",
    "relative_error",
]
