"""Structured-grid algebraic multigrid with fused Galerkin coarsening."""

from .grid import GridVector, StructuredGrid, coarsen_grid
from .sgdia import SgDiaMatrix, spmv, residual
from .stencil import StencilPattern, TransferPattern, make_transfer, parse_pattern, pattern_from_name

__version__ = "0.1.0"

__all__ = [
    "GridVector",
    "StructuredGrid",
    "coarsen_grid",
    "SgDiaMatrix",
    "spmv",
    "residual",
    "StencilPattern",
    "TransferPattern",
    "make_transfer",
    "parse_pattern",
    "pattern_from_name",
]
