"""SG-DIA structured matrices.

Coefficients are stored point-major: ``coeffs[x, y, z, k]`` is the coupling
of grid point ``(x, y, z)`` to its neighbor at ``pattern.offsets[k]``.  The
array covers the padded grid; halo rows and couplings that leave the
interior are held at zero, so kernels never branch on boundaries.
"""

from __future__ import annotations

import struct
from functools import cached_property
from pathlib import Path

import numpy as np

from .grid import GridVector, StructuredGrid, _read_header, _write_header, halo_exchange
from .stencil import StencilPattern, parse_pattern

__all__ = [
    "SgDiaMatrix",
    "spmv",
    "residual",
    "export_triplets",
    "in_range_mask",
    "save_matrix",
    "load_matrix",
    "write_matrix_market",
]


def in_range_mask(grid: StructuredGrid, offsets) -> np.ndarray:
    """Boolean ``padded_shape + (len(offsets),)``: row interior and neighbor interior."""
    mask = np.zeros(grid.padded_shape + (len(offsets),), dtype=bool)
    for k, o in enumerate(offsets):
        sl = []
        for n, h, c in zip(grid.dims, grid.halo, o):
            lo = max(h, h - c)
            hi = min(h + n, h + n - c)
            sl.append(slice(lo, max(lo, hi)))
        mask[tuple(sl) + (k,)] = True
    return mask


class SgDiaMatrix:
    """Structured-grid matrix with a fixed stencil pattern at every point."""

    def __init__(self, grid: StructuredGrid, pattern: StencilPattern, coeffs=None, dtype=np.float64):
        if pattern.dim != grid.dim:
            raise ValueError(f"pattern is {pattern.dim}D but grid is {grid.dim}D")
        if max(grid.halo) < 1:
            raise ValueError("halo must be at least 1")
        self.grid = grid
        self.pattern = pattern
        shape = grid.padded_shape + (pattern.entries_per_row,)
        if coeffs is None:
            coeffs = np.zeros(shape, dtype=dtype)
        elif coeffs.shape != shape:
            raise ValueError(f"coeffs shape {coeffs.shape} != {shape}")
        self.coeffs = coeffs
        self.enforce_boundary()

    @classmethod
    def from_stencil(cls, grid, pattern, values, dtype=np.float64) -> SgDiaMatrix:
        """Constant-coefficient matrix; ``values`` maps offset -> coefficient."""
        A = cls(grid, pattern, dtype=dtype)
        for o, v in values.items():
            A.coeffs[grid.interior + (pattern.index(o),)] = v
        A.enforce_boundary()
        return A

    @cached_property
    def range_mask(self) -> np.ndarray:
        return in_range_mask(self.grid, self.pattern.offsets)

    def enforce_boundary(self) -> None:
        """Zero every coefficient whose row or neighbor is outside the interior."""
        self.coeffs[~self.range_mask] = 0

    @property
    def dtype(self):
        return self.coeffs.dtype

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid.size, self.grid.size)

    def diagonal(self) -> np.ndarray:
        """Padded array of diagonal coefficients."""
        if not self.pattern.has_center:
            raise ValueError("pattern has no center entry")
        return self.coeffs[..., self.pattern.center_index]

    def entry(self, offset) -> np.ndarray:
        return self.coeffs[..., self.pattern.index(offset)]

    def count_in_range(self) -> int:
        return int(self.range_mask.sum())

    def count_stored(self) -> int:
        return self.grid.size * self.pattern.entries_per_row

    def matvec(self, x: GridVector) -> GridVector:
        y = GridVector(self.grid, dtype=self.dtype)
        spmv(self, x, y)
        return y

    def __call__(self, x: GridVector) -> GridVector:
        return self.matvec(x)

    def copy(self) -> SgDiaMatrix:
        return SgDiaMatrix(self.grid, self.pattern, self.coeffs.copy())

    def astype(self, dtype) -> SgDiaMatrix:
        return SgDiaMatrix(self.grid, self.pattern, self.coeffs.astype(dtype))

    def __repr__(self):
        return f"SgDiaMatrix(dims={self.grid.dims}, pattern={self.pattern}, dtype={self.dtype})"


def _check(A: SgDiaMatrix, *vecs: GridVector) -> None:
    for v in vecs:
        if not A.grid.same_layout(v.grid):
            raise ValueError(f"grid mismatch: matrix {A.grid.dims} vs vector {v.grid.dims}")


def _apply(A: SgDiaMatrix, x: GridVector) -> np.ndarray:
    g = A.grid
    inner = g.interior
    acc = np.zeros(g.dims, dtype=np.result_type(A.dtype, x.dtype))
    for k, o in enumerate(A.pattern.offsets):
        acc += A.coeffs[inner + (k,)] * x.data[g.shifted(o)]
    return acc


def spmv(A: SgDiaMatrix, x: GridVector, y: GridVector) -> None:
    """``y = A x`` on the interior.  ``x`` halos must be current."""
    _check(A, x, y)
    y.interior = _apply(A, x)
    halo_exchange(y)


def residual(A: SgDiaMatrix, x: GridVector, b: GridVector, r: GridVector) -> None:
    """``r = b - A x``."""
    _check(A, x, b, r)
    r.interior = b.interior - _apply(A, x)
    halo_exchange(r)


def export_triplets(A: SgDiaMatrix):
    """Nonzero-capable entries as ``(rows, cols, vals)`` over linearized interior indices.

    Out-of-range couplings are omitted; in-range zeros are kept so the
    structure is visible to oracles.
    """
    g = A.grid
    lin = np.full(g.padded_shape, -1, dtype=np.int64)
    lin[g.interior] = np.arange(g.size).reshape(g.dims)
    rows, cols, vals = [], [], []
    mask = A.range_mask
    for k, o in enumerate(A.pattern.offsets):
        m = mask[..., k]
        idx = np.nonzero(m)
        rows.append(lin[idx])
        cols.append(lin[tuple(i + c for i, c in zip(idx, o))])
        vals.append(A.coeffs[idx + (np.full(len(idx[0]), k),)])
    rows = np.concatenate(rows)
    order = np.lexsort((np.concatenate(cols), rows))
    return rows[order], np.concatenate(cols)[order], np.concatenate(vals)[order]


# ---------------------------------------------------------------------------
# dumps

_MAT_MAGIC = b"SMGA"


def save_matrix(path, A: SgDiaMatrix) -> None:
    text = A.pattern.to_text().encode()
    with open(Path(path), "wb") as fh:
        _write_header(fh, _MAT_MAGIC, A.grid, A.dtype)
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        fh.write(np.ascontiguousarray(A.coeffs).tobytes())


def load_matrix(path) -> SgDiaMatrix:
    with open(Path(path), "rb") as fh:
        grid, dtype = _read_header(fh, _MAT_MAGIC)
        (n,) = struct.unpack("<I", fh.read(4))
        pattern = parse_pattern(fh.read(n).decode())
        shape = grid.padded_shape + (pattern.entries_per_row,)
        coeffs = np.frombuffer(fh.read(), dtype=dtype).reshape(shape).copy()
    return SgDiaMatrix(grid, pattern, coeffs)


def write_matrix_market(path, A: SgDiaMatrix) -> None:
    """Coordinate-format text export (1-based), for external cross-checks."""
    rows, cols, vals = export_triplets(A)
    with open(Path(path), "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.grid.size} {A.grid.size} {len(vals)}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")
