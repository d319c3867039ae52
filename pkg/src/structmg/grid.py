"""Structured grids with halos and the vectors living on them."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "StructuredGrid",
    "GridVector",
    "coarsen_grid",
    "halo_exchange",
    "dot",
    "norm2",
    "axpy",
    "copy",
    "set_zero",
    "save_vector",
    "load_vector",
    "PRECISIONS",
]

PRECISIONS = {"fp64": np.float64, "fp32": np.float32}
_DTYPE_TAG = {np.dtype(np.float64): b"f8", np.dtype(np.float32): b"f4"}

# reductions combine per-slab partial sums in this fixed order
_REDUCTION_BLOCKS = 8


@dataclass(frozen=True)
class StructuredGrid:
    """A box of interior points padded by a halo on every side.

    ``strides`` and ``base`` describe how this grid sits on its parent
    (finer) grid; both are trivial for the finest level.  Indices are
    padded indices throughout: the interior is ``[halo, halo + dims)``.
    """

    dims: tuple[int, ...]
    halo: tuple[int, ...] | None = None
    strides: tuple[int, ...] | None = None
    base: tuple[int, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got dims={dims}")
        if any(d < 1 for d in dims):
            raise ValueError(f"grid extents must be positive, got {dims}")
        d = len(dims)
        halo = tuple(self.halo) if self.halo is not None else (1,) * d
        strides = tuple(self.strides) if self.strides is not None else (1,) * d
        base = tuple(self.base) if self.base is not None else (0,) * d
        if not (len(halo) == len(strides) == len(base) == d):
            raise ValueError("halo, strides and base need one entry per axis")
        if any(h < 1 for h in halo):
            raise ValueError("halo width must be at least 1 (stencil reach)")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "halo", tuple(int(h) for h in halo))
        object.__setattr__(self, "strides", tuple(int(s) for s in strides))
        object.__setattr__(self, "base", tuple(int(b) for b in base))

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        """Number of interior points (unknowns)."""
        return math.prod(self.dims)

    @property
    def padded_shape(self) -> tuple[int, ...]:
        return tuple(n + 2 * h for n, h in zip(self.dims, self.halo))

    @property
    def interior(self) -> tuple[slice, ...]:
        return tuple(slice(h, h + n) for n, h in zip(self.dims, self.halo))

    def shifted(self, offset) -> tuple[slice, ...]:
        """Interior slices displaced by ``offset`` (must stay inside the padding)."""
        return tuple(
            slice(h + o, h + o + n) for n, h, o in zip(self.dims, self.halo, offset)
        )

    def fine_image(self, index) -> tuple[int, ...]:
        """Padded fine-grid coordinate of a padded coarse index."""
        return tuple(
            (x - h) * s + b + h
            for x, h, s, b in zip(index, self.halo, self.strides, self.base)
        )

    def image_slices(self, offset, fine: StructuredGrid) -> tuple[slice, ...]:
        """Fine-grid slices hit by ``image(X) + offset`` for every interior X."""
        out = []
        for n, h, s, b, o, hf in zip(
            self.dims, self.halo, self.strides, self.base, offset, fine.halo
        ):
            start = b + hf + o
            out.append(slice(start, start + s * (n - 1) + 1, s))
        return tuple(out)

    def same_layout(self, other: StructuredGrid) -> bool:
        return self.dims == other.dims and self.halo == other.halo


def coarsen_grid(fine: StructuredGrid, strides, centering: str) -> StructuredGrid:
    """Coarse grid for the given strides and centering (base offsets are 0)."""
    strides = tuple(int(s) for s in strides)
    if len(strides) != fine.dim:
        raise ValueError(f"need {fine.dim} strides, got {strides}")
    if any(s not in (1, 2) for s in strides):
        raise ValueError(f"coarsening strides must be 1 or 2, got {strides}")
    dims = []
    for n, s in zip(fine.dims, strides):
        if s == 1:
            dims.append(n)
        elif centering == "cell":
            dims.append(-(-n // s))
        elif centering == "vertex":
            dims.append((n - 1) // s + 1)
        else:
            raise ValueError(f"centering must be 'vertex' or 'cell', got {centering!r}")
    return StructuredGrid(tuple(dims), fine.halo, strides, (0,) * fine.dim)


class GridVector:
    """One scalar per padded grid point."""

    __slots__ = ("grid", "data")

    def __init__(self, grid: StructuredGrid, data: np.ndarray | None = None, dtype=np.float64):
        self.grid = grid
        if data is None:
            data = np.zeros(grid.padded_shape, dtype=dtype)
        elif data.shape != grid.padded_shape:
            raise ValueError(f"data shape {data.shape} != padded shape {grid.padded_shape}")
        self.data = data

    @classmethod
    def from_interior(cls, grid: StructuredGrid, values, dtype=None) -> GridVector:
        values = np.asarray(values)
        v = cls(grid, dtype=dtype or values.dtype)
        v.data[grid.interior] = values.reshape(grid.dims)
        return v

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def interior(self) -> np.ndarray:
        return self.data[self.grid.interior]

    @interior.setter
    def interior(self, values):
        self.data[self.grid.interior] = values

    def copy(self) -> GridVector:
        return GridVector(self.grid, self.data.copy())

    def zeros_like(self) -> GridVector:
        return GridVector(self.grid, np.zeros_like(self.data))

    def __repr__(self):
        return f"GridVector(dims={self.grid.dims}, dtype={self.dtype})"


def halo_exchange(v: GridVector) -> None:
    """Refresh halo values.

    With a single box per process every halo point is a physical boundary,
    so the halo is zeroed; inter-box copies would go here.
    """
    g = v.grid
    for axis, (n, h) in enumerate(zip(g.dims, g.halo)):
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[axis] = slice(0, h)
        hi[axis] = slice(h + n, None)
        v.data[tuple(lo)] = 0
        v.data[tuple(hi)] = 0


def _check(a: GridVector, b: GridVector) -> None:
    if not a.grid.same_layout(b.grid):
        raise ValueError(f"grid mismatch: {a.grid.dims} vs {b.grid.dims}")


def _blocked_sum(values: np.ndarray) -> float:
    # fixed slab partition along axis 0, partials combined in index order
    total = 0.0
    for block in np.array_split(values, min(_REDUCTION_BLOCKS, values.shape[0]), axis=0):
        total += float(np.sum(block, dtype=np.float64))
    return total


def dot(a: GridVector, b: GridVector) -> float:
    _check(a, b)
    return _blocked_sum(a.interior.astype(np.float64) * b.interior)


def norm2(a: GridVector) -> float:
    return math.sqrt(dot(a, a))


def axpy(alpha: float, x: GridVector, y: GridVector) -> None:
    """``y += alpha * x`` on the interior."""
    _check(x, y)
    y.interior += alpha * x.interior


def copy(src: GridVector, dst: GridVector) -> None:
    _check(src, dst)
    dst.data[...] = src.data


def set_zero(v: GridVector) -> None:
    v.data[...] = 0


# ---------------------------------------------------------------------------
# binary dump: magic, dim, dims, halo, dtype tag, then padded values (C order)

_VEC_MAGIC = b"SMGV"


def _write_header(fh, magic: bytes, grid: StructuredGrid, dtype) -> None:
    fh.write(magic)
    fh.write(struct.pack("<I", grid.dim))
    fh.write(struct.pack(f"<{grid.dim}q", *grid.dims))
    fh.write(struct.pack(f"<{grid.dim}q", *grid.halo))
    fh.write(_DTYPE_TAG[np.dtype(dtype)])


def _read_header(fh, magic: bytes):
    if fh.read(4) != magic:
        raise ValueError("not a structmg dump (bad magic)")
    (dim,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{dim}q", fh.read(8 * dim))
    halo = struct.unpack(f"<{dim}q", fh.read(8 * dim))
    tag = fh.read(2)
    dtype = {v: k for k, v in _DTYPE_TAG.items()}.get(tag)
    if dtype is None:
        raise ValueError(f"unknown precision tag {tag!r}")
    return StructuredGrid(dims, halo), dtype


def save_vector(path, v: GridVector) -> None:
    with open(Path(path), "wb") as fh:
        _write_header(fh, _VEC_MAGIC, v.grid, v.dtype)
        fh.write(np.ascontiguousarray(v.data).tobytes())


def load_vector(path) -> GridVector:
    with open(Path(path), "rb") as fh:
        grid, dtype = _read_header(fh, _VEC_MAGIC)
        data = np.frombuffer(fh.read(), dtype=dtype).reshape(grid.padded_shape).copy()
    return GridVector(grid, data)
