"""Model problems on the unit-spaced cube with homogeneous Dirichlet boundaries."""

from __future__ import annotations

import math

import numpy as np

from .grid import PRECISIONS, GridVector, StructuredGrid
from .sgdia import SgDiaMatrix
from .stencil import pattern_from_name

__all__ = ["laplace_3d7", "aniso_3d7", "skewed_aniso_3d19", "make_rhs", "PROBLEMS", "build_problem"]

PROBLEMS = ("laplace", "aniso", "skew")
_AXES = {"x": 0, "y": 1, "z": 2}


def _dtype(precision):
    if isinstance(precision, str):
        if precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}")
        return PRECISIONS[precision]
    return np.dtype(precision).type


def _grid(n: int) -> StructuredGrid:
    if int(n) != n or n < 2:
        raise ValueError(f"need at least 2 points per axis, got n={n}")
    return StructuredGrid((int(n),) * 3)


def make_rhs(grid: StructuredGrid, kind: str = "ones", seed: int = 0, dtype=np.float64) -> GridVector:
    if kind == "ones":
        vals = np.ones(grid.dims)
    elif kind == "random":
        vals = np.random.default_rng(seed).uniform(-1.0, 1.0, grid.dims)
    else:
        raise ValueError(f"rhs must be 'ones' or 'random', got {kind!r}")
    return GridVector.from_interior(grid, vals.astype(dtype))


def _axis_stencil(k: tuple[float, float, float]) -> dict:
    vals = {(0, 0, 0): 2.0 * sum(k)}
    for i, ki in enumerate(k):
        for s in (-1, 1):
            o = [0, 0, 0]
            o[i] = s
            vals[tuple(o)] = -ki
    return vals


def laplace_3d7(n: int, rhs: str = "ones", seed: int = 0, precision="fp64"):
    """7-point Laplacian: 6 on the diagonal, -1 to each axis neighbor."""
    g = _grid(n)
    dt = _dtype(precision)
    A = SgDiaMatrix.from_stencil(g, pattern_from_name("3d7"), _axis_stencil((1.0, 1.0, 1.0)), dtype=dt)
    return A, make_rhs(g, rhs, seed, dt)


def aniso_3d7(n: int, eps: float = 1e-3, axis: str = "z", rhs: str = "ones", seed: int = 0, precision="fp64"):
    """Grid-aligned anisotropy: coupling 1 along ``axis`` and ``eps`` across it."""
    if axis not in _AXES:
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = _grid(n)
    dt = _dtype(precision)
    k = [eps] * 3
    k[_AXES[axis]] = 1.0
    A = SgDiaMatrix.from_stencil(g, pattern_from_name("3d7"), _axis_stencil(tuple(k)), dtype=dt)
    return A, make_rhs(g, rhs, seed, dt)


def diffusion_tensor(eps: float, angle: float) -> np.ndarray:
    """``eps*I + (1-eps) d d^T`` with ``d`` tilted ``angle`` degrees off the z axis
    within the plane x = y."""
    t = math.radians(angle)
    d = np.array([math.sin(t) / math.sqrt(2), math.sin(t) / math.sqrt(2), math.cos(t)])
    return eps * np.eye(3) + (1.0 - eps) * np.outer(d, d)


def _min_symbol(K: np.ndarray, samples: int = 24) -> float:
    # Fourier symbol of the discretization on the infinite grid; the Dirichlet
    # matrix is a principal submatrix, so a positive symbol implies SPD
    th = np.linspace(-math.pi, math.pi, samples, endpoint=False) + math.pi / samples
    t = np.stack(np.meshgrid(th, th, th, indexing="ij"))
    a2 = 4.0 * np.sin(t / 2) ** 2
    c = np.sin(t)
    sym = sum(K[i, i] * a2[i] for i in range(3))
    for i in range(3):
        for j in range(3):
            if i != j:
                sym = sym + K[i, j] * c[i] * c[j]
    return float(sym.min())


def skewed_aniso_3d19(
    n: int, eps: float = 1e-2, angle: float = 45.0, rhs: str = "ones", seed: int = 0, precision="fp64"
):
    """Rotated anisotropic diffusion ``-div(K grad u)`` on a 19-point stencil.

    Axis terms use the compact second difference; each mixed derivative uses
    the four edge neighbors in its plane, ``-K_ij * s_i * s_j / 2`` at offset
    ``s_i e_i + s_j e_j``.  At ``angle = 0`` the edge couplings vanish.
    """
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    K = diffusion_tensor(eps, angle)
    if _min_symbol(K) <= 0:
        raise ValueError(f"eps={eps}, angle={angle} gives an indefinite stencil")
    g = _grid(n)
    dt = _dtype(precision)
    vals = _axis_stencil((K[0, 0], K[1, 1], K[2, 2]))
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (-1, 1):
                for sj in (-1, 1):
                    o = [0, 0, 0]
                    o[i], o[j] = si, sj
                    vals[tuple(o)] = -K[i, j] * si * sj / 2.0
    A = SgDiaMatrix.from_stencil(g, pattern_from_name("3d19"), vals, dtype=dt)
    return A, make_rhs(g, rhs, seed, dt)


def build_problem(name: str, n: int, eps=None, axis="z", angle=45.0, rhs="ones", seed=0, precision="fp64"):
    if name == "laplace":
        return laplace_3d7(n, rhs, seed, precision)
    if name == "aniso":
        return aniso_3d7(n, 1e-3 if eps is None else eps, axis, rhs, seed, precision)
    if name == "skew":
        return skewed_aniso_3d19(n, 1e-2 if eps is None else eps, angle, rhs, seed, precision)
    raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
