"""Multigrid hierarchy setup and V-cycle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .coarsen import (
    ChainTable,
    TransferOperator,
    build_transfer,
    derive_chains,
    galerkin_product,
    interpolate_add,
    restrict,
    restriction_from,
)
from .grid import GridVector, coarsen_grid, halo_exchange
from .sgdia import SgDiaMatrix, export_triplets, residual
from .smoother import SMOOTHERS, make_smoother
from .stencil import StencilPattern, make_transfer, parse_pattern

__all__ = [
    "MgConfig",
    "MgLevel",
    "MgHierarchy",
    "SetupError",
    "setup",
    "vcycle",
    "as_preconditioner",
    "grid_complexity",
    "operator_complexity",
    "hierarchy_summary",
]


class SetupError(RuntimeError):
    pass


@dataclass(frozen=True)
class MgConfig:
    """Hierarchy and cycle parameters.

    ``strides`` gives the coarsening factor per axis (1 leaves the axis
    alone, so ``(1, 1, 2)`` is 1D semi-coarsening along z).  Axes whose
    extent has already reached 1 are not coarsened further.
    """

    strides: tuple[int, ...] = (2, 2, 2)
    centering: str = "vertex"
    transfer_kind: str = "full"
    weights: str = "trilinear"
    restriction_scale: float = 1.0
    smoother: str = "pgs"
    weight: float | None = None
    ilu_mask: str | None = None
    nu_pre: int = 1
    nu_post: int = 1
    max_levels: int = 20
    coarsest_size: int = 1000
    max_dense: int = 8192
    workers: int = 1

    def __post_init__(self):
        if self.smoother not in SMOOTHERS:
            raise ValueError(f"unknown smoother {self.smoother!r}; choose from {', '.join(SMOOTHERS)}")
        if all(s == 1 for s in self.strides):
            raise ValueError("strides are all 1: coarsening would make no progress")
        if self.max_levels < 1:
            raise ValueError("max_levels must be at least 1")
        if self.nu_pre < 0 or self.nu_post < 0:
            raise ValueError("sweep counts must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class MgLevel:
    A: SgDiaMatrix
    smoother: object | None = None
    P: TransferOperator | None = None
    R: TransferOperator | None = None
    table: ChainTable | None = None


@dataclass
class MgHierarchy:
    levels: list[MgLevel]
    config: MgConfig
    coarse_lu: tuple = field(repr=False, default=None)

    @property
    def num_levels(self) -> int:
        return len(self.levels)


def _coarse_solver(A: SgDiaMatrix):
    rows, cols, vals = export_triplets(A)
    n = A.grid.size
    dense = np.zeros((n, n))
    np.add.at(dense, (rows, cols), vals)
    lu, piv = sla.lu_factor(dense, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= n * np.finfo(float).eps * max(pivots.max(), 1.0):
        raise SetupError(f"coarsest matrix ({A.grid.dims}) is numerically singular")
    return lu, piv


def setup(A: SgDiaMatrix, config: MgConfig | None = None) -> MgHierarchy:
    """Build the hierarchy: transfers, Galerkin operators, smoothers, coarse LU."""
    cfg = config or MgConfig()
    if len(cfg.strides) != A.grid.dim:
        raise ValueError(f"config has {len(cfg.strides)} strides for a {A.grid.dim}D grid")
    mask = parse_pattern(cfg.ilu_mask) if cfg.ilu_mask else None
    levels = [MgLevel(A)]
    while len(levels) < cfg.max_levels and levels[-1].A.grid.size > cfg.coarsest_size:
        Af = levels[-1].A
        strides = tuple(s if n > 1 else 1 for s, n in zip(cfg.strides, Af.grid.dims))
        if all(s == 1 for s in strides):
            break
        coarse = coarsen_grid(Af.grid, strides, cfg.centering)
        tp = make_transfer(cfg.centering, strides, cfg.transfer_kind)
        table = derive_chains(tp, Af.pattern, tp, strides)
        P = build_transfer(Af.grid, coarse, tp, cfg.weights, dtype=Af.dtype)
        R = restriction_from(P, cfg.restriction_scale)
        Ac = galerkin_product(R, Af, P, table)
        levels[-1].P, levels[-1].R, levels[-1].table = P, R, table
        levels.append(MgLevel(Ac))
    last = levels[-1].A
    if last.grid.size > cfg.max_dense:
        raise SetupError(
            f"coarsening stopped at {last.grid.dims} ({last.grid.size} unknowns), "
            f"above the dense-solve limit {cfg.max_dense}; raise max_levels or change strides"
        )
    for lvl in levels[:-1]:
        workers = min(cfg.workers, lvl.A.grid.dims[1])
        m = None if mask is None else _mask_for(mask, lvl.A.pattern)
        lvl.smoother = make_smoother(cfg.smoother, lvl.A, cfg.weight, workers, m)
    return MgHierarchy(levels, cfg, _coarse_solver(last))


def _mask_for(mask: StencilPattern, pattern: StencilPattern) -> StencilPattern:
    # Galerkin operators grow wider than the fine one; never factor on less than A
    return mask if pattern.issubset(mask) else mask.union(pattern)


def _cycle(h: MgHierarchy, lev: int, b: GridVector, x: GridVector) -> None:
    lvl = h.levels[lev]
    if lev == h.num_levels - 1:
        lu, piv = h.coarse_lu
        sol = sla.lu_solve((lu, piv), b.interior.ravel().astype(np.float64))
        x.interior = sol.reshape(lvl.A.grid.dims)
        halo_exchange(x)
        return
    cfg = h.config
    for _ in range(cfg.nu_pre):
        lvl.smoother.pre(b, x)
    r = x.zeros_like()
    residual(lvl.A, x, b, r)
    cgrid = lvl.P.coarse
    bc = GridVector(cgrid, dtype=x.dtype)
    restrict(lvl.R, r, bc)
    xc = GridVector(cgrid, dtype=x.dtype)
    _cycle(h, lev + 1, bc, xc)
    interpolate_add(lvl.P, xc, x)
    for _ in range(cfg.nu_post):
        lvl.smoother.post(b, x)


def vcycle(h: MgHierarchy, b: GridVector, x: GridVector) -> None:
    """One V-cycle on ``A x = b``, updating ``x`` in place."""
    _cycle(h, 0, b, x)


def as_preconditioner(h: MgHierarchy):
    """``r -> M^{-1} r``: one V-cycle from a zero initial guess."""

    def apply(r: GridVector) -> GridVector:
        z = r.zeros_like()
        vcycle(h, r, z)
        return z

    return apply


def grid_complexity(h: MgHierarchy) -> float:
    n0 = h.levels[0].A.grid.size
    return sum(l.A.grid.size for l in h.levels) / n0


def _entries(A: SgDiaMatrix, mode: str) -> int:
    if mode == "stored":
        return A.count_stored()
    if mode == "in_range":
        return A.count_in_range()
    raise ValueError(f"mode must be 'stored' or 'in_range', got {mode!r}")


def operator_complexity(h: MgHierarchy, mode: str = "stored") -> float:
    """Sum of per-level entry counts over the finest level's.

    ``stored`` counts every SG-DIA slot (points times stencil width);
    ``in_range`` drops the slots that point outside the domain.
    """
    z0 = _entries(h.levels[0].A, mode)
    return sum(_entries(l.A, mode) for l in h.levels) / z0


def hierarchy_summary(h: MgHierarchy) -> str:
    lines = [f"{'level':>5}  {'dims':>16}  {'pattern':>8}  {'entries':>10}"]
    for i, l in enumerate(h.levels):
        dims = "x".join(str(d) for d in l.A.grid.dims)
        lines.append(f"{i:>5}  {dims:>16}  {l.A.pattern.name:>8}  {l.A.count_stored():>10}")
    lines.append(f"C_G = {grid_complexity(h):.4f}   C_O = {operator_complexity(h):.4f}")
    return "\n".join(lines)
