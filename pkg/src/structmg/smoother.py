"""Relaxation methods built on SpMV and the column-parallel triangular solve.

Every Gauss-Seidel-type sweep is written in correction form,
``x += M^{-1} (b - A x)``, so the triangular solve only ever reads values
that are final; this keeps parallel sweeps identical to the sequential one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .grid import GridVector, halo_exchange
from .sgdia import SgDiaMatrix, residual
from .stencil import StencilPattern
from .trisolve import ZeroPivotError, build_schedule, sptrsv, triangular_part

__all__ = [
    "jacobi",
    "gs_forward",
    "gs_backward",
    "sym_gs",
    "line_gs",
    "IluFactors",
    "ilu_factorize",
    "ilu_apply",
    "JacobiSmoother",
    "PointGS",
    "LineGS",
    "IluSmoother",
    "make_smoother",
    "SMOOTHERS",
]


def _check_diag(A: SgDiaMatrix) -> np.ndarray:
    d = A.diagonal()[A.grid.interior]
    if np.any(d == 0):
        where = tuple(int(i) for i in np.argwhere(d == 0)[0])
        raise ZeroPivotError(f"zero diagonal at interior point {where}", where=where)
    return d


class _Sweep:
    """A triangular correction ``(D + w T)^{-1}`` with its column schedule."""

    def __init__(self, A, direction, weight, workers, line=False, diag=None):
        self.part = triangular_part(A, direction, line=line, scale=weight, diag=diag)
        if line and weight != 1.0:
            # the tridiagonal block is part of D, not of the weighted T
            sub, sup = self.part.line
            self.part.line = (sub / weight, sup / weight)
        self.sched = build_schedule(A.grid, self.part.column_deps, workers, direction)
        self.weight = weight

    def solve(self, r: GridVector) -> GridVector:
        delta = r.zeros_like()
        rhs = r
        if self.weight != 1.0:
            rhs = r.copy()
            rhs.interior *= self.weight
        sptrsv(self.part, rhs, delta, self.sched)
        return delta


def _correct(A, b, x, sweep: _Sweep) -> None:
    r = x.zeros_like()
    residual(A, x, b, r)
    x.interior += sweep.solve(r).interior
    halo_exchange(x)


# ---------------------------------------------------------------------------
# smoother objects (setup once, apply many times)


class JacobiSmoother:
    def __init__(self, A: SgDiaMatrix, weight: float = 0.8):
        self.A = A
        self.weight = weight
        self.inv_diag = 1.0 / _check_diag(A)

    def sweep(self, b, x):
        r = x.zeros_like()
        residual(self.A, x, b, r)
        x.interior += self.weight * self.inv_diag * r.interior

    pre = post = sweep


class PointGS:
    """Point Gauss-Seidel; ``symmetric`` applies forward+backward each time."""

    def __init__(self, A: SgDiaMatrix, weight: float = 1.0, workers: int = 1, symmetric=False):
        _check_diag(A)
        self.A = A
        self.symmetric = symmetric
        self.fwd = _Sweep(A, "forward", weight, workers)
        self.bwd = _Sweep(A, "backward", weight, workers)

    def forward(self, b, x):
        _correct(self.A, b, x, self.fwd)

    def backward(self, b, x):
        _correct(self.A, b, x, self.bwd)

    def pre(self, b, x):
        self.forward(b, x)
        if self.symmetric:
            self.backward(b, x)

    def post(self, b, x):
        if self.symmetric:
            self.forward(b, x)
        self.backward(b, x)


class LineGS(PointGS):
    """Gauss-Seidel over z-lines; each column is solved with the Thomas algorithm."""

    def __init__(self, A: SgDiaMatrix, weight: float = 1.0, workers: int = 1, symmetric=False):
        _check_diag(A)
        self.A = A
        self.symmetric = symmetric
        self.fwd = _Sweep(A, "forward", weight, workers, line=True)
        self.bwd = _Sweep(A, "backward", weight, workers, line=True)


@dataclass
class IluFactors:
    """Incomplete LU on a stencil mask, packed in one SG-DIA block.

    Entries before the center slot are ``L`` (unit diagonal implied); the
    center and later slots are ``U``.
    """

    A_pattern: StencilPattern
    pattern: StencilPattern
    lu: SgDiaMatrix

    @property
    def center(self) -> int:
        return self.pattern.center_index

    @property
    def l_coeffs(self) -> np.ndarray:
        return self.lu.coeffs[..., : self.center]

    @property
    def u_coeffs(self) -> np.ndarray:
        return self.lu.coeffs[..., self.center :]


@nb.njit(cache=True, nogil=True)
def _ilu_kernel(acoef, a_of_m, moffs, lookup, center, lo, hi, lu, w):
    nm = moffs.shape[0]
    for i in range(lo[0], hi[0]):
        for j in range(lo[1], hi[1]):
            for k in range(lo[2], hi[2]):
                for e in range(nm):
                    w[e] = acoef[i, j, k, a_of_m[e]] if a_of_m[e] >= 0 else 0.0
                for e in range(center):
                    if w[e] == 0.0:
                        continue
                    qi = i + moffs[e, 0]
                    qj = j + moffs[e, 1]
                    qk = k + moffs[e, 2]
                    w[e] = w[e] / lu[qi, qj, qk, center]
                    for f in range(center + 1, nm):
                        u = lu[qi, qj, qk, f]
                        if u == 0.0:
                            continue
                        g = lookup[
                            moffs[e, 0] + moffs[f, 0] + 2,
                            moffs[e, 1] + moffs[f, 1] + 2,
                            moffs[e, 2] + moffs[f, 2] + 2,
                        ]
                        if g >= 0:
                            w[g] = w[g] - w[e] * u
                for e in range(nm):
                    lu[i, j, k, e] = w[e]
                if w[center] == 0.0:
                    return i, j, k
    return -1, -1, -1


def ilu_factorize(A: SgDiaMatrix, fill_mask: StencilPattern | None = None) -> IluFactors:
    """ILU restricted to ``fill_mask`` (default: the pattern of ``A``).

    Points are eliminated in lexicographic order.  Fill is kept exactly at
    mask positions, computed from the factored entries available there;
    everything outside the mask is dropped.  Entries of ``A`` outside the
    mask are ignored.
    """
    if A.grid.dim != 3:
        raise ValueError("ilu_factorize needs a 3D grid")
    mask = fill_mask or A.pattern
    if mask.dim != 3 or not mask.has_center:
        raise ValueError("ILU mask must be a 3D pattern containing the center")
    _check_diag(A)
    a_of_m = np.array(
        [A.pattern.index(o) if o in A.pattern else -1 for o in mask.offsets], dtype=np.int64
    )
    moffs = np.array(mask.offsets, dtype=np.int64)
    lookup = np.full((5, 5, 5), -1, dtype=np.int64)
    for e, o in enumerate(mask.offsets):
        lookup[o[0] + 2, o[1] + 2, o[2] + 2] = e
    g = A.grid
    lu = SgDiaMatrix(g, mask, dtype=A.dtype)
    lo = np.array(g.halo, dtype=np.int64)
    hi = lo + np.array(g.dims, dtype=np.int64)
    bad = _ilu_kernel(
        A.coeffs, a_of_m, moffs, lookup, mask.center_index, lo, hi, lu.coeffs,
        np.empty(len(mask), dtype=A.dtype),
    )
    if bad[0] >= 0:
        where = tuple(int(b - h) for b, h in zip(bad, g.halo))
        raise ZeroPivotError(f"zero pivot in ILU at interior point {where}", where=where)
    lu.enforce_boundary()
    return IluFactors(A.pattern, mask, lu)


class IluSmoother:
    def __init__(self, A: SgDiaMatrix, fill_mask=None, workers: int = 1, factors=None):
        self.A = A
        self.factors = factors or ilu_factorize(A, fill_mask)
        lu = self.factors.lu
        ones = np.ones(A.grid.padded_shape, dtype=A.dtype)
        self.lower = _Sweep(lu, "forward", 1.0, workers, diag=ones)
        self.upper = _Sweep(lu, "backward", 1.0, workers)

    def sweep(self, b, x):
        r = x.zeros_like()
        residual(self.A, x, b, r)
        y = self.lower.solve(r)
        x.interior += self.upper.solve(y).interior
        halo_exchange(x)

    pre = post = sweep


SMOOTHERS = ("jacobi", "pgs", "sgs", "lgs", "ilu")


def make_smoother(kind: str, A: SgDiaMatrix, weight=None, workers=1, ilu_mask=None):
    """Smoother for one multigrid level.

    ``pgs``/``lgs`` run a forward sweep before and a backward sweep after the
    coarse correction, which keeps the V-cycle symmetric; ``sgs`` runs a
    full symmetric sweep at both places.
    """
    if kind == "jacobi":
        return JacobiSmoother(A, 0.8 if weight is None else weight)
    w = 1.0 if weight is None else weight
    if kind == "pgs":
        return PointGS(A, w, workers)
    if kind == "sgs":
        return PointGS(A, w, workers, symmetric=True)
    if kind == "lgs":
        return LineGS(A, w, workers)
    if kind == "ilu":
        return IluSmoother(A, ilu_mask, workers)
    raise ValueError(f"unknown smoother {kind!r}; choose from {', '.join(SMOOTHERS)}")


# ---------------------------------------------------------------------------
# one-shot functional forms


def jacobi(A, b, x, w: float = 0.8) -> None:
    JacobiSmoother(A, w).sweep(b, x)


def gs_forward(A, b, x, w: float = 1.0, workers: int = 1) -> None:
    PointGS(A, w, workers).forward(b, x)


def gs_backward(A, b, x, w: float = 1.0, workers: int = 1) -> None:
    PointGS(A, w, workers).backward(b, x)


def sym_gs(A, b, x, w: float = 1.0, workers: int = 1) -> None:
    s = PointGS(A, w, workers)
    s.forward(b, x)
    s.backward(b, x)


def line_gs(A, b, x, w: float = 1.0, workers: int = 1, direction: str = "forward") -> None:
    s = LineGS(A, w, workers)
    (s.forward if direction == "forward" else s.backward)(b, x)


def ilu_apply(F: IluFactors, A, b, x, workers: int = 1) -> None:
    IluSmoother(A, workers=workers, factors=F).sweep(b, x)
