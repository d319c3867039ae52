"""Galerkin coarsening on structured grids via influence chains.

A coarse coefficient ``A^C(i, j)`` is the sum over every path
``C_i -> F_u -> F_v -> C_j`` of ``R(C_i, F_u) * A^F(u, v) * P(F_v, C_j)``.
Because every row of a structured matrix has the same pattern, the set of
such paths (chains) depends only on the three patterns and the strides, so
it is derived once per combination and reused for any coefficient values.

Transfer operators are stored on the coarse grid: ``weights[C, k]`` couples
coarse point ``C`` with the fine point ``image(C) + pattern.offsets[k]``.
For interpolation that is ``P(F, C)``; for restriction ``R(C, F)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import GridVector, StructuredGrid, halo_exchange
from .sgdia import SgDiaMatrix
from .stencil import StencilPattern, TransferPattern

__all__ = [
    "InfluenceChain",
    "ChainTable",
    "derive_chains",
    "TransferOperator",
    "build_transfer",
    "restriction_from",
    "galerkin_product",
    "interpolate_add",
    "restrict",
    "transfer_triplets",
]


@dataclass(frozen=True)
class InfluenceChain:
    c_entry: int
    r_entry: int
    u_off: tuple[int, ...]
    a_entry: int
    p_entry: int


@dataclass(frozen=True)
class ChainTable:
    r_pattern: TransferPattern
    a_pattern: StencilPattern
    p_pattern: TransferPattern
    strides: tuple[int, ...]
    centering: str
    coarse_pattern: StencilPattern
    chains: tuple[tuple[InfluenceChain, ...], ...]

    @property
    def total_chains(self) -> int:
        return sum(len(c) for c in self.chains)

    def chains_for(self, coarse_offset) -> tuple[InfluenceChain, ...]:
        return self.chains[self.coarse_pattern.index(coarse_offset)]

    def matches(self, r: TransferPattern, a: StencilPattern, p: TransferPattern) -> bool:
        return (
            r.offsets == self.r_pattern.offsets
            and p.offsets == self.p_pattern.offsets
            and a.offsets == self.a_pattern.offsets
        )

    def dump(self) -> str:
        """One line per chain: coarse entry, r entry, u offset, a entry, p entry."""
        lines = [
            f"# R={self.r_pattern} A={self.a_pattern} P={self.p_pattern} "
            f"strides={self.strides} coarse={self.coarse_pattern} chains={self.total_chains}"
        ]
        for chains in self.chains:
            for ch in chains:
                u = ",".join(str(c) for c in ch.u_off)
                lines.append(f"{ch.c_entry} {ch.r_entry} ({u}) {ch.a_entry} {ch.p_entry}")
        return "\n".join(lines) + "\n"

    def pseudo_code(self) -> str:
        """Readable loop body of the fused product, one block per fine point u."""
        out = []
        for ci, chains in enumerate(self.chains):
            c = self.coarse_pattern.offsets[ci]
            out.append(f"if CHECK_BDR(C + {c}):")
            out.append("    res = 0")
            for r_entry, block in itertools.groupby(chains, key=lambda ch: ch.r_entry):
                block = list(block)
                out.append(f"    # u = image(C) + {block[0].u_off}")
                out.append("    tmp = 0")
                for ch in block:
                    out.append(f"    tmp += Pv[{ch.p_entry}] * AF[u][{ch.a_entry}]")
                out.append(f"    res += tmp * Rv[{r_entry}]")
            out.append(f"    AC[C][{ci}] = res")
        return "\n".join(out) + "\n"


def _check_strides(strides, dim):
    strides = tuple(int(s) for s in strides)
    if len(strides) != dim:
        raise ValueError(f"need {dim} strides, got {strides}")
    if any(s not in (1, 2) for s in strides):
        raise ValueError(f"strides must be 1 or 2, got {strides}")
    return strides


def derive_chains(r: TransferPattern, a: StencilPattern, p: TransferPattern, strides) -> ChainTable:
    """Enumerate all influence chains for one (R, A, P, strides) combination.

    ``F_u = image(C_i) + r``, ``F_v = F_u + a`` and the chain is kept when
    ``F_v = image(C_j) + p`` for some coarse neighbor ``C_j``, i.e. when
    ``r + a - p`` is a multiple of the stride on every axis.  Results are
    cached per combination; values never enter.
    """
    return _derive_chains(r, a, p, tuple(int(s) for s in strides))


@lru_cache(maxsize=None)
def _derive_chains(r, a, p, strides) -> ChainTable:
    if r.centering != p.centering:
        raise ValueError(
            f"restriction is {r.centering}-centered but interpolation is {p.centering}-centered"
        )
    if not (r.dim == a.dim == p.dim):
        raise ValueError("R, A and P patterns must share one dimension")
    strides = _check_strides(strides, a.dim)

    found: dict[tuple[int, ...], list[tuple[int, int, int]]] = {}
    for ri, ro in enumerate(r.offsets):
        for ai, ao in enumerate(a.offsets):
            for pi, po in enumerate(p.offsets):
                d = [ro[k] + ao[k] - po[k] for k in range(a.dim)]
                if all(d[k] % strides[k] == 0 for k in range(a.dim)):
                    c = tuple(d[k] // strides[k] for k in range(a.dim))
                    found.setdefault(c, []).append((ri, ai, pi))

    bad = [c for c in found if any(abs(x) > 1 for x in c)]
    if bad:
        raise ValueError(f"coarse pattern would leave {{-1,0,1}}^{a.dim}: {sorted(bad)}")
    coarse = StencilPattern(a.dim, tuple(found))
    chains = []
    for ci, c in enumerate(coarse.offsets):
        chains.append(
            tuple(
                InfluenceChain(ci, ri, r.offsets[ri], ai, pi)
                for ri, ai, pi in sorted(found[c])
            )
        )
    return ChainTable(r, a, p, strides, r.centering, coarse, tuple(chains))


# ---------------------------------------------------------------------------
# transfer operators


@dataclass
class TransferOperator:
    fine: StructuredGrid
    coarse: StructuredGrid
    pattern: TransferPattern
    weights: np.ndarray  # coarse padded shape + (len(pattern),)

    def valid_mask(self) -> np.ndarray:
        """True where the coarse point is interior and its fine target is too."""
        c, f = self.coarse, self.fine
        mask = np.zeros(self.weights.shape, dtype=bool)
        for k, o in enumerate(self.pattern.offsets):
            sl = []
            for n, h, s, b, oo, nf, hf in zip(
                c.dims, c.halo, c.strides, c.base, o, f.dims, f.halo
            ):
                # coarse X interior with fine (X-h)*s + b + o inside [0, nf)
                xs = [x for x in range(n) if 0 <= x * s + b + oo < nf]
                sl.append(slice(h + xs[0], h + xs[-1] + 1) if xs else slice(0, 0))
            mask[tuple(sl) + (k,)] = True
        return mask


_WEIGHT_SCHEMES = ("constant", "trilinear")


def build_transfer(
    fine: StructuredGrid,
    coarse: StructuredGrid,
    pattern: TransferPattern,
    weights="trilinear",
    dtype=np.float64,
) -> TransferOperator:
    """Transfer operator with a named weight scheme or explicit per-point weights.

    ``constant``: piecewise-constant, cell-centered only (all weights 1).
    ``trilinear``: tensor-product linear, vertex-centered full patterns only
    (weight ``2**-k`` for an offset with ``k`` nonzero components).
    An ndarray of shape ``coarse.padded_shape + (len(pattern),)`` supplies
    operator-dependent weights directly.
    Weights pointing outside either interior are zeroed.
    """
    if pattern.dim != fine.dim or coarse.dim != fine.dim:
        raise ValueError("transfer pattern and grids must share one dimension")
    shape = coarse.padded_shape + (len(pattern),)
    if isinstance(weights, str):
        if weights == "constant":
            if pattern.centering != "cell":
                raise ValueError(f"'constant' weights need a cell-centered pattern, got {pattern}")
            per = np.ones(len(pattern))
        elif weights == "trilinear":
            full = len(pattern) == np.prod([2 * s - 1 for s in coarse.strides])
            if pattern.centering != "vertex" or not full:
                raise ValueError(
                    f"'trilinear' weights need a full vertex-centered pattern, got {pattern}"
                )
            per = np.array([0.5 ** sum(1 for c in o if c) for o in pattern.offsets])
        else:
            raise ValueError(f"unknown weight scheme {weights!r}; use {_WEIGHT_SCHEMES} or an array")
        w = np.broadcast_to(per.astype(dtype), shape).copy()
    else:
        w = np.array(weights, dtype=dtype)
        if w.shape != shape:
            raise ValueError(f"explicit weights must have shape {shape}, got {w.shape}")
    op = TransferOperator(fine, coarse, pattern, w)
    op.weights[~op.valid_mask()] = 0
    return op


def restriction_from(P: TransferOperator, scale: float = 1.0) -> TransferOperator:
    """``R = scale * P^T`` in coarse-grid storage (same slots, same weights)."""
    return TransferOperator(P.fine, P.coarse, P.pattern, P.weights * scale)


def interpolate_add(P: TransferOperator, xc: GridVector, xf: GridVector) -> None:
    """``xf += P xc``."""
    c = P.coarse
    vals = xc.interior
    for k, o in enumerate(P.pattern.offsets):
        xf.data[c.image_slices(o, P.fine)] += P.weights[c.interior + (k,)] * vals
    halo_exchange(xf)


def restrict(R: TransferOperator, rf: GridVector, rc: GridVector) -> None:
    """``rc = R rf``."""
    c = R.coarse
    acc = np.zeros(c.dims, dtype=rf.dtype)
    for k, o in enumerate(R.pattern.offsets):
        acc += R.weights[c.interior + (k,)] * rf.data[c.image_slices(o, R.fine)]
    rc.interior = acc
    halo_exchange(rc)


def transfer_triplets(T: TransferOperator):
    """``(fine_rows, coarse_cols, vals)`` of the interpolation-shaped matrix."""
    c, f = T.coarse, T.fine
    lin_c = np.full(c.padded_shape, -1, dtype=np.int64)
    lin_c[c.interior] = np.arange(c.size).reshape(c.dims)
    lin_f = np.full(f.padded_shape, -1, dtype=np.int64)
    lin_f[f.interior] = np.arange(f.size).reshape(f.dims)
    mask = T.valid_mask()
    rows, cols, vals = [], [], []
    for k, o in enumerate(T.pattern.offsets):
        idx = np.nonzero(mask[..., k])
        fine_idx = tuple(
            (x - h) * s + b + hf + oo
            for x, h, s, b, oo, hf in zip(idx, c.halo, c.strides, c.base, o, f.halo)
        )
        rows.append(lin_f[fine_idx])
        cols.append(lin_c[idx])
        vals.append(T.weights[idx + (np.full(len(idx[0]), k),)])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


# ---------------------------------------------------------------------------
# fused triple product


def galerkin_product(
    R: TransferOperator, A: SgDiaMatrix, P: TransferOperator, table: ChainTable
) -> SgDiaMatrix:
    """Coarse operator ``R A P`` evaluated chain by chain in one pass.

    For each coarse entry the chains are grouped by their fine point ``u``:
    ``tmp = sum P * A`` over the block, then ``res += tmp * R``.  No
    intermediate two-matrix product is formed.
    """
    if not table.matches(R.pattern, A.pattern, P.pattern):
        raise ValueError("chain table was derived for different operand patterns")
    if R.coarse != P.coarse or R.fine != P.fine:
        raise ValueError("R and P must map between the same pair of grids")
    if not A.grid.same_layout(P.fine):
        raise ValueError("A does not live on the fine grid of the transfers")
    if tuple(P.coarse.strides) != tuple(table.strides):
        raise ValueError("chain table strides differ from the coarse grid strides")

    coarse, fine = P.coarse, P.fine
    inner = coarse.interior
    dtype = np.result_type(R.weights, A.coeffs, P.weights)
    AC = SgDiaMatrix(coarse, table.coarse_pattern, dtype=dtype)
    Rw = R.weights[inner]
    for ci, chains in enumerate(table.chains):
        c = table.coarse_pattern.offsets[ci]
        Pw = P.weights[coarse.shifted(c)]
        res = np.zeros(coarse.dims, dtype=dtype)
        for r_entry, block in itertools.groupby(chains, key=lambda ch: ch.r_entry):
            block = list(block)
            Au = A.coeffs[coarse.image_slices(block[0].u_off, fine)]
            tmp = np.zeros(coarse.dims, dtype=dtype)
            for ch in block:
                tmp += Pw[..., ch.p_entry] * Au[..., ch.a_entry]
            res += tmp * Rw[..., r_entry]
        AC.coeffs[inner + (ci,)] = res
    AC.enforce_boundary()
    return AC
