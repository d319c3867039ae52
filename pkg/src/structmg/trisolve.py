"""Parallel sparse triangular solves on structured grids.

Tasks are whole z-columns scheduled over the (x, y) plane.  The column
dependence stencil is the 2D projection of the triangular part of the
matrix.  Dependences implied by two or more others are dropped, columns are
owned by workers in contiguous y blocks, and the remaining cross-worker
dependences are enforced point-to-point with a per-row progress counter
(the last finished x of that row).  Every column runs the same compiled
kernel whatever the worker count, so results are bitwise independent of it.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .grid import GridVector, StructuredGrid
from .sgdia import SgDiaMatrix
from .stencil import StencilPattern, project_to_2d

log = logging.getLogger(__name__)

__all__ = [
    "ZeroPivotError",
    "sparsify_dependences",
    "LevelSchedule",
    "ProgressCounters",
    "build_schedule",
    "simulate_schedule",
    "TriangularPart",
    "triangular_part",
    "sptrsv",
    "thomas_solve",
]

_jit = dict(nogil=True, cache=True)


class ZeroPivotError(ArithmeticError):
    """A zero diagonal/pivot was met; ``where`` locates it."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


# ---------------------------------------------------------------------------
# kernels


@nb.njit(**_jit)
def _thomas_core(a, b, c, d, cp, x):
    # a[k] couples k to k-1, c[k] couples k to k+1; returns failing row or -1
    n = d.shape[0]
    beta = b[0]
    if beta == 0.0:
        return 0
    cp[0] = c[0] / beta
    x[0] = d[0] / beta
    for k in range(1, n):
        beta = b[k] - a[k] * cp[k - 1]
        if beta == 0.0:
            return k
        cp[k] = c[k] / beta
        x[k] = (d[k] - a[k] * x[k - 1]) / beta
    for k in range(n - 2, -1, -1):
        x[k] = x[k] - cp[k] * x[k + 1]
    return -1


@nb.njit(**_jit)
def _point_run(coef, offs, diag, rhs, x, cols, k0, k1, forward):
    m = offs.shape[0]
    n = k1 - k0
    for c in range(cols.shape[0]):
        i = cols[c, 0]
        j = cols[c, 1]
        for t in range(n):
            k = k0 + t if forward else k1 - 1 - t
            s = rhs[i, j, k]
            for e in range(m):
                s = s - coef[i, j, k, e] * x[i + offs[e, 0], j + offs[e, 1], k + offs[e, 2]]
            x[i, j, k] = s / diag[i, j, k]


@nb.njit(**_jit)
def _line_run(coef, offs, sub, dia, sup, rhs, x, cols, k0, k1, cp, dp, out):
    m = offs.shape[0]
    n = k1 - k0
    for c in range(cols.shape[0]):
        i = cols[c, 0]
        j = cols[c, 1]
        for t in range(n):
            k = k0 + t
            s = rhs[i, j, k]
            for e in range(m):
                s = s - coef[i, j, k, e] * x[i + offs[e, 0], j + offs[e, 1], k + offs[e, 2]]
            dp[t] = s
        bad = _thomas_core(sub[i, j, k0:k1], dia[i, j, k0:k1], sup[i, j, k0:k1], dp, cp, out)
        if bad >= 0:
            return c * n + bad
        for t in range(n):
            x[i, j, k0 + t] = out[t]
    return -1


def thomas_solve(sub, diag, sup, rhs) -> np.ndarray:
    """Solve one tridiagonal system.

    ``sub[k]`` multiplies ``x[k-1]`` and ``sup[k]`` multiplies ``x[k+1]``
    in row ``k``; ``sub[0]`` and ``sup[-1]`` are ignored.
    """
    d = np.asarray(rhs, dtype=np.float64)
    n = d.shape[0]
    a = np.asarray(sub, dtype=np.float64).copy()
    b = np.asarray(diag, dtype=np.float64)
    c = np.asarray(sup, dtype=np.float64).copy()
    if not (a.shape == b.shape == c.shape == d.shape):
        raise ValueError("sub, diag, sup and rhs must have equal length")
    if n == 0:
        return d.copy()
    a[0] = 0.0
    c[-1] = 0.0
    x = np.empty(n)
    bad = _thomas_core(a, b, c, d, np.empty(n), x)
    if bad >= 0:
        raise ZeroPivotError(f"zero pivot in tridiagonal solve at row {bad}", where=bad)
    return x


# ---------------------------------------------------------------------------
# dependence analysis


def _lex_sign(o) -> int:
    for c in o:
        if c:
            return 1 if c > 0 else -1
    return 0


def sparsify_dependences(deps) -> tuple[tuple[int, ...], ...]:
    """Drop every dependence offset that a chain of two or more others implies.

    ``deps`` is a strictly lower (or strictly upper) set of 2D offsets; the
    result is the transitive reduction of the translation-invariant
    dependence graph they generate.
    """
    if isinstance(deps, StencilPattern):
        deps = deps.offsets
    deps = sorted({tuple(int(c) for c in o) for o in deps})
    if not deps:
        return ()
    signs = {_lex_sign(o) for o in deps}
    if 0 in signs or len(signs) != 1:
        raise ValueError("dependences must be all strictly lower or all strictly upper")
    reach = max(max(abs(c) for c in o) for o in deps)
    bound = 2 * reach + 1
    longest = 4 * bound  # every composition of offsets moves strictly in lex order
    implied = set()
    frontier = set(deps)
    for _ in range(longest):
        frontier = {
            tuple(a + b for a, b in zip(s, o))
            for s in frontier
            for o in deps
            if all(abs(a + b) <= bound for a, b in zip(s, o))
        }
        if not frontier:
            break
        implied |= frontier
    return tuple(o for o in deps if o not in implied)


# ---------------------------------------------------------------------------
# schedules


@dataclass
class LevelSchedule:
    """Static column schedule for one triangular solve.

    Coordinates are interior (x, y) column indices.  ``column_order[w]`` is
    the execution order of worker ``w``; ``sync_deps[(x, y)]`` lists
    ``(row, x_needed)`` pairs: before the column starts, row ``row`` must
    have finished its column at ``x_needed`` (in sweep direction).
    """

    shape: tuple[int, int]
    direction: str
    workers: int
    deps: tuple[tuple[int, int], ...]
    all_deps: tuple[tuple[int, int], ...]
    owner: np.ndarray
    column_order: list[np.ndarray]
    sync_deps: dict[tuple[int, int], tuple[tuple[int, int], ...]]
    segments: list[list[tuple[int, int, tuple[tuple[int, int], ...]]]] = field(repr=False)

    def progress(self, x: int) -> int:
        return x if self.direction == "forward" else self.shape[0] - 1 - x

    def dump(self) -> str:
        lines = [
            f"# direction={self.direction} workers={self.workers} shape={self.shape} "
            f"deps={list(self.deps)}"
        ]
        for w, order in enumerate(self.column_order):
            for x, y in order:
                waits = self.sync_deps.get((int(x), int(y)), ())
                txt = " ".join(f"row{r}>=x{xn}" for r, xn in waits)
                lines.append(f"w{w} ({x},{y}) {txt}".rstrip())
        return "\n".join(lines) + "\n"


def _dep_offsets_2d(dep_pattern, direction):
    if isinstance(dep_pattern, StencilPattern):
        if dep_pattern.dim == 3:
            dep_pattern = project_to_2d(dep_pattern)
        offs = dep_pattern.offsets
    else:
        offs = [tuple(o) for o in dep_pattern]
    want = -1 if direction == "forward" else 1
    offs = sorted({tuple(int(c) for c in o) for o in offs if any(o)})
    for o in offs:
        if len(o) != 2:
            raise ValueError(f"column dependences must be 2D, got {o}")
        if _lex_sign(o) != want:
            raise ValueError(f"offset {o} does not point against the {direction} sweep")
    return tuple(offs)


def build_schedule(grid, dep_pattern, workers: int = 1, direction: str = "forward") -> LevelSchedule:
    """Static schedule of z-columns for a triangular sweep.

    ``dep_pattern`` holds the column dependences: a 2D offset set pointing
    against the sweep (lower offsets for ``forward``, upper for
    ``backward``), or a 3D triangular pattern that is projected first.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    dims = grid.dims if isinstance(grid, StructuredGrid) else tuple(grid)
    nx, ny = int(dims[0]), int(dims[1])
    if workers > ny:
        log.warning("clamping %d workers to %d y-rows", workers, ny)
        workers = ny
    all_deps = _dep_offsets_2d(dep_pattern, direction)
    kept = sparsify_dependences(all_deps) if all_deps else ()

    # work in sweep space: (px, py) = (x, y) forward, mirrored backward,
    # so dependences always point to lex-smaller columns
    if direction == "forward":
        to_real = lambda px, py: (px, py)  # noqa: E731
        sweep_deps = all_deps
        sweep_kept = kept
    else:
        to_real = lambda px, py: (nx - 1 - px, ny - 1 - py)  # noqa: E731
        sweep_deps = tuple(sorted((-a, -b) for a, b in all_deps))
        sweep_kept = tuple(sorted((-a, -b) for a, b in kept))

    blocks = np.array_split(np.arange(ny), workers)
    owner_s = np.empty((nx, ny), dtype=np.int64)
    for w, rows in enumerate(blocks):
        owner_s[:, rows] = w

    # hb[(px,py)] = per row, the largest px guaranteed finished before start
    hb: dict[tuple[int, int], np.ndarray] = {}
    last_done = [None] * workers
    sync_s: dict[tuple[int, int], dict[int, int]] = {}
    for px in range(nx):
        for py in range(ny):
            w = owner_s[px, py]
            prev = last_done[w]
            if prev is None:
                known = np.full(ny, -1, dtype=np.int64)
            else:
                known = hb[prev].copy()
                known[prev[1]] = max(known[prev[1]], prev[0])
            waits: dict[int, int] = {}

            def require(qx, qy):
                if known[qy] >= qx:
                    return
                waits[qy] = max(waits.get(qy, -1), qx)
                np.maximum(known, hb[(qx, qy)], out=known)
                known[qy] = max(known[qy], qx)

            for dx, dy in sweep_kept:
                qx, qy = px + dx, py + dy
                if 0 <= qx < nx and 0 <= qy < ny and owner_s[qx, qy] != w:
                    require(qx, qy)
            # boundary columns may lose the composite path a dropped
            # dependence relied on; enforce any that are not yet implied
            for dx, dy in sweep_deps:
                qx, qy = px + dx, py + dy
                if 0 <= qx < nx and 0 <= qy < ny and known[qy] < qx:
                    require(qx, qy)
            hb[(px, py)] = known
            last_done[w] = (px, py)
            if waits:
                sync_s[(px, py)] = waits

    owner = np.empty((nx, ny), dtype=np.int64)
    column_order = []
    segments = []
    sync_deps = {}
    for w, rows in enumerate(blocks):
        order = []
        starts = []
        for px in range(nx):
            for py in rows:
                rx, ry = to_real(px, int(py))
                owner[rx, ry] = w
                waits = sync_s.get((px, int(py)))
                wt = ()
                if waits:
                    wt = tuple(
                        (to_real(0, r)[1], to_real(q, 0)[0]) for r, q in sorted(waits.items())
                    )
                    sync_deps[(rx, ry)] = wt
                if wt or not order:
                    starts.append((len(order), wt))
                order.append((rx, ry))
        ends = [s for s, _ in starts[1:]] + [len(order)]
        segments.append([(s, e, wt) for (s, wt), e in zip(starts, ends)])
        column_order.append(np.array(order, dtype=np.int64).reshape(-1, 2))

    return LevelSchedule(
        shape=(nx, ny),
        direction=direction,
        workers=workers,
        deps=kept,
        all_deps=all_deps,
        owner=owner,
        column_order=column_order,
        sync_deps=sync_deps,
        segments=segments,
    )


def simulate_schedule(sched: LevelSchedule) -> list[tuple[int, int]]:
    """Execute the schedule round-robin without threads.

    Returns the global completion order; raises ``RuntimeError`` if no
    worker can make progress (deadlock).
    """
    nx, ny = sched.shape
    counters = np.full(ny, -1, dtype=np.int64)
    pos = [0] * sched.workers
    done = []
    total = sum(len(o) for o in sched.column_order)
    while len(done) < total:
        moved = False
        for w, order in enumerate(sched.column_order):
            while pos[w] < len(order):
                x, y = (int(v) for v in order[pos[w]])
                waits = sched.sync_deps.get((x, y), ())
                if any(counters[_sweep_row(sched, r)] < sched.progress(xn) for r, xn in waits):
                    break
                counters[_sweep_row(sched, y)] = sched.progress(x)
                done.append((x, y))
                pos[w] += 1
                moved = True
        if not moved:
            raise RuntimeError("schedule deadlocks")
    return done


def _sweep_row(sched: LevelSchedule, y: int) -> int:
    return y if sched.direction == "forward" else sched.shape[1] - 1 - y


class ProgressCounters:
    """Per-row monotonic progress, single writer per row."""

    def __init__(self, rows: int):
        self.values = np.full(rows, -1, dtype=np.int64)
        self.abort = False

    def publish(self, row: int, progress: int) -> None:
        if progress > self.values[row]:
            self.values[row] = progress

    def wait(self, row: int, needed: int) -> None:
        spins = 0
        delay = 0.0
        while self.values[row] < needed:
            if self.abort:
                raise _Aborted
            spins += 1
            if spins > 32:
                time.sleep(delay)
                delay = min(max(2 * delay, 1e-6), 1e-4)


class _Aborted(Exception):
    pass


_pools: dict[int, ThreadPoolExecutor] = {}
_pool_lock = threading.Lock()


def _pool(n: int) -> ThreadPoolExecutor:
    with _pool_lock:
        if n not in _pools:
            _pools[n] = ThreadPoolExecutor(max_workers=n, thread_name_prefix="sptrsv")
        return _pools[n]


def _execute(sched: LevelSchedule, run_columns, halo) -> None:
    """Run ``run_columns(cols_padded)`` over the schedule; returns when all are done."""
    if sched.workers == 1:
        run_columns(sched.column_order[0] + halo)
        return

    counters = ProgressCounters(sched.shape[1])
    sweep_row = [_sweep_row(sched, y) for y in range(sched.shape[1])]

    def work(w):
        order = sched.column_order[w]
        try:
            for start, stop, waits in sched.segments[w]:
                for r, xn in waits:
                    counters.wait(sweep_row[r], sched.progress(xn))
                run_columns(order[start:stop] + halo)
                for x, y in order[start:stop]:
                    counters.publish(sweep_row[y], sched.progress(int(x)))
        except _Aborted:
            return
        except BaseException:
            counters.abort = True
            raise

    futures = [_pool(sched.workers).submit(work, w) for w in range(sched.workers)]
    errors = [f.exception() for f in futures]
    for e in errors:
        if e is not None:
            raise e


# ---------------------------------------------------------------------------
# triangular operators


@dataclass
class TriangularPart:
    """One triangular factor in SG-DIA form.

    Point form solves ``(D + T) x = rhs`` with ``T`` strictly triangular.
    Line form (``line`` set) keeps the z-couplings in a tridiagonal block per
    column and ``T`` holds only the off-column couplings.
    """

    grid: StructuredGrid
    direction: str
    offsets: np.ndarray  # (m, 3)
    coeffs: np.ndarray  # padded + (m,)
    diag: np.ndarray  # padded
    line: tuple[np.ndarray, np.ndarray] | None = None  # (sub, sup), padded

    @property
    def column_deps(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted({(int(o[0]), int(o[1])) for o in self.offsets if o[0] or o[1]}))


def triangular_part(
    A: SgDiaMatrix, direction: str = "forward", line: bool = False, scale: float = 1.0,
    diag=None,
) -> TriangularPart:
    """Extract the lower (forward) or upper (backward) part of ``A``.

    Off-diagonal coefficients are multiplied by ``scale``; ``diag`` overrides
    the diagonal (e.g. ones for a unit-triangular factor).
    """
    if A.grid.dim != 3:
        raise ValueError("triangular solves need a 3D grid")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    want = -1 if direction == "forward" else 1
    sel = []
    for k, o in enumerate(A.pattern.offsets):
        if _lex_sign(o) != want:
            continue
        if line and o[0] == 0 and o[1] == 0:
            continue
        sel.append(k)
    offsets = np.array([A.pattern.offsets[k] for k in sel], dtype=np.int64).reshape(-1, 3)
    coeffs = np.ascontiguousarray(A.coeffs[..., sel]) * scale
    if diag is None:
        diag = A.diagonal()
    diag = np.ascontiguousarray(diag, dtype=A.dtype)
    tri = None
    if line:
        zero = np.zeros(A.grid.padded_shape, dtype=A.dtype)
        sub = A.entry((0, 0, -1)) * scale if (0, 0, -1) in A.pattern else zero
        sup = A.entry((0, 0, 1)) * scale if (0, 0, 1) in A.pattern else zero
        tri = (np.ascontiguousarray(sub), np.ascontiguousarray(sup))
    return TriangularPart(A.grid, direction, offsets, coeffs, diag, tri)


def sptrsv(tri: TriangularPart, rhs: GridVector, x: GridVector, sched: LevelSchedule) -> None:
    """Overwrite the interior of ``x`` with the solution of the triangular system.

    ``x`` halos must be zero.  The result does not depend on
    ``sched.workers``.
    """
    g = tri.grid
    if not (g.same_layout(rhs.grid) and g.same_layout(x.grid)):
        raise ValueError("grid mismatch in sptrsv")
    if sched.shape != g.dims[:2] or sched.direction != tri.direction:
        raise ValueError("schedule was built for a different grid or direction")
    missing = set(tri.column_deps) - set(sched.all_deps)
    if missing:
        raise ValueError(f"schedule lacks column dependences {sorted(missing)}")
    h = np.array(g.halo[:2], dtype=np.int64)
    k0, k1 = g.halo[2], g.halo[2] + g.dims[2]
    rhs_d = np.ascontiguousarray(rhs.data, dtype=x.dtype)
    if tri.line is None:
        d = tri.diag[g.interior]
        if np.any(d == 0):
            where = tuple(int(i) for i in np.argwhere(d == 0)[0])
            raise ZeroPivotError(f"zero diagonal at interior point {where}", where=where)
        forward = tri.direction == "forward"

        def run(cols):
            _point_run(tri.coeffs, tri.offsets, tri.diag, rhs_d, x.data, cols, k0, k1, forward)

    else:
        sub, sup = tri.line
        nz = k1 - k0

        def run(cols):
            cp = np.empty(nz, dtype=x.dtype)
            dp = np.empty(nz, dtype=x.dtype)
            out = np.empty(nz, dtype=x.dtype)
            bad = _line_run(
                tri.coeffs, tri.offsets, sub, tri.diag, sup, rhs_d, x.data, cols, k0, k1, cp, dp, out
            )
            if bad >= 0:
                c, kz = divmod(int(bad), nz)
                where = (int(cols[c, 0] - h[0]), int(cols[c, 1] - h[1]), kz)
                raise ZeroPivotError(f"zero pivot in line solve at interior point {where}", where=where)

    _execute(sched, run, h)
