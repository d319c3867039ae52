"""Preconditioned CG and right-preconditioned restarted GMRES."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridVector, dot, norm2
from .sgdia import SgDiaMatrix, residual, spmv

__all__ = ["SolveResult", "IndefiniteError", "pcg", "gmres", "TOL_MODES"]

TOL_MODES = ("rel", "abs")


class IndefiniteError(ArithmeticError):
    """CG met a non-positive curvature ``p^T A p`` or ``r^T M r``."""


@dataclass
class SolveResult:
    x: GridVector
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)
    final_residual: float = 0.0

    def __iter__(self):
        # allows ``x, its, hist = pcg(...)``
        return iter((self.x, self.iterations, self.history))


def _target(b: GridVector, tol: float, tol_mode: str) -> tuple[float, float]:
    if tol_mode not in TOL_MODES:
        raise ValueError(f"tol_mode must be 'rel' or 'abs', got {tol_mode!r}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    bnorm = norm2(b)
    return bnorm, (tol * bnorm if tol_mode == "rel" else tol)


def _identity(r: GridVector) -> GridVector:
    return r.copy()


def _true_residual(A, b, x) -> float:
    r = b.zeros_like()
    residual(A, x, b, r)
    return norm2(r)


def pcg(
    A: SgDiaMatrix,
    b: GridVector,
    M=None,
    tol: float = 1e-9,
    maxiter: int = 500,
    x0: GridVector | None = None,
    tol_mode: str = "rel",
) -> SolveResult:
    """Preconditioned conjugate gradients.

    Stops when ``||r|| < tol * ||b||`` (``rel``) or ``||r|| < tol`` (``abs``).
    ``history[i]`` is the recurrence residual norm after ``i`` iterations.
    """
    M = M or _identity
    bnorm, target = _target(b, tol, tol_mode)
    x = x0.copy() if x0 is not None else b.zeros_like()
    if bnorm == 0.0 and x0 is None:
        return SolveResult(x, 0, True, [0.0], 0.0)
    r = b.zeros_like()
    residual(A, x, b, r)
    rn = norm2(r)
    history = [rn]
    if rn < target:
        return SolveResult(x, 0, True, history, rn)
    z = M(r)
    rz = dot(r, z)
    if rz <= 0:
        raise IndefiniteError(f"preconditioner is not positive definite (r^T M r = {rz:.3e})")
    p = z.copy()
    q = b.zeros_like()
    converged = False
    it = 0
    while it < maxiter:
        it += 1
        spmv(A, p, q)
        pq = dot(p, q)
        if pq <= 0:
            raise IndefiniteError(f"matrix is not positive definite (p^T A p = {pq:.3e}, iteration {it})")
        alpha = rz / pq
        x.interior += alpha * p.interior
        r.interior -= alpha * q.interior
        rn = norm2(r)
        history.append(rn)
        if rn < target:
            converged = True
            break
        z = M(r)
        rz_new = dot(r, z)
        if rz_new <= 0:
            raise IndefiniteError(
                f"preconditioner is not positive definite (r^T M r = {rz_new:.3e}, iteration {it})"
            )
        p.interior = z.interior + (rz_new / rz) * p.interior
        rz = rz_new
    return SolveResult(x, it, converged, history, _true_residual(A, b, x))


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    h = math.hypot(a, b)
    return a / h, b / h


def gmres(
    A: SgDiaMatrix,
    b: GridVector,
    M=None,
    restart: int = 10,
    tol: float = 1e-9,
    maxiter: int = 500,
    x0: GridVector | None = None,
    tol_mode: str = "rel",
) -> SolveResult:
    """Restarted GMRES with right preconditioning, ``A M^{-1} y = b``.

    The minimized quantity is the true residual norm, so ``abs`` tolerances
    mean what they say.  ``iterations`` counts Arnoldi steps.
    """
    if restart < 1:
        raise ValueError("restart must be at least 1")
    M = M or _identity
    bnorm, target = _target(b, tol, tol_mode)
    x = x0.copy() if x0 is not None else b.zeros_like()
    r = b.zeros_like()
    residual(A, x, b, r)
    beta = norm2(r)
    history = [beta]
    it = 0
    w = b.zeros_like()
    while beta >= target and beta > 0.0 and it < maxiter:
        V = [r.copy()]
        V[0].interior /= beta
        Z: list[GridVector] = []
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        k = 0
        for j in range(restart):
            z = M(V[j])
            Z.append(z)
            spmv(A, z, w)
            wnorm = norm2(w)
            for i in range(j + 1):
                H[i, j] = dot(w, V[i])
                w.interior -= H[i, j] * V[i].interior
            H[j + 1, j] = norm2(w)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            hnext = H[j + 1, j]
            cs[j], sn[j] = _givens(H[j, j], hnext)
            H[j, j] = cs[j] * H[j, j] + sn[j] * hnext
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            it += 1
            k = j + 1
            history.append(abs(g[j + 1]))
            breakdown = hnext <= 1e-14 * wnorm
            if breakdown or abs(g[j + 1]) < target or it >= maxiter:
                break
            v = w.copy()
            v.interior /= hnext
            V.append(v)
        y = np.zeros(k)
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1 : k] @ y[i + 1 : k]) / H[i, i]
        for i in range(k):
            x.interior += y[i] * Z[i].interior
        residual(A, x, b, r)
        beta = norm2(r)
        if breakdown and beta >= target:
            # the Krylov space is exhausted; restarting cannot help
            break
    return SolveResult(x, it, beta < target or beta == 0.0, history, beta)
