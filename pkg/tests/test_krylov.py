import numpy as np
import pytest
from conftest import random_vector, to_dense

from structmg.grid import GridVector, StructuredGrid
from structmg.krylov import IndefiniteError, gmres, pcg
from structmg.mg import MgConfig, as_preconditioner, setup
from structmg.problems import laplace_3d7, skewed_aniso_3d19
from structmg.sgdia import SgDiaMatrix, residual
from structmg.stencil import StencilPattern, pattern_from_name


def identity(n=4):
    g = StructuredGrid((n, n, n))
    return SgDiaMatrix.from_stencil(g, pattern_from_name("3d7"), {(0, 0, 0): 1.0})


def true_res(A, b, x):
    r = b.zeros_like()
    residual(A, x, b, r)
    return np.linalg.norm(r.interior)


def test_identity_one_iteration(rng):
    A = identity()
    b = random_vector(A.grid, rng)
    for solve in (pcg, gmres):
        res = solve(A, b)
        assert res.iterations == 1 and res.converged
        assert np.allclose(res.x.interior, b.interior)


def test_zero_rhs():
    A, b = laplace_3d7(4)
    for solve in (pcg, gmres):
        res = solve(A, b.zeros_like())
        assert res.iterations == 0 and res.converged and not res.x.data.any()


def test_pcg_laplace_16():
    A, b = laplace_3d7(16)
    plain = pcg(A, b, tol=1e-9)
    assert plain.converged
    res = pcg(A, b, as_preconditioner(setup(A)), tol=1e-9)
    assert res.converged and res.iterations <= 20
    assert res.iterations < plain.iterations


def test_history_matches_true_residual():
    A, b = laplace_3d7(16)
    bn = np.linalg.norm(b.interior)
    for solve in (pcg, gmres):
        res = solve(A, b, as_preconditioner(setup(A)), tol=1e-10)
        assert abs(res.history[-1] - true_res(A, b, res.x)) <= 1e-8 * bn
        assert res.final_residual == pytest.approx(true_res(A, b, res.x), rel=1e-12)


def test_tuple_unpacking():
    A, b = laplace_3d7(4)
    x, its, hist = pcg(A, b)
    assert len(hist) == its + 1


def test_indefinite_detected():
    g = StructuredGrid((3, 3, 3))
    A = SgDiaMatrix.from_stencil(g, pattern_from_name("3d7"), {(0, 0, 0): -1.0})
    with pytest.raises(IndefiniteError):
        pcg(A, GridVector.from_interior(g, np.ones(g.dims)))


def test_maxiter_flag():
    A, b = laplace_3d7(16)
    for solve in (pcg, gmres):
        res = solve(A, b, tol=1e-12, maxiter=3)
        assert not res.converged and res.iterations == 3


def test_scaling_invariance():
    A, b = laplace_3d7(12)
    base = pcg(A, b, as_preconditioner(setup(A)), tol=1e-9).iterations
    As = SgDiaMatrix(A.grid, A.pattern, A.coeffs * 37.5)
    bs = GridVector(b.grid, b.data * 37.5)
    scaled = pcg(As, bs, as_preconditioner(setup(As)), tol=1e-9).iterations
    assert abs(scaled - base) <= 1


def _nonsymmetric(n, rng):
    A, b = skewed_aniso_3d19(n, eps=1e-2)
    # upwind-like convection along z breaks symmetry
    A.coeffs[..., A.pattern.index((0, 0, -1))] -= 0.3
    A.coeffs[..., A.pattern.index((0, 0, 0))] += 0.3
    A.enforce_boundary()
    return A, b


def test_gmres_preconditioned_beats_plain(rng):
    A, b = _nonsymmetric(16, rng)
    M = to_dense(A)
    assert not np.allclose(M, M.T)
    plain = gmres(A, b, restart=10, tol=1e-9, maxiter=60)
    pre = gmres(A, b, as_preconditioner(setup(A)), restart=10, tol=1e-9, maxiter=60)
    assert pre.converged and not plain.converged


def test_gmres_finite_termination(rng):
    g = StructuredGrid((1, 1, 20))
    p = StencilPattern(3, ((0, 0, -1), (0, 0, 0), (0, 0, 1)))
    A = SgDiaMatrix(g, p)
    A.coeffs[g.interior] = rng.uniform(-1, 1, (1, 1, 20, 3))
    A.coeffs[..., 1][g.interior] += 0.1
    A.enforce_boundary()
    b = random_vector(g, rng)
    res = gmres(A, b, restart=20, tol=1e-14, maxiter=20)
    assert res.iterations <= 20
    ref = np.linalg.solve(to_dense(A), b.interior.ravel())
    assert np.abs(res.x.interior.ravel() - ref).max() <= 1e-12 * np.abs(ref).max()


def test_gmres_abs_tolerance():
    A, b = laplace_3d7(10)
    res = gmres(A, b, as_preconditioner(setup(A)), tol=1e-5, tol_mode="abs")
    assert res.converged and true_res(A, b, res.x) < 1e-5


def test_lucky_breakdown():
    A = identity(3)
    b = GridVector.from_interior(A.grid, np.arange(27.0))
    res = gmres(A, b, restart=5)
    assert res.converged and res.iterations == 1


def test_deterministic_across_workers():
    A, b = laplace_3d7(12)
    xs = []
    for w in (1, 2, 4):
        res = pcg(A, b, as_preconditioner(setup(A, MgConfig(workers=w))), tol=1e-9)
        xs.append((res.iterations, res.x.data.tobytes()))
    assert len(set(xs)) == 1


def test_bad_tol_mode():
    A, b = laplace_3d7(3)
    with pytest.raises(ValueError):
        pcg(A, b, tol_mode="relative")
