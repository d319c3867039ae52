import numpy as np
import pytest
import scipy.sparse as sp
from conftest import random_vector, rel_err, to_dense, to_sparse, transfer_sparse

from structmg.grid import GridVector, StructuredGrid, dot
from structmg.mg import (
    MgConfig,
    SetupError,
    as_preconditioner,
    grid_complexity,
    hierarchy_summary,
    operator_complexity,
    setup,
    vcycle,
)
from structmg.problems import aniso_3d7, laplace_3d7, skewed_aniso_3d19
from structmg.sgdia import SgDiaMatrix
from structmg.stencil import pattern_from_name


def test_levels_for_laplace_32():
    A, _ = laplace_3d7(32)
    h = setup(A, MgConfig(coarsest_size=1000))
    assert [l.A.grid.dims for l in h.levels] == [(32,) * 3, (16,) * 3, (8,) * 3]
    h = setup(A, MgConfig(coarsest_size=511))
    assert [l.A.grid.dims[0] for l in h.levels] == [32, 16, 8, 4]
    assert grid_complexity(h) == pytest.approx(1 + 1 / 8 + 1 / 64 + 1 / 512)
    assert h.levels[1].A.pattern.name == "3d27"


def test_single_level_complexities():
    A, _ = laplace_3d7(6)
    h = setup(A)
    assert h.num_levels == 1
    assert grid_complexity(h) == 1.0 == operator_complexity(h) == operator_complexity(h, "in_range")


def test_semi_coarsening_complexities():
    A, _ = laplace_3d7(16)
    h = setup(A, MgConfig(strides=(1, 1, 2), coarsest_size=256))
    assert h.num_levels == 5
    assert grid_complexity(h) == pytest.approx(1 + 1 / 2 + 1 / 4 + 1 / 8 + 1 / 16)
    A, _ = skewed_aniso_3d19(16)
    h = setup(A, MgConfig(strides=(2, 2, 1), coarsest_size=16))
    assert h.num_levels >= 4
    assert grid_complexity(h) == pytest.approx(4 / 3, abs=0.01)


def _check_galerkin(h):
    for fine, coarse in zip(h.levels, h.levels[1:]):
        rap = transfer_sparse(fine.R).T @ to_sparse(fine.A) @ transfer_sparse(fine.P)
        assert rel_err(to_dense(coarse.A), rap.toarray()) < 1e-12


@pytest.mark.parametrize(
    "make,cfg",
    [
        (lambda: laplace_3d7(12), MgConfig(coarsest_size=8)),
        (lambda: aniso_3d7(11, 1e-3), MgConfig(coarsest_size=8)),
        (lambda: skewed_aniso_3d19(10), MgConfig(coarsest_size=8)),
        (lambda: laplace_3d7(10), MgConfig(centering="cell", weights="constant", restriction_scale=0.125, coarsest_size=8)),
        (lambda: skewed_aniso_3d19(9), MgConfig(strides=(2, 2, 1), coarsest_size=100)),
    ],
)
def test_galerkin_consistency_every_level(make, cfg):
    A, _ = make()
    h = setup(A, cfg)
    assert h.num_levels >= 2
    _check_galerkin(h)


def test_vcycle_trivial():
    A, _ = laplace_3d7(8)
    h = setup(A, MgConfig(coarsest_size=64))
    x = GridVector(A.grid)
    vcycle(h, GridVector(A.grid), x)
    assert not x.data.any()


def test_single_level_is_direct_solve(rng):
    A, _ = laplace_3d7(5)
    h = setup(A)
    b = random_vector(A.grid, rng)
    x = random_vector(A.grid, rng)
    vcycle(h, b, x)
    assert rel_err(x.interior.ravel(), np.linalg.solve(to_dense(A), b.interior.ravel())) < 1e-12


def test_vcycle_reduces_error(rng):
    A, _ = laplace_3d7(32)
    h = setup(A)
    M = to_sparse(A)
    x_true = random_vector(A.grid, rng)
    b = A(x_true)
    x = GridVector(A.grid)
    prev = np.inf
    for _ in range(5):
        vcycle(h, b, x)
        e = x.interior.ravel() - x_true.interior.ravel()
        cur = float(e @ (M @ e))
        assert cur < prev
        prev = cur


def test_preconditioner_linear_and_symmetric(rng):
    A, _ = laplace_3d7(8)
    h = setup(A, MgConfig(smoother="sgs", coarsest_size=64))
    Minv = as_preconditioner(h)
    b1, b2 = random_vector(A.grid, rng), random_vector(A.grid, rng)
    comb = GridVector.from_interior(A.grid, 1.5 * b1.interior - 0.5 * b2.interior)
    lhs = Minv(comb).interior
    assert rel_err(lhs, 1.5 * Minv(b1).interior - 0.5 * Minv(b2).interior) < 1e-12
    assert dot(Minv(b1), b2) == pytest.approx(dot(b1, Minv(b2)), rel=1e-10)


@pytest.mark.parametrize("smoother", ["jacobi", "pgs", "lgs", "ilu"])
def test_preconditioner_symmetric_for_each_smoother(rng, smoother):
    A, _ = laplace_3d7(7)
    h = setup(A, MgConfig(smoother=smoother, coarsest_size=27))
    Minv = as_preconditioner(h)
    b1, b2 = random_vector(A.grid, rng), random_vector(A.grid, rng)
    assert dot(Minv(b1), b2) == pytest.approx(dot(b1, Minv(b2)), rel=1e-10)


def test_ilu_mask_widens_on_coarse_levels():
    A, _ = laplace_3d7(12)
    h = setup(A, MgConfig(smoother="ilu", ilu_mask="3d19", coarsest_size=27))
    assert h.levels[0].smoother.factors.pattern.name == "3d19"
    assert h.levels[1].smoother.factors.pattern.name == "3d27"


def test_singular_coarsest():
    g = StructuredGrid((4, 4, 4))
    p = pattern_from_name("3d7")
    A = SgDiaMatrix.from_stencil(g, p, {(0, 0, 0): 1.0})
    A.coeffs[2, 2, 2, p.center_index] = 0.0
    with pytest.raises(SetupError, match="singular"):
        setup(A, MgConfig(smoother="jacobi", coarsest_size=1000))


def test_config_errors():
    with pytest.raises(ValueError, match="no progress"):
        MgConfig(strides=(1, 1, 1))
    with pytest.raises(ValueError):
        MgConfig(smoother="chebyshev")
    A, _ = laplace_3d7(4)
    with pytest.raises(ValueError):
        setup(A, MgConfig(strides=(2, 2)))


def test_dense_limit():
    A, _ = laplace_3d7(24)
    with pytest.raises(SetupError, match="dense"):
        setup(A, MgConfig(max_levels=1, max_dense=1000))


def test_summary_table():
    A, _ = laplace_3d7(16)
    text = hierarchy_summary(setup(A))
    assert "16x16x16" in text and "8x8x8" in text and "C_O" in text


def test_in_range_counts_below_stored():
    A, _ = laplace_3d7(16)
    h = setup(A, MgConfig(coarsest_size=64))
    assert operator_complexity(h, "in_range") < operator_complexity(h)
    with pytest.raises(ValueError):
        operator_complexity(h, "nnz")
