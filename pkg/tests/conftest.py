import numpy as np
import pytest
import scipy.sparse as sp

from structmg.coarsen import transfer_triplets
from structmg.grid import GridVector, StructuredGrid
from structmg.sgdia import SgDiaMatrix, export_triplets


def to_sparse(A: SgDiaMatrix) -> sp.csr_matrix:
    r, c, v = export_triplets(A)
    return sp.csr_matrix((v, (r, c)), shape=A.shape)


def to_dense(A: SgDiaMatrix) -> np.ndarray:
    return to_sparse(A).toarray()


def transfer_sparse(T) -> sp.csr_matrix:
    r, c, v = transfer_triplets(T)
    return sp.csr_matrix((v, (r, c)), shape=(T.fine.size, T.coarse.size))


def random_matrix(grid, pattern, rng, dominance=None, symmetric=False) -> SgDiaMatrix:
    """Random coefficients; with ``dominance`` the diagonal exceeds the row sum."""
    A = SgDiaMatrix(grid, pattern)
    A.coeffs[...] = rng.uniform(-1.0, 1.0, A.coeffs.shape)
    A.enforce_boundary()
    if symmetric:
        M = to_dense(A)
        M = 0.5 * (M + M.T)
        A = from_dense(grid, pattern, M)
    if dominance is not None:
        off = np.abs(A.coeffs).sum(axis=-1) - np.abs(A.diagonal())
        A.coeffs[..., pattern.center_index] = off + dominance
        A.enforce_boundary()
    return A


def from_dense(grid, pattern, M) -> SgDiaMatrix:
    A = SgDiaMatrix(grid, pattern)
    lin = np.full(grid.padded_shape, -1, dtype=np.int64)
    lin[grid.interior] = np.arange(grid.size).reshape(grid.dims)
    for idx in np.ndindex(*grid.padded_shape):
        i = lin[idx]
        if i < 0:
            continue
        for k, o in enumerate(pattern.offsets):
            j = lin[tuple(a + b for a, b in zip(idx, o))]
            if j >= 0:
                A.coeffs[idx + (k,)] = M[i, j]
    return A


def random_vector(grid, rng) -> GridVector:
    return GridVector.from_interior(grid, rng.standard_normal(grid.dims))


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid6():
    return StructuredGrid((6, 6, 6))
