import numpy as np
import pytest
from hypothesis import given, strategies as st

from structmg.grid import (
    GridVector,
    StructuredGrid,
    axpy,
    coarsen_grid,
    copy,
    dot,
    halo_exchange,
    load_vector,
    norm2,
    save_vector,
    set_zero,
)


@pytest.mark.parametrize(
    "dims,strides,centering,expect",
    [
        ((8, 8, 8), (2, 2, 2), "cell", (4, 4, 4)),
        ((9, 9, 9), (2, 2, 2), "cell", (5, 5, 5)),
        ((8, 8, 8), (2, 2, 1), "cell", (4, 4, 8)),
        ((9, 9, 9), (2, 2, 2), "vertex", (5, 5, 5)),
        ((8, 8, 8), (2, 2, 2), "vertex", (4, 4, 4)),
    ],
)
def test_coarsen_grid(dims, strides, centering, expect):
    c = coarsen_grid(StructuredGrid(dims), strides, centering)
    assert c.dims == expect and c.strides == strides and c.base == (0, 0, 0)


def test_bad_stride():
    with pytest.raises(ValueError):
        coarsen_grid(StructuredGrid((8, 8, 8)), (3, 2, 2), "cell")


def test_padded_shape_and_interior():
    g = StructuredGrid((4, 5, 6))
    assert g.padded_shape == (6, 7, 8)
    assert g.interior == (slice(1, 5), slice(1, 6), slice(1, 7))


@given(st.integers(1, 12), st.sampled_from(["cell", "vertex"]))
def test_fine_image_lies_in_padded_fine(n, centering):
    fine = StructuredGrid((n, n, 3))
    c = coarsen_grid(fine, (2, 2, 1), centering)
    for X in range(c.halo[0], c.halo[0] + c.dims[0]):
        img = c.fine_image((X, 1, 1))
        assert 0 <= img[0] < fine.padded_shape[0]


def test_full_coarsening_reduces_by_eight():
    g = StructuredGrid((32, 32, 32))
    for _ in range(3):
        c = coarsen_grid(g, (2, 2, 2), "cell")
        assert g.size == 8 * c.size
        g = StructuredGrid(c.dims)


def test_halo_exchange(rng):
    g = StructuredGrid((3, 4, 5))
    v = GridVector(g, rng.standard_normal(g.padded_shape))
    inner = v.interior.copy()
    halo_exchange(v)
    once = v.data.copy()
    assert np.array_equal(v.interior, inner)
    mask = np.ones(g.padded_shape, bool)
    mask[g.interior] = False
    assert not v.data[mask].any()
    halo_exchange(v)
    assert np.array_equal(v.data, once)


def test_reductions(rng):
    g = StructuredGrid((5, 4, 3))
    x = GridVector.from_interior(g, rng.standard_normal(g.dims))
    assert dot(x, x.zeros_like()) == 0.0
    e = [GridVector(g) for _ in range(3)]
    pts = [(1, 1, 1), (2, 3, 1), (5, 4, 3)]
    for v, p in zip(e, pts):
        v.data[p] = 1.0
    for i in range(3):
        for j in range(3):
            assert dot(e[i], e[j]) == (1.0 if i == j else 0.0)
    assert norm2(x) ** 2 == pytest.approx(dot(x, x), rel=1e-15)


def test_reductions_ignore_halo(rng):
    g = StructuredGrid((4, 4, 4))
    x = GridVector.from_interior(g, np.ones(g.dims))
    ref = dot(x, x)
    x.data[0, 0, 0] = 1e9
    assert dot(x, x) == ref


def test_axpy_copy_zero(rng):
    g = StructuredGrid((3, 3, 3))
    x = GridVector.from_interior(g, rng.standard_normal(g.dims))
    y = GridVector.from_interior(g, rng.standard_normal(g.dims))
    expect = y.interior + 2.5 * x.interior
    axpy(2.5, x, y)
    assert np.array_equal(y.interior, expect)
    copy(x, y)
    assert np.array_equal(x.data, y.data)
    set_zero(y)
    assert not y.data.any()


def test_grid_mismatch():
    a = GridVector(StructuredGrid((3, 3, 3)))
    b = GridVector(StructuredGrid((3, 3, 4)))
    with pytest.raises(ValueError):
        dot(a, b)


def test_dot_deterministic(rng):
    g = StructuredGrid((17, 9, 11))
    x = GridVector.from_interior(g, rng.standard_normal(g.dims))
    y = GridVector.from_interior(g, rng.standard_normal(g.dims))
    assert len({dot(x, y) for _ in range(5)}) == 1


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_vector_dump_round_trip(tmp_path, rng, dtype):
    g = StructuredGrid((3, 4, 5))
    v = GridVector(g, rng.standard_normal(g.padded_shape).astype(dtype))
    save_vector(tmp_path / "v.bin", v)
    w = load_vector(tmp_path / "v.bin")
    assert w.grid.dims == g.dims and w.dtype == dtype
    assert np.array_equal(w.data, v.data)
