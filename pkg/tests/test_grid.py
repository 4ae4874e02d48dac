import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wamcast.errors import DomainError
from wamcast.grid import (
    DailyPrecipCube,
    GridSpec,
    adjacency_count,
    bilinear_weights,
    build_adjacency,
    flat_index,
    pixel_coords,
    regrid_bilinear,
    row_col,
)

GRID = GridSpec(8.0, -12.0, 8, 28, 1.0)


def brute_force_pairs(spec):
    """Every unordered pixel pair at Manhattan distance 1, by exhaustive search."""
    cells = list(itertools.product(range(spec.n_rows), range(spec.n_cols)))
    out = set()
    for (r1, c1), (r2, c2) in itertools.combinations(cells, 2):
        if abs(r1 - r2) + abs(c1 - c2) == 1:
            a, b = r1 * spec.n_cols + c1, r2 * spec.n_cols + c2
            out.add((min(a, b), max(a, b)))
    return out


@pytest.mark.parametrize("rows,cols,expected", [(1, 1, 0), (2, 2, 4), (8, 28, 412)])
def test_adjacency_counts(rows, cols, expected):
    spec = GridSpec(0.0, 0.0, rows, cols, 1.0)
    edges = build_adjacency(spec)
    assert edges.shape == (expected, 2)
    assert adjacency_count(spec) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7))
def test_adjacency_matches_brute_force(rows, cols):
    spec = GridSpec(0.0, 0.0, rows, cols, 0.5)
    edges = build_adjacency(spec)
    got = {(min(a, b), max(a, b)) for a, b in edges.tolist()}
    assert len(got) == len(edges)  # no duplicates
    assert got == brute_force_pairs(spec)
    assert len(edges) == rows * (cols - 1) + cols * (rows - 1)


def test_pixel_coordinates():
    assert pixel_coords(0, GRID) == (8.5, -11.5)
    last = GRID.n_pixels - 1
    assert pixel_coords(last, GRID) == (8.0 + 7.5, -12.0 + 27.5)
    for p in range(GRID.n_pixels):
        assert flat_index(*row_col(p, GRID), GRID) == p
    with pytest.raises(IndexError):
        row_col(GRID.n_pixels, GRID)
    with pytest.raises(IndexError):
        flat_index(0, 28, GRID)


def test_gridspec_validation_and_digest():
    with pytest.raises(DomainError):
        GridSpec(0.0, 0.0, 0, 3, 1.0)
    with pytest.raises(DomainError):
        GridSpec(0.0, 0.0, 3, 3, -1.0)
    assert GridSpec.from_dict(GRID.to_dict()) == GRID
    assert GRID.digest() == GridSpec(8.0, -12.0, 8, 28, 1.0).digest()
    assert GRID.digest() != GridSpec(8.0, -12.0, 8, 27, 1.0).digest()


def test_cube_validation():
    with pytest.raises(DomainError):
        DailyPrecipCube(np.full((1, 365, 2), -1.0), (2000,), "observed")
    with pytest.raises(DomainError):
        DailyPrecipCube(np.zeros((1, 366, 2)), (2000,), "observed")
    with pytest.raises(DomainError):
        DailyPrecipCube(np.zeros((1, 365, 2)), (2000,), "forecast")
    cube = DailyPrecipCube(np.zeros((2, 365, 3)), (2000, 2001), "simulated")
    assert cube.select_years([2001]).years == (2001,)


FINE = GridSpec(0.0, 0.0, 6, 8, 0.5)
COARSE = GridSpec(0.5, 0.5, 2, 3, 1.0)


def _cube(field):
    return DailyPrecipCube(np.broadcast_to(field, (1, 365, field.size)).copy(), (2000,), "simulated")


def test_regrid_constant_and_linear_fields():
    out = regrid_bilinear(_cube(np.full(FINE.n_pixels, 3.5)), FINE, COARSE)
    np.testing.assert_allclose(out.values, 3.5, rtol=0, atol=1e-12)

    lat, lon = FINE.pixel_lat_lon()
    clat, clon = COARSE.pixel_lat_lon()
    out = regrid_bilinear(_cube(2.0 + 0.7 * lon), FINE, COARSE)
    np.testing.assert_allclose(out.values[0, 0], 2.0 + 0.7 * clon, atol=1e-12)
    # Bilinear interpolation also reproduces products lat*lon.
    out = regrid_bilinear(_cube(1.0 + lat * lon), FINE, COARSE)
    np.testing.assert_allclose(out.values[0, 0], 1.0 + clat * clon, atol=1e-12)


def test_regrid_hand_example():
    fine = GridSpec(0.0, 0.0, 2, 2, 1.0)  # centres at 0.5 and 1.5
    coarse = GridSpec(0.5, 0.5, 1, 1, 1.0)  # centre at (1.0, 1.0), the patch midpoint
    out = regrid_bilinear(_cube(np.array([0.0, 1.0, 1.0, 2.0])), fine, coarse)
    assert out.values[0, 0, 0] == pytest.approx(1.0, abs=1e-15)


def test_regrid_weights_and_bounds():
    W = bilinear_weights(FINE, COARSE)
    np.testing.assert_allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0)
    assert W.min() >= 0
    outside = GridSpec(-2.0, 0.5, 2, 3, 1.0)
    with pytest.raises(DomainError, match="pixel 0"):
        bilinear_weights(FINE, outside)
