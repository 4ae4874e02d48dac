"""Regular lat/lon grids, pixel indexing, neighbour pairs and bilinear regridding.

All grids are cell-centre registered: pixel ``(row, col)`` has its centre at
``(lat_min + (row + 0.5) * res, lon_min + (col + 0.5) * res)``.  Pixels are
flattened row-major, ``flat = row * n_cols + col``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

DAYS_PER_YEAR = 365
SOURCES = ("observed", "simulated")


@dataclass(frozen=True)
class GridSpec:
    lat_min: float
    lon_min: float
    n_rows: int
    n_cols: int
    resolution: float

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise DomainError(f"grid needs at least one row and column, got {self.n_rows}x{self.n_cols}")
        if not self.resolution > 0:
            raise DomainError(f"resolution must be positive, got {self.resolution}")

    @property
    def n_pixels(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def lat_centers(self) -> np.ndarray:
        return self.lat_min + (np.arange(self.n_rows) + 0.5) * self.resolution

    def lon_centers(self) -> np.ndarray:
        return self.lon_min + (np.arange(self.n_cols) + 0.5) * self.resolution

    def pixel_lat_lon(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre latitude and longitude of every pixel, in flat order."""
        lat, lon = np.meshgrid(self.lat_centers(), self.lon_centers(), indexing="ij")
        return lat.ravel(), lon.ravel()

    def to_dict(self) -> dict:
        return {
            "lat_min": self.lat_min,
            "lon_min": self.lon_min,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            lat_min=float(d["lat_min"]),
            lon_min=float(d["lon_min"]),
            n_rows=int(d["n_rows"]),
            n_cols=int(d["n_cols"]),
            resolution=float(d["resolution"]),
        )

    def digest(self) -> str:
        """Stable hash used to tie persisted models to the grid they were fit on."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def flat_index(row: int, col: int, spec: GridSpec) -> int:
    if not (0 <= row < spec.n_rows and 0 <= col < spec.n_cols):
        raise IndexError(f"({row}, {col}) outside {spec.n_rows}x{spec.n_cols} grid")
    return row * spec.n_cols + col


def row_col(pixel: int, spec: GridSpec) -> tuple[int, int]:
    if not 0 <= pixel < spec.n_pixels:
        raise IndexError(f"pixel {pixel} outside [0, {spec.n_pixels})")
    return divmod(int(pixel), spec.n_cols)


def pixel_coords(pixel: int, spec: GridSpec) -> tuple[float, float]:
    """Cell-centre ``(lat, lon)`` of a flat pixel index."""
    row, col = row_col(pixel, spec)
    return (
        spec.lat_min + (row + 0.5) * spec.resolution,
        spec.lon_min + (col + 0.5) * spec.resolution,
    )


def build_adjacency(spec: GridSpec) -> np.ndarray:
    """Unordered 4-neighbour pairs as an ``(E, 2)`` int array with ``i < j``.

    Horizontal pairs come first (row-major), then vertical pairs.
    """
    idx = np.arange(spec.n_pixels).reshape(spec.shape)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.concatenate([horiz, vert]).astype(np.int64)


def adjacency_count(spec: GridSpec) -> int:
    return spec.n_rows * (spec.n_cols - 1) + spec.n_cols * (spec.n_rows - 1)


@dataclass(frozen=True)
class DailyPrecipCube:
    """Daily rainfall in mm, shaped ``(n_years, 365, n_pixels)``."""

    values: np.ndarray
    years: tuple[int, ...]
    source: str = "observed"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[1] != DAYS_PER_YEAR:
            raise DomainError(f"cube must be (years, {DAYS_PER_YEAR}, pixels), got {values.shape}")
        if values.shape[0] != len(self.years):
            raise DomainError(f"{values.shape[0]} years of data but {len(self.years)} year labels")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("rainfall must be finite and non-negative")
        if self.source not in SOURCES:
            raise DomainError(f"unknown source {self.source!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))

    @property
    def n_years(self) -> int:
        return self.values.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.values.shape[2]

    def year_index(self, year: int) -> int:
        return self.years.index(int(year))

    def select_years(self, years) -> "DailyPrecipCube":
        idx = [self.year_index(y) for y in years]
        return DailyPrecipCube(self.values[idx], tuple(years), self.source)


def _axis_weights(centers_out, first_center, res, n, kind, coarse_index_of):
    """Lower neighbour index and upper weight along one axis."""
    frac = (centers_out - first_center) / res
    tol = 1e-9
    bad = np.nonzero((frac < -tol) | (frac > n - 1 + tol))[0]
    if bad.size:
        k = int(bad[0])
        raise DomainError(
            f"coarse pixel {coarse_index_of(k)} centre ({kind} {centers_out[k]:g}) lies outside the fine grid"
        )
    frac = np.clip(frac, 0.0, n - 1)
    lo = np.minimum(np.floor(frac).astype(int), max(n - 2, 0))
    w = frac - lo
    return lo, w


def bilinear_weights(fine_spec: GridSpec, coarse_spec: GridSpec):
    """Sparse CSR weight matrix ``(P_coarse, P_fine)`` for bilinear regridding."""
    import scipy.sparse as sp

    lat_lo, lat_w = _axis_weights(
        coarse_spec.lat_centers(), fine_spec.lat_centers()[0], fine_spec.resolution,
        fine_spec.n_rows, "lat", lambda r: r * coarse_spec.n_cols,
    )
    lon_lo, lon_w = _axis_weights(
        coarse_spec.lon_centers(), fine_spec.lon_centers()[0], fine_spec.resolution,
        fine_spec.n_cols, "lon", lambda c: c,
    )
    rows, cols, vals = [], [], []
    nc_f = fine_spec.n_cols
    for r in range(coarse_spec.n_rows):
        r0, wr = lat_lo[r], lat_w[r]
        r1 = min(r0 + 1, fine_spec.n_rows - 1)
        for c in range(coarse_spec.n_cols):
            c0, wc = lon_lo[c], lon_w[c]
            c1 = min(c0 + 1, nc_f - 1)
            out = r * coarse_spec.n_cols + c
            for rr, cc, w in (
                (r0, c0, (1 - wr) * (1 - wc)),
                (r0, c1, (1 - wr) * wc),
                (r1, c0, wr * (1 - wc)),
                (r1, c1, wr * wc),
            ):
                if w != 0.0:
                    rows.append(out)
                    cols.append(rr * nc_f + cc)
                    vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(coarse_spec.n_pixels, fine_spec.n_pixels))


def regrid_bilinear(fine: DailyPrecipCube, fine_spec: GridSpec, coarse_spec: GridSpec) -> DailyPrecipCube:
    """Bilinearly interpolate a fine cube onto the centres of a coarser grid."""
    if fine.n_pixels != fine_spec.n_pixels:
        raise DomainError(f"cube has {fine.n_pixels} pixels, fine grid has {fine_spec.n_pixels}")
    W = bilinear_weights(fine_spec, coarse_spec)
    flat = fine.values.reshape(-1, fine.n_pixels)
    out = np.asarray((W @ flat.T).T).reshape(fine.n_years, DAYS_PER_YEAR, coarse_spec.n_pixels)
    # Convex weights can undershoot zero by rounding only.
    np.maximum(out, 0.0, out=out)
    return DailyPrecipCube(out, fine.years, fine.source)
