"""SST predictors, correlation-based predictor selection and design matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateCorrelationError, DomainError
from .grid import GridSpec

REGIONS = ("Atlantic", "NorthAtlantic", "GulfOfGuinea", "Indian", "Pacific", "Mediterranean")
# Sep..Dec belong to the calendar year before the monsoon year.
MONTHS = ("Sep", "Oct", "Nov", "Dec", "Jan", "Feb", "Mar")
MONTH_NUMBERS = {"Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12, "Jan": 1, "Feb": 2, "Mar": 3}

DRYSPELL_REGIONS = ("Indian", "GulfOfGuinea", "Mediterranean", "NorthAtlantic")
PROPORTION_COLUMNS = (("GulfOfGuinea", "Oct"), ("Mediterranean", "Sep"))


def column_index(region: str, month: str) -> int:
    """Position of ``region-month`` in the flattened region-major design."""
    try:
        return REGIONS.index(region) * len(MONTHS) + MONTHS.index(month)
    except ValueError:
        raise DomainError(f"unknown SST column {region}-{month}") from None


def column_name(index: int) -> str:
    r, m = divmod(int(index), len(MONTHS))
    return f"{REGIONS[r]}_{MONTHS[m]}"


SST_COLUMNS = tuple(column_name(i) for i in range(len(REGIONS) * len(MONTHS)))


@dataclass(frozen=True)
class SstPanel:
    """Monthly-mean SSTs in degC, shaped ``(n_years, 6 regions, 7 months)``.

    Years are monsoon years: the Sep..Dec entries of year ``t`` are from
    calendar year ``t - 1``.
    """

    values: np.ndarray
    years: tuple[int, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.years), len(REGIONS), len(MONTHS)):
            raise DomainError(f"SST panel must be (years, 6, 7), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("SST values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))

    @property
    def n_years(self) -> int:
        return len(self.years)

    def flatten(self) -> np.ndarray:
        """The ``(n_years, 42)`` design matrix, region-major."""
        return self.values.reshape(self.n_years, -1)

    def column(self, region: str, month: str) -> np.ndarray:
        return self.values[:, REGIONS.index(region), MONTHS.index(month)]

    def year_index(self, year) -> int:
        try:
            return self.years.index(int(year))
        except ValueError:
            raise DomainError(f"no SST data for year {year}") from None

    def select_years(self, years) -> "SstPanel":
        idx = [self.year_index(y) for y in years]
        return SstPanel(self.values[idx], tuple(years))


def aggregate_sst(daily, axis_time: int = 0) -> float:
    """Monthly regional SST from a daily 4x4 box: time mean per pixel, then space mean.

    ``daily`` is ``(n_days, 16)`` or ``(n_days, 4, 4)``.
    """
    daily = np.asarray(daily, dtype=float)
    daily = np.moveaxis(daily, axis_time, 0).reshape(daily.shape[axis_time], -1)
    if daily.shape[1] != 16:
        raise DomainError(f"expected 16 pixels in the SST box, got {daily.shape[1]}")
    if daily.shape[0] == 0:
        raise DomainError("no days to aggregate")
    return float(daily.mean(axis=0).mean())


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("pearson needs two 1-D series of equal length")
    if x.size < 3:
        raise DomainError("pearson needs at least 3 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise DegenerateCorrelationError("correlation undefined for a constant series")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def pearson_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of Pearson's r under a Student-t with ``n - 2`` dof."""
    if n < 3:
        raise DomainError("p-value needs n >= 3")
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def correlation_matrix(targets: np.ndarray, predictors: np.ndarray) -> np.ndarray:
    """Pearson r of every target series with every predictor column.

    ``targets`` is ``(P, n)``, ``predictors`` is ``(n, k)``; returns ``(P, k)``
    with NaN wherever either series is constant.
    """
    t = targets - targets.mean(axis=1, keepdims=True)
    x = predictors - predictors.mean(axis=0, keepdims=True)
    num = t @ x
    den = np.sqrt(np.outer((t * t).sum(axis=1), (x * x).sum(axis=0)))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, num / den, np.nan)
    return np.clip(r, -1.0, 1.0)


@dataclass(frozen=True)
class PredictorSelection:
    """Two SST columns per pixel (flat column indices) and their correlations."""

    columns: np.ndarray  # (P, 2) int
    correlations: np.ndarray  # (P, 2)

    def names(self, pixel: int) -> tuple[str, str]:
        return tuple(column_name(c) for c in self.columns[pixel])


def select_predictors(onsets, panel: SstPanel, month: str = "Sep", n_select: int = 2, mask=None) -> PredictorSelection:
    """Per pixel, the ``n_select`` SST columns of one month with largest |r|.

    ``onsets`` is ``(P, n_years)`` aligned with ``panel.years``; only those years
    enter the correlation.  ``mask`` optionally marks which (pixel, year) samples
    count.  Ties keep the fixed region order.
    """
    onsets = np.asarray(onsets, dtype=float)
    if onsets.shape[1] != panel.n_years:
        raise DomainError(f"{onsets.shape[1]} onset years vs {panel.n_years} SST years")
    if panel.n_years < 2:
        raise DomainError("predictor selection needs at least 2 training years")
    cand = np.array([column_index(r, month) for r in REGIONS])
    X = panel.flatten()[:, cand]
    if mask is None:
        r = correlation_matrix(onsets, X)
    else:
        mask = np.asarray(mask, dtype=bool)
        r = np.vstack([
            correlation_matrix(onsets[i:i + 1, mask[i]], X[mask[i]]) if mask[i].sum() >= 2
            else np.full((1, len(cand)), np.nan)
            for i in range(onsets.shape[0])
        ])
    score = np.where(np.isnan(r), -1.0, np.abs(r))
    if np.all(np.isnan(r)):
        raise DegenerateCorrelationError("every candidate correlation is undefined")
    # Stable sort on -|r| keeps region order among ties.
    order = np.argsort(-score, axis=1, kind="stable")[:, :n_select]
    columns = cand[order]
    corr = np.take_along_axis(r, order, axis=1)
    return PredictorSelection(columns=columns, correlations=corr)


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


def standardize(values, axis: int = -1, mask=None, allow_constant: bool = False):
    """z-score along ``axis`` with the sample (n-1) standard deviation.

    Zero spread is an error unless ``allow_constant``, in which case such
    series get a unit std and map to zeros.

    Returns ``(z, Standardization)``; the stored mean/std keep ``axis`` as a
    length-1 dimension so they broadcast back onto ``values``.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[axis] < 2:
        raise DomainError("standardize needs at least 2 values")
    if mask is None:
        mean = values.mean(axis=axis, keepdims=True)
        std = values.std(axis=axis, ddof=1, keepdims=True)
    else:
        m = np.asarray(mask, dtype=bool)
        n = m.sum(axis=axis, keepdims=True)
        if np.any(n < 2):
            raise DomainError("standardize needs at least 2 unmasked values")
        mean = np.where(m, values, 0.0).sum(axis=axis, keepdims=True) / n
        std = np.sqrt(np.where(m, (values - mean) ** 2, 0.0).sum(axis=axis, keepdims=True) / (n - 1))
    if np.any(std == 0):
        if not allow_constant:
            raise DomainError("cannot standardize a series with zero spread")
        std = np.where(std == 0, 1.0, std)
    z = (values - mean) / std
    return z, Standardization(mean=mean, std=std)


def destandardize(z, st: Standardization):
    return st.invert(z)


# --- dry-spell and proportion designs ----------------------------------------

@dataclass(frozen=True)
class ColumnScaler:
    """Per-column mean/std learned on training rows; zero-spread columns are only centred."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "ColumnScaler":
        flat = rows.reshape(-1, rows.shape[-1])
        mean = flat.mean(axis=0)
        std = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.ones(flat.shape[1])
        std = np.where(std > 0, std, 1.0)
        return cls(mean=mean, std=std)

    def transform(self, rows):
        return (np.asarray(rows, dtype=float) - self.mean) / self.std


def build_dryspell_design(
    panel: SstPanel,
    onsets,
    grid: GridSpec,
    month: str = "Oct",
    regions=DRYSPELL_REGIONS,
    drop=(),
    scaler: ColumnScaler | None = None,
):
    """Raw and standardized dry-spell design rows, ``(P, n_years, n_columns)``.

    Columns are the chosen regions' SSTs for ``month``, pixel lat, pixel lon and
    the onset day (true onsets when training, predicted ones when forecasting).
    Fits a :class:`ColumnScaler` on these rows unless one is supplied.

    Returns ``(X, scaler, column_names)``.
    """
    onsets = np.asarray(onsets, dtype=float)
    if onsets.ndim == 1:
        onsets = onsets[:, None]
    P, Y = onsets.shape
    if P != grid.n_pixels or Y != panel.n_years:
        raise DomainError(f"onsets {onsets.shape} do not match grid {grid.n_pixels} x {panel.n_years} years")
    if np.any(onsets < 0):
        raise DomainError("dry-spell design needs a defined onset for every row")
    lat, lon = grid.pixel_lat_lon()
    sst = np.stack([panel.column(r, month) for r in regions], axis=1)  # (Y, k)
    cols = [np.broadcast_to(sst[None, :, j], (P, Y)) for j in range(sst.shape[1])]
    cols += [np.broadcast_to(lat[:, None], (P, Y)), np.broadcast_to(lon[:, None], (P, Y)), onsets]
    names_all = tuple(f"{r}_{month}" for r in regions) + ("lat", "lon", "onset")
    keep = [k for k, n in enumerate(names_all) if n not in set(drop)]
    raw = np.stack([cols[k] for k in keep], axis=-1)
    if scaler is None:
        scaler = ColumnScaler.fit(raw)
    return scaler.transform(raw), scaler, tuple(names_all[k] for k in keep)


def build_proportion_design(panel: SstPanel, dry_spell, columns=PROPORTION_COLUMNS):
    """Per-year predictors and the fraction of pixels with a dry spell."""
    dry_spell = np.asarray(dry_spell)
    if dry_spell.shape[1] != panel.n_years:
        raise DomainError("dry-spell labels and SST panel cover different years")
    if np.any((dry_spell != 0) & (dry_spell != 1)):
        raise DomainError("proportion design needs complete 0/1 dry-spell labels")
    X = np.stack([panel.column(r, m) for r, m in columns], axis=1)
    y = dry_spell.mean(axis=0)
    return X, y
