"""Onset and dry-spell labels from daily rainfall.

Onsets are found in two stages.  A per-pixel search start is derived from the
climatological cumulative rainfall anomaly (its minimum marks the start of the
wet season; the search begins 30 days earlier).  From there, each 5-day window
is scored with two fuzzy memberships, one on the window total and one on the
wet-day count, and the first window whose product reaches ``gamma_t`` marks the
onset.  A dry spell is flagged when a 7-day stretch within the 30 days after
onset totals under 5 mm.

Days are 1-based day-of-year throughout the public API.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, UnrecoverableYearError
from .grid import DAYS_PER_YEAR, DailyPrecipCube

UNDEFINED = -1
ONSET_WINDOW = 5


@dataclass(frozen=True)
class FuzzyParams:
    l1: float = 18.0
    u1: float = 25.0
    l2: float = 1.0
    u2: float = 3.0
    gamma_t: float = 0.5
    wet_day_min: float = 1.0

    def __post_init__(self):
        if not self.l1 < self.u1:
            raise DomainError(f"need l1 < u1, got {self.l1}, {self.u1}")
        if not self.l2 < self.u2:
            raise DomainError(f"need l2 < u2, got {self.l2}, {self.u2}")
        if not 0.0 <= self.gamma_t <= 1.0:
            raise DomainError(f"gamma_t must be in [0, 1], got {self.gamma_t}")


@dataclass(frozen=True)
class DrySpellParams:
    window: int = 30
    spell_len: int = 7
    spell_max_total: float = 5.0

    def __post_init__(self):
        if self.window < 0 or self.spell_len < 1:
            raise DomainError("window must be >= 0 and spell_len >= 1")


@dataclass(frozen=True)
class ClimatologyCurve:
    daily_mean: np.ndarray  # Q_j, j = 1..365
    overall_mean: float
    cumulative_anomaly: np.ndarray  # C(d), d = 1..365


@dataclass
class LabelSet:
    """Per (pixel, year) labels.  Arrays are ``(n_pixels, n_years)``.

    ``onset`` and ``dry_spell`` hold ``UNDEFINED`` (-1) where no value exists.
    ``sources`` tags each year as observed or simulated.
    """

    years: tuple[int, ...]
    search_start: np.ndarray
    onset: np.ndarray
    filled: np.ndarray
    dry_spell: np.ndarray
    sources: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.years = tuple(int(y) for y in self.years)
        if not self.sources:
            self.sources = ("observed",) * len(self.years)
        self.search_start = np.asarray(self.search_start, dtype=np.int64)
        self.onset = np.asarray(self.onset, dtype=np.int64)
        self.filled = np.asarray(self.filled, dtype=bool)
        self.dry_spell = np.asarray(self.dry_spell, dtype=np.int64)
        if self.search_start.ndim == 1:
            self.search_start = np.repeat(self.search_start[:, None], len(self.years), axis=1)

    @property
    def n_pixels(self) -> int:
        return self.onset.shape[0]

    @property
    def n_years(self) -> int:
        return len(self.years)

    @property
    def fill_count(self) -> int:
        return int(self.filled.sum())

    @property
    def observed_mask(self) -> np.ndarray:
        return np.array([s == "observed" for s in self.sources])

    def year_index(self, year) -> int:
        return self.years.index(int(year))

    def select_years(self, years) -> "LabelSet":
        idx = [self.year_index(y) for y in years]
        return LabelSet(
            years=tuple(years),
            search_start=self.search_start[:, idx],
            onset=self.onset[:, idx],
            filled=self.filled[:, idx],
            dry_spell=self.dry_spell[:, idx],
            sources=tuple(self.sources[i] for i in idx),
        )


def merge_labels(*label_sets: LabelSet) -> LabelSet:
    """Concatenate label sets along years; later sets win on duplicate years."""
    by_year = {}
    for ls in label_sets:
        for k, y in enumerate(ls.years):
            by_year[y] = (ls, k)
    years = sorted(by_year)
    cols = [by_year[y] for y in years]

    def stack(attr):
        return np.stack([getattr(ls, attr)[:, k] for ls, k in cols], axis=1)

    return LabelSet(
        years=tuple(years),
        search_start=stack("search_start"),
        onset=stack("onset"),
        filled=stack("filled"),
        dry_spell=stack("dry_spell"),
        sources=tuple(ls.sources[k] for ls, k in cols),
    )


# --- climatology and search start -------------------------------------------

def _climatology_arrays(values: np.ndarray):
    """``values`` is ``(n_years, 365, ...)``; returns Q, Qbar, C over the day axis."""
    if values.shape[0] == 0:
        raise DomainError("climatology needs at least one year")
    q = values.mean(axis=0)
    qbar = q.mean(axis=0)
    c = np.cumsum(q - qbar, axis=0)
    return q, qbar, c


def daily_climatology(cube: DailyPrecipCube, pixel: int) -> ClimatologyCurve:
    if cube.n_years == 0:
        raise DomainError("climatology needs at least one year")
    q, qbar, c = _climatology_arrays(cube.values[:, :, pixel])
    return ClimatologyCurve(q, float(qbar), c)


def wet_season_start(curve: ClimatologyCurve) -> int:
    """Day after the (earliest) minimum of the cumulative anomaly curve."""
    day_of_min = int(np.argmin(curve.cumulative_anomaly)) + 1
    return min(day_of_min + 1, DAYS_PER_YEAR)


def search_start(wet_start: int, lead: int = 30) -> int:
    if not 1 <= wet_start <= DAYS_PER_YEAR:
        raise DomainError(f"wet season start {wet_start} outside 1..{DAYS_PER_YEAR}")
    return max(1, int(wet_start) - lead)


def search_starts(cube: DailyPrecipCube, years=None) -> np.ndarray:
    """Search-start day for every pixel, from the climatology of ``years`` (default: all)."""
    values = cube.values if years is None else cube.select_years(years).values
    _, _, c = _climatology_arrays(values)
    wet = np.minimum(np.argmin(c, axis=0) + 2, DAYS_PER_YEAR)
    return np.maximum(1, wet - 30).astype(np.int64)


# --- fuzzy onset rules -------------------------------------------------------

def _ramp(x, lo, hi):
    return np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


def gamma1(r, params: FuzzyParams = FuzzyParams()):
    """Membership of a 5-day rainfall total: 0 below ``l1``, 1 above ``u1``, linear between."""
    out = _ramp(r, params.l1, params.u1)
    return float(out) if out.ndim == 0 else out


def gamma2(d, params: FuzzyParams = FuzzyParams()):
    """Membership of a wet-day count: 0 below ``l2``, 1 above ``u2``, linear between."""
    out = _ramp(d, params.l2, params.u2)
    return float(out) if out.ndim == 0 else out


def _window_scores(series: np.ndarray, params: FuzzyParams) -> np.ndarray:
    """gamma1 * gamma2 for every 5-day window start along axis 1 of ``(..., 365, ...)``."""
    win = sliding_window_view(series, ONSET_WINDOW, axis=1)
    totals = win.sum(axis=-1)
    wet = (win >= params.wet_day_min).sum(axis=-1)
    return _ramp(totals, params.l1, params.u1) * _ramp(wet, params.l2, params.u2)


def _check_series(series) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.shape != (DAYS_PER_YEAR,):
        raise DomainError(f"expected {DAYS_PER_YEAR} daily values, got shape {series.shape}")
    return series


def detect_onset(series, start: int, params: FuzzyParams = FuzzyParams()):
    """First day ``j >= start`` whose 5-day window scores at least ``gamma_t``.

    Returns ``None`` when no window qualifies.
    """
    series = _check_series(series)
    if start < 1:
        raise DomainError(f"search start must be >= 1, got {start}")
    score = _window_scores(series[None, :], params)[0]
    hits = np.nonzero(score[start - 1:] >= params.gamma_t)[0]
    if hits.size == 0:
        return None
    return int(start + hits[0])


def detect_dry_spell(series, onset, params: DrySpellParams = DrySpellParams()) -> int:
    """1 if a ``spell_len``-day window inside the post-onset window totals under the limit."""
    series = _check_series(series)
    if onset is None or onset == UNDEFINED:
        raise DomainError("dry spell needs a defined onset")
    first = int(onset) + 1
    last = min(int(onset) + params.window, DAYS_PER_YEAR)
    if last - first + 1 < params.spell_len:
        return 0
    seg = series[first - 1:last]
    totals = sliding_window_view(seg, params.spell_len).sum(axis=-1)
    return int(np.any(totals < params.spell_max_total))


def _dry_spells(values: np.ndarray, onset: np.ndarray, params: DrySpellParams) -> np.ndarray:
    """Vectorised dry-spell flags.  ``values`` is (Y, 365, P), ``onset`` is (Y, P)."""
    n_win = DAYS_PER_YEAR - params.spell_len + 1
    if n_win < 1:
        return np.where(onset == UNDEFINED, UNDEFINED, 0)
    totals = sliding_window_view(values, params.spell_len, axis=1).sum(axis=-1)  # (Y, n_win, P)
    start = np.arange(1, n_win + 1)[None, :, None]
    o = onset[:, None, :]
    inside = (start >= o + 1) & (start + params.spell_len - 1 <= np.minimum(o + params.window, DAYS_PER_YEAR))
    dry = np.any(inside & (totals < params.spell_max_total), axis=1).astype(np.int64)
    return np.where(onset == UNDEFINED, UNDEFINED, dry)


def fill_missing_onsets(onsets, year=None):
    """Replace undefined onsets of one year by the latest defined onset that year.

    Returns ``(filled_onsets, filled_mask)``.
    """
    onsets = np.asarray(onsets, dtype=np.int64)
    missing = onsets == UNDEFINED
    if missing.all():
        raise UnrecoverableYearError(year)
    out = onsets.copy()
    out[missing] = onsets[~missing].max()
    return out, missing


def label_dataset(
    cube: DailyPrecipCube,
    fuzzy: FuzzyParams = FuzzyParams(),
    ds: DrySpellParams = DrySpellParams(),
    climatology_years=None,
) -> LabelSet:
    """Search starts, onsets (with fills) and dry-spell flags for a whole cube.

    Search starts come from the climatology of ``climatology_years`` (default:
    every year in the cube).
    """
    starts = search_starts(cube, climatology_years)
    values = cube.values
    score = _window_scores(values, fuzzy)  # (Y, 361, P)
    day = np.arange(1, score.shape[1] + 1)[None, :, None]
    ok = (score >= fuzzy.gamma_t) & (day >= starts[None, None, :])
    found = ok.any(axis=1)
    onset = np.where(found, ok.argmax(axis=1) + 1, UNDEFINED)  # (Y, P)

    filled = np.zeros_like(onset, dtype=bool)
    for k, year in enumerate(cube.years):
        onset[k], filled[k] = fill_missing_onsets(onset[k], year)
    dry = _dry_spells(values, onset, ds)
    return LabelSet(
        years=cube.years,
        search_start=starts,
        onset=onset.T.copy(),
        filled=filled.T.copy(),
        dry_spell=dry.T.copy(),
        sources=(cube.source,) * cube.n_years,
    )
