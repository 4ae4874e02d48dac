import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wamcast.errors import DomainError, UnrecoverableYearError
from wamcast.grid import DailyPrecipCube
from wamcast.labeling import (
    UNDEFINED,
    ClimatologyCurve,
    DrySpellParams,
    FuzzyParams,
    LabelSet,
    daily_climatology,
    detect_dry_spell,
    detect_onset,
    fill_missing_onsets,
    gamma1,
    gamma2,
    label_dataset,
    merge_labels,
    search_start,
    wet_season_start,
)


def _cube(values, years=None, source="observed"):
    values = np.asarray(values, dtype=float)
    years = tuple(range(2000, 2000 + values.shape[0])) if years is None else years
    return DailyPrecipCube(values, years, source)


# --- climatology -----------------------------------------------------------------

def test_constant_rain_climatology():
    curve = daily_climatology(_cube(np.full((3, 365, 1), 2.0)), 0)
    assert np.all(curve.daily_mean == 2.0) and curve.overall_mean == 2.0
    assert np.all(curve.cumulative_anomaly == 0.0)
    # Every day ties at 0; the earliest (day 1) wins, so the wet season starts on day 2.
    assert wet_season_start(curve) == 2


def test_climatology_is_the_mean_over_years():
    v = np.zeros((2, 365, 1))
    v[1, 0, 0] = 4.0
    assert daily_climatology(_cube(v), 0).daily_mean[0] == 2.0


def test_step_rainfall_climatology():
    series = np.r_[np.zeros(180), np.full(185, 2.0)]
    curve = daily_climatology(_cube(series[None, :, None]), 0)
    assert curve.overall_mean == pytest.approx(370 / 365, abs=1e-15)
    assert int(np.argmin(curve.cumulative_anomaly)) + 1 == 180
    assert wet_season_start(curve) == 181
    assert search_start(181) == 151


def test_wet_start_clamped_to_year_end():
    c = np.r_[-np.arange(1, 365, dtype=float), 0.0]  # falls until day 364, then rises
    assert wet_season_start(ClimatologyCurve(np.zeros(365), 0.0, c)) == 365
    c = -np.arange(1, 366, dtype=float)  # minimum on day 365 itself
    assert wet_season_start(ClimatologyCurve(np.zeros(365), 0.0, c)) == 365


@pytest.mark.parametrize("wet,expected", [(181, 151), (20, 1), (31, 1), (32, 2)])
def test_search_start(wet, expected):
    assert search_start(wet) == expected


def test_search_start_domain():
    with pytest.raises(DomainError):
        search_start(0)


# --- fuzzy memberships ----------------------------------------------------------

@pytest.mark.parametrize("r,expected", [(18, 0.0), (25, 1.0), (21.5, 0.5), (0, 0.0), (100, 1.0)])
def test_gamma1(r, expected):
    assert gamma1(r) == expected


@pytest.mark.parametrize("d,expected", [(0, 0.0), (1, 0.0), (2, 0.5), (3, 1.0), (5, 1.0)])
def test_gamma2(d, expected):
    assert gamma2(d) == expected


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 100), st.floats(-50, 100))
def test_gamma1_monotone_and_bounded(a, b):
    lo, hi = min(a, b), max(a, b)
    assert 0.0 <= gamma1(lo) <= gamma1(hi) <= 1.0


def test_fuzzy_params_validation():
    with pytest.raises(DomainError):
        FuzzyParams(l1=25, u1=18)
    with pytest.raises(DomainError):
        FuzzyParams(gamma_t=1.5)


# --- onset detection --------------------------------------------------------------

def brute_force_onset(series, start, p=FuzzyParams()):
    for j in range(start, 362):
        window = series[j - 1:j + 4]
        total = sum(window)
        wet = sum(1 for x in window if x >= p.wet_day_min)
        g1 = min(max((total - p.l1) / (p.u1 - p.l1), 0.0), 1.0)
        g2 = min(max((wet - p.l2) / (p.u2 - p.l2), 0.0), 1.0)
        if g1 * g2 >= p.gamma_t:
            return j
    return None


def test_onset_hand_traces():
    s = np.zeros(365)
    s[99:104] = 6.0
    assert detect_onset(s, 100) == 100
    s = np.zeros(365)
    s[99] = 20.0
    assert detect_onset(s, 100) != 100
    assert detect_onset(np.zeros(365), 1) is None


def test_onset_respects_search_start():
    s = np.zeros(365)
    # Four 5 mm days total 20 (score 2/7), so only the full 5-day window qualifies.
    s[49:54] = 5.0
    s[199:204] = 5.0
    assert detect_onset(s, 1) == 50
    assert detect_onset(s, 51) == 200


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, 365, elements=st.sampled_from([0.0, 0.5, 1.0, 2.0, 4.0, 7.0, 12.0])),
    st.integers(1, 365),
)
def test_onset_matches_loop_oracle(series, start):
    assert detect_onset(series, start) == brute_force_onset(list(series), start)


# --- dry spells ---------------------------------------------------------------

def brute_force_dry(series, onset, p=DrySpellParams()):
    last = min(onset + p.window, 365)
    for a in range(onset + 1, last - p.spell_len + 2):
        if sum(series[a - 1:a - 1 + p.spell_len]) < p.spell_max_total:
            return 1
    return 0


def test_dry_spell_examples():
    o = 150
    s = np.full(365, 9.0)
    s[o:o + 30] = 0.0
    assert detect_dry_spell(s, o) == 1
    s[o:o + 30] = 1.0
    assert detect_dry_spell(s, o) == 0
    s[o + 4:o + 11] = 0.0  # days onset+5 .. onset+11
    assert detect_dry_spell(s, o) == 1


def test_dry_spell_window_is_after_onset_only():
    o = 150
    s = np.full(365, 9.0)
    s[o - 7:o] = 0.0  # the seven days up to and including the onset day
    assert detect_dry_spell(s, o) == 0
    s = np.full(365, 9.0)
    s[o + 30:o + 37] = 0.0  # starts just past the 30-day window
    assert detect_dry_spell(s, o) == 0


def test_dry_spell_near_year_end_and_short_window():
    s = np.zeros(365)
    assert detect_dry_spell(s, 360) == 0  # only 5 days remain
    assert detect_dry_spell(s, 350) == 1
    assert detect_dry_spell(s, 100, DrySpellParams(window=0)) == 0
    assert detect_dry_spell(s, 100, DrySpellParams(window=20)) == 1


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 365, elements=st.sampled_from([0.0, 0.3, 1.0, 2.5])), st.integers(1, 365),
       st.sampled_from([20, 30]))
def test_dry_spell_matches_loop_oracle(series, onset, window):
    p = DrySpellParams(window=window)
    assert detect_dry_spell(series, onset, p) == brute_force_dry(list(series), onset, p)


def test_dry_spell_needs_onset():
    with pytest.raises(DomainError):
        detect_dry_spell(np.zeros(365), None)


# --- filling --------------------------------------------------------------------

def test_fill_missing_onsets():
    out, mask = fill_missing_onsets([120, 130, UNDEFINED, 140])
    assert out.tolist() == [120, 130, 140, 140] and mask.tolist() == [False, False, True, False]
    out, _ = fill_missing_onsets([120, 130, UNDEFINED])
    assert out.tolist() == [120, 130, 130]
    out, mask = fill_missing_onsets([5, 6])
    assert out.tolist() == [5, 6] and not mask.any()
    with pytest.raises(UnrecoverableYearError) as exc:
        fill_missing_onsets([UNDEFINED, UNDEFINED], year=1999)
    assert exc.value.year == 1999


# --- whole-cube labelling -------------------------------------------------------

def test_label_dataset_matches_scalar_functions(rng):
    Y, P = 3, 5
    values = rng.choice([0.0, 0.5, 2.0, 6.0, 15.0], size=(Y, 365, P), p=[0.5, 0.2, 0.1, 0.15, 0.05])
    values[:, :120, :] *= 0.1
    values[1, :, 2] = 0.0  # one pixel-year without any onset gets filled
    labels = label_dataset(_cube(values))
    for p in range(P):
        start = wet_season_start(daily_climatology(_cube(values), p))
        assert labels.search_start[p, 0] == search_start(start)
    for k in range(Y):
        raw = [detect_onset(values[k, :, p], int(labels.search_start[p, k])) for p in range(P)]
        assert all(r is not None for i, r in enumerate(raw) if not labels.filled[i, k])
        defined = [r for r in raw if r is not None]
        for p in range(P):
            want = raw[p] if raw[p] is not None else max(defined)
            assert labels.onset[p, k] == want
            assert labels.filled[p, k] == (raw[p] is None)
            assert labels.dry_spell[p, k] == detect_dry_spell(values[k, :, p], want)
    assert labels.fill_count == int(sum(r is None for k in range(Y) for r in
                                        [detect_onset(values[k, :, p], int(labels.search_start[p, k])) for p in range(P)]))


def test_heavy_rain_gives_onset_at_search_start():
    labels = label_dataset(_cube(np.full((2, 365, 3), 20.0)))
    assert np.array_equal(labels.onset, labels.search_start)


def test_unrecoverable_year():
    values = np.full((2, 365, 2), 20.0)
    values[1] = 0.0
    with pytest.raises(UnrecoverableYearError):
        label_dataset(_cube(values))


def test_label_dataset_recovers_synth(small_synth):
    _, _, _, truth, labels = small_synth
    assert np.mean(labels.onset == truth.onset) >= 0.95


def test_merge_labels_later_set_wins():
    def ls(years, value, source):
        shape = (2, len(years))
        return LabelSet(years, np.ones(shape), np.full(shape, value), np.zeros(shape), np.zeros(shape),
                        (source,) * len(years))

    merged = merge_labels(ls((2000, 2001), 100, "simulated"), ls((2001, 2002), 200, "observed"))
    assert merged.years == (2000, 2001, 2002)
    assert merged.onset[0].tolist() == [100, 200, 200]
    assert merged.sources == ("simulated", "observed", "observed")
    assert merged.observed_mask.tolist() == [False, True, True]
