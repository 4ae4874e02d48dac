import dataclasses

import numpy as np
import pytest

from wamcast.errors import DomainError
from wamcast.grid import GridSpec
from wamcast.labeling import DrySpellParams, detect_dry_spell, detect_onset, label_dataset
from wamcast.synth import SynthConfig, expected_skill_bound, generate, planted_columns

SMALL = SynthConfig(grid=GridSpec(8.0, -12.0, 3, 4, 1.0), years=6)


def test_same_seed_is_bit_identical():
    a_cubes, a_panel, a_truth = generate(SMALL)
    b_cubes, b_panel, b_truth = generate(SMALL)
    assert np.array_equal(a_cubes["observed"].values, b_cubes["observed"].values)
    assert np.array_equal(a_panel.values, b_panel.values)
    assert np.array_equal(a_truth.onset, b_truth.onset)
    c_cubes, _, _ = generate(dataclasses.replace(SMALL, seed=7))
    assert not np.array_equal(a_cubes["observed"].values, c_cubes["observed"].values)


def test_pixel_streams_do_not_depend_on_grid_width():
    # Pixel 0's rainfall comes from its own substream, so it is unchanged when
    # later pixels are added (SSTs and onset noise are drawn grid-wide).
    a, _, ta = generate(dataclasses.replace(SMALL, noise_std=0))
    b, _, tb = generate(dataclasses.replace(SMALL, noise_std=0, grid=GridSpec(8.0, -12.0, 3, 5, 1.0)))
    assert np.array_equal(ta.onset[0], tb.onset[0])
    assert np.array_equal(a["observed"].values[:, :, 0], b["observed"].values[:, :, 0])


def test_noiseless_recovery():
    config = dataclasses.replace(SMALL, noise_std=0.0, showers=False, years=10)
    cubes, _, truth = generate(config)
    labels = label_dataset(cubes["observed"])
    assert np.array_equal(labels.onset, truth.onset)
    assert np.array_equal(labels.dry_spell, truth.dry_spell)
    assert not labels.filled.any()


def test_showers_never_trigger_onset():
    cubes, _, truth = generate(SMALL)
    v = cubes["observed"].values
    assert np.all(v >= 0)
    assert np.any(v[:, :60] > 0)  # showers are present
    for k in range(SMALL.years):
        for p in range(SMALL.grid.n_pixels):
            assert detect_onset(v[k, :, p], 1) == truth.onset[p, k]


def test_planted_dry_spells_are_detected():
    cubes, _, truth = generate(SMALL)
    v = cubes["observed"].values
    for p, k in zip(*np.nonzero(truth.dry_spell)):
        assert detect_dry_spell(v[k, :, p], int(truth.onset[p, k])) == 1
        assert detect_dry_spell(v[k, :, p], int(truth.onset[p, k]), DrySpellParams(window=20)) == 1


def test_onsets_in_range_and_north_later():
    config = SynthConfig()
    _, _, truth = generate(config)
    assert truth.onset.min() >= 60 and truth.onset.max() <= 300
    rows = truth.onset.reshape(config.grid.n_rows, config.grid.n_cols, -1).mean(axis=(1, 2))
    assert np.all(np.diff(rows) > 0)


def test_simulated_split():
    cubes, _, _ = generate(dataclasses.replace(SMALL, n_simulated=2))
    assert cubes["simulated"].years == (1981, 1982)
    assert cubes["observed"].years[0] == 1983


def test_planted_columns_are_september():
    from wamcast.features import column_name

    cols = planted_columns(SynthConfig().grid)
    assert all(column_name(c).endswith("_Sep") for c in cols.ravel())


@pytest.mark.parametrize("noise,r,mae", [
    (0.0, 1.0, 0.0),
    (10.0, np.sqrt(0.5), 10 * np.sqrt(2 / np.pi)),
    (5.0, np.sqrt(100 / 125), 3.989),
])
def test_expected_skill_bound(noise, r, mae):
    got_r, got_mae = expected_skill_bound(dataclasses.replace(SynthConfig(), noise_std=noise))
    assert got_r == pytest.approx(r, abs=1e-12)
    assert got_mae == pytest.approx(mae, abs=5e-4)


def test_degenerate_skill_bound():
    with pytest.raises(DomainError):
        expected_skill_bound(dataclasses.replace(SynthConfig(), coef_a=0.0, coef_b=0.0, noise_std=0.0))


@pytest.mark.parametrize("change", [
    {"onset_max": 340},
    {"noise_std": -1.0},
    {"years": 0},
    {"n_simulated": 40},
    {"intensity": 6.0},
    {"shower_max": 20.0},
])
def test_infeasible_configs(change):
    with pytest.raises(DomainError):
        generate(dataclasses.replace(SMALL, **change))
