import json

import numpy as np
import pytest

from wamcast.errors import DomainError
from wamcast.features import SST_COLUMNS, SstPanel
from wamcast.grid import DailyPrecipCube, GridSpec, build_adjacency
from wamcast.labeling import LabelSet
from wamcast.models import FitConfig
from oracles import loop_anomaly, loop_auc, loop_confusion, loop_corr, loop_mae, loop_rmse
from wamcast.verify import (
    Dataset,
    EvalConfig,
    _fold,
    anomaly_correlation,
    bias_spatial,
    bias_temporal,
    classification_report,
    eda_report,
    format_classification_report,
    loocv,
    mae,
    rmse,
    roc_auc,
    spatial_correlation,
    summarize,
    temporal_verification,
    verification_report,
)

# --- metric examples ------------------------------------------------------------

def test_mae_examples(rng):
    assert mae([[10, 20]], [[10, 20]]) == 0
    assert mae([[10, 20]], [[12, 18]]) == 2
    with pytest.raises(DomainError):
        mae([[1, 2]], [[1, 2, 3]])


def test_bias_examples(rng):
    obs = rng.normal(150, 10, (4, 6))
    assert np.all(bias_spatial(obs, obs) == 0)
    np.testing.assert_allclose(bias_spatial(obs + 3, obs), 3.0)
    np.testing.assert_allclose(bias_temporal(obs + 3, obs), 3.0)


def test_rmse_examples(rng):
    obs = rng.normal(150, 10, (5, 4))
    assert rmse(obs, obs, "spatial_first") == 0 and rmse(obs, obs, "temporal_first") == 0
    # One pixel over one year: both orders reduce to |error|.
    assert rmse([[3.0]], [[1.0]], "spatial_first") == rmse([[3.0]], [[1.0]], "temporal_first") == 2.0
    # One year: spatial-first is the RMS over pixels, temporal-first the mean |error|.
    row = rng.normal(size=(1, 6))
    assert rmse(row, 0 * row, "spatial_first") == pytest.approx(float(np.sqrt(np.mean(row ** 2))))
    assert rmse(row, 0 * row, "temporal_first") == pytest.approx(float(np.mean(np.abs(row))))
    # One pixel over many years: the orders differ (mean |e| vs RMS of e).
    col = rng.normal(size=(6, 1))
    assert rmse(col, 0 * col, "spatial_first") == pytest.approx(float(np.mean(np.abs(col))))
    assert rmse(col, 0 * col, "temporal_first") == pytest.approx(float(np.sqrt(np.mean(col ** 2))))
    with pytest.raises(DomainError):
        rmse(obs, obs, "diagonal")


def test_anomaly_correlation_examples(rng):
    obs = rng.normal(150, 10, (4, 6))
    np.testing.assert_allclose(anomaly_correlation(obs, obs), 1.0)
    flat = np.broadcast_to(obs.mean(axis=0), obs.shape)
    assert np.all(np.isnan(anomaly_correlation(flat, obs)))
    s = summarize(anomaly_correlation(flat, obs))
    assert s["n_defined"] == 0 and s["n_undefined"] == 4
    with pytest.raises(DomainError):
        anomaly_correlation(obs[:1], obs[:1])


def test_temporal_verification_examples(rng):
    obs = rng.normal(150, 10, (8, 5))
    tv = temporal_verification(obs, obs)
    np.testing.assert_allclose(tv.r, 1.0)
    assert tv.skill == 1.0
    clim = np.broadcast_to(obs.mean(axis=0), obs.shape)
    tv = temporal_verification(clim, obs)
    assert tv.skill == pytest.approx(0.0, abs=1e-12)
    assert tv.n_undefined == 5 and np.isnan(tv.mean_r)
    with pytest.raises(DomainError):
        temporal_verification(obs[:2], obs[:2])


def test_temporal_significance_is_calibrated():
    """Independent random predictions are significant at 90% about 10% of the time."""
    rng = np.random.default_rng(3)
    preds = rng.standard_normal((20, 4000))
    obs = rng.standard_normal((20, 4000))
    tv = temporal_verification(preds, obs)
    assert abs(tv.frac_sig_90 - 0.10) < 4 * np.sqrt(0.09 / 4000)
    assert abs(tv.frac_sig_95 - 0.05) < 4 * np.sqrt(0.0475 / 4000)


def test_classification_examples():
    rep = classification_report([1, 1, 0, 0], [1, 0, 1, 0])
    for key in ("precision", "recall", "f1"):
        assert rep["1"][key] == 0.5
    assert rep["accuracy"] == 0.5
    rep = classification_report([1, 0, 1, 0], [1, 0, 1, 0])
    assert all(rep[c][k] == 1.0 for c in ("0", "1") for k in ("precision", "recall", "f1"))
    assert rep["accuracy"] == 1.0 and not rep["zero_division"]
    with pytest.raises(DomainError):
        classification_report([2, 0], [1, 0])


def test_classification_zero_division_is_flagged():
    rep = classification_report([0, 0, 0], [1, 0, 0])
    assert rep["1"]["precision"] == 0.0
    assert "1:precision" in rep["zero_division"]


def test_classification_text_layout():
    text = format_classification_report(classification_report([1, 1, 0, 0], [1, 0, 1, 0]))
    lines = text.splitlines()
    assert lines[0].split() == ["Class", "Precision", "Recall", "F1-Score", "Support"]
    assert [l.split()[0] for l in lines[2:4]] == ["0", "1"]
    assert lines[-3].startswith("Accuracy") and lines[-1].startswith("Weighted Avg")
    assert lines[-1].split()[-1] == "4"


def test_roc_examples(rng):
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 1, 0, 1]) == 0.25
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(DomainError):
        roc_auc([0.1, 0.2], [1, 1])
    p = rng.uniform(size=50)
    y = rng.integers(0, 2, 50)
    assert roc_auc(np.exp(3 * p), y) == pytest.approx(roc_auc(p, y), abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_loop_oracles(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(150, 15, (10, 10))
    o = rng.normal(150, 15, (10, 10))
    pl, ol = p.tolist(), o.tolist()
    assert mae(p, o) == pytest.approx(loop_mae(pl, ol), abs=1e-10)
    assert rmse(p, o, "spatial_first") == pytest.approx(loop_rmse(pl, ol, True), abs=1e-10)
    assert rmse(p, o, "temporal_first") == pytest.approx(loop_rmse(pl, ol, False), abs=1e-10)
    assert rmse(p, o, "spatial_first") != rmse(p, o, "temporal_first")
    assert bias_spatial(p, o).mean() == pytest.approx(bias_temporal(p, o).mean(), abs=1e-10)
    np.testing.assert_allclose(anomaly_correlation(p, o), loop_anomaly(pl, ol), atol=1e-10)
    np.testing.assert_allclose(spatial_correlation(p, o), [loop_corr(a, b) for a, b in zip(pl, ol)], atol=1e-10)

    pred = rng.integers(0, 2, 100)
    obs = rng.integers(0, 2, 100)
    tp, fp, fn, tn = loop_confusion(pred.tolist(), obs.tolist())
    rep = classification_report(pred, obs)
    assert rep["confusion"] == {"tp": tp, "fp": fp, "fn": fn, "tn": tn}
    assert rep["1"]["precision"] == pytest.approx(tp / (tp + fp))
    assert rep["0"]["recall"] == pytest.approx(tn / (tn + fp))
    assert rep["0"]["support"] + rep["1"]["support"] == 100
    lo, hi = sorted((rep["0"]["f1"], rep["1"]["f1"]))
    assert lo - 1e-12 <= rep["weighted"]["f1"] <= hi + 1e-12

    probs = np.round(rng.uniform(size=100), 1)  # coarse values force ties
    assert roc_auc(probs, obs) == pytest.approx(loop_auc(probs.tolist(), obs.tolist()), abs=1e-12)


# --- LOOCV -----------------------------------------------------------------------

def _toy(rng, n_years=3, grid=GridSpec(8.0, -12.0, 2, 2, 1.0)):
    years = tuple(range(2001, 2001 + n_years))
    P = grid.n_pixels
    shape = (P, n_years)
    onset = rng.integers(140, 180, shape)
    labels = LabelSet(years, np.full(shape, 120), onset, np.zeros(shape, bool),
                      rng.integers(0, 2, shape), ("observed",) * n_years)
    panel = SstPanel(27 + rng.standard_normal((n_years, 6, 7)), years)
    return Dataset(grid, labels, panel)


def test_toy_loocv_has_one_fold_per_year(rng):
    data = _toy(rng)
    res = loocv(data, "onset", EvalConfig(fit=FitConfig(epochs=50)))
    assert res.n_folds == 3 and res.years == data.labels.years
    assert res.onset_pred.shape == (3, 4)
    assert len(set(res.checksums)) == 3
    # Each fold's climatology is the mean of the other two years.
    for k in range(3):
        others = [i for i in range(3) if i != k]
        np.testing.assert_allclose(res.onset_clim[k], data.labels.onset[:, others].mean(axis=1))


def test_loocv_skips_simulated_years(rng):
    data = _toy(rng, 5)
    lab = data.labels
    lab = LabelSet(lab.years, lab.search_start, lab.onset, lab.filled, lab.dry_spell,
                   ("simulated", "simulated", "observed", "observed", "observed"))
    res = loocv(Dataset(data.grid, lab, data.panel), "onset", EvalConfig(fit=FitConfig(epochs=20)))
    assert res.years == (2003, 2004, 2005)


def test_loocv_reports_fold_failures(rng):
    # Two years: each fold trains on one year, below the onset model's minimum.
    res = loocv(_toy(rng, 2), "onset", EvalConfig(fit=FitConfig(epochs=5)))
    assert res.n_folds == 0
    assert [y for y, _ in res.failures] == [2001, 2002]
    assert all("2 training years" in msg for _, msg in res.failures)


def test_loocv_rejects_unknown_target(rng):
    with pytest.raises(DomainError):
        loocv(_toy(rng), "rainfall")


def test_dataset_validates_years(rng):
    data = _toy(rng)
    panel = data.panel.select_years([2001, 2002])
    with pytest.raises(DomainError, match="2003"):
        Dataset(data.grid, data.labels, panel)


def test_leakage_guard(small_synth):
    """Perturbing the held-out year's rainfall and SSTs leaves every fold's fit unchanged."""
    config, cubes, panel, _, labels = small_synth
    cube = cubes["observed"]
    base = Dataset(config.grid, labels, panel, (cube,))
    ec = EvalConfig(fit=FitConfig(epochs=100))
    edges = build_adjacency(config.grid)
    rng = np.random.default_rng(1)
    from wamcast.labeling import label_dataset

    for k, year in enumerate(panel.years[:4]):
        v = cube.values.copy()
        v[k] *= rng.uniform(0, 3, v[k].shape)
        pv = panel.values.copy()
        pv[k] += rng.normal(0, 2, pv[k].shape)
        cube2 = DailyPrecipCube(v, cube.years, "observed")
        data2 = Dataset(config.grid, label_dataset(cube2), SstPanel(pv, panel.years), (cube2,))
        a = _fold(base, year, "dryspell", ec, edges)
        b = _fold(data2, year, "dryspell", ec, edges)
        assert a["checksum"] == b["checksum"]
        assert np.array_equal(a["onset_coef"], b["onset_coef"])
        assert np.array_equal(a["ds_coef"], b["ds_coef"])


def test_small_synth_report(small_synth):
    config, cubes, panel, _, labels = small_synth
    data = Dataset(config.grid, labels, panel, (cubes["observed"],))
    res = loocv(data, "dryspell", EvalConfig(fit=FitConfig(epochs=300)))
    assert res.n_folds == 10 and not res.failures
    rep = verification_report(res)
    cls = rep.dryspell["classification"]
    assert cls["support"] == 10 * config.grid.n_pixels
    assert sum(cls["confusion"].values()) == 10 * config.grid.n_pixels
    assert not rep.partial
    d = json.loads(rep.to_json())
    assert d["n_folds"] == 10 and d["onset"]["mae"] == round(rep.onset["mae"], 6)
    assert rep.to_json() == rep.to_json()
    assert set(rep.maps) >= {"bias_temporal", "temporal_r", "mae", "dryspell_hit_rate"}


def test_threaded_loocv_matches_serial(small_synth):
    config, _, panel, _, labels = small_synth
    data = Dataset(config.grid, labels, panel)
    fit = FitConfig(epochs=60)
    a = loocv(data, "dryspell", EvalConfig(fit=fit))
    b = loocv(data, "dryspell", EvalConfig(fit=fit, threads=3))
    np.testing.assert_array_equal(a.onset_pred, b.onset_pred)
    np.testing.assert_array_equal(a.ds_prob, b.ds_prob)
    assert a.checksums == b.checksums


# --- EDA ---------------------------------------------------------------------

def test_eda_examples(rng):
    grid = GridSpec(0.0, 0.0, 1, 2, 1.0)
    years = (2001, 2002, 2003, 2004)
    cube = DailyPrecipCube(rng.uniform(0, 5, (4, 365, 2)), years, "observed")
    sim = DailyPrecipCube(cube.values.copy(), years, "simulated")
    sst = 27 + rng.standard_normal((4, 6, 7))
    sst[:, 4, 2] = [25.0, 28.0, 26.0, 27.0]  # Pacific_Nov, integer so onsets stay exact
    panel = SstPanel(sst, years)
    col = SST_COLUMNS.index("Pacific_Nov")
    onset = np.stack([150 + 10 * panel.flatten()[:, col], 160 - 5 * panel.flatten()[:, col]]).astype(int)
    dry = np.array([[1, 0, 0, 1], [1, 1, 1, 1]])
    labels = LabelSet(years, np.full((2, 4), 100), onset, np.zeros((2, 4), bool), dry, ("observed",) * 4)
    out = eda_report(cube, sim, labels, panel)
    assert out["scalars"]["mean_daily_difference"] == 0
    assert out["scalars"]["mean_abs_daily_difference"] == 0
    assert out["maps"]["dryspell_frequency"].tolist() == [0.5, 1.0]
    np.testing.assert_allclose(np.abs(out["maps"]["max_abs_correlation"]), 1.0)
    assert list(out["maps"]["max_correlation_column"]) == ["Pacific_Nov"] * 2
    with pytest.raises(DomainError):
        eda_report(cube, DailyPrecipCube(np.zeros((4, 365, 3)), years, "simulated"), labels, panel)
