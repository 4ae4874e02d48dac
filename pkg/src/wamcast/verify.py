"""Leave-one-year-out verification and the metric battery.

Prediction/observation arrays are ``(n_years, n_pixels)``: rows are held-out
years, columns pixels.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, WamcastError
from .features import (
    SST_COLUMNS,
    SstPanel,
    build_proportion_design,
    correlation_matrix,
    pearson_pvalue,
)
from .grid import DailyPrecipCube, GridSpec, build_adjacency
from .labeling import DrySpellParams, FuzzyParams, LabelSet, label_dataset, merge_labels
from .models import (
    FitConfig,
    adaptive_threshold,
    dryspell_design_for,
    fit_onset,
    predict_proba,
    round_days,
    select_dryspell_lambda,
    select_onset_lambda,
    train_dryspell,
)


def _pair(preds, obs):
    preds = np.asarray(preds, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if preds.shape != obs.shape:
        raise DomainError(f"prediction shape {preds.shape} != observation shape {obs.shape}")
    return preds, obs


# --- onset metrics -----------------------------------------------------------

def mae(preds, obs) -> float:
    preds, obs = _pair(preds, obs)
    return float(np.mean(np.abs(obs - preds)))


def bias_spatial(preds, obs) -> np.ndarray:
    """Per-year mean over pixels of (prediction - observation)."""
    preds, obs = _pair(preds, obs)
    return (preds - obs).mean(axis=1)


def bias_temporal(preds, obs) -> np.ndarray:
    """Per-pixel mean over years of (prediction - observation)."""
    preds, obs = _pair(preds, obs)
    return (preds - obs).mean(axis=0)


def rmse(preds, obs, averaging: str = "spatial_first") -> float:
    """RMS error per year (spatial_first) or per pixel (temporal_first), then averaged."""
    preds, obs = _pair(preds, obs)
    sq = (preds - obs) ** 2
    if averaging == "spatial_first":
        return float(np.sqrt(sq.mean(axis=1)).mean())
    if averaging == "temporal_first":
        return float(np.sqrt(sq.mean(axis=0)).mean())
    raise DomainError(f"unknown averaging {averaging!r}")


def _rowwise_corr(a, b) -> np.ndarray:
    """Pearson r of each row pair; NaN where a row is constant."""
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, (a * b).sum(axis=1) / den, np.nan)
    return np.clip(r, -1.0, 1.0)


def spatial_correlation(preds, obs) -> np.ndarray:
    """Per-year correlation across pixels of the raw fields."""
    preds, obs = _pair(preds, obs)
    return _rowwise_corr(preds, obs)


def anomaly_correlation(preds, obs) -> np.ndarray:
    """Per-year spatial correlation after removing each pixel's own temporal mean.

    Years where either centred field is constant come back as NaN.
    """
    preds, obs = _pair(preds, obs)
    if preds.shape[0] < 2:
        raise DomainError("anomaly correlation needs at least 2 years")
    return _rowwise_corr(preds - preds.mean(axis=0), obs - obs.mean(axis=0))


def summarize(values) -> dict:
    """Mean/min/max over defined entries plus a count of undefined ones."""
    v = np.asarray(values, dtype=float)
    ok = v[np.isfinite(v)]
    out = {"n_defined": int(ok.size), "n_undefined": int(v.size - ok.size)}
    if ok.size:
        out.update(mean=float(ok.mean()), min=float(ok.min()), max=float(ok.max()), std=float(ok.std(ddof=1)) if ok.size > 1 else 0.0)
    return out


@dataclass
class TemporalVerification:
    r: np.ndarray  # per pixel, NaN if undefined
    p: np.ndarray
    frac_sig_90: float
    frac_sig_95: float
    n_undefined: int
    mean_r: float
    skill: float


def temporal_verification(preds, obs, climatology=None) -> TemporalVerification:
    """Per-pixel correlation over years, its significance, and MSE skill vs climatology.

    ``climatology`` holds the baseline forecast for each entry; by default each
    pixel's mean observation.
    """
    preds, obs = _pair(preds, obs)
    n = preds.shape[0]
    if n < 3:
        raise DomainError("temporal verification needs at least 3 years")
    r = _rowwise_corr(preds.T, obs.T)
    p = np.array([pearson_pvalue(ri, n) if np.isfinite(ri) else np.nan for ri in r])
    ok = np.isfinite(r)
    if climatology is None:
        climatology = np.broadcast_to(obs.mean(axis=0), obs.shape)
    clim = np.asarray(climatology, dtype=float)
    mse_model = np.mean((preds - obs) ** 2)
    mse_clim = np.mean((clim - obs) ** 2)
    skill = 1.0 - mse_model / mse_clim if mse_clim > 0 else (1.0 if mse_model == 0 else -np.inf)
    n_ok = max(int(ok.sum()), 1)
    return TemporalVerification(
        r=r,
        p=p,
        frac_sig_90=float(np.sum(p[ok] < 0.10) / n_ok),
        frac_sig_95=float(np.sum(p[ok] < 0.05) / n_ok),
        n_undefined=int((~ok).sum()),
        mean_r=float(r[ok].mean()) if ok.any() else float("nan"),
        skill=float(skill),
    )


# --- classification metrics ----------------------------------------------------

def _check_binary(*arrays):
    for a in arrays:
        if np.any((a != 0) & (a != 1)):
            raise DomainError("labels must be 0 or 1")


def confusion(pred, obs) -> dict:
    pred = np.asarray(pred).ravel()
    obs = np.asarray(obs).ravel()
    if pred.shape != obs.shape:
        raise DomainError("prediction and observation label counts differ")
    _check_binary(pred, obs)
    return {
        "tp": int(np.sum((pred == 1) & (obs == 1))),
        "fp": int(np.sum((pred == 1) & (obs == 0))),
        "fn": int(np.sum((pred == 0) & (obs == 1))),
        "tn": int(np.sum((pred == 0) & (obs == 0))),
    }


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def classification_report(pred, obs) -> dict:
    """Per-class precision/recall/F1/support, accuracy, macro and weighted averages.

    Zero denominators give 0 and are listed under ``"zero_division"``.
    """
    c = confusion(pred, obs)
    total = sum(c.values())
    report = {"zero_division": []}
    for cls, (tp, fp, fn) in {1: (c["tp"], c["fp"], c["fn"]), 0: (c["tn"], c["fn"], c["fp"])}.items():
        prec, z1 = _ratio(tp, tp + fp)
        rec, z2 = _ratio(tp, tp + fn)
        f1, z3 = _ratio(2 * prec * rec, prec + rec)
        for flag, name in ((z1, "precision"), (z2, "recall"), (z3, "f1")):
            if flag:
                report["zero_division"].append(f"{cls}:{name}")
        report[str(cls)] = {"precision": prec, "recall": rec, "f1": f1, "support": tp + fn}
    report["accuracy"] = (c["tp"] + c["tn"]) / total if total else 0.0
    s0, s1 = report["0"]["support"], report["1"]["support"]
    for avg, w0, w1 in (("macro", 0.5, 0.5), ("weighted", s0 / total if total else 0, s1 / total if total else 0)):
        report[avg] = {
            k: w0 * report["0"][k] + w1 * report["1"][k] for k in ("precision", "recall", "f1")
        }
        report[avg]["support"] = total
    report["support"] = total
    report["confusion"] = c
    return report


def format_classification_report(report: dict, digits: int = 2) -> str:
    """Plain-text table: one row per class, then accuracy, macro and weighted averages."""
    head = f"{'Class':<14}{'Precision':>10}{'Recall':>10}{'F1-Score':>10}{'Support':>10}"
    lines = [head, "-" * len(head)]
    for cls in ("0", "1"):
        r = report[cls]
        lines.append(f"{cls:<14}{r['precision']:>10.{digits}f}{r['recall']:>10.{digits}f}{r['f1']:>10.{digits}f}{r['support']:>10d}")
    lines.append("-" * len(head))
    lines.append(f"{'Accuracy':<14}{'':>10}{'':>10}{report['accuracy']:>10.{digits}f}{report['support']:>10d}")
    for name, key in (("Macro Avg", "macro"), ("Weighted Avg", "weighted")):
        r = report[key]
        lines.append(f"{name:<14}{r['precision']:>10.{digits}f}{r['recall']:>10.{digits}f}{r['f1']:>10.{digits}f}{r['support']:>10d}")
    return "\n".join(lines) + "\n"


def roc_auc(probs, obs) -> float:
    """Probability that a random positive outranks a random negative, ties counting half.

    Computed from mid-ranks, which is exactly the pair-counting statistic.
    """
    probs = np.asarray(probs, dtype=float).ravel()
    obs = np.asarray(obs).ravel()
    if probs.shape != obs.shape:
        raise DomainError("probability and label counts differ")
    _check_binary(obs)
    n_pos = int(obs.sum())
    n_neg = obs.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ROC-AUC needs both classes")
    ranks = rankdata(probs)
    return float((ranks[obs == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# --- LOOCV -------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Labels, SSTs and optionally the rainfall the labels came from.

    With ``cubes`` present, each LOOCV fold relabels its training years using
    a climatology of training years only, so the held-out year's rainfall
    cannot reach the fitted models through the search starts.  ``labels``
    remain the verification truth.
    """

    grid: GridSpec
    labels: LabelSet
    panel: SstPanel
    cubes: tuple = ()
    fuzzy: FuzzyParams = FuzzyParams()
    dry: DrySpellParams = DrySpellParams()

    def __post_init__(self):
        if self.labels.n_pixels != self.grid.n_pixels:
            raise DomainError(f"labels have {self.labels.n_pixels} pixels, grid has {self.grid.n_pixels}")
        missing = [y for y in self.labels.years if y not in self.panel.years]
        if missing:
            raise DomainError(f"no SST data for years {missing}")
        if self.cubes:
            covered = sorted({y for c in self.cubes for y in c.years})
            if covered != sorted(self.labels.years):
                raise DomainError("rainfall cubes and labels cover different years")

    def training_labels(self, train_years) -> LabelSet:
        """Labels for ``train_years``, recomputed from their own rainfall when available."""
        if not self.cubes:
            return self.labels.select_years(train_years)
        train = set(train_years)
        sets = []
        # Observed labels go last so they win on years both sources cover.
        for cube in sorted(self.cubes, key=lambda c: c.source == "observed"):
            years = [y for y in cube.years if y in train]
            if years:
                sub = cube.select_years(years)
                sets.append(label_dataset(sub, self.fuzzy, self.dry))
        return merge_labels(*sets).select_years(train_years)

    @property
    def observed_years(self) -> tuple[int, ...]:
        return tuple(y for y, s in zip(self.labels.years, self.labels.sources) if s == "observed")


@dataclass(frozen=True)
class EvalConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    lambda_grid_onset: tuple = (1e-4,)
    lambda_grid_dryspell: tuple = (1e-3,)
    onset_month: str = "Sep"
    dryspell_month: str = "Oct"
    drop: tuple = ()
    exclude_filled: bool = False
    inner_folds: int = 3
    threads: int = 1


@dataclass
class LoocvResult:
    years: tuple  # folds with an onset forecast
    ds_years: tuple = ()  # folds whose dry-spell chain also completed
    onset_pred: np.ndarray | None = None  # (n_r, P) day-of-year
    onset_obs: np.ndarray | None = None
    onset_clim: np.ndarray | None = None  # training-year mean onset per pixel
    ds_prob: np.ndarray | None = None
    ds_label: np.ndarray | None = None
    ds_obs: np.ndarray | None = None
    p_hat: np.ndarray | None = None  # raw proportion regression output
    prop_obs: np.ndarray | None = None
    threshold: np.ndarray | None = None
    lambda_onset: list = field(default_factory=list)
    lambda_dryspell: list = field(default_factory=list)
    checksums: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    coefficients: list = field(default_factory=list)

    @property
    def n_folds(self) -> int:
        return len(self.years)


def _checksum(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _dryspell_fold(data, tr, te, p_tr, p_te, pred_onset, mask, config: EvalConfig, edges) -> dict:
    grid = data.grid
    lam_d = select_dryspell_lambda(tr.onset, tr.dry_spell, p_tr, grid, edges, config.lambda_grid_dryspell,
                                   config.fit, config.dryspell_month, config.drop, mask, config.inner_folds)
    model = train_dryspell(tr.onset, tr.dry_spell, p_tr, grid, edges, lam_d, config.fit,
                           config.dryspell_month, config.drop, mask)
    # The held-out year's onset column is the onset model's forecast, not the truth.
    X_te = dryspell_design_for(model, p_te, pred_onset[:, None], grid)
    probs = predict_proba(model, X_te)[:, 0]
    Xp_te, yp_te = build_proportion_design(p_te, te.dry_spell)
    p_hat = float(model.proportion.predict(Xp_te)[0])
    T, lab = adaptive_threshold(probs, p_hat)
    return {
        "lambda_dryspell": lam_d,
        "ds_prob": probs,
        "ds_label": lab,
        "ds_obs": te.dry_spell[:, 0],
        "p_hat": p_hat,
        "prop_obs": float(yp_te[0]),
        "threshold": T,
        "ds_coef": model.theta,
    }


def _fold(data: Dataset, year, target: str, config: EvalConfig, edges) -> dict:
    labels, panel, grid = data.labels, data.panel, data.grid
    train_years = [y for y in labels.years if y != year]
    tr = data.training_labels(train_years)
    te = labels.select_years([year])
    p_tr = panel.select_years(train_years)
    p_te = panel.select_years([year])
    mask = ~tr.filled if config.exclude_filled else None
    out = {"checksum": _checksum(tr.onset, tr.dry_spell, tr.filled, p_tr.values, np.array(train_years))}

    lam_o = select_onset_lambda(tr.onset, p_tr, edges, config.lambda_grid_onset, config.fit,
                                config.onset_month, mask, config.inner_folds)
    onset_model = fit_onset(tr.onset, p_tr, edges, lam_o, config.fit, config.onset_month, mask, grid.digest())
    pred_onset = round_days(onset_model.predict_days(p_te)[:, 0])
    out.update(
        lambda_onset=lam_o,
        onset_pred=pred_onset,
        onset_obs=te.onset[:, 0],
        onset_clim=onset_model.onset_mean,
        onset_coef=np.column_stack([onset_model.intercept, onset_model.coef]),
    )
    if target == "onset":
        return out

    try:
        out.update(_dryspell_fold(data, tr, te, p_tr, p_te, pred_onset, mask, config, edges))
    except WamcastError as exc:
        # The onset forecast stands; only this fold's dry-spell verification is lost.
        out["ds_error"] = str(exc)
    return out


def loocv(data: Dataset, target: str = "dryspell", config: EvalConfig = EvalConfig()) -> LoocvResult:
    """Hold out each observed year in turn, refit everything on the rest, forecast it.

    ``target="onset"`` runs the onset model only; ``"dryspell"`` also runs the
    dry-spell chain, which needs the onset forecast for the held-out year.
    """
    if target not in ("onset", "dryspell"):
        raise DomainError(f"unknown target {target!r}")
    years = data.observed_years
    if not years:
        raise DomainError("dataset has no observed years to hold out")
    edges = build_adjacency(data.grid)

    def run(year):
        try:
            return year, _fold(data, year, target, config, edges), None
        except WamcastError as exc:
            return year, None, str(exc)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, years))
    else:
        results = [run(y) for y in years]

    ok = [(y, r) for y, r, err in results if r is not None]
    res = LoocvResult(years=tuple(y for y, _ in ok))
    res.failures = [(y, err) for y, _, err in results if err is not None]
    if not ok:
        return res
    folds = [r for _, r in ok]
    res.onset_pred = np.stack([f["onset_pred"] for f in folds])
    res.onset_obs = np.stack([f["onset_obs"] for f in folds])
    res.onset_clim = np.stack([f["onset_clim"] for f in folds])
    res.lambda_onset = [f["lambda_onset"] for f in folds]
    res.checksums = [f["checksum"] for f in folds]
    res.coefficients = [{"onset": f["onset_coef"], "dryspell": f.get("ds_coef")} for f in folds]
    res.failures += [(y, f"dry-spell: {r['ds_error']}") for y, r in ok if "ds_error" in r]
    res.failures.sort(key=lambda f: f[0])
    ds = [(y, f) for y, f in ok if "ds_prob" in f]
    if target == "dryspell" and ds:
        res.ds_years = tuple(y for y, _ in ds)
        folds = [f for _, f in ds]
        res.ds_prob = np.stack([f["ds_prob"] for f in folds])
        res.ds_label = np.stack([f["ds_label"] for f in folds])
        res.ds_obs = np.stack([f["ds_obs"] for f in folds])
        res.p_hat = np.array([f["p_hat"] for f in folds])
        res.prop_obs = np.array([f["prop_obs"] for f in folds])
        res.threshold = np.array([f["threshold"] for f in folds])
        res.lambda_dryspell = [f["lambda_dryspell"] for f in folds]
    return res


# --- report ------------------------------------------------------------------

def _clean(x):
    """JSON-ready copy: arrays to lists, floats rounded to 6 decimals, NaN/inf to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in np.asarray(x, dtype=object).tolist()] if isinstance(x, np.ndarray) else [_clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return round(x, 6) if np.isfinite(x) else None
    return x


@dataclass
class VerificationReport:
    onset: dict
    dryspell: dict | None
    maps: dict  # name -> per-pixel array
    n_folds: int
    failures: list
    classification_text: str = ""

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def to_dict(self) -> dict:
        return _clean({
            "n_folds": self.n_folds,
            "partial": self.partial,
            "failures": [list(f) for f in self.failures],
            "onset": self.onset,
            "dryspell": self.dryspell,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def verification_report(res: LoocvResult) -> VerificationReport:
    """Every onset and dry-spell metric from one LOOCV run."""
    pred, obs = res.onset_pred.astype(float), res.onset_obs.astype(float)
    tv = temporal_verification(pred, obs, res.onset_clim) if res.n_folds >= 3 else None
    anom = anomaly_correlation(pred, obs) if res.n_folds >= 2 else np.full(res.n_folds, np.nan)
    onset = {
        "mae": mae(pred, obs),
        "rmse_spatial_first": rmse(pred, obs, "spatial_first"),
        "rmse_temporal_first": rmse(pred, obs, "temporal_first"),
        "bias_spatial": dict(zip(map(str, res.years), bias_spatial(pred, obs))),
        "bias_spatial_summary": summarize(bias_spatial(pred, obs)),
        "bias_temporal_summary": summarize(bias_temporal(pred, obs)),
        "spatial_correlation": dict(zip(map(str, res.years), spatial_correlation(pred, obs))),
        "spatial_correlation_summary": summarize(spatial_correlation(pred, obs)),
        "anomaly_correlation": dict(zip(map(str, res.years), anom)),
        "anomaly_correlation_summary": summarize(anom),
        "lambda": res.lambda_onset,
    }
    maps = {"bias_temporal": bias_temporal(pred, obs)}
    if tv is not None:
        onset.update(
            temporal_correlation_summary=summarize(tv.r),
            frac_significant_90=tv.frac_sig_90,
            frac_significant_95=tv.frac_sig_95,
            skill=tv.skill,
        )
        maps.update(temporal_r=tv.r, temporal_p=tv.p)
    maps["mae"] = np.abs(pred - obs).mean(axis=0)

    ds = None
    text = ""
    if res.ds_prob is not None:
        report = classification_report(res.ds_label, res.ds_obs)
        try:
            auc = roc_auc(res.ds_prob, res.ds_obs)
        except DomainError:
            auc = float("nan")
        ds = {
            "classification": report,
            "roc_auc": auc,
            "proportion_mae": float(np.mean(np.abs(res.p_hat - res.prop_obs))),
            "n_folds": len(res.ds_years),
            "p_hat": dict(zip(map(str, res.ds_years), res.p_hat)),
            "threshold": dict(zip(map(str, res.ds_years), res.threshold)),
            "lambda": res.lambda_dryspell,
        }
        text = format_classification_report(report)
        maps["dryspell_hit_rate"] = (res.ds_label == res.ds_obs).mean(axis=0)
    return VerificationReport(onset=onset, dryspell=ds, maps=maps, n_folds=res.n_folds,
                              failures=list(res.failures), classification_text=text)


# --- exploratory statistics ----------------------------------------------------

def eda_report(cube_obs: DailyPrecipCube | None, cube_sim: DailyPrecipCube | None, labels: LabelSet,
               panel: SstPanel | None) -> dict:
    """Dataset differences, onset climatology, dry-spell frequency and best SST correlate.

    Returns a dict of scalars and per-pixel maps.  Dataset differences use the
    years the two cubes share (observed minus simulated).
    """
    out = {"scalars": {}, "maps": {}}
    if cube_obs is not None and cube_sim is not None:
        if cube_obs.n_pixels != cube_sim.n_pixels:
            raise DomainError("observed and simulated cubes are on different grids")
        common = [y for y in cube_obs.years if y in cube_sim.years]
        if not common:
            raise DomainError("observed and simulated cubes share no years")
        diff = cube_obs.select_years(common).values - cube_sim.select_years(common).values
        out["maps"]["mean_daily_difference"] = diff.mean(axis=(0, 1))
        out["maps"]["mean_abs_daily_difference"] = np.abs(diff).mean(axis=(0, 1))
        out["scalars"]["mean_daily_difference"] = float(diff.mean())
        out["scalars"]["mean_abs_daily_difference"] = float(np.abs(diff).mean())
        out["scalars"]["difference_years"] = len(common)
    onset = labels.onset.astype(float)
    out["maps"]["onset_mean"] = onset.mean(axis=1)
    out["maps"]["onset_std"] = onset.std(axis=1, ddof=1) if labels.n_years > 1 else np.zeros(labels.n_pixels)
    out["maps"]["dryspell_frequency"] = labels.dry_spell.mean(axis=1)
    out["scalars"]["dryspell_area_fraction"] = float(labels.dry_spell.mean())
    out["scalars"]["fill_count"] = labels.fill_count
    if panel is not None:
        X = panel.select_years(labels.years).flatten()
        r = correlation_matrix(onset, X)
        score = np.where(np.isnan(r), -1.0, np.abs(r))
        best = np.argmax(score, axis=1)
        out["maps"]["max_abs_correlation"] = np.take_along_axis(r, best[:, None], axis=1)[:, 0]
        out["maps"]["max_correlation_column"] = np.array([SST_COLUMNS[b] for b in best], dtype=object)
        out["scalars"]["mean_abs_max_correlation"] = float(np.nanmean(np.abs(out["maps"]["max_abs_correlation"])))
    return out
