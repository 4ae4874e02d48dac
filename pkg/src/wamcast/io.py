"""File formats: grid manifest, precipitation/SST/label CSVs, model JSON and outputs.

Every file written here starts with a provenance header.  CSVs carry it as
``#`` comment lines (format name, version, sha256 of each input); JSON files
carry the same information under a top-level ``"header"`` key.  Readers skip
both.  Output is UTF-8 with LF line endings and is byte-stable for identical
inputs.
"""

from __future__ import annotations

import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ParseError
from .features import MONTH_NUMBERS, MONTHS, REGIONS, ColumnScaler, PredictorSelection, SstPanel
from .grid import DAYS_PER_YEAR, DailyPrecipCube, GridSpec
from .labeling import LabelSet
from .models import DrySpellModel, FitConfig, OnsetModel, ProportionModel

FORMAT_VERSION = 1
LEAP_DAY_DOY = 60  # Feb 29 in a 366-day year

PRECIP_COLUMNS = ("pixel_id", "year", "doy", "prcp_mm")
SST_CSV_COLUMNS = ("region", "year", "month", "sst_c")
LABEL_COLUMNS = ("pixel_id", "year", "search_start_doy", "onset_doy", "filled", "dry_spell", "source")
TRUTH_COLUMNS = ("pixel_id", "year", "planted_onset", "planted_dryspell")


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def make_header(kind: str, inputs: dict | None = None, **meta) -> dict:
    """Provenance record: format name and version, input checksums, extra settings."""
    return {
        "format": kind,
        "version": FORMAT_VERSION,
        "inputs": {str(k): v for k, v in sorted((inputs or {}).items())},
        **{k: meta[k] for k in sorted(meta)},
    }


def _comment_block(header: dict) -> str:
    lines = [f"# wamcast {header['format']} v{header['version']}"]
    for name, digest in header["inputs"].items():
        lines.append(f"# input {name} sha256={digest}")
    for k, v in header.items():
        if k not in ("format", "version", "inputs"):
            lines.append(f"# {k}={v}")
    return "\n".join(lines) + "\n"


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(path, df: pd.DataFrame, header: dict, float_format: str = "%.6f") -> None:
    buf = _io.StringIO()
    buf.write(_comment_block(header))
    df.to_csv(buf, index=False, float_format=float_format, lineterminator="\n")
    _ensure_parent(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def write_json(path, payload: dict, header: dict) -> None:
    text = json.dumps({"header": header, **payload}, sort_keys=True, indent=2) + "\n"
    _ensure_parent(path).write_text(text, encoding="utf-8", newline="\n")


def write_text(path, text: str, header: dict) -> None:
    _ensure_parent(path).write_text(_comment_block(header) + text, encoding="utf-8", newline="\n")


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: cannot read ({exc})") from None


class _Lines:
    """Maps data-row positions to 1-based file line numbers, built on first use."""

    def __init__(self, text: str):
        self._text = text
        self._map = None

    def __getitem__(self, i):
        if self._map is None:
            rows = [n + 1 for n, ln in enumerate(self._text.split("\n")) if ln.strip() and not ln.lstrip().startswith("#")]
            self._map = np.asarray(rows[1:])  # skip the column header
        return self._map[i]


def read_csv(path, columns) -> tuple[pd.DataFrame, _Lines]:
    """Load a comment-headed CSV and check its columns.

    Also returns a lookup from data-row index to file line number so errors
    can point at the offending line.
    """
    text = _read_text(path)
    try:
        df = pd.read_csv(_io.StringIO(text), comment="#", skip_blank_lines=True, keep_default_na=False,
                         skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    return df, _Lines(text)


def _numeric(df, col, lines, path, integer=False) -> np.ndarray:
    s = df[col]
    if pd.api.types.is_numeric_dtype(s) and not pd.api.types.is_bool_dtype(s):
        vals = s.to_numpy(dtype=float)
    else:
        vals = pd.to_numeric(s.astype(str).str.strip(), errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(vals)
    if integer:
        bad |= np.isfinite(vals) & (vals != np.round(vals))
    if bad.any():
        i = int(np.argmax(bad))
        raise ParseError(f"{path}: line {lines[i]}: bad {col} value {s.iloc[i]!r}")
    return vals.astype(np.int64) if integer else vals


def _strings(df, col) -> np.ndarray:
    return df[col].astype(str).str.strip().to_numpy()


# --- grid manifest --------------------------------------------------------------

def read_grid(path) -> GridSpec:
    try:
        d = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    keys = ("lat_min", "lon_min", "n_rows", "n_cols", "resolution")
    if not isinstance(d, dict) or any(k not in d for k in keys):
        raise ParseError(f"{path}: grid manifest needs keys {list(keys)}")
    return GridSpec.from_dict({k: d[k] for k in keys})


def write_grid(path, spec: GridSpec, header: dict) -> None:
    write_json(path, spec.to_dict(), header)


# --- precipitation --------------------------------------------------------------

def read_precip(path, grid: GridSpec, source: str = "observed") -> DailyPrecipCube:
    """Dense ``pixel_id, year, doy, prcp_mm`` rows into a cube.

    Years with 366 days lose day 60 (Feb 29) and later days shift down by one.
    """
    df, lines = read_csv(path, PRECIP_COLUMNS)
    pix = _numeric(df, "pixel_id", lines, path, integer=True)
    year = _numeric(df, "year", lines, path, integer=True)
    doy = _numeric(df, "doy", lines, path, integer=True)
    val = _numeric(df, "prcp_mm", lines, path)
    for name, arr, lo, hi in (("pixel_id", pix, 0, grid.n_pixels - 1), ("doy", doy, 1, 366)):
        bad = (arr < lo) | (arr > hi)
        if bad.any():
            i = int(np.argmax(bad))
            raise ParseError(f"{path}: line {lines[i]}: {name} {arr[i]} outside {lo}..{hi}")
    if np.any(val < 0):
        i = int(np.argmax(val < 0))
        raise ParseError(f"{path}: line {lines[i]}: negative precipitation")
    years = np.unique(year)
    if years.size == 0:
        raise ParseError(f"{path}: no data rows")
    yi = np.searchsorted(years, year)
    n_days = np.zeros(years.size, dtype=np.int64)
    np.maximum.at(n_days, yi, doy)
    leap = n_days == 366
    drop = leap[yi] & (doy == LEAP_DAY_DOY)
    day = doy - (leap[yi] & (doy > LEAP_DAY_DOY))
    keep = ~drop
    pix, yi, day, val = pix[keep], yi[keep], day[keep], val[keep]
    kept = np.nonzero(keep)[0]

    cube = np.full((years.size, DAYS_PER_YEAR, grid.n_pixels), np.nan)
    flat = (yi * DAYS_PER_YEAR + (day - 1)) * grid.n_pixels + pix
    order = np.argsort(flat, kind="stable")
    dup = np.nonzero(np.diff(flat[order]) == 0)[0]
    if dup.size:
        i = order[dup[0] + 1]
        raise ParseError(f"{path}: line {lines[kept[i]]}: duplicate row for pixel {pix[i]}, year {years[yi[i]]}, doy {day[i]}")
    cube.reshape(-1)[flat] = val
    if np.isnan(cube).any():
        y, d, p = np.argwhere(np.isnan(cube))[0]
        n_missing = int(np.isnan(cube).sum())
        raise ParseError(f"{path}: {n_missing} missing rows, first at pixel {p}, year {years[y]}, doy {d + 1}")
    return DailyPrecipCube(cube, tuple(int(y) for y in years), source)


def write_precip(path, cube: DailyPrecipCube, header: dict) -> None:
    Y, D, P = cube.values.shape
    pix, yi, day = np.meshgrid(np.arange(P), np.arange(Y), np.arange(1, D + 1), indexing="ij")
    df = pd.DataFrame({
        "pixel_id": pix.ravel(),
        "year": np.asarray(cube.years)[yi.ravel()],
        "doy": day.ravel(),
        "prcp_mm": np.transpose(cube.values, (2, 0, 1)).ravel(),
    })
    write_csv(path, df, header, float_format="%.4f")


# --- SST --------------------------------------------------------------------

_MONTH_LOOKUP = {**{m.lower(): m for m in MONTHS}, **{str(n): m for m, n in MONTH_NUMBERS.items()}}


def read_sst(path) -> SstPanel:
    """``region, year, month, sst_c`` rows (monsoon years) into an :class:`SstPanel`.

    Months may be given as names (``Sep``) or numbers (``9``).  Every year must
    have all 42 region-month values.
    """
    df, lines = read_csv(path, SST_CSV_COLUMNS)
    year = _numeric(df, "year", lines, path, integer=True)
    val = _numeric(df, "sst_c", lines, path)
    r_idx = np.empty(len(df), dtype=np.int64)
    m_idx = np.empty(len(df), dtype=np.int64)
    for i, (reg, mon) in enumerate(zip(_strings(df, "region"), _strings(df, "month"))):
        if reg not in REGIONS:
            raise ParseError(f"{path}: line {lines[i]}: unknown region {reg!r}")
        m = _MONTH_LOOKUP.get(mon.lower().lstrip("0") if mon.isdigit() else mon.lower())
        if m is None:
            raise ParseError(f"{path}: line {lines[i]}: month {mon!r} is not one of {list(MONTHS)}")
        r_idx[i], m_idx[i] = REGIONS.index(reg), MONTHS.index(m)
    years = np.unique(year)
    if years.size == 0:
        raise ParseError(f"{path}: no data rows")
    yi = np.searchsorted(years, year)
    panel = np.full((years.size, len(REGIONS), len(MONTHS)), np.nan)
    seen = np.zeros(panel.shape, dtype=bool)
    for i in range(len(df)):
        key = (yi[i], r_idx[i], m_idx[i])
        if seen[key]:
            raise ParseError(f"{path}: line {lines[i]}: duplicate {REGIONS[r_idx[i]]} {MONTHS[m_idx[i]]} for {year[i]}")
        seen[key] = True
        panel[key] = val[i]
    if not seen.all():
        y, r, m = np.argwhere(~seen)[0]
        raise ParseError(f"{path}: missing {REGIONS[r]} {MONTHS[m]} for year {years[y]}")
    return SstPanel(panel, tuple(int(y) for y in years))


def write_sst(path, panel: SstPanel, header: dict) -> None:
    yi, r, m = np.meshgrid(np.arange(panel.n_years), np.arange(len(REGIONS)), np.arange(len(MONTHS)), indexing="ij")
    df = pd.DataFrame({
        "region": np.asarray(REGIONS)[r.ravel()],
        "year": np.asarray(panel.years)[yi.ravel()],
        "month": np.asarray(MONTHS)[m.ravel()],
        "sst_c": panel.values.ravel(),
    })
    write_csv(path, df, header, float_format="%.6f")


def write_features(path, panel: SstPanel, header: dict) -> None:
    """The flattened 42-column predictor matrix with named columns, one row per year."""
    from .features import SST_COLUMNS

    df = pd.DataFrame(panel.flatten(), columns=list(SST_COLUMNS))
    df.insert(0, "year", panel.years)
    write_csv(path, df, header)


# --- labels -----------------------------------------------------------------

def write_labels(path, labels: LabelSet, header: dict) -> None:
    P, Y = labels.onset.shape
    df = pd.DataFrame({
        "pixel_id": np.repeat(np.arange(P), Y),
        "year": np.tile(labels.years, P),
        "search_start_doy": labels.search_start.ravel(),
        "onset_doy": labels.onset.ravel(),
        "filled": labels.filled.astype(np.int64).ravel(),
        "dry_spell": labels.dry_spell.ravel(),
        "source": np.tile(np.asarray(labels.sources, dtype=object), P),
    })
    write_csv(path, df, header)


def read_labels(path) -> LabelSet:
    df, lines = read_csv(path, LABEL_COLUMNS[:6])
    cols = {c: _numeric(df, c, lines, path, integer=True) for c in LABEL_COLUMNS[:6]}
    source = _strings(df, "source") if "source" in df.columns else np.full(len(df), "observed")
    pix, year = cols["pixel_id"], cols["year"]
    years = np.unique(year)
    P = int(pix.max()) + 1 if pix.size else 0
    if P == 0 or len(df) != P * years.size:
        raise ParseError(f"{path}: expected one row per pixel and year ({P} x {years.size}), got {len(df)}")
    order = np.lexsort((year, pix))
    if not np.array_equal(pix[order], np.repeat(np.arange(P), years.size)) or not np.array_equal(
        year[order], np.tile(years, P)
    ):
        raise ParseError(f"{path}: pixel/year rows are incomplete or duplicated")

    def grid(c):
        return c[order].reshape(P, years.size)

    src = grid(source)
    if np.any(src != src[0]):
        raise ParseError(f"{path}: a year's source differs between pixels")
    for name in ("filled", "dry_spell"):
        bad = ~np.isin(cols[name], (0, 1)) if name == "filled" else ~np.isin(cols[name], (-1, 0, 1))
        if bad.any():
            i = int(np.argmax(bad))
            raise ParseError(f"{path}: line {lines[i]}: bad {name} value")
    return LabelSet(
        years=tuple(int(y) for y in years),
        search_start=grid(cols["search_start_doy"]),
        onset=grid(cols["onset_doy"]),
        filled=grid(cols["filled"]).astype(bool),
        dry_spell=grid(cols["dry_spell"]),
        sources=tuple(str(s) for s in src[0]),
    )


def write_truth(path, truth, header: dict) -> None:
    P, Y = truth.onset.shape
    df = pd.DataFrame({
        "pixel_id": np.repeat(np.arange(P), Y),
        "year": np.tile(truth.years, P),
        "planted_onset": truth.onset.ravel(),
        "planted_dryspell": truth.dry_spell.ravel(),
    })
    write_csv(path, df, header)


def write_map(path, grid: GridSpec, values, header: dict) -> None:
    """Per-pixel map: ``pixel_id, lat, lon, value``."""
    lat, lon = grid.pixel_lat_lon()
    df = pd.DataFrame({"pixel_id": np.arange(grid.n_pixels), "lat": lat, "lon": lon, "value": values})
    write_csv(path, df, header)


# --- models -----------------------------------------------------------------

def _arr(a) -> list:
    return np.asarray(a).tolist()


def onset_model_to_dict(m: OnsetModel) -> dict:
    return {
        "kind": "onset",
        "lambda": m.lam,
        "month": m.month,
        "grid_digest": m.grid_digest,
        "fit_config": m.config.to_dict(),
        "predictor_columns": _arr(m.selection.columns),
        "predictor_correlations": _arr(m.selection.correlations),
        "coef": _arr(m.coef),
        "intercept": _arr(m.intercept),
        "onset_mean": _arr(m.onset_mean),
        "onset_std": _arr(m.onset_std),
        "residual_variance": _arr(m.residual_variance),
        "converged": bool(m.converged),
        "final_loss": float(m.history[-1]) if len(m.history) else None,
    }


def onset_model_from_dict(d: dict) -> OnsetModel:
    return OnsetModel(
        selection=PredictorSelection(
            columns=np.asarray(d["predictor_columns"], dtype=np.int64),
            correlations=np.asarray(d["predictor_correlations"], dtype=float),
        ),
        coef=np.asarray(d["coef"], dtype=float),
        intercept=np.asarray(d["intercept"], dtype=float),
        onset_mean=np.asarray(d["onset_mean"], dtype=float),
        onset_std=np.asarray(d["onset_std"], dtype=float),
        residual_variance=np.asarray(d["residual_variance"], dtype=float),
        lam=float(d["lambda"]),
        month=d["month"],
        config=FitConfig.from_dict(d["fit_config"]),
        grid_digest=d["grid_digest"],
        converged=bool(d["converged"]),
    )


def dryspell_model_to_dict(m: DrySpellModel) -> dict:
    out = {
        "kind": "dryspell",
        "lambda": m.lam,
        "month": m.month,
        "regions": list(m.regions),
        "columns": list(m.columns),
        "grid_digest": m.grid_digest,
        "fit_config": m.config.to_dict(),
        "theta": _arr(m.theta),
        "scaler_mean": _arr(m.scaler.mean),
        "scaler_std": _arr(m.scaler.std),
        "threshold": m.threshold,
        "converged": bool(m.converged),
        "separable_pixels": list(m.separable_pixels),
        "final_loss": float(m.history[-1]) if len(m.history) else None,
        "proportion": None,
        "onset_model": None,
    }
    if m.proportion is not None:
        out["proportion"] = {
            "intercept": m.proportion.intercept,
            "coef": _arr(m.proportion.coef),
            "columns": [list(c) for c in m.proportion.columns],
        }
    if m.onset_model is not None:
        out["onset_model"] = onset_model_to_dict(m.onset_model)
    return out


def dryspell_model_from_dict(d: dict) -> DrySpellModel:
    prop = d.get("proportion")
    return DrySpellModel(
        theta=np.asarray(d["theta"], dtype=float),
        lam=float(d["lambda"]),
        columns=tuple(d["columns"]),
        scaler=ColumnScaler(mean=np.asarray(d["scaler_mean"], dtype=float), std=np.asarray(d["scaler_std"], dtype=float)),
        proportion=None if prop is None else ProportionModel(
            intercept=float(prop["intercept"]),
            coef=np.asarray(prop["coef"], dtype=float),
            columns=tuple(tuple(c) for c in prop["columns"]),
        ),
        month=d["month"],
        regions=tuple(d["regions"]),
        threshold=d["threshold"],
        config=FitConfig.from_dict(d["fit_config"]),
        grid_digest=d["grid_digest"],
        converged=bool(d["converged"]),
        separable_pixels=tuple(d["separable_pixels"]),
        onset_model=None if d.get("onset_model") is None else onset_model_from_dict(d["onset_model"]),
    )


def save_model(path, model, header: dict) -> None:
    if isinstance(model, OnsetModel):
        payload = onset_model_to_dict(model)
    elif isinstance(model, DrySpellModel):
        payload = dryspell_model_to_dict(model)
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    write_json(path, {"model": payload}, header)


def load_model(path):
    """An :class:`OnsetModel` or :class:`DrySpellModel` from a model file."""
    try:
        d = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    version = d.get("header", {}).get("version")
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: model format version {version}, expected {FORMAT_VERSION}")
    try:
        m = d["model"]
        if m["kind"] == "onset":
            return onset_model_from_dict(m)
        if m["kind"] == "dryspell":
            return dryspell_model_from_dict(m)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed model ({exc})") from None
    raise ParseError(f"{path}: unknown model kind {m.get('kind')!r}")
