"""Command-line interface: ``wamcast label|train|predict|evaluate|eda|synth``.

Settings come from defaults, then an optional flat ``key = value`` config file
(``--config``), then command-line flags.  Config keys are flag names with
dashes or underscores (``lambda-grid`` or ``lambda_grid``).

Exit codes: 0 success, 2 input or parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import io as wio
from .errors import (
    DegenerateCorrelationError,
    DomainError,
    FitError,
    ParseError,
    RankDeficiencyError,
    UnrecoverableYearError,
    WamcastError,
)
from .grid import GridSpec, build_adjacency
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
    DrySpellModel,
    OnsetModel,
)
from .verify import Dataset, EvalConfig, eda_report, loocv, verification_report

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (FitError, RankDeficiencyError, DegenerateCorrelationError, FloatingPointError)


def _floats(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("lambda grid must not be empty")
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("lambda values must be non-negative")
    return vals


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _window(text) -> int:
    v = int(text)
    if v not in (20, 30):
        raise argparse.ArgumentTypeError("dry-spell window must be 20 or 30")
    return v


def _positive_int(text) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand; each may also be set from the config file."""
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("inputs and outputs")
    g.add_argument("--config", help="flat key = value settings file")
    g.add_argument("--out", default="out", help="output directory (default: out)")
    g.add_argument("--grid", help="grid manifest JSON")
    g.add_argument("--precip", help="observed precipitation CSV")
    g.add_argument("--precip-sim", help="simulated precipitation CSV")
    g.add_argument("--sst", help="SST CSV (monsoon years)")
    g.add_argument("--labels", help="labels CSV written by 'label'")
    g.add_argument("--model", help="model JSON written by 'train'")
    g.add_argument("--year", type=int, help="monsoon year to forecast")
    g = p.add_argument_group("labelling")
    g.add_argument("--dryspell-window", type=_window, default=30, help="days after onset searched for a dry spell")
    for name, default in (("l1", 18.0), ("u1", 25.0), ("l2", 1.0), ("u2", 3.0), ("gamma-t", 0.5), ("wet-day-min", 1.0)):
        g.add_argument(f"--{name}", type=float, default=default)
    g = p.add_argument_group("training")
    g.add_argument("--target", choices=("onset", "dryspell"), default="onset")
    g.add_argument("--lambda-grid", type=_floats, default=(1e-4,), help="onset lambda candidates, comma-separated")
    g.add_argument("--lambda-grid-dryspell", type=_floats, default=(1e-3,), help="dry-spell lambda candidates")
    g.add_argument("--seed", type=int, default=None,
                   help="mini-batch seed (default 0); synthetic-data seed for 'synth' (default 42)")
    g.add_argument("--threads", type=_positive_int, default=1)
    g.add_argument("--exclude-filled", type=_bool, default=False, help="drop filled onsets from training")
    g.add_argument("--drop", type=_names, default=(), help="dry-spell predictors to leave out, e.g. lat,lon")
    g.add_argument("--inner-folds", type=_positive_int, default=3)
    defaults = FitConfig()
    g.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    g.add_argument("--beta1", type=float, default=defaults.beta1)
    g.add_argument("--beta2", type=float, default=defaults.beta2)
    g.add_argument("--epochs", type=_positive_int, default=defaults.epochs)
    g.add_argument("--batch-size", type=_positive_int, default=None)
    g.add_argument("--lr-decay", type=float, default=defaults.lr_decay)
    g = p.add_argument_group("synthetic data")
    g.add_argument("--years", type=_positive_int, default=30)
    g.add_argument("--first-year", type=int, default=1981)
    g.add_argument("--n-simulated", type=int, default=0)
    g.add_argument("--rows", type=_positive_int, default=8)
    g.add_argument("--cols", type=_positive_int, default=28)
    g.add_argument("--noise-std", type=float, default=10.0)
    g.add_argument("--showers", type=_bool, default=True)
    return p


COMMANDS = {
    "label": "label onsets and dry spells from precipitation",
    "train": "fit an onset or dry-spell model",
    "predict": "forecast one year with a saved model",
    "evaluate": "leave-one-year-out verification of both models",
    "eda": "exploratory statistics of the inputs",
    "synth": "write a synthetic dataset with known truth",
}


def _build():
    parser = argparse.ArgumentParser(prog="wamcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    shared = _options()
    subparsers = {name: sub.add_parser(name, parents=[shared], help=text, description=text)
                  for name, text in COMMANDS.items()}
    dests = {a.option_strings[0][2:]: a.dest for a in shared._actions if a.option_strings}
    return parser, subparsers, dests


def build_parser() -> argparse.ArgumentParser:
    return _build()[0]


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Keys are normalised to dashes."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise ParseError(f"{path}: cannot read config file") from None
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}: line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def parse_args(argv) -> argparse.Namespace:
    parser, subparsers, dests = _build()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = read_config(known.config)
        unknown = sorted(set(cfg) - set(dests) - {"config"})
        if unknown:
            raise ParseError(f"{known.config}: unknown settings {unknown}")
        # String defaults go through each option's type conversion, so config
        # values are validated exactly like flags.
        for p in subparsers.values():
            p.set_defaults(**{dests[k]: v for k, v in cfg.items() if k != "config"})
    return parser.parse_args(argv)


# --- helpers -----------------------------------------------------------------

def _need(args, *names):
    for n in names:
        if getattr(args, n.replace("-", "_")) is None:
            raise ParseError(f"--{n} is required for '{args.command}'")


def _fit_config(args) -> FitConfig:
    return FitConfig(
        learning_rate=args.learning_rate, beta1=args.beta1, beta2=args.beta2, epochs=args.epochs,
        batch_size=args.batch_size, seed=FitConfig.seed if args.seed is None else args.seed, lr_decay=args.lr_decay,
    )


def _fuzzy(args) -> FuzzyParams:
    return FuzzyParams(l1=args.l1, u1=args.u1, l2=args.l2, u2=args.u2, gamma_t=args.gamma_t, wet_day_min=args.wet_day_min)


class _Inputs:
    """Lazily loaded inputs plus their checksums for output headers."""

    def __init__(self, args):
        self.args = args
        self.checksums = {}
        self._grid = None

    def _track(self, name, path):
        if not Path(path).is_file():
            raise ParseError(f"{path}: file not found")
        self.checksums[name] = wio.file_checksum(path)

    def grid(self) -> GridSpec:
        if self._grid is None:
            _need(self.args, "grid")
            self._track("grid", self.args.grid)
            self._grid = wio.read_grid(self.args.grid)
        return self._grid

    def cubes(self) -> dict:
        out = {}
        if self.args.precip_sim:
            self._track("precip_sim", self.args.precip_sim)
            out["simulated"] = wio.read_precip(self.args.precip_sim, self.grid(), "simulated")
        if self.args.precip:
            self._track("precip", self.args.precip)
            out["observed"] = wio.read_precip(self.args.precip, self.grid(), "observed")
        if not out:
            raise ParseError(f"--precip or --precip-sim is required for '{self.args.command}'")
        return out

    def sst(self):
        _need(self.args, "sst")
        self._track("sst", self.args.sst)
        return wio.read_sst(self.args.sst)

    def labels(self) -> LabelSet:
        """Labels from ``--labels`` if given, otherwise computed from precipitation."""
        if self.args.labels:
            self._track("labels", self.args.labels)
            labels = wio.read_labels(self.args.labels)
            if labels.n_pixels != self.grid().n_pixels:
                raise DomainError(f"labels cover {labels.n_pixels} pixels, grid has {self.grid().n_pixels}")
            return labels
        return _label_cubes(self.cubes(), self.args)

    def header(self, kind, **meta):
        return wio.make_header(kind, self.checksums, **meta)


def _label_cubes(cubes: dict, args) -> LabelSet:
    ds = DrySpellParams(window=args.dryspell_window)
    fuzzy = _fuzzy(args)
    # Observed labels are merged last so they win on years both sources cover.
    sets = [label_dataset(cubes[s], fuzzy, ds) for s in ("simulated", "observed") if s in cubes]
    return merge_labels(*sets)


def _eval_config(args) -> EvalConfig:
    return EvalConfig(
        fit=_fit_config(args),
        lambda_grid_onset=args.lambda_grid,
        lambda_grid_dryspell=args.lambda_grid_dryspell,
        drop=args.drop,
        exclude_filled=args.exclude_filled,
        inner_folds=args.inner_folds,
        threads=args.threads,
    )


def _aligned(labels: LabelSet, panel):
    missing = [y for y in labels.years if y not in panel.years]
    if missing:
        raise DomainError(f"SST file has no data for labelled years {missing}")
    return panel.select_years(labels.years)


def _log(msg):
    print(msg, file=sys.stderr)


# --- commands -----------------------------------------------------------------

def cmd_label(args) -> int:
    if args.labels:
        raise ParseError("'label' reads precipitation; drop --labels")
    inp = _Inputs(args)
    labels = _label_cubes(inp.cubes(), args)
    out = Path(args.out) / "labels.csv"
    wio.write_labels(out, labels, inp.header("labels", dryspell_window=args.dryspell_window))
    per_year = labels.filled.sum(axis=0)
    print(f"labelled {labels.n_pixels} pixels x {labels.n_years} years; {labels.fill_count} onsets filled")
    for y, n in zip(labels.years, per_year):
        if n:
            print(f"  {y}: {int(n)} filled")
    print(f"wrote {out}")
    return EXIT_OK


def _train_onset(args, labels, panel, grid, edges) -> OnsetModel:
    config = _fit_config(args)
    mask = ~labels.filled if args.exclude_filled else None
    lam = select_onset_lambda(labels.onset, panel, edges, args.lambda_grid, config, mask=mask, n_folds=args.inner_folds)
    return fit_onset(labels.onset, panel, edges, lam, config, mask=mask, grid_digest=grid.digest())


def cmd_train(args) -> int:
    inp = _Inputs(args)
    grid = inp.grid()
    labels = inp.labels()
    panel = _aligned(labels, inp.sst())
    edges = build_adjacency(grid)
    onset_model = _train_onset(args, labels, panel, grid, edges)
    model = onset_model
    if args.target == "dryspell":
        config = _fit_config(args)
        mask = ~labels.filled if args.exclude_filled else None
        lam = select_dryspell_lambda(labels.onset, labels.dry_spell, panel, grid, edges, args.lambda_grid_dryspell,
                                     config, drop=args.drop, mask=mask, n_folds=args.inner_folds)
        model = train_dryspell(labels.onset, labels.dry_spell, panel, grid, edges, lam, config, drop=args.drop, mask=mask)
        model.onset_model = onset_model
        if model.separable_pixels:
            _log(f"warning: {len(model.separable_pixels)} pixels are perfectly separable")
    out = Path(args.out) / f"model_{args.target}.json"
    wio.save_model(out, model, inp.header(f"model-{args.target}", training_years=",".join(map(str, labels.years))))
    print(f"trained {args.target} model (lambda={model.lam:g}, converged={model.converged}); wrote {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    _need(args, "model", "year")
    inp = _Inputs(args)
    inp._track("model", args.model)
    model = wio.load_model(args.model)
    panel = inp.sst().select_years([args.year])
    onset_model = model if isinstance(model, OnsetModel) else model.onset_model
    if onset_model is None:
        raise ParseError(f"{args.model}: dry-spell model has no embedded onset model")
    onset = round_days(onset_model.predict_days(panel)[:, 0])
    df = pd.DataFrame({"pixel_id": np.arange(onset.size), "onset_pred_doy": onset})
    if isinstance(model, DrySpellModel):
        grid = inp.grid()
        if model.grid_digest and model.grid_digest != grid.digest():
            raise DomainError("grid manifest does not match the grid the model was trained on")
        probs = predict_proba(model, dryspell_design_for(model, panel, onset[:, None], grid))[:, 0]
        x = np.array([[panel.column(r, m)[0] for r, m in model.proportion.columns]])
        p_hat = float(model.proportion.predict(x)[0])
        T, lab = adaptive_threshold(probs, p_hat)
        df["probability"] = probs
        df["threshold"] = T
        df["label"] = lab
        df["p_hat"] = p_hat
    out = Path(args.out) / f"predictions_{args.year}.csv"
    wio.write_csv(out, df, inp.header("predictions", year=args.year), float_format="%.9g")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    inp = _Inputs(args)
    grid = inp.grid()
    cubes = inp.cubes() if (args.precip or args.precip_sim or not args.labels) else {}
    labels = inp.labels() if args.labels else _label_cubes(cubes, args)
    panel = _aligned(labels, inp.sst())
    data = Dataset(grid, labels, panel, tuple(cubes.values()), _fuzzy(args), DrySpellParams(window=args.dryspell_window))
    res = loocv(data, "dryspell", _eval_config(args))
    if res.n_folds == 0:
        for y, err in res.failures:
            _log(f"fold {y} failed: {err}")
        raise FitError("every LOOCV fold failed")
    report = verification_report(res)
    out = Path(args.out)
    header = inp.header("report", folds=res.n_folds)
    wio.write_json(out / "report.json", {"report": report.to_dict()}, header)
    wio.write_text(out / "classification_report.txt", report.classification_text, inp.header("classification-report"))
    for name, values in sorted(report.maps.items()):
        wio.write_map(out / "maps" / f"{name}.csv", grid, values, inp.header(f"map-{name}"))
    for y, err in res.failures:
        _log(f"fold {y} failed: {err}")
    o = report.onset
    auc = report.dryspell["roc_auc"] if report.dryspell else float("nan")
    print(f"{res.n_folds} folds{' (partial)' if report.partial else ''}; onset MAE {o['mae']:.2f} days, "
          f"mean temporal r {o.get('temporal_correlation_summary', {}).get('mean', float('nan')):.3f}; "
          f"dry-spell ROC-AUC {auc:.3f}")
    print(report.classification_text, end="")
    print(f"wrote {out / 'report.json'}")
    return EXIT_OK


def cmd_eda(args) -> int:
    inp = _Inputs(args)
    grid = inp.grid()
    cubes = inp.cubes()
    labels = inp.labels() if args.labels else _label_cubes(cubes, args)
    panel = _aligned(labels, inp.sst())
    eda = eda_report(cubes.get("observed"), cubes.get("simulated"), labels, panel)
    out = Path(args.out)
    scalars = pd.DataFrame({"name": list(eda["scalars"]), "value": [float(v) for v in eda["scalars"].values()]})
    scalars = scalars.sort_values("name", kind="stable")
    wio.write_csv(out / "eda_summary.csv", scalars, inp.header("eda-summary"), float_format="%.6f")
    for name, values in sorted(eda["maps"].items()):
        wio.write_map(out / "eda" / f"{name}.csv", grid, values, inp.header(f"eda-{name}"))
    print(f"wrote {len(eda['maps'])} maps and eda_summary.csv to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import SynthConfig, generate

    seed = SynthConfig.seed if args.seed is None else args.seed
    config = SynthConfig(
        grid=GridSpec(8.0, -12.0, args.rows, args.cols, 1.0),
        years=args.years,
        first_year=args.first_year,
        n_simulated=args.n_simulated,
        noise_std=args.noise_std,
        showers=args.showers,
        seed=seed,
        fuzzy=_fuzzy(args),
        dry=DrySpellParams(window=args.dryspell_window),
    )
    cubes, panel, truth = generate(config)
    out = Path(args.out)
    meta = {"seed": seed, "noise_std": args.noise_std, "showers": int(args.showers)}
    wio.write_grid(out / "grid.json", config.grid, wio.make_header("grid", **meta))
    names = {"observed": "precip_observed.csv", "simulated": "precip_simulated.csv"}
    for source, cube in cubes.items():
        wio.write_precip(out / names[source], cube, wio.make_header("precip", **meta))
    wio.write_sst(out / "sst.csv", panel, wio.make_header("sst", **meta))
    wio.write_truth(out / "truth.csv", truth, wio.make_header("truth", **meta))
    print(f"wrote synthetic dataset ({config.grid.n_pixels} pixels x {config.years} years) to {out}")
    return EXIT_OK


HANDLERS = {
    "label": cmd_label,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "eda": cmd_eda,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        with np.errstate(over="ignore", under="ignore"):
            return HANDLERS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    except NUMERIC_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_NUMERIC
    except (ParseError, DomainError, UnrecoverableYearError, WamcastError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
