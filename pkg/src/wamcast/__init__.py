"""West African monsoon onset and dry-spell labelling, forecasting and verification."""

from .errors import (
    DegenerateCorrelationError,
    DomainError,
    FitError,
    ParseError,
    RankDeficiencyError,
    UnrecoverableYearError,
    WamcastError,
)
from .grid import DailyPrecipCube, GridSpec, build_adjacency, regrid_bilinear
from .labeling import DrySpellParams, FuzzyParams, LabelSet, label_dataset
from .features import SstPanel, select_predictors
from .models import FitConfig, fit_onset, train_dryspell
from .verify import Dataset, EvalConfig, loocv, verification_report
from .synth import SynthConfig, expected_skill_bound, generate

__version__ = "0.1.0"

__all__ = [
    "DailyPrecipCube", "Dataset", "DegenerateCorrelationError", "DomainError", "DrySpellParams", "EvalConfig",
    "FitConfig", "FitError", "FuzzyParams", "GridSpec", "LabelSet", "ParseError", "RankDeficiencyError",
    "SstPanel", "SynthConfig", "UnrecoverableYearError", "WamcastError", "build_adjacency", "expected_skill_bound",
    "fit_onset", "generate", "label_dataset", "loocv", "regrid_bilinear", "select_predictors", "train_dryspell", "verification_report",
]
