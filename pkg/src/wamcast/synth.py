"""Seeded synthetic climate with planted teleconnections.

The generator plants an onset day per pixel and year as a base map plus a
linear response to two September SST columns plus Gaussian noise, then writes
rainfall that makes exactly that day the first qualifying onset window.  Dry
spells are planted from a logistic rule on October SSTs.

Random streams come from ``numpy.random.SeedSequence(seed)``: child 0 drives
the SST panel (one grandchild per region), child 1 the onset noise, child 2
the dry-spell draws, and child 3 spawns one stream per pixel for rainfall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .features import MONTHS, REGIONS, SstPanel
from .grid import DAYS_PER_YEAR, DailyPrecipCube, GridSpec
from .labeling import DrySpellParams, FuzzyParams

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class SynthConfig:
    grid: GridSpec = field(default_factory=lambda: GridSpec(8.0, -12.0, 8, 28, 1.0))
    years: int = 30
    first_year: int = 1981
    n_simulated: int = 0  # leading years tagged "simulated"
    onset_south: float = 140.0  # base onset on the southern row
    onset_north: float = 196.0  # base onset on the northern row
    coef_a: float = 6.0  # days per degC of the first planted column
    coef_b: float = -8.0  # days per degC of the second planted column
    noise_std: float = 10.0
    intensity: float = 4.0  # mm/day on wet-season days
    season_length: int = 100
    showers: bool = True
    shower_prob: float = 0.04
    shower_max: float = 3.0
    sst_mean: float = 27.0
    sst_month_corr: float = 0.7
    ds_intercept_sw: float = -2.0  # dry-spell logit at the south-west corner
    ds_intercept_ne: float = 1.0  # and at the north-east corner
    ds_weights: tuple = (("GulfOfGuinea", "Oct", -1.5), ("Mediterranean", "Oct", -1.5))
    onset_min: int = 60
    onset_max: int = 300
    seed: int = 42
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    dry: DrySpellParams = field(default_factory=DrySpellParams)

    def validate(self) -> None:
        if self.years < 1:
            raise DomainError("need at least one year")
        if not 0 <= self.n_simulated <= self.years:
            raise DomainError("n_simulated must lie in [0, years]")
        if self.noise_std < 0:
            raise DomainError("noise std must be non-negative")
        if not 1 <= self.onset_min <= self.onset_max:
            raise DomainError("need 1 <= onset_min <= onset_max")
        if self.onset_max + max(self.dry.window, 15) > DAYS_PER_YEAR:
            raise DomainError(
                f"onsets up to day {self.onset_max} leave no room for the {self.dry.window}-day dry-spell window"
            )
        if not (self.onset_min <= self.onset_south <= self.onset_max and self.onset_min <= self.onset_north <= self.onset_max):
            raise DomainError("base onsets must lie within [onset_min, onset_max]")
        # Four wet days plus one shower must stay below the onset ramp's midpoint,
        # and the wet days must count as wet.
        f = self.fuzzy
        if not (f.wet_day_min <= self.intensity and 4 * self.intensity + self.shower_max < (f.l1 + f.u1) / 2):
            raise DomainError("intensity is incompatible with the onset thresholds")
        if self.shower_max >= f.l1:
            raise DomainError("showers must stay below the onset threshold")
        if self.season_length <= self.dry.window:
            raise DomainError("season must outlast the post-onset dry-spell window")


@dataclass(frozen=True)
class SynthTruth:
    years: tuple[int, ...]
    onset: np.ndarray  # (P, Y)
    dry_spell: np.ndarray  # (P, Y)
    columns: np.ndarray  # (P, 2) flat SST column indices driving each pixel's onset
    ds_probability: np.ndarray  # (P, Y)


def planted_columns(grid: GridSpec) -> np.ndarray:
    """West half responds to Pacific/Atlantic September SSTs, east half to Indian/Gulf of Guinea."""
    from .features import column_index

    west = (column_index("Pacific", "Sep"), column_index("Atlantic", "Sep"))
    east = (column_index("Indian", "Sep"), column_index("GulfOfGuinea", "Sep"))
    cols = np.empty((grid.n_pixels, 2), dtype=np.int64)
    for p in range(grid.n_pixels):
        c = p % grid.n_cols
        cols[p] = west if c < grid.n_cols / 2 else east
    return cols


def _sst_panel(config: SynthConfig, ss: np.random.SeedSequence) -> SstPanel:
    """Uniform unit-variance anomalies, AR(1) across the seven months of each region."""
    rho = config.sst_month_corr
    vals = np.empty((config.years, len(REGIONS), len(MONTHS)))
    for r, child in enumerate(ss.spawn(len(REGIONS))):
        rng = np.random.default_rng(child)
        u = rng.uniform(-SQRT3, SQRT3, size=(config.years, len(MONTHS)))
        a = np.empty_like(u)
        a[:, 0] = u[:, 0]
        for m in range(1, len(MONTHS)):
            a[:, m] = rho * a[:, m - 1] + np.sqrt(1 - rho * rho) * u[:, m]
        vals[:, r, :] = config.sst_mean + a
    years = tuple(range(config.first_year, config.first_year + config.years))
    return SstPanel(vals, years)


def _base_map(config: SynthConfig) -> np.ndarray:
    g = config.grid
    frac = np.arange(g.n_rows) / max(g.n_rows - 1, 1)
    rows = config.onset_south + frac * (config.onset_north - config.onset_south)
    return np.repeat(rows, g.n_cols)


def _ds_intercepts(config: SynthConfig) -> np.ndarray:
    g = config.grid
    r, c = np.divmod(np.arange(g.n_pixels), g.n_cols)
    t = (r / max(g.n_rows - 1, 1) + c / max(g.n_cols - 1, 1)) / 2
    return config.ds_intercept_sw + t * (config.ds_intercept_ne - config.ds_intercept_sw)


def _pixel_rain(onsets, dry, rng, config: SynthConfig) -> np.ndarray:
    """One pixel's ``(Y, 365)`` rainfall for the given planted onsets and dry-spell flags."""
    Y = onsets.size
    rain = np.zeros((Y, DAYS_PER_YEAR))
    f = config.fuzzy
    heavy = f.u1 + 1.0 - 4 * config.intensity
    for k in range(Y):
        o = int(onsets[k]) - 1  # 0-based
        end = min(o + config.season_length, DAYS_PER_YEAR)
        if config.showers:
            last = -10
            for d in np.nonzero(rng.random(DAYS_PER_YEAR) < config.shower_prob)[0]:
                # Isolated showers only; none in the four days before onset.
                if d - last >= 5 and not o - 4 <= d < end:
                    rain[k, d] = rng.uniform(f.wet_day_min, config.shower_max)
                    last = d
        rain[k, o:end] = config.intensity + rng.exponential(config.intensity, size=end - o)
        rain[k, o:o + 4] = config.intensity
        rain[k, o + 4] = heavy
        if dry[k]:
            rain[k, o + 5:o + 15] = 0.0
    return rain


def generate(config: SynthConfig = SynthConfig()):
    """Returns ``(cubes, panel, truth)``; ``cubes`` maps source to :class:`DailyPrecipCube`."""
    config.validate()
    root = np.random.SeedSequence(config.seed)
    ss_sst, ss_noise, ss_ds, ss_rain = root.spawn(4)
    panel = _sst_panel(config, ss_sst)
    flat = panel.flatten()
    g = config.grid
    P, Y = g.n_pixels, config.years

    cols = planted_columns(g)
    anom = flat - config.sst_mean
    signal = config.coef_a * anom[:, cols[:, 0]].T + config.coef_b * anom[:, cols[:, 1]].T  # (P, Y)
    noise = np.random.default_rng(ss_noise).standard_normal((P, Y)) * config.noise_std
    onset = np.clip(np.rint(_base_map(config)[:, None] + signal + noise), config.onset_min, config.onset_max)
    onset = onset.astype(np.int64)

    z = _ds_intercepts(config)[:, None] + sum(
        w * (panel.column(r, m) - config.sst_mean)[None, :] for r, m, w in config.ds_weights
    )
    prob = 1.0 / (1.0 + np.exp(-z))
    dry = (np.random.default_rng(ss_ds).random((P, Y)) < prob).astype(np.int64)

    values = np.empty((Y, DAYS_PER_YEAR, P))
    for p, child in enumerate(ss_rain.spawn(P)):
        values[:, :, p] = _pixel_rain(onset[p], dry[p], np.random.default_rng(child), config)

    years = panel.years
    cubes = {}
    n_sim = config.n_simulated
    if n_sim:
        cubes["simulated"] = DailyPrecipCube(values[:n_sim], years[:n_sim], "simulated")
    if n_sim < Y:
        cubes["observed"] = DailyPrecipCube(values[n_sim:], years[n_sim:], "observed")
    truth = SynthTruth(years=years, onset=onset, dry_spell=dry, columns=cols, ds_probability=prob)
    return cubes, panel, truth


def expected_skill_bound(config: SynthConfig) -> tuple[float, float]:
    """Population onset correlation and mean absolute error of a perfect linear model.

    SST anomalies have unit variance and the planted columns are independent,
    so the signal variance is ``a**2 + b**2``.
    """
    var_signal = config.coef_a ** 2 + config.coef_b ** 2
    var_noise = config.noise_std ** 2
    if var_signal + var_noise == 0:
        raise DomainError("signal and noise variance are both zero")
    r = np.sqrt(var_signal / (var_signal + var_noise))
    mae = config.noise_std * np.sqrt(2.0 / np.pi)
    return float(r), float(mae)
