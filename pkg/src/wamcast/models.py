"""Spatially regularised per-pixel models.

Onset: one small linear model per pixel on that pixel's two best September SST
predictors.  The pixels are fit jointly; an L1 penalty on the difference of
neighbouring pixels' *predictions* ties them together (their coefficients
multiply different predictors, so they cannot be compared directly).

Dry spell: one logistic model per pixel on a shared design.  Here the
neighbouring *coefficients* are comparable and are tied by a squared
difference penalty.  Probabilities are turned into labels with a threshold
that adapts to a separately regressed dry-spell proportion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import DomainError, FitError, RankDeficiencyError
from .features import (
    DRYSPELL_REGIONS,
    PROPORTION_COLUMNS,
    ColumnScaler,
    PredictorSelection,
    SstPanel,
    build_dryspell_design,
    build_proportion_design,
    select_predictors,
    standardize,
)
from .grid import DAYS_PER_YEAR, GridSpec


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 2e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    epochs: int = 2000
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    tol: float = 0.0  # stop once max |grad| < tol
    lr_decay: float = 1.0  # linear schedule; the last epoch runs at lr * (1 - lr_decay)

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.epochs > 0 and self.eps > 0):
            raise DomainError("learning rate, epochs and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError("ADAM betas must lie in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch size must be positive")
        if not 0 <= self.lr_decay <= 1:
            raise DomainError("lr_decay must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        return cls(**d)


class Adam:
    """Adaptive moment estimation on a single parameter array."""

    def __init__(self, shape, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr=None) -> None:
        """Update ``params`` in place."""
        self.t += 1
        lr = self.lr if lr is None else lr
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def incidence_matrix(edges, n_pixels: int) -> sp.csr_matrix:
    """Signed ``(E, P)`` edge-pixel incidence: row ``e`` is ``+1`` at ``i`` and ``-1`` at ``j``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    E = edges.shape[0]
    rows = np.repeat(np.arange(E), 2)
    cols = edges.ravel()
    vals = np.tile([1.0, -1.0], E)
    return sp.csr_matrix((vals, (rows, cols)), shape=(E, n_pixels))


def _with_intercept(X: np.ndarray) -> np.ndarray:
    ones = np.ones(X.shape[:-1] + (1,))
    return np.concatenate([ones, X], axis=-1)


def _sample_weights(mask, shape, allow_empty=False):
    """Per-sample weights so that each pixel's weighted sum is its sample mean."""
    if mask is None:
        return np.full(shape, 1.0 / shape[1])
    m = np.asarray(mask, dtype=float)
    n = m.sum(axis=1, keepdims=True)
    if np.any(n == 0) and not allow_empty:
        raise DomainError("a pixel has no training samples")
    return m / np.maximum(n, 1.0)


class _Objective:
    """Shared state of the two joint objectives: design, targets, edges, sample weights."""

    def __init__(self, X, y, edges, lam, mask=None):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.P = self.X.shape[0]
        self.D = incidence_matrix(edges, self.P)
        self.lam = float(lam)
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)
        self.w = _sample_weights(self.mask, self.y.shape)

    def subset(self, idx):
        """Same objective restricted to sample columns ``idx`` (one mini-batch)."""
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.X = self.X[:, idx]
        new.y = self.y[:, idx]
        new.mask = None if self.mask is None else self.mask[:, idx]
        new.w = _sample_weights(new.mask, new.y.shape, allow_empty=True)
        return new


def _check_shapes(W, X, y):
    if X.ndim != 3 or W.shape != (X.shape[0], X.shape[2]) or y.shape != X.shape[:2]:
        raise DomainError(f"shape mismatch: coef {W.shape}, design {X.shape}, targets {y.shape}")


# --- onset model -------------------------------------------------------------

class _OnsetObjective(_Objective):
    """Loss and gradient of the jointly fit onset models.

    ``X`` is ``(P, B, k)`` (intercept column included), ``y`` is ``(P, B)``.
    """

    def predictions(self, W):
        return np.einsum("pbk,pk->pb", self.X, W)

    def loss(self, W) -> float:
        _check_shapes(W, self.X, self.y)
        pred = self.predictions(W)
        fit = np.sum(self.w * (pred - self.y) ** 2) / self.P
        tv = np.abs(self.D @ pred).sum() if self.lam else 0.0
        return float(fit + self.lam * tv)

    def grad(self, W) -> np.ndarray:
        _check_shapes(W, self.X, self.y)
        pred = self.predictions(W)
        g_pred = 2.0 * self.w * (pred - self.y) / self.P
        if self.lam:
            g_pred = g_pred + self.lam * (self.D.T @ np.sign(self.D @ pred))
        return np.einsum("pbk,pb->pk", self.X, g_pred)


def onset_loss(W, X, y, edges, lam, mask=None) -> float:
    """Mean per-pixel squared error plus ``lam`` times the summed |prediction jumps| across edges.

    ``W`` is ``(P, k)``, ``X`` is ``(P, B, k)`` and already contains any
    intercept column, ``y`` is ``(P, B)``.
    """
    return _OnsetObjective(X, y, edges, lam, mask).loss(np.asarray(W, dtype=float))


def onset_grad(W, X, y, edges, lam, mask=None) -> np.ndarray:
    """Gradient of :func:`onset_loss`; the TV kink uses sign(0) = 0."""
    return _OnsetObjective(X, y, edges, lam, mask).grad(np.asarray(W, dtype=float))


def prediction_tv(W, X, edges) -> float:
    """Training TV term: sum over edges and samples of |pred_i - pred_j|."""
    pred = np.einsum("pbk,pk->pb", X, W)
    return float(np.abs(incidence_matrix(edges, X.shape[0]) @ pred).sum())


def _adam_fit(objective, W0, config: FitConfig, n_samples: int, label: str):
    """Run ADAM on ``objective``; returns ``(W, history, converged)``.

    ``converged`` means the gradient fell below ``config.tol`` or, failing that,
    the loss moved by less than 1e-6 (relative) over the last 5% of epochs.
    Mini-batches, when requested, are drawn by permuting sample columns with a
    generator seeded from ``config.seed``.
    """
    W = W0.copy()
    opt = Adam(W.shape, config.learning_rate, config.beta1, config.beta2, config.eps)
    full = config.batch_size is None or config.batch_size >= n_samples
    rng = np.random.default_rng(config.seed)
    history = []
    converged = False
    # Overflow shows up as a non-finite loss or gradient and is reported as FitError.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            lr = config.learning_rate * (1.0 - config.lr_decay * epoch / max(config.epochs - 1, 1))
            if full:
                batches = [None]
            else:
                perm = rng.permutation(n_samples)
                batches = [perm[s:s + config.batch_size] for s in range(0, n_samples, config.batch_size)]
            losses = []
            for idx in batches:
                obj = objective if idx is None else objective.subset(idx)
                loss = obj.loss(W)
                g = obj.grad(W)
                if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                    raise FitError(f"{label} fit diverged", epoch=epoch)
                losses.append(loss)
                if config.tol and np.max(np.abs(g)) < config.tol:
                    converged = True
                    break
                opt.step(W, g, lr)
            history.append(float(np.mean(losses)))
            if converged:
                break
    if not converged and len(history) > 1:
        k = max(1, len(history) // 20)
        converged = abs(history[-1] - history[-1 - k]) <= 1e-6 * max(1.0, abs(history[-1]))
    if not np.all(np.isfinite(W)):
        raise FitError(f"{label} fit produced non-finite coefficients", epoch=len(history) - 1)
    return W, np.array(history), converged


@dataclass
class OnsetModel:
    """Fitted onset model.

    ``coef`` is ``(P, 2)`` in standardized-onset units per degC of the selected
    predictors, ``intercept`` is ``(P,)`` in standardized-onset units.
    ``onset_mean``/``onset_std`` undo the per-pixel target standardization.
    """

    selection: PredictorSelection
    coef: np.ndarray
    intercept: np.ndarray
    onset_mean: np.ndarray
    onset_std: np.ndarray
    residual_variance: np.ndarray
    lam: float
    month: str = "Sep"
    config: FitConfig = field(default_factory=FitConfig)
    grid_digest: str = ""
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = False

    @property
    def n_pixels(self) -> int:
        return self.coef.shape[0]

    def design(self, panel: SstPanel) -> np.ndarray:
        """``(P, n_years, 2)`` raw SST predictors for every pixel."""
        flat = panel.flatten()
        return np.transpose(flat[:, self.selection.columns], (1, 0, 2))

    def predict_standardized(self, panel: SstPanel) -> np.ndarray:
        X = self.design(panel)
        return np.einsum("pbk,pk->pb", X, self.coef) + self.intercept[:, None]

    def predict_days(self, panel: SstPanel) -> np.ndarray:
        """Unrounded predictions in day-of-year, ``(P, n_years)``."""
        return self.predict_standardized(panel) * self.onset_std[:, None] + self.onset_mean[:, None]


def fit_onset(
    onsets,
    panel: SstPanel,
    edges,
    lam: float,
    config: FitConfig = FitConfig(),
    month: str = "Sep",
    mask=None,
    grid_digest: str = "",
) -> OnsetModel:
    """Select predictors, standardize targets and fit all pixels jointly with ADAM.

    ``onsets`` is ``(P, n_years)`` in day-of-year aligned with ``panel.years``;
    every year passed in is a training year.  ``mask`` (same shape) excludes
    samples, e.g. filled onsets.
    """
    onsets = np.asarray(onsets, dtype=float)
    P, n = onsets.shape
    if n != panel.n_years:
        raise DomainError(f"{n} onset years vs {panel.n_years} SST years")
    if n < 2:
        raise DomainError("onset model needs at least 2 training years")
    selection = select_predictors(onsets, panel, month=month, mask=mask)
    # A pixel whose training onsets never vary keeps a zero target and predicts that day.
    z, st = standardize(onsets, axis=1, mask=mask, allow_constant=True)
    X_raw = np.transpose(panel.flatten()[:, selection.columns], (1, 0, 2))  # (P, n, 2)
    # Predictors are centred and scaled per pixel for conditioning only; the
    # stored coefficients are mapped back to degC below.
    x_mean = X_raw.mean(axis=1, keepdims=True)
    x_std = X_raw.std(axis=1, keepdims=True)
    x_std = np.where(x_std > 0, x_std, 1.0)
    Xs = _with_intercept((X_raw - x_mean) / x_std)
    objective = _OnsetObjective(Xs, z, edges, lam, mask)
    W, history, converged = _adam_fit(objective, np.zeros((P, Xs.shape[2])), config, n, "onset")

    coef = W[:, 1:] / x_std[:, 0, :]
    intercept = W[:, 0] - np.sum(coef * x_mean[:, 0, :], axis=1)
    resid = objective.predictions(W) - z
    w = _sample_weights(mask, z.shape)
    residual_variance = np.sum(w * resid ** 2, axis=1)
    return OnsetModel(
        selection=selection,
        coef=coef,
        intercept=intercept,
        onset_mean=st.mean[:, 0],
        onset_std=st.std[:, 0],
        residual_variance=residual_variance,
        lam=float(lam),
        month=month,
        config=config,
        grid_digest=grid_digest,
        history=history,
        converged=converged,
    )


def round_days(days) -> np.ndarray:
    """Nearest whole day (halves round up), clamped to 1..365."""
    return np.clip(np.floor(np.asarray(days, dtype=float) + 0.5), 1, DAYS_PER_YEAR).astype(np.int64)


def predict_onset(model: OnsetModel, panel: SstPanel, year) -> np.ndarray:
    """Per-pixel onset day-of-year for one monsoon year."""
    row = panel.select_years([year])
    return round_days(model.predict_days(row)[:, 0])


# --- dry-spell model ---------------------------------------------------------

class _DrySpellObjective(_Objective):
    """Mean per-pixel binary cross-entropy plus squared coefficient TV."""

    def __init__(self, X, y, edges, lam, mask=None):
        super().__init__(X, y, edges, lam, mask)
        if np.any((self.y != 0) & (self.y != 1)):
            raise DomainError("dry-spell labels must be 0 or 1")

    def logits(self, W):
        return np.einsum("pbk,pk->pb", self.X, W)

    def loss(self, W) -> float:
        _check_shapes(W, self.X, self.y)
        z = self.logits(W)
        # -[y log s(z) + (1-y) log(1-s(z))] = log(1+e^z) - y z
        bce = np.sum(self.w * (np.logaddexp(0.0, z) - self.y * z)) / self.P
        tv = np.sum((self.D @ W) ** 2) if self.lam else 0.0
        return float(bce + self.lam * tv)

    def grad(self, W) -> np.ndarray:
        _check_shapes(W, self.X, self.y)
        z = self.logits(W)
        g = np.einsum("pbk,pb->pk", self.X, self.w * (expit(z) - self.y)) / self.P
        if self.lam:
            g = g + 2.0 * self.lam * (self.D.T @ (self.D @ W))
        return g



def dryspell_loss(W, X, y, edges, lam, mask=None) -> float:
    """Binary cross-entropy averaged per pixel then over pixels, plus ``lam`` * squared TV.

    ``W`` is ``(P, k)``, ``X`` is ``(P, B, k)`` including any intercept column.
    """
    return _DrySpellObjective(X, y, edges, lam, mask).loss(np.asarray(W, dtype=float))


def dryspell_grad(W, X, y, edges, lam, mask=None) -> np.ndarray:
    return _DrySpellObjective(X, y, edges, lam, mask).grad(np.asarray(W, dtype=float))


@dataclass
class ProportionModel:
    intercept: float
    coef: np.ndarray
    columns: tuple = PROPORTION_COLUMNS

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.coef


def fit_proportion(X, y) -> ProportionModel:
    """Ordinary least squares with intercept, solved from the normal equations.

    Predictors are centred first (an exact reparametrisation) to keep the normal
    matrix well conditioned.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if n < k + 1 or n < 3:
        raise RankDeficiencyError(f"{n} samples cannot determine {k + 1} coefficients")
    mu = X.mean(axis=0)
    A = np.column_stack([np.ones(n), X - mu])
    if np.linalg.matrix_rank(A) < k + 1:
        raise RankDeficiencyError("proportion design is rank deficient")
    sol = np.linalg.solve(A.T @ A, A.T @ y)
    coef = sol[1:]
    return ProportionModel(intercept=float(sol[0] - mu @ coef), coef=coef)


@dataclass
class DrySpellModel:
    """Per-pixel logistic weights ``theta`` (intercept first) and the threshold machinery."""

    theta: np.ndarray
    lam: float
    columns: tuple
    scaler: ColumnScaler
    proportion: ProportionModel | None = None
    month: str = "Oct"
    regions: tuple = DRYSPELL_REGIONS
    threshold: str = "order-statistic"
    config: FitConfig = field(default_factory=FitConfig)
    grid_digest: str = ""
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = False
    separable_pixels: tuple = ()
    onset_model: OnsetModel | None = None  # supplies the onset column at forecast time

    @property
    def drop(self) -> tuple:
        full = tuple(f"{r}_{self.month}" for r in self.regions) + ("lat", "lon", "onset")
        return tuple(c for c in full if c not in self.columns)


def _separable(z, y) -> np.ndarray:
    """Pixels whose training logits perfectly separate the two classes (or hold one class)."""
    pos = np.where(y == 1, z, np.inf).min(axis=1)
    neg = np.where(y == 0, z, -np.inf).max(axis=1)
    return neg < pos


def fit_dryspell(
    X,
    y,
    edges,
    lam: float,
    config: FitConfig = FitConfig(),
    mask=None,
) -> tuple[np.ndarray, np.ndarray, bool, tuple]:
    """Fit the per-pixel logistic weights jointly.

    ``X`` is the standardized ``(P, B, k)`` design without intercept; ``y`` the
    0/1 labels.  Returns ``(theta, history, converged, separable_pixels)`` with
    ``theta`` shaped ``(P, k + 1)``, intercept first.  Separable pixels are
    only flagged: without regularisation their weights keep growing until
    the epoch cap.
    """
    y = np.asarray(y, dtype=float)
    used = y if mask is None else y[np.asarray(mask, dtype=bool)]
    if used.size == 0 or np.all(used == used.flat[0]):
        raise DomainError("dry-spell training data contains a single class")
    Xi = _with_intercept(np.asarray(X, dtype=float))
    objective = _DrySpellObjective(Xi, y, edges, lam, mask)
    theta, history, converged = _adam_fit(objective, np.zeros((Xi.shape[0], Xi.shape[2])), config, y.shape[1], "dry-spell")
    sep = ()
    if lam == 0:
        sep = tuple(int(i) for i in np.nonzero(_separable(objective.logits(theta), y))[0])
    return theta, history, converged, sep


def train_dryspell(
    labels_onset,
    labels_dry,
    panel: SstPanel,
    grid: GridSpec,
    edges,
    lam: float,
    config: FitConfig = FitConfig(),
    month: str = "Oct",
    drop=(),
    mask=None,
) -> DrySpellModel:
    """Fit the logistic model on true onsets and the proportion regressor on the same years."""
    X, scaler, cols = build_dryspell_design(panel, labels_onset, grid, month=month, drop=drop)
    theta, history, converged, sep = fit_dryspell(X, labels_dry, edges, lam, config, mask)
    Xp, yp = build_proportion_design(panel, labels_dry)
    return DrySpellModel(
        theta=theta,
        lam=float(lam),
        columns=cols,
        scaler=scaler,
        proportion=fit_proportion(Xp, yp),
        month=month,
        config=config,
        grid_digest=grid.digest(),
        history=history,
        converged=converged,
        separable_pixels=sep,
    )


def predict_proba(model: DrySpellModel, X) -> np.ndarray:
    """Dry-spell probabilities from standardized design rows ``(P, B, k)`` or ``(P, k)``."""
    X = np.asarray(X, dtype=float)
    k = model.theta.shape[1] - 1
    if X.shape[-1] != k:
        raise DomainError(f"design has {X.shape[-1]} columns, model expects {k}")
    z = model.theta[:, 0, None] + np.einsum("pbk,pk->pb", X.reshape(X.shape[0], -1, k), model.theta[:, 1:])
    return expit(z).reshape(X.shape[:-1])


def dryspell_design_for(model: DrySpellModel, panel: SstPanel, onsets, grid: GridSpec) -> np.ndarray:
    X, _, _ = build_dryspell_design(
        panel, onsets, grid, month=model.month, regions=model.regions, drop=model.drop, scaler=model.scaler
    )
    return X


def adaptive_threshold(probs, p_hat):
    """Threshold at the ``1 - p_hat`` order statistic of this year's probabilities.

    With ``k = floor((1 - p_hat) * P)`` the threshold is the (k+1)-th smallest
    probability; every pixel at or above it is labelled 1.  When ``k == P`` the
    threshold is ``inf`` and nothing is labelled.
    """
    probs = np.asarray(probs, dtype=float).ravel()
    if probs.size == 0:
        raise DomainError("adaptive threshold needs at least one probability")
    p = float(np.clip(p_hat, 0.0, 1.0))
    P = probs.size
    # Round away float noise such as (1 - 0.9) * 10 = 0.9999999999999998.
    k = int(np.floor(round((1.0 - p) * P, 9)))
    if k >= P:
        return float("inf"), np.zeros(P, dtype=np.int64)
    T = float(np.sort(probs)[k])
    return T, (probs >= T).astype(np.int64)


# --- hyperparameter search ---------------------------------------------------

def grid_search_lambda(candidates, score) -> float:
    """Candidate with the lowest ``score(lam)``; ties go to the smaller lambda."""
    cands = sorted(set(float(c) for c in candidates))
    if not cands:
        raise DomainError("need at least one lambda candidate")
    if len(cands) == 1:
        return cands[0]
    best, best_score = None, np.inf
    for lam in cands:
        s = float(score(lam))
        if s < best_score:
            best, best_score = lam, s
    return cands[0] if best is None else best


def inner_folds(n: int, k: int = 3) -> list[np.ndarray]:
    """Contiguous validation blocks over ``n`` training years."""
    k = max(2, min(k, n))
    return [b for b in np.array_split(np.arange(n), k) if b.size]


def select_onset_lambda(onsets, panel, edges, candidates, config, month="Sep", mask=None, n_folds=3) -> float:
    """Inner-fold grid search scored by validation MAE in days."""
    onsets = np.asarray(onsets, dtype=float)
    n = onsets.shape[1]
    folds = inner_folds(n, n_folds)

    def score(lam):
        errs = []
        for val in folds:
            train = np.setdiff1d(np.arange(n), val)
            m = None if mask is None else np.asarray(mask)[:, train]
            model = fit_onset(onsets[:, train], panel.select_years([panel.years[i] for i in train]),
                              edges, lam, config, month, m)
            pred = model.predict_days(panel.select_years([panel.years[i] for i in val]))
            errs.append(np.abs(round_days(pred) - onsets[:, val]).ravel())
        return np.concatenate(errs).mean()

    return grid_search_lambda(candidates, score)


def select_dryspell_lambda(onsets, dry, panel, grid, edges, candidates, config, month="Oct", drop=(), mask=None,
                           n_folds=3) -> float:
    """Inner-fold grid search scored by validation cross-entropy."""
    onsets = np.asarray(onsets, dtype=float)
    dry = np.asarray(dry, dtype=float)
    n = onsets.shape[1]
    folds = inner_folds(n, n_folds)

    def score(lam):
        losses = []
        for val in folds:
            train = np.setdiff1d(np.arange(n), val)
            if np.all(dry[:, train] == dry[0, train[0]]):
                return np.inf
            years_tr = [panel.years[i] for i in train]
            years_va = [panel.years[i] for i in val]
            m = None if mask is None else np.asarray(mask)[:, train]
            X, scaler, _ = build_dryspell_design(panel.select_years(years_tr), onsets[:, train], grid,
                                                 month=month, drop=drop)
            theta, *_ = fit_dryspell(X, dry[:, train], edges, lam, config, m)
            Xv, _, _ = build_dryspell_design(panel.select_years(years_va), onsets[:, val], grid,
                                             month=month, drop=drop, scaler=scaler)
            z = theta[:, 0, None] + np.einsum("pbk,pk->pb", Xv, theta[:, 1:])
            losses.append((np.logaddexp(0.0, z) - dry[:, val] * z).ravel())
        return np.concatenate(losses).mean()

    return grid_search_lambda(candidates, score)

