"""Nested cross-validation of one architecture at one ending phase, and curves over phases.

Every outer fold tunes on its own inner folds, retrains the winner on the
outer-training samples and predicts the outer test fold. The test-fold
predictions are pooled before R² and RMSE are computed, so each sample is
predicted exactly once by a model that never saw it.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from dataclasses import field

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import Field
from scipy.interpolate import CubicSpline
from statsmodels.nonparametric.smoothers_lowess import lowess

from gaitscale.config.model import CrossValSettings
from gaitscale.config.model import TrainingSettings
from gaitscale.const import ARCHITECTURES
from gaitscale.const import AXES
from gaitscale.const import PHASE_GRID
from gaitscale.crossval.folds import FoldPlan
from gaitscale.crossval.folds import early_stop_split
from gaitscale.crossval.folds import make_fold_plan
from gaitscale.crossval.search import candidate_configs
from gaitscale.crossval.search import resolve_space
from gaitscale.errors import GaitscaleError
from gaitscale.gradcore.train import History
from gaitscale.gradcore.train import TrainConfig
from gaitscale.modelzoo.spec import ARCHITECTURE_METADATA_MAP
from gaitscale.modelzoo.spec import ModelSpec
from gaitscale.modelzoo.spec import params_for
from gaitscale.modelzoo.zoo import TrainedModel
from gaitscale.modelzoo.zoo import fit_model
from gaitscale.sampling import SampleBatch

logger = logging.getLogger(__name__)

MIN_SMOOTHING_POINTS = 5
DENSE_POINTS = 201
RMSE_POOLING = "pooled_axes"


class TooFewPoints(GaitscaleError):
    """Too few phase points to smooth."""


class FoldError(GaitscaleError):
    """Training or prediction failed inside an outer fold."""


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def r2_score(targets: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    """Per-column 1 - SSE/SST; NaN where the targets are constant."""
    sse = np.sum((targets - predictions) ** 2, axis=0)
    sst = np.sum((targets - targets.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), np.nan)


def rmse(targets: np.ndarray, predictions: np.ndarray, axis=0) -> np.ndarray:
    return np.sqrt(np.mean((targets - predictions) ** 2, axis=axis))


@dataclass
class PhaseResult:
    """Pooled outer-fold predictions of one (architecture, phase)."""

    arch: str
    phi: float
    keys: tuple[tuple[int, str, int], ...]
    targets: np.ndarray
    predictions: np.ndarray
    folds: np.ndarray
    selected: list[dict] = field(default_factory=list)
    histories: list[History | None] = field(default_factory=list)
    models: list[TrainedModel] = field(default_factory=list)

    @property
    def r2(self) -> np.ndarray:
        """(ML, AP)."""
        return r2_score(self.targets, self.predictions)

    @property
    def rmse_axes(self) -> np.ndarray:
        return rmse(self.targets, self.predictions)

    @property
    def rmse_pooled(self) -> float:
        return float(rmse(self.targets.ravel(), self.predictions.ravel()))

    def fold_r2(self) -> np.ndarray:
        """(folds, 2) R² of each outer test fold on its own."""
        return np.stack(
            [r2_score(self.targets[self.folds == k], self.predictions[self.folds == k]) for k in np.unique(self.folds)]
        )

    def to_frame(self) -> pd.DataFrame:
        trials, feet, indices = zip(*self.keys, strict=True) if self.keys else ((), (), ())
        return pd.DataFrame(
            {
                "trial": trials,
                "foot": feet,
                "strike": indices,
                "fold": self.folds,
                "phi": self.phi,
                "y_ml": self.targets[:, 0],
                "y_ap": self.targets[:, 1],
                "pred_ml": self.predictions[:, 0],
                "pred_ap": self.predictions[:, 1],
            }
        )


def _spec(arch: str, config: dict, batch: SampleBatch, n_trials: int, seed: int, ridge_lambda: float) -> ModelSpec:
    values = dict(config)
    if "ridge_lambda" in ARCHITECTURE_METADATA_MAP[arch].hyperparameters:
        values.setdefault("ridge_lambda", ridge_lambda)
    return ModelSpec(
        params=params_for(arch, **values),
        n_rows=batch.n_rows,
        n_features=batch.n_features,
        n_trials=n_trials,
        seed=seed,
    )


def _train_config(training: TrainingSettings, seed: int) -> TrainConfig:
    return TrainConfig(
        max_epochs=training.max_epochs, patience=training.patience, batch_size=training.batch_size, seed=seed
    )


def _fit(spec: ModelSpec, batch: SampleBatch, train: np.ndarray, val: np.ndarray, training: TrainingSettings):
    if spec.is_linear:
        return fit_model(spec, batch.subset(np.concatenate([train, val])))
    return fit_model(spec, batch.subset(train), batch.subset(val), _train_config(training, spec.seed))


def select_config(
    batch: SampleBatch,
    arch: str,
    plan: FoldPlan,
    k: int,
    configs: list[dict],
    n_trials: int,
    seed: int,
    training: TrainingSettings,
) -> tuple[int, np.ndarray]:
    """Index of the configuration with the lowest mean inner-validation MSE; ties go to the first."""
    scores = np.zeros(len(configs))
    for c, config in enumerate(configs):
        losses = []
        for j in range(plan.n_inner(k)):
            train, val = plan.inner_split(k, j)
            spec = _spec(arch, config, batch, n_trials, derive_seed(seed, k, j, c), training.ridge_lambda)
            model = fit_model(spec, batch.subset(train), batch.subset(val), _train_config(training, spec.seed))
            losses.append(float(np.mean((model.predict(batch.subset(val)) - batch.targets[val]) ** 2)))
        scores[c] = np.mean(losses)
        logger.debug(f"{arch} outer fold {k}: config {config} inner mse {scores[c]:.6g}")
    return int(np.argmin(scores)), scores


def nested_cv_evaluate(
    batch: SampleBatch,
    arch: str,
    plan: FoldPlan | None = None,
    crossval: CrossValSettings | None = None,
    training: TrainingSettings | None = None,
    n_trials: int | None = None,
    seed: int = 0,
    keep_models: bool = False,
) -> PhaseResult:
    """Nested cross-validated predictions of ``arch`` for every sample of ``batch``.

    Linear families have nothing to tune and fit on the full outer-training
    split. Networks retrain the selected configuration on the outer-training
    split minus a fresh early-stopping hold-out.
    """
    crossval = crossval or CrossValSettings()
    training = training or TrainingSettings()
    plan = plan or make_fold_plan(len(batch), seed)
    if plan.n != len(batch):
        raise FoldError(f"fold plan covers {plan.n} samples, batch has {len(batch)}")
    n_trials = n_trials or int(batch.trials.max()) + 1
    phase_index = round(batch.phi * (PHASE_GRID.size - 1))
    base_seed = derive_seed(seed, ARCHITECTURES.index(arch), phase_index)
    is_linear = ARCHITECTURE_METADATA_MAP[arch].is_linear
    space = resolve_space(arch, crossval.space_overrides)
    configs = [{}] if is_linear else candidate_configs(space, crossval.search_budget, seed=base_seed)

    predictions = np.full((len(batch), 2), np.nan)
    result = PhaseResult(
        arch=arch,
        phi=batch.phi,
        keys=batch.keys,
        targets=batch.targets,
        predictions=predictions,
        folds=plan.outer.copy(),
    )
    for k in range(plan.n_outer):
        try:
            chosen = 0
            if len(configs) > 1:
                chosen, _ = select_config(batch, arch, plan, k, configs, n_trials, base_seed, training)
            train, val = early_stop_split(plan.outer_train(k), derive_seed(base_seed, k, 1000))
            spec = _spec(arch, configs[chosen], batch, n_trials, derive_seed(base_seed, k), training.ridge_lambda)
            model = _fit(spec, batch, train, val, training)
            test = plan.outer_test(k)
            predictions[test] = model.predict(batch.subset(test))
        except GaitscaleError as e:
            raise FoldError(f"{arch} phi={batch.phi:.2f} outer fold {k}: {e}") from e
        result.selected.append(configs[chosen])
        result.histories.append(model.history)
        if keep_models:
            result.models.append(model)
    r2 = result.r2
    logger.debug(f"{arch} phi={batch.phi:.2f}: pooled R² ml={r2[0]:.4f} ap={r2[1]:.4f}")
    return result


@dataclass(frozen=True)
class SmoothedCurve:
    phases: np.ndarray
    values: np.ndarray
    dense_phases: np.ndarray
    dense_values: np.ndarray
    max_residual: float


def smooth_curve(
    values: np.ndarray,
    phases: np.ndarray | None = None,
    frac: float = 0.4,
    iterations: int = 2,
) -> SmoothedCurve:
    """LOWESS at the phase grid, then a natural cubic spline through the smoothed points.

    Robustness iterations are skipped when the plain local fit already has
    no residual (constant or linear curves).
    """
    values = np.asarray(values, dtype=np.float64)
    phases = PHASE_GRID if phases is None else np.asarray(phases, dtype=np.float64)
    finite = np.isfinite(values)
    if finite.sum() < MIN_SMOOTHING_POINTS:
        raise TooFewPoints(f"smoothing needs {MIN_SMOOTHING_POINTS} finite points, got {int(finite.sum())}")
    x, y = phases[finite], values[finite]
    fitted = lowess(y, x, frac=frac, it=0, return_sorted=False)
    if iterations and np.max(np.abs(y - fitted)) > 1e-12 * max(1.0, np.max(np.abs(y))):
        fitted = lowess(y, x, frac=frac, it=iterations, return_sorted=False)
    smoothed = np.interp(phases, x, fitted)
    spline = CubicSpline(phases, smoothed, bc_type="natural")
    dense = np.linspace(phases[0], phases[-1], DENSE_POINTS)
    return SmoothedCurve(
        phases=phases,
        values=smoothed,
        dense_phases=dense,
        dense_values=spline(dense),
        max_residual=float(np.max(np.abs(y - fitted))),
    )


class EvalCurve(BaseModel):
    """Pooled R² and RMSE of one (context, modality, architecture) over the phase grid."""

    context: str = Field(default="", description="Context label")
    modality: str = Field(default="", description="Input modality")
    arch: str = Field(default="", description="Architecture")
    phases: list[float] = Field(default=[], description="Ending phases")
    r2_ml: list[float] = Field(default=[], description="Pooled lateral R² per phase")
    r2_ap: list[float] = Field(default=[], description="Pooled fore-aft R² per phase")
    r2_mean: list[float] = Field(default=[], description="Mean of the two axes")
    rmse_ml: list[float] = Field(default=[], description="Lateral RMSE per phase in m")
    rmse_ap: list[float] = Field(default=[], description="Fore-aft RMSE per phase in m")
    rmse: list[float] = Field(default=[], description="RMSE over both axes pooled")
    fold_r2_ml: list[list[float]] = Field(default=[], description="Per outer fold lateral R², phase-major")
    fold_r2_ap: list[list[float]] = Field(default=[], description="Per outer fold fore-aft R², phase-major")
    smoothed_ml: list[float] = Field(default=[], description="Smoothed lateral R²")
    smoothed_ap: list[float] = Field(default=[], description="Smoothed fore-aft R²")
    smoothed_mean: list[float] = Field(default=[], description="Smoothed mean-axis R²")
    smoothing_residual: float = Field(default=0.0, description="Largest LOWESS residual over the curves")
    rmse_pooling: str = Field(default=RMSE_POOLING, description="How the two axes enter the scoring RMSE")

    def is_empty(self) -> bool:
        return not self.phases

    def r2(self, axis: str) -> np.ndarray:
        return np.asarray(getattr(self, f"r2_{axis}"), dtype=np.float64)

    def smoothed(self, axis: str) -> np.ndarray:
        return np.asarray(getattr(self, f"smoothed_{axis}"), dtype=np.float64)

    def fold_r2(self, axis: str) -> np.ndarray:
        """(phases, folds)."""
        return np.asarray(getattr(self, f"fold_r2_{axis}"), dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, phi in enumerate(self.phases):
            for axis in (*AXES, "mean"):
                rows.append(
                    {
                        "context": self.context,
                        "modality": self.modality,
                        "arch": self.arch,
                        "axis": axis,
                        "phi": phi,
                        "r2": getattr(self, f"r2_{axis}")[i],
                        "r2_smoothed": getattr(self, f"smoothed_{axis}")[i] if self.smoothed_mean else np.nan,
                        "rmse": self.rmse[i] if axis == "mean" else getattr(self, f"rmse_{axis}")[i],
                    }
                )
        return pd.DataFrame(rows)


def curve_from_results(
    results: list[PhaseResult],
    context: str = "",
    modality: str = "",
    frac: float = 0.4,
    iterations: int = 2,
) -> EvalCurve:
    """Assemble per-phase results (any order) into a smoothed curve."""
    results = sorted(results, key=lambda r: r.phi)
    if not results:
        return EvalCurve(context=context, modality=modality)
    r2 = np.stack([r.r2 for r in results])
    rmse_axes = np.stack([r.rmse_axes for r in results])
    folds = [r.fold_r2() for r in results]
    curve = EvalCurve(
        context=context,
        modality=modality,
        arch=results[0].arch,
        phases=[r.phi for r in results],
        r2_ml=r2[:, 0].tolist(),
        r2_ap=r2[:, 1].tolist(),
        r2_mean=r2.mean(axis=1).tolist(),
        rmse_ml=rmse_axes[:, 0].tolist(),
        rmse_ap=rmse_axes[:, 1].tolist(),
        rmse=[r.rmse_pooled for r in results],
        fold_r2_ml=[f[:, 0].tolist() for f in folds],
        fold_r2_ap=[f[:, 1].tolist() for f in folds],
    )
    if len(results) >= MIN_SMOOTHING_POINTS:
        phases = np.asarray(curve.phases)
        residual = 0.0
        for axis in (*AXES, "mean"):
            smoothed = smooth_curve(curve.r2(axis), phases, frac, iterations)
            setattr(curve, f"smoothed_{axis}", smoothed.values.tolist())
            residual = max(residual, smoothed.max_residual)
        curve.smoothing_residual = residual
    return curve


def evaluate_curve(
    batches: Mapping[float, SampleBatch],
    arch: str,
    context: str = "",
    modality: str = "",
    crossval: CrossValSettings | None = None,
    training: TrainingSettings | None = None,
    n_trials: int | None = None,
    seed: int = 0,
) -> tuple[EvalCurve, list[PhaseResult]]:
    """Nested cross-validation at every phase of ``batches``."""
    crossval = crossval or CrossValSettings()
    results = [
        nested_cv_evaluate(
            batches[phi],
            arch,
            make_fold_plan(len(batches[phi]), seed),
            crossval,
            training,
            n_trials,
            seed,
        )
        for phi in sorted(batches)
    ]
    curve = curve_from_results(results, context, modality, crossval.lowess_frac, crossval.lowess_iterations)
    return curve, results


def per_trial_r2(predictions: pd.DataFrame | list[PhaseResult]) -> pd.DataFrame:
    """R² of pooled predictions restricted to each trial.

    Accepts a predictions table (as written by ``PhaseResult.to_frame``) or
    the results themselves. Columns: trial, phi, r2_ml, r2_ap, r2_mean.
    """
    if not isinstance(predictions, pd.DataFrame):
        predictions = pd.concat([r.to_frame() for r in predictions], ignore_index=True)
    rows = []
    for (phi, trial), group in predictions.groupby(["phi", "trial"], sort=True):
        r2 = r2_score(
            group[["y_ml", "y_ap"]].to_numpy(dtype=np.float64),
            group[["pred_ml", "pred_ap"]].to_numpy(dtype=np.float64),
        )
        rows.append({"trial": int(trial), "phi": float(phi), "r2_ml": r2[0], "r2_ap": r2[1], "r2_mean": float(np.mean(r2))})
    return pd.DataFrame(rows, columns=["trial", "phi", "r2_ml", "r2_ap", "r2_mean"])
