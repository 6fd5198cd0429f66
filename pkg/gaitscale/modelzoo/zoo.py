from __future__ import annotations

import importlib
import logging
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from gaitscale.gradcore.tensor import ShapeMismatch
from gaitscale.gradcore.train import History
from gaitscale.gradcore.train import TrainConfig
from gaitscale.gradcore.train import predict_batches
from gaitscale.gradcore.train import train_loop
from gaitscale.modelzoo.linear import LinearModel
from gaitscale.modelzoo.spec import ARCHITECTURE_METADATA
from gaitscale.modelzoo.spec import InsufficientSamples
from gaitscale.modelzoo.spec import InvalidSpec
from gaitscale.modelzoo.spec import ModelSpec
from gaitscale.modelzoo.spec import params_for
from gaitscale.sampling import SampleBatch

logger = logging.getLogger(__name__)

_MIN_STD = 1e-12


def build_model(spec: ModelSpec):
    """Untrained model of ``spec.arch``: ``<arch>Model`` from the architecture's module."""
    spec.validate_settings()
    for metadata in ARCHITECTURE_METADATA:
        if isinstance(spec.params, metadata.params_type):
            module = importlib.import_module(f"gaitscale.modelzoo.{metadata.module_name}")
            return getattr(module, f"{metadata.arch}Model")(spec)
    raise InvalidSpec(f"no model registered for {spec.arch}")


def _safe_std(values: np.ndarray, axis) -> np.ndarray:
    std = values.std(axis=axis)
    return np.where(std > _MIN_STD, std, 1.0)


@dataclass
class FeatureScaler:
    """Per-trial feature z-scoring with training-split statistics.

    Trials absent from the training split use the pooled statistics.
    """

    mean: dict[int, np.ndarray] = field(default_factory=dict)
    std: dict[int, np.ndarray] = field(default_factory=dict)
    global_mean: np.ndarray | None = None
    global_std: np.ndarray | None = None

    @classmethod
    def fit(cls, batch: SampleBatch) -> FeatureScaler:
        rows = batch.windows.reshape(-1, batch.n_features)
        scaler = cls(global_mean=rows.mean(axis=0), global_std=_safe_std(rows, 0))
        for trial in np.unique(batch.trials):
            trial_rows = batch.windows[batch.trials == trial].reshape(-1, batch.n_features)
            scaler.mean[int(trial)] = trial_rows.mean(axis=0)
            scaler.std[int(trial)] = _safe_std(trial_rows, 0)
        return scaler

    @classmethod
    def identity(cls, n_features: int) -> FeatureScaler:
        return cls(global_mean=np.zeros(n_features), global_std=np.ones(n_features))

    def transform(self, batch: SampleBatch) -> SampleBatch:
        if batch.n_features != self.global_mean.shape[0]:
            raise ShapeMismatch(f"scaler fitted on {self.global_mean.shape[0]} features, got {batch.n_features}")
        windows = np.empty_like(batch.windows)
        for trial in np.unique(batch.trials):
            rows = batch.trials == trial
            mean = self.mean.get(int(trial), self.global_mean)
            std = self.std.get(int(trial), self.global_std)
            windows[rows] = (batch.windows[rows] - mean) / std
        return batch.with_windows(windows)

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {"scaler.global_mean": self.global_mean, "scaler.global_std": self.global_std}
        for trial in sorted(self.mean):
            arrays[f"scaler.mean.{trial}"] = self.mean[trial]
            arrays[f"scaler.std.{trial}"] = self.std[trial]
        return arrays

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> FeatureScaler:
        scaler = cls(global_mean=arrays["scaler.global_mean"], global_std=arrays["scaler.global_std"])
        for name, value in arrays.items():
            parts = name.split(".")
            if len(parts) == 3 and parts[0] == "scaler":
                getattr(scaler, parts[1])[int(parts[2])] = value
        return scaler


@dataclass
class TargetScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, targets: np.ndarray) -> TargetScaler:
        return cls(mean=targets.mean(axis=0), std=_safe_std(targets, 0))

    def transform(self, targets: np.ndarray) -> np.ndarray:
        return (targets - self.mean) / self.std

    def inverse(self, targets: np.ndarray) -> np.ndarray:
        return targets * self.std + self.mean


@dataclass
class TrainedModel:
    """A fitted model with the normalization it was trained under."""

    spec: ModelSpec
    model: object
    scaler: FeatureScaler
    target_scaler: TargetScaler | None = None
    history: History | None = None

    @property
    def arch(self) -> str:
        return self.spec.arch

    def predict(self, batch: SampleBatch) -> np.ndarray:
        """Predictions (n, 2) as (ML, AP) in metres."""
        if (batch.n_rows, batch.n_features) != (self.spec.n_rows, self.spec.n_features):
            raise ShapeMismatch(
                f"{self.arch}: windows are {(batch.n_rows, batch.n_features)}, "
                f"model expects {(self.spec.n_rows, self.spec.n_features)}"
            )
        scaled = self.scaler.transform(batch)
        if isinstance(self.model, LinearModel):
            return self.model.predict(scaled)
        return self.target_scaler.inverse(predict_batches(self.model, scaled))

    def to_checkpoint(self) -> tuple[dict, dict[str, np.ndarray]]:
        header = {"spec": self.spec.model_dump(mode="json")}
        arrays = dict(self.scaler.to_arrays())
        if isinstance(self.model, LinearModel):
            header["uses_flag"] = {str(k): v for k, v in sorted(self.model.uses_flag.items())}
        else:
            arrays["target.mean"] = self.target_scaler.mean
            arrays["target.std"] = self.target_scaler.std
        arrays.update({f"model.{name}": value for name, value in self.model.state_dict().items()})
        return header, arrays

    @classmethod
    def from_checkpoint(cls, header: dict, arrays: dict[str, np.ndarray]) -> TrainedModel:
        spec = ModelSpec.model_validate(header["spec"])
        model = build_model(spec)
        state = {name.removeprefix("model."): value for name, value in arrays.items() if name.startswith("model.")}
        target_scaler = None
        if isinstance(model, LinearModel):
            model.load_state_dict(state, {int(k): bool(v) for k, v in header.get("uses_flag", {}).items()})
        else:
            model.load_state_dict(state)
            model.eval()
            target_scaler = TargetScaler(mean=arrays["target.mean"], std=arrays["target.std"])
        scaler = FeatureScaler.from_arrays({k: v for k, v in arrays.items() if k.startswith("scaler.")})
        return cls(spec=spec, model=model, scaler=scaler, target_scaler=target_scaler)


def fit_model(
    spec: ModelSpec,
    train: SampleBatch,
    val: SampleBatch | None = None,
    config: TrainConfig | None = None,
    standardize: bool = True,
) -> TrainedModel:
    """Fit ``spec`` on ``train``; networks early-stop on ``val``.

    Linear families are solved in closed form per trial and ignore ``val``.
    """
    if len(train) < 2:
        raise InsufficientSamples(f"{spec.arch}: {len(train)} training samples")
    model = build_model(spec)
    scaler = FeatureScaler.fit(train) if standardize else FeatureScaler.identity(train.n_features)
    train_scaled = scaler.transform(train)
    if isinstance(model, LinearModel):
        model.fit(train_scaled)
        return TrainedModel(spec=spec, model=model, scaler=scaler)
    if val is None or len(val) == 0:
        raise InsufficientSamples(f"{spec.arch}: networks need a non-empty early-stopping split")
    if config is None:
        config = TrainConfig(seed=spec.seed)
    target_scaler = TargetScaler.fit(train.targets)
    history = train_loop(
        model,
        train_scaled.with_targets(target_scaler.transform(train.targets)),
        scaler.transform(val).with_targets(target_scaler.transform(val.targets)),
        config,
    )
    return TrainedModel(spec=spec, model=model, scaler=scaler, target_scaler=target_scaler, history=history)


def fit_linear(
    batch: SampleBatch,
    variant: str = "LI",
    ridge_lambda: float = 1.0,
    standardize: bool = False,
) -> TrainedModel:
    """Closed-form per-trial linear fit; coefficients live in ``model.model.coefficients``.

    Without ``standardize`` the coefficients are in the units of the raw
    features: column 0 is the intercept.
    """
    values = {"ridge_lambda": ridge_lambda} if variant in ("LI2", "LH2") else {}
    spec = ModelSpec(
        params=params_for(variant, **values),
        n_rows=batch.n_rows,
        n_features=batch.n_features,
        n_trials=int(batch.trials.max()) + 1,
    )
    if not spec.is_linear:
        raise InvalidSpec(f"{variant} is not a linear family")
    return fit_model(spec, batch, standardize=standardize)
