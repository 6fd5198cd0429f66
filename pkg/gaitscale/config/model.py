from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel
from pydantic import Field

from gaitscale.const import ARCHITECTURES
from gaitscale.const import DEFAULT_RUN_ID
from gaitscale.const import DEFAULT_RUNS_DIR
from gaitscale.const import MODALITIES
from gaitscale.const import PHASE_GRID
from gaitscale.errors import ConfigInvalid
from gaitscale.synthgait import SynthConfig

log = logging.getLogger(__name__)

# Only scalar fields (bool, int, float, str, optional variants) become CLI
# flags. Lists and nested models are read from the config file only.


class BasicSettings(BaseModel):
    """Basic run settings"""

    config: str | None = Field(default=None, description="Path to the TOML configuration file")
    out: str = Field(default=str(DEFAULT_RUNS_DIR), description="Root directory for run outputs")
    run_id: str = Field(default=DEFAULT_RUN_ID, description="Run directory name under --out")
    seed: int = Field(default=0, description="Seed for fold plans, searches and training")
    jobs: int = Field(default=1, description="Worker processes for the triple pool")
    only: str | None = Field(
        default=None,
        description="Restrict to triples matching 'context:modality:arch' (fnmatch patterns)",
    )
    debug: bool = Field(default=False, description="Enable debug logging")
    dump_samples: bool = Field(default=False, description="Write sample matrices per phase")
    version: bool = Field(default=False, description="Show version then exit")


class PreprocessSettings(BaseModel):
    """Filtering, event detection and cycle rejection settings"""

    pelvis_markers: list[str] = Field(default=["pelvis"], description="Markers averaged into the pelvis reference")
    left_foot_marker: str = Field(default="foot_l", description="Left foot marker name")
    right_foot_marker: str = Field(default="foot_r", description="Right foot marker name")
    cutoff_hz: float = Field(default=6.0, description="Low-pass cutoff frequency in Hz")
    filter_order: int = Field(default=4, description="Butterworth filter order")
    min_strike_separation_s: float = Field(
        default=0.4, description="Minimum time between heel strikes of one foot"
    )
    strike_prominence_fraction: float = Field(
        default=0.1, description="Heel-strike prominence as a fraction of the range"
    )
    min_record_s: float = Field(default=2.0, description="Shortest record accepted for event detection")
    stance_lift_threshold_m: float = Field(
        default=0.03, description="Allowed stance-foot rise above its baseline in m"
    )
    duration_band_low: float = Field(
        default=0.5, description="Shortest cycle, as a fraction of the median"
    )
    duration_band_high: float = Field(
        default=1.5, description="Longest cycle, as a fraction of the median"
    )


class SamplingSettings(BaseModel):
    """Sample construction settings"""

    modalities: list[str] = Field(default=list(MODALITIES), description="Input modalities")
    full_body_markers: list[str] = Field(
        default=[], description="Markers of the full-body modality; empty means every marker"
    )
    include_velocity: bool = Field(default=True, description="Append velocities to positions")
    history_strides: int = Field(default=3, description="Strides of history before the strike")
    max_abs_ml: float = Field(default=1.0, description="Sanity bound on lateral targets in m")
    max_abs_ap: float = Field(default=3.0, description="Sanity bound on fore-aft targets in m")
    phases: list[float] = Field(default=PHASE_GRID.tolist(), description="Ending phases evaluated")


class TrainingSettings(BaseModel):
    """Model training settings"""

    max_epochs: int = Field(default=1000, description="Maximum training epochs")
    patience: int = Field(default=50, description="Early-stopping patience in epochs")
    batch_size: int = Field(default=64, description="Mini-batch size")
    ridge_lambda: float = Field(default=1.0, description="Ridge penalty of LI2 and LH2")
    save_checkpoints: bool = Field(default=False, description="Persist one checkpoint per outer fold")
    save_history: bool = Field(default=True, description="Write training histories")


class CrossValSettings(BaseModel):
    """Nested cross-validation and smoothing settings"""

    architectures: list[str] = Field(default=list(ARCHITECTURES), description="Model families")
    search_budget: int = Field(default=100, description="Grid-search limit and random-search draws")
    lowess_frac: float = Field(default=0.4, description="LOWESS span fraction")
    lowess_iterations: int = Field(default=2, description="LOWESS robustness iterations")
    space_overrides: dict[str, dict[str, list]] = Field(
        default={}, description="Per-architecture subsets of the search spaces"
    )


class TimescaleSettings(BaseModel):
    """Timescale extraction settings"""

    onset_threshold: float = Field(default=0.05, description="ΔR² level the onset test must exceed")
    alpha: float = Field(default=0.05, description="Significance level")
    onset_replication: str = Field(
        default="folds", description="Replication unit of the onset test (folds or trials)"
    )
    swing_velocity_fraction: float = Field(
        default=0.05, description="Fraction of peak swing velocity marking swing initiation"
    )
    baseline_modality: str = Field(default="swing_foot", description="Modality used as baseline")


class StatsSettings(BaseModel):
    """Statistical test settings"""

    exact_cutoff: int = Field(default=12, description="Largest n using the exact Wilcoxon null")
    bootstrap_replicates: int = Field(default=2000, description="Bootstrap replicates")


class ContextSettings(BaseModel):
    """One data context: a synthetic walker or a directory of trials"""

    name: str = Field(default="synthetic", description="Context label")
    source: str = Field(default="synth", description="synth or files")
    dataset_dir: str | None = Field(default=None, description="Trial directory for file sources")
    synth: SynthConfig = Field(default_factory=SynthConfig)


class SettingsModel(BaseModel):
    """Main settings class that combines all sub-settings"""

    basic: BasicSettings = Field(default_factory=BasicSettings)
    preprocess: PreprocessSettings = Field(default_factory=PreprocessSettings)
    sampling: SamplingSettings = Field(default_factory=SamplingSettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    crossval: CrossValSettings = Field(default_factory=CrossValSettings)
    timescale: TimescaleSettings = Field(default_factory=TimescaleSettings)
    stats: StatsSettings = Field(default_factory=StatsSettings)
    contexts: list[ContextSettings] = Field(default=[ContextSettings()])

    def clone(self) -> SettingsModel:
        return self.model_copy(deep=True)

    def get_run_dir(self) -> Path:
        """Get the run directory, create if not exists"""
        run_dir = Path(self.basic.out) / self.basic.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        return run_dir

    def validate_settings(self) -> None:
        """Validate settings"""
        if self.basic.jobs < 1:
            raise ConfigInvalid("basic.jobs must be greater than 0")
        if self.basic.seed < 0:
            raise ConfigInvalid("basic.seed must be non-negative")
        if not self.basic.run_id or "/" in self.basic.run_id:
            raise ConfigInvalid(f"basic.run_id is not a directory name: {self.basic.run_id!r}")

        pre = self.preprocess
        if not pre.pelvis_markers:
            raise ConfigInvalid("preprocess.pelvis_markers must not be empty")
        if pre.cutoff_hz <= 0:
            raise ConfigInvalid("preprocess.cutoff_hz must be positive")
        if pre.filter_order < 1:
            raise ConfigInvalid("preprocess.filter_order must be at least 1")
        if not 0 < pre.duration_band_low < 1 < pre.duration_band_high:
            raise ConfigInvalid(
                "preprocess.duration_band_low and duration_band_high must bracket 1"
            )
        if not 0 <= pre.strike_prominence_fraction < 1:
            raise ConfigInvalid("preprocess.strike_prominence_fraction must lie in [0, 1)")

        sampling = self.sampling
        for modality in sampling.modalities:
            if modality not in MODALITIES:
                raise ConfigInvalid(
                    f"sampling.modalities: unknown modality {modality!r}, valid: {', '.join(MODALITIES)}"
                )
        for phase in sampling.phases:
            if not np.any(np.isclose(PHASE_GRID, phase, atol=1e-9)):
                raise ConfigInvalid(f"sampling.phases: {phase} is not on the 21-point grid")
        if sampling.history_strides < 1:
            raise ConfigInvalid("sampling.history_strides must be at least 1")
        if sampling.max_abs_ml <= 0 or sampling.max_abs_ap <= 0:
            raise ConfigInvalid("sampling target bounds must be positive")

        training = self.training
        if training.max_epochs < 1:
            raise ConfigInvalid("training.max_epochs must be at least 1")
        if training.patience < 1:
            raise ConfigInvalid("training.patience must be at least 1")
        if training.batch_size < 1:
            raise ConfigInvalid("training.batch_size must be at least 1")
        if training.ridge_lambda < 0:
            raise ConfigInvalid("training.ridge_lambda must be non-negative")

        crossval = self.crossval
        if not crossval.architectures:
            raise ConfigInvalid("crossval.architectures must not be empty")
        for arch in crossval.architectures:
            if arch not in ARCHITECTURES:
                raise ConfigInvalid(
                    f"crossval.architectures: unknown architecture {arch!r}, valid: {', '.join(ARCHITECTURES)}"
                )
        if crossval.search_budget < 1:
            raise ConfigInvalid("crossval.search_budget must be at least 1")
        if not 0 < crossval.lowess_frac <= 1:
            raise ConfigInvalid("crossval.lowess_frac must lie in (0, 1]")
        if crossval.lowess_iterations < 0:
            raise ConfigInvalid("crossval.lowess_iterations must be non-negative")
        from gaitscale.crossval.search import validate_space_overrides

        validate_space_overrides(crossval.space_overrides)

        timescale = self.timescale
        if timescale.onset_replication not in ("folds", "trials"):
            raise ConfigInvalid(
                f"timescale.onset_replication must be 'folds' or 'trials', got {timescale.onset_replication!r}"
            )
        if not 0 < timescale.alpha < 1:
            raise ConfigInvalid("timescale.alpha must lie in (0, 1)")
        if not 0 < timescale.swing_velocity_fraction < 1:
            raise ConfigInvalid("timescale.swing_velocity_fraction must lie in (0, 1)")
        if timescale.baseline_modality not in MODALITIES:
            raise ConfigInvalid(f"timescale.baseline_modality: unknown modality {timescale.baseline_modality!r}")

        if self.stats.exact_cutoff < 1:
            raise ConfigInvalid("stats.exact_cutoff must be at least 1")
        if self.stats.bootstrap_replicates < 1000:
            raise ConfigInvalid("stats.bootstrap_replicates must be at least 1000")

        self._validate_contexts()

    def _validate_contexts(self) -> None:
        from gaitscale.dataio import IoFailure
        from gaitscale.dataio import read_manifest

        if not self.contexts:
            raise ConfigInvalid("contexts must not be empty")
        names = [context.name for context in self.contexts]
        if len(set(names)) != len(names):
            raise ConfigInvalid(f"contexts: duplicate context names in {names}")
        for context in self.contexts:
            if ":" in context.name:
                raise ConfigInvalid(f"contexts: name {context.name!r} must not contain ':'")
            if context.source == "synth":
                context.synth.validate_settings()
            elif context.source == "files":
                if not context.dataset_dir:
                    raise ConfigInvalid(f"contexts.{context.name}.dataset_dir is required for file sources")
                directory = Path(context.dataset_dir)
                if not directory.is_dir():
                    raise ConfigInvalid(f"dataset directory does not exist: {directory}")
                try:
                    metas = read_manifest(directory)
                except IoFailure as e:
                    raise ConfigInvalid(str(e)) from e
                for meta in metas:
                    trial_path = directory / meta.file
                    if not trial_path.exists():
                        raise ConfigInvalid(f"trial file does not exist: {trial_path}")
            else:
                raise ConfigInvalid(
                    f"contexts.{context.name}.source must be 'synth' or 'files', got {context.source!r}"
                )
        log.debug(f"validated {len(self.contexts)} contexts")
