from gaitscale.config import ConfigManager
from gaitscale.config import SettingsModel
from gaitscale.const import __version__
from gaitscale.crossval import EvalCurve
from gaitscale.crossval import ModelScore
from gaitscale.crossval import evaluate_curve
from gaitscale.crossval import model_score
from gaitscale.crossval import nested_cv_evaluate
from gaitscale.dataio import Dataset
from gaitscale.dataio import Trial
from gaitscale.dataio import load_dataset
from gaitscale.errors import GaitscaleError
from gaitscale.high_level import Pipeline
from gaitscale.high_level import run_pipeline
from gaitscale.report import emit_plots
from gaitscale.synthgait import SynthConfig
from gaitscale.synthgait import generate
from gaitscale.timescale import TimescaleReport
from gaitscale.timescale import timescale_report

__all__ = [
    "ConfigManager",
    "Dataset",
    "EvalCurve",
    "GaitscaleError",
    "ModelScore",
    "Pipeline",
    "SettingsModel",
    "SynthConfig",
    "TimescaleReport",
    "Trial",
    "__version__",
    "emit_plots",
    "evaluate_curve",
    "generate",
    "load_dataset",
    "model_score",
    "nested_cv_evaluate",
    "run_pipeline",
    "timescale_report",
]
