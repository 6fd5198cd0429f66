import numpy as np
import pandas as pd
import pytest

from gaitscale.config import BasicSettings
from gaitscale.config import ContextSettings
from gaitscale.config import CrossValSettings
from gaitscale.config import SamplingSettings
from gaitscale.config import SettingsModel
from gaitscale.const import PHASE_GRID
from gaitscale.crossval import EvalCurve
from gaitscale.dataio import save_report
from gaitscale.high_level import Pipeline
from gaitscale.high_level import Triple
from gaitscale.high_level import phase_tag
from gaitscale.high_level import run_pipeline
from gaitscale.main import EXIT_CONFIG_INVALID
from gaitscale.main import main
from gaitscale.report import MissingCurves
from gaitscale.report import curve_path
from gaitscale.report import emit_plots
from gaitscale.report import load_scores
from gaitscale.synthgait import SynthConfig

PHASES = [0.0, 0.25, 0.5, 0.75, 1.0]


def _settings(out, run_id: str, **basic) -> SettingsModel:
    return SettingsModel(
        basic=BasicSettings(out=str(out), run_id=run_id, seed=1, **basic),
        sampling=SamplingSettings(modalities=["com", "swing_foot"], phases=PHASES),
        crossval=CrossValSettings(architectures=["LI", "LI2"]),
        contexts=[ContextSettings(name="synthetic", synth=SynthConfig(n_trials=4, strides=30, seed=7))],
    )


def test_phase_tag():
    assert [phase_tag(phi) for phi in (0.0, 0.05, 1.0)] == ["phi_00", "phi_01", "phi_20"]


def test_triple_filter(tmp_path):
    pipeline = Pipeline(_settings(tmp_path, "filter", only="synthetic:com:LI*"))
    assert pipeline.triples() == [Triple("synthetic", "com", "LI"), Triple("synthetic", "com", "LI2")]
    assert Triple("a", "gaze", "GRU").matches("*:gaze:*")
    assert not Triple("a", "com", "GRU").matches("*:gaze:*")


@pytest.mark.slow
def test_full_run_is_reproducible(tmp_path):
    assert run_pipeline(_settings(tmp_path, "first")) == 0
    assert run_pipeline(_settings(tmp_path, "second")) == 0

    first, second = tmp_path / "first", tmp_path / "second"
    produced = [
        "config.toml",
        "curves.csv",
        "scores.csv",
        "scores/rmse_gap.csv",
        "timescales/summary.csv",
        "curves/synthetic__com__LI2.toml",
        "predictions/synthetic__swing_foot__LI.csv",
        "preprocess/synthetic/rejections.csv",
        "preprocess/synthetic/swing_initiation.csv",
        "plots/synthetic__com.svg",
        "ingest/trials.csv",
    ]
    for name in produced:
        assert (first / name).is_file(), name
    for name in produced[1:]:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name

    curves = pd.read_csv(first / "curves.csv")
    assert set(curves["arch"]) == {"LI", "LI2"}
    assert sorted(set(curves["phi"])) == PHASES
    summary = pd.read_csv(first / "timescales" / "summary.csv")
    assert set(summary["modality"]) == {"com"}
    assert set(summary["axis"]) == {"ml", "ap", "mean"}


def _curve(modality: str, arch: str, rmse: np.ndarray) -> EvalCurve:
    zeros = np.zeros(PHASE_GRID.size).tolist()
    return EvalCurve(
        context="lab",
        modality=modality,
        arch=arch,
        phases=PHASE_GRID.tolist(),
        r2_ml=zeros,
        r2_ap=zeros,
        r2_mean=zeros,
        rmse_ml=rmse.tolist(),
        rmse_ap=rmse.tolist(),
        rmse=rmse.tolist(),
    )


def test_evaluate_uses_critical_phase_of_best_modality(tmp_path):
    settings = _settings(tmp_path, "scores")
    pipeline = Pipeline(settings)
    dip = np.ones(21)
    dip[8] = 0.5
    curves = [
        _curve("swing_foot", "LI", np.ones(21)),
        _curve("swing_foot", "LI2", np.full(21, 1.1)),
        _curve("com", "LI", dip),
        _curve("com", "LI2", np.full(21, 1.2)),
    ]
    for curve in curves:
        path = curve_path(pipeline.run_dir, curve.context, curve.modality, curve.arch)
        save_report(curve, path)

    pipeline.evaluate()

    scores = load_scores(pipeline.run_dir)
    assert [(s.context, s.modality) for s in scores] == [("lab", "com"), ("lab", "swing_foot")]
    assert all(s.critical_phase == pytest.approx(0.4) for s in scores)
    assert all(s.best_arch == "LI" for s in scores)
    gap = pd.read_csv(pipeline.run_dir / "scores" / "rmse_gap.csv")
    assert set(gap["modality"]) == {"com"}
    assert not pipeline.failures


def test_report_without_curves_fails(tmp_path):
    with pytest.raises(MissingCurves):
        emit_plots(tmp_path)
    assert run_pipeline(_settings(tmp_path, "empty"), "report") == 1


def test_config_error_exit_code(tmp_path):
    assert main(["--out", str(tmp_path), "--jobs", "0"]) == EXIT_CONFIG_INVALID


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "gaitscale version" in capsys.readouterr().out
