"""Run-directory layout, result tables, terminal score tables and SVG plots.

Plots only render numbers that are already stored in the report files of
the run directory.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.table import Table  # noqa: E402

from gaitscale.const import AXES  # noqa: E402
from gaitscale.crossval.evaluate import EvalCurve  # noqa: E402
from gaitscale.crossval.scoring import ModelScore  # noqa: E402
from gaitscale.crossval.scoring import color_band  # noqa: E402
from gaitscale.dataio import load_report  # noqa: E402
from gaitscale.errors import GaitscaleError  # noqa: E402
from gaitscale.timescale import TimescaleReport  # noqa: E402
from gaitscale.timescale import TradeoffReport  # noqa: E402

logger = logging.getLogger(__name__)

CURVES_DIR = "curves"
SCORES_DIR = "scores"
TIMESCALES_DIR = "timescales"
PLOTS_DIR = "plots"
PREDICTIONS_DIR = "predictions"
PREPROCESS_DIR = "preprocess"
CHECKPOINTS_DIR = "checkpoints"
SAMPLES_DIR = "samples"
HISTORY_DIR = "history"

BAND_STYLES = {
    "dark_green": "bold green4",
    "light_green": "green3",
    "orange": "dark_orange",
    "red": "red",
}

_SVG_METADATA = {"Date": None, "Creator": None}


class MissingCurves(GaitscaleError):
    """The run directory holds no evaluation curves."""


def triple_name(context: str, modality: str, arch: str | None = None) -> str:
    parts = [context, modality] if arch is None else [context, modality, arch]
    return "__".join(parts)


def curve_path(run_dir: Path, context: str, modality: str, arch: str) -> Path:
    return Path(run_dir) / CURVES_DIR / f"{triple_name(context, modality, arch)}.toml"


def score_path(run_dir: Path, context: str, modality: str) -> Path:
    return Path(run_dir) / SCORES_DIR / f"{triple_name(context, modality)}.toml"


def timescale_path(run_dir: Path, context: str, modality: str, arch: str, axis: str) -> Path:
    return Path(run_dir) / TIMESCALES_DIR / f"{triple_name(context, modality, arch)}__{axis}.toml"


def tradeoff_path(run_dir: Path, context: str, modality: str, arch: str, axis: str) -> Path:
    return Path(run_dir) / TIMESCALES_DIR / f"tradeoff__{triple_name(context, modality, arch)}__{axis}.toml"


def _load_all(directory: Path, kind: type, pattern: str = "*.toml") -> list:
    if not directory.is_dir():
        return []
    loaded = []
    for path in sorted(directory.glob(pattern)):
        report = load_report(path)
        if isinstance(report, kind):
            loaded.append(report)
    return loaded


def load_curves(run_dir: Path) -> list[EvalCurve]:
    return _load_all(Path(run_dir) / CURVES_DIR, EvalCurve)


def load_scores(run_dir: Path) -> list[ModelScore]:
    return _load_all(Path(run_dir) / SCORES_DIR, ModelScore)


def load_timescales(run_dir: Path) -> list[TimescaleReport]:
    return _load_all(Path(run_dir) / TIMESCALES_DIR, TimescaleReport)


def load_tradeoffs(run_dir: Path) -> list[TradeoffReport]:
    return _load_all(Path(run_dir) / TIMESCALES_DIR, TradeoffReport, "tradeoff__*.toml")


def curves_table(curves: list[EvalCurve]) -> pd.DataFrame:
    """Long table keyed by context, modality, arch, axis and phase."""
    columns = ["context", "modality", "arch", "axis", "phi", "r2", "r2_smoothed", "rmse"]
    if not curves:
        return pd.DataFrame(columns=columns)
    return pd.concat([curve.to_frame() for curve in curves], ignore_index=True)[columns]


def scores_table(scores: list[ModelScore]) -> pd.DataFrame:
    rows = []
    for score in scores:
        for arch, raw, normalized in zip(score.archs, score.scores, score.normalized, strict=True):
            rows.append(
                {
                    "context": score.context,
                    "modality": score.modality,
                    "arch": arch,
                    "score": raw,
                    "normalized": normalized,
                    "band": color_band(normalized),
                    "critical_phase": score.critical_phase,
                    "best": arch == score.best_arch,
                }
            )
    return pd.DataFrame(
        rows, columns=["context", "modality", "arch", "score", "normalized", "band", "critical_phase", "best"]
    )


def timescales_table(reports: list[TimescaleReport]) -> pd.DataFrame:
    return pd.DataFrame([report.summary_row() for report in reports])


def score_rich_table(scores: list[ModelScore]) -> Table:
    """Normalized scores, one row per architecture and one column per (context, modality)."""
    table = Table(title="Normalized model scores")
    table.add_column("Model")
    archs: list[str] = []
    for score in scores:
        table.add_column(f"{score.context}\n{score.modality}", justify="right")
        archs.extend(a for a in score.archs if a not in archs)
    for arch in archs:
        cells = []
        for score in scores:
            if arch not in score.archs:
                cells.append("")
                continue
            value = score.score_of(arch)
            cells.append(f"[{BAND_STYLES[color_band(value)]}]{value:.3f}[/]")
        table.add_row(arch, *cells)
    return table


def print_scores(scores: list[ModelScore], console: Console | None = None) -> None:
    if not scores:
        return
    (console or Console()).print(score_rich_table(scores))


def _plot_group(
    path: Path,
    curves: list[EvalCurve],
    reports: dict[tuple[str, str], TimescaleReport],
) -> None:
    fig, axes = plt.subplots(2, len(AXES), figsize=(5 * len(AXES), 7), sharex=True, squeeze=False)
    first = curves[0]
    for col, axis in enumerate(AXES):
        top, bottom = axes[0, col], axes[1, col]
        for curve in curves:
            phases = np.asarray(curve.phases)
            (line,) = top.plot(phases, curve.r2(axis), "o", markersize=3, label=curve.arch)
            if getattr(curve, f"smoothed_{axis}"):
                top.plot(phases, curve.smoothed(axis), "-", color=line.get_color(), linewidth=1)
            report = reports.get((curve.arch, axis))
            if report is None:
                continue
            bottom.plot(report.phases, report.delta_r2, "-o", markersize=3, color=line.get_color(), label=curve.arch)
            bottom.plot([report.peak_phase], [report.peak_value], "^", color=line.get_color())
            if report.onset_phase is None:
                bottom.annotate(f"{curve.arch} onset n.s.", xy=(0.02, 0.95), xycoords="axes fraction", fontsize=7)
            else:
                bottom.axvline(report.onset_phase, color=line.get_color(), linestyle=":", linewidth=1)
            if report.breakpoint_phase is not None:
                top.axvline(report.breakpoint_phase, color="grey", linestyle="--", linewidth=0.8)
            if report.swing_initiation is not None:
                for ax in (top, bottom):
                    ax.axvspan(report.swing_initiation, 1.0, color="0.9", zorder=0)
        top.set_title(f"{first.context} / {first.modality} / {axis}")
        top.set_ylabel("R²")
        bottom.set_ylabel("ΔR² vs baseline")
        bottom.set_xlabel("ending phase")
        bottom.axhline(0.0, color="black", linewidth=0.5)
        top.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)


def emit_plots(run_dir: Path | str) -> list[Path]:
    """One SVG per (context, modality) with R² curves and ΔR² markers."""
    run_dir = Path(run_dir)
    curves = load_curves(run_dir)
    if not curves:
        raise MissingCurves(f"no curves under {run_dir / CURVES_DIR}")
    reports = {(r.context, r.modality, r.arch, r.axis): r for r in load_timescales(run_dir)}
    groups: dict[tuple[str, str], list[EvalCurve]] = defaultdict(list)
    for curve in curves:
        groups[(curve.context, curve.modality)].append(curve)
    paths = []
    with plt.rc_context({"svg.hashsalt": "gaitscale", "svg.fonttype": "none"}):
        for (context, modality), group in sorted(groups.items()):
            group = sorted(group, key=lambda c: c.arch)
            group_reports = {
                (arch, axis): report
                for (c, m, arch, axis), report in reports.items()
                if c == context and m == modality
            }
            path = run_dir / PLOTS_DIR / f"{triple_name(context, modality)}.svg"
            _plot_group(path, group, group_reports)
            logger.info(f"wrote {path}")
            paths.append(path)
    return paths
