"""Timescale quantities read off evaluation curves.

ΔR² compares a modality with the swing-foot baseline of the same
architecture. The onset is the first phase at which ΔR² significantly
exceeds a threshold, the breakpoint is where the baseline curve starts
its late rise, and swing initiation is where the swing foot starts to
move forward.
"""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import Field

from gaitscale.config.model import StatsSettings
from gaitscale.config.model import TimescaleSettings
from gaitscale.const import PHASE_GRID
from gaitscale.crossval.evaluate import EvalCurve
from gaitscale.crossval.evaluate import MIN_SMOOTHING_POINTS
from gaitscale.crossval.evaluate import smooth_curve
from gaitscale.errors import GaitscaleError
from gaitscale.stats import AllZeroDiffs
from gaitscale.stats import ConstantInput
from gaitscale.stats import DegenerateX
from gaitscale.stats import MIN_PAIRS
from gaitscale.stats import TestResult
from gaitscale.stats import TooFewPairs
from gaitscale.stats import bootstrap_slope
from gaitscale.stats import linfit_ci
from gaitscale.stats import pearson_r
from gaitscale.stats import wilcoxon_signed_rank_one_sided

logger = logging.getLogger(__name__)

MIN_ONSET_REPLICATES = 5
PEAK_TIE_TOLERANCE = 1e-12


class GridMismatch(GaitscaleError):
    """Curves are not defined on the same phases."""


class TooFewFolds(GaitscaleError):
    """Fewer replicate values per phase than the onset test needs."""


class NoPeak(GaitscaleError):
    """The velocity trace never becomes positive."""


def _phases(phases) -> np.ndarray:
    return PHASE_GRID if phases is None else np.asarray(phases, dtype=np.float64)


def delta_r2(modality, baseline, modality_phases=None, baseline_phases=None) -> np.ndarray:
    """Pointwise R²(modality) - R²(baseline)."""
    modality = np.asarray(modality, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if modality.shape != baseline.shape:
        raise GridMismatch(f"curve shapes differ: {modality.shape} vs {baseline.shape}")
    if modality_phases is not None and baseline_phases is not None:
        if not np.allclose(modality_phases, baseline_phases, atol=1e-9):
            raise GridMismatch("modality and baseline curves use different phases")
    return modality - baseline


def delta_r2_curves(modality: EvalCurve, baseline: EvalCurve, axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Pooled ΔR² per phase and per-fold ΔR² (phases, folds) of two evaluation curves."""
    pooled = delta_r2(modality.r2(axis), baseline.r2(axis), modality.phases, baseline.phases)
    folds = delta_r2(modality.fold_r2(axis), baseline.fold_r2(axis))
    return pooled, folds


def intercept(curve, phases=None) -> float:
    """R² at phase 0."""
    phases = _phases(phases)
    at_zero = np.flatnonzero(np.isclose(phases, 0.0, atol=1e-9))
    if at_zero.size == 0:
        raise GridMismatch("phase grid does not contain phase 0")
    return float(np.asarray(curve, dtype=np.float64)[at_zero[0]])


def peak_delta_r2(curve, phases=None) -> tuple[float, float]:
    """(phase, value) of the largest ΔR², the earliest phase on ties."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise GridMismatch("empty ΔR² curve")
    top = np.nanmax(curve)
    # values within rounding of the maximum count as ties
    i = int(np.flatnonzero(curve >= top - PEAK_TIE_TOLERANCE * max(1.0, abs(top)))[0])
    return float(_phases(phases)[i]), float(curve[i])


def onset_phase(
    replicate_values,
    phases=None,
    threshold: float = 0.05,
    alpha: float = 0.05,
    peak_phase: float | None = None,
    exact_cutoff: int = 12,
) -> float | None:
    """Earliest phase, up to the peak, where ΔR² exceeds ``threshold`` significantly.

    ``replicate_values`` is (phases, replicates). Each phase is tested with
    a one-sided signed-rank test of ΔR² - ``threshold`` > 0.
    """
    values = np.asarray(replicate_values, dtype=np.float64)
    phases = _phases(phases)
    if values.ndim != 2 or values.shape[0] != phases.size:
        raise GridMismatch(f"replicate matrix {values.shape} does not fit {phases.size} phases")
    if values.shape[1] < MIN_ONSET_REPLICATES:
        raise TooFewFolds(f"onset test needs {MIN_ONSET_REPLICATES} replicates per phase, got {values.shape[1]}")
    if peak_phase is None:
        peak_phase, _ = peak_delta_r2(np.nanmean(values, axis=1), phases)
    for i, phi in enumerate(phases):
        if phi > peak_phase + 1e-9:
            break
        row = values[i][np.isfinite(values[i])]
        if row.size < MIN_ONSET_REPLICATES:
            continue
        try:
            result = wilcoxon_signed_rank_one_sided(row - threshold, exact_cutoff)
        except AllZeroDiffs:
            continue
        if result.p_value < alpha:
            return float(phi)
    return None


def breakpoint_phase(curve, phases=None) -> float:
    """Phase where the rise of an R² curve begins.

    Forward-difference slopes are compared with the average slope
    r = (R(end) - R(start)) / span. From the earliest steepest segment the
    trace walks back to the last segment flatter than r and returns the
    phase that follows it; phase 0 when every earlier segment is as steep.
    """
    curve = np.asarray(curve, dtype=np.float64)
    phases = _phases(phases)
    if curve.shape != phases.shape:
        raise GridMismatch(f"curve of {curve.size} points on {phases.size} phases")
    slopes = np.diff(curve) / np.diff(phases)
    average = (curve[-1] - curve[0]) / (phases[-1] - phases[0])
    tol = 1e-9 * max(abs(average), float(np.max(np.abs(slopes))), 1e-300)
    steepest = int(np.argmax(slopes))
    for i in range(steepest - 1, -1, -1):
        if slopes[i] < average - tol:
            return float(phases[i + 1])
    return float(phases[0])


def swing_initiation(velocity, phases=None, fraction: float = 0.05) -> float:
    """Phase after the last crossing below ``fraction`` of peak forward velocity before the peak."""
    velocity = np.asarray(velocity, dtype=np.float64)
    phases = _phases(phases)
    if velocity.shape != phases.shape:
        raise GridMismatch(f"velocity of {velocity.size} points on {phases.size} phases")
    peak = int(np.argmax(velocity))
    if not velocity[peak] > 0:
        raise NoPeak("forward velocity is never positive")
    level = fraction * velocity[peak]
    for i in range(peak - 1, -1, -1):
        if velocity[i] < level:
            return float(phases[i + 1])
    return float(phases[0])


def compare_onset_vs_swing(fp_timings, swing_initiations, exact_cutoff: int = 12) -> TestResult:
    """One-sided signed-rank test that foot-placement timing comes after swing initiation."""
    fp = np.asarray(fp_timings, dtype=np.float64)
    swing = np.asarray(swing_initiations, dtype=np.float64)
    if fp.shape != swing.shape:
        raise GridMismatch(f"{fp.size} timings paired with {swing.size} swing initiations")
    if fp.size < MIN_PAIRS:
        raise TooFewPairs(f"comparison needs {MIN_PAIRS} trials, got {fp.size}")
    try:
        return wilcoxon_signed_rank_one_sided(fp - swing, exact_cutoff)
    except AllZeroDiffs:
        return TestResult(statistic=0.0, p_value=1.0, n=0, method="exact")


class TimescaleReport(BaseModel):
    """Timescale quantities of one (context, modality, architecture, axis)."""

    context: str = Field(default="", description="Context label")
    modality: str = Field(default="", description="Input modality")
    arch: str = Field(default="", description="Architecture")
    axis: str = Field(default="", description="ml, ap or mean")
    phases: list[float] = Field(default=[], description="Ending phases")
    delta_r2: list[float] = Field(default=[], description="Pooled modality minus baseline R²")
    intercept: float = Field(default=0.0, description="Modality R² at phase 0")
    peak_phase: float = Field(default=0.0, description="Phase of the largest ΔR²")
    peak_value: float = Field(default=0.0, description="Largest ΔR²")
    onset_phase: float | None = Field(default=None, description="First significant phase, None if never")
    onset_replication: str = Field(default="folds", description="Replicates of the onset test")
    breakpoint_phase: float | None = Field(default=None, description="Baseline breakpoint on the smoothed curve")
    breakpoint_raw: float | None = Field(default=None, description="Baseline breakpoint on the raw curve")
    swing_initiation: float | None = Field(default=None, description="Median swing initiation over trials")
    critical_phase: float | None = Field(default=None, description="Scoring window end of the context")

    def is_empty(self) -> bool:
        return not self.phases

    def summary_row(self) -> dict:
        return {
            "context": self.context,
            "modality": self.modality,
            "arch": self.arch,
            "axis": self.axis,
            "intercept": self.intercept,
            "peak_phase": self.peak_phase,
            "peak_value": self.peak_value,
            "onset_phase": self.onset_phase,
            "breakpoint": self.breakpoint_phase,
            "swing_initiation": self.swing_initiation,
            "critical_phase": self.critical_phase,
        }


def _curve_values(curve: EvalCurve, axis: str) -> np.ndarray:
    return curve.r2(axis) if axis != "mean" else np.asarray(curve.r2_mean, dtype=np.float64)


def _smoothed(curve: EvalCurve, axis: str, frac: float, iterations: int) -> np.ndarray | None:
    if len(curve.phases) < MIN_SMOOTHING_POINTS:
        return None
    stored = getattr(curve, f"smoothed_{axis}")
    if stored:
        return np.asarray(stored, dtype=np.float64)
    return smooth_curve(_curve_values(curve, axis), np.asarray(curve.phases), frac, iterations).values


def timescale_report(
    modality: EvalCurve,
    baseline: EvalCurve,
    axis: str,
    settings: TimescaleSettings | None = None,
    stats: StatsSettings | None = None,
    trial_deltas: np.ndarray | None = None,
    swing_initiations=None,
    critical: float | None = None,
    lowess_frac: float = 0.4,
    lowess_iterations: int = 2,
) -> TimescaleReport:
    """Assemble a report from two curves of the same architecture.

    ``trial_deltas`` (phases, trials) replaces the per-fold values when the
    onset test replicates over trials.
    """
    settings = settings or TimescaleSettings()
    stats = stats or StatsSettings()
    phases = np.asarray(modality.phases, dtype=np.float64)
    pooled = delta_r2(_curve_values(modality, axis), _curve_values(baseline, axis), modality.phases, baseline.phases)
    peak_phase, peak_value = peak_delta_r2(pooled, phases)
    if settings.onset_replication == "trials" and trial_deltas is not None:
        replicates = np.asarray(trial_deltas, dtype=np.float64)
    elif axis == "mean":
        ml = delta_r2(modality.fold_r2("ml"), baseline.fold_r2("ml"))
        ap = delta_r2(modality.fold_r2("ap"), baseline.fold_r2("ap"))
        replicates = (ml + ap) / 2.0
    else:
        replicates = delta_r2(modality.fold_r2(axis), baseline.fold_r2(axis))
    onset = onset_phase(
        replicates, phases, settings.onset_threshold, settings.alpha, peak_phase, stats.exact_cutoff
    )
    smoothed_baseline = _smoothed(baseline, axis, lowess_frac, lowess_iterations)
    swing = None
    if swing_initiations is not None and len(swing_initiations):
        swing = float(np.median(swing_initiations))
    report = TimescaleReport(
        context=modality.context,
        modality=modality.modality,
        arch=modality.arch,
        axis=axis,
        phases=phases.tolist(),
        delta_r2=pooled.tolist(),
        intercept=intercept(_curve_values(modality, axis), phases),
        peak_phase=peak_phase,
        peak_value=peak_value,
        onset_phase=onset,
        onset_replication=settings.onset_replication,
        breakpoint_phase=None if smoothed_baseline is None else breakpoint_phase(smoothed_baseline, phases),
        breakpoint_raw=breakpoint_phase(_curve_values(baseline, axis), phases),
        swing_initiation=swing,
        critical_phase=critical,
    )
    onset_text = "n.s." if onset is None else f"{onset:.2f}"
    logger.info(
        f"{report.context}:{report.modality}:{report.arch} {axis}: peak ΔR² {peak_value:.3f} "
        f"at {peak_phase:.2f}, onset {onset_text}, breakpoint {report.breakpoint_phase}"
    )
    return report


def per_trial_breakpoints(trial_curves: pd.DataFrame, column: str, frac: float = 0.4, iterations: int = 2) -> pd.Series:
    """Breakpoint of each trial's smoothed curve; ``trial_curves`` has trial, phi and ``column``."""
    out = {}
    for trial, group in trial_curves.groupby("trial", sort=True):
        group = group.sort_values("phi")
        values = group[column].to_numpy(dtype=np.float64)
        phases = group["phi"].to_numpy(dtype=np.float64)
        if np.sum(np.isfinite(values)) < MIN_SMOOTHING_POINTS:
            continue
        out[int(trial)] = breakpoint_phase(smooth_curve(values, phases, frac, iterations).values, phases)
    return pd.Series(out, name="breakpoint", dtype=np.float64)


class TradeoffReport(BaseModel):
    """Across-trial relation of peak ΔR² to the modality intercept."""

    context: str = Field(default="", description="Context label")
    modality: str = Field(default="", description="Input modality")
    arch: str = Field(default="", description="Architecture")
    axis: str = Field(default="", description="ml, ap or mean")
    trials: list[int] = Field(default=[], description="Trial ids")
    intercepts: list[float] = Field(default=[], description="Per-trial modality R² at phase 0")
    peaks: list[float] = Field(default=[], description="Per-trial peak ΔR²")
    pearson_r: float | None = Field(default=None, description="Correlation of peak with intercept")
    slope: float | None = Field(default=None, description="OLS slope of peak on intercept")
    fit_intercept: float | None = Field(default=None, description="OLS intercept of peak on intercept")
    slope_ci_low: float | None = Field(default=None, description="Lower slope confidence bound")
    slope_ci_high: float | None = Field(default=None, description="Upper slope confidence bound")
    bootstrap: dict[str, float] = Field(default={}, description="Bootstrap slope summary")
    swing_test_p: float | None = Field(default=None, description="p of timing after swing initiation")
    swing_test_stars: str = Field(default="", description="Significance stars of the swing test")

    def is_empty(self) -> bool:
        return not self.trials


def tradeoff_report(
    modality_trials: pd.DataFrame,
    baseline_trials: pd.DataFrame,
    axis: str,
    context: str = "",
    modality: str = "",
    arch: str = "",
    stats: StatsSettings | None = None,
    seed: int = 0,
    swing_initiations: pd.Series | None = None,
    frac: float = 0.4,
    iterations: int = 2,
) -> TradeoffReport:
    """Per-trial intercepts and peaks with correlation, interval and bootstrap slope.

    Inputs are per-trial curves as produced by ``per_trial_r2``. When
    ``swing_initiations`` (indexed by trial) is given, the per-trial
    baseline breakpoints are tested against them.
    """
    stats = stats or StatsSettings()
    column = f"r2_{axis}"
    merged = modality_trials.merge(baseline_trials, on=["trial", "phi"], suffixes=("", "_baseline"))
    merged["delta"] = merged[column] - merged[f"{column}_baseline"]
    trials, intercepts, peaks = [], [], []
    for trial, group in merged.groupby("trial", sort=True):
        group = group.sort_values("phi")
        at_zero = group[np.isclose(group["phi"], 0.0, atol=1e-9)]
        if at_zero.empty or not np.isfinite(group["delta"]).any():
            continue
        trials.append(int(trial))
        intercepts.append(float(at_zero[column].iloc[0]))
        peaks.append(float(np.nanmax(group["delta"])))
    report = TradeoffReport(
        context=context, modality=modality, arch=arch, axis=axis, trials=trials, intercepts=intercepts, peaks=peaks
    )
    if len(trials) >= 3:
        try:
            report.pearson_r = pearson_r(intercepts, peaks)
            fit = linfit_ci(intercepts, peaks)
            report.slope, report.fit_intercept = fit.slope, fit.intercept
            report.slope_ci_low, report.slope_ci_high = fit.slope_ci
        except (ConstantInput, DegenerateX) as e:
            logger.warning(f"{context}:{modality}:{arch} {axis}: no trade-off fit ({e})")
    if len(trials) >= MIN_PAIRS:
        try:
            report.bootstrap = bootstrap_slope(
                intercepts, peaks, stats.bootstrap_replicates, seed
            ).summary()
        except DegenerateX as e:
            logger.warning(f"{context}:{modality}:{arch} {axis}: no bootstrap ({e})")
    if swing_initiations is not None:
        breakpoints = per_trial_breakpoints(baseline_trials, column, frac, iterations)
        paired = pd.concat([breakpoints, swing_initiations.rename("swing")], axis=1, join="inner").dropna()
        if len(paired) >= MIN_PAIRS:
            result = compare_onset_vs_swing(paired["breakpoint"], paired["swing"], stats.exact_cutoff)
            report.swing_test_p = result.p_value
            report.swing_test_stars = result.stars
    return report
