"""Kinematic processing chain.

raw trial -> low-pass filter -> belt adjustment (or overground alignment)
-> velocities -> heel strikes -> gait cycles on the 20-phase grid
-> anomalous-cycle rejection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace

import numpy as np
import pandas as pd
from scipy import signal

from gaitscale.config.model import PreprocessSettings
from gaitscale.const import PHASES_PER_CYCLE
from gaitscale.dataio import Foot
from gaitscale.dataio import Task
from gaitscale.dataio import Trial
from gaitscale.errors import GaitscaleError

logger = logging.getLogger(__name__)


class TooShort(GaitscaleError):
    """Series is too short for the requested operation."""


class InvalidCutoff(GaitscaleError):
    """Cutoff frequency is not inside (0, fs/2)."""


class LengthMismatch(GaitscaleError):
    """Paired series differ in length."""


class NoGaitDetected(GaitscaleError):
    """Fewer than two heel strikes were found."""


class AllCyclesRejected(GaitscaleError):
    """Every gait cycle of a trial failed the anomaly checks."""


@dataclass(frozen=True, order=True)
class HeelStrikeEvent:
    time: float
    frame: int
    foot: Foot = field(compare=False)


@dataclass(frozen=True)
class PhaseRows:
    """Kinematics resampled at arbitrary (fractional) frames.

    ``positions`` and ``velocities`` are ``(rows, markers, 3)``; ``gaze`` is
    ``(rows, 2)`` when the trial carries fixations.
    """

    marker_names: tuple[str, ...]
    positions: np.ndarray
    velocities: np.ndarray
    gaze: np.ndarray | None = None

    def __len__(self) -> int:
        return self.positions.shape[0]

    def marker_index(self, name: str) -> int:
        return self.marker_names.index(name)

    @staticmethod
    def concat(parts: list[PhaseRows]) -> PhaseRows:
        gaze = None
        if parts[0].gaze is not None:
            gaze = np.concatenate([p.gaze for p in parts], axis=0)
        return PhaseRows(
            marker_names=parts[0].marker_names,
            positions=np.concatenate([p.positions for p in parts], axis=0),
            velocities=np.concatenate([p.velocities for p in parts], axis=0),
            gaze=gaze,
        )


@dataclass(frozen=True)
class GaitCycle:
    foot: Foot
    index: int
    start: HeelStrikeEvent
    end: HeelStrikeEvent
    rows: PhaseRows
    valid: bool = True

    @property
    def duration(self) -> float:
        return self.end.time - self.start.time

    @property
    def positions(self) -> np.ndarray:
        return self.rows.positions

    @property
    def velocities(self) -> np.ndarray:
        return self.rows.velocities


@dataclass(frozen=True)
class Rejection:
    cycle_index: int
    foot: Foot
    reason: str


@dataclass(frozen=True)
class ProcessedTrial:
    """A filtered, frame-aligned trial with its events and cycles."""

    trial: Trial
    velocities: dict[str, np.ndarray]
    events: dict[Foot, list[HeelStrikeEvent]]
    cycles: dict[Foot, list[GaitCycle]]
    rejections: list[Rejection]
    pelvis_markers: tuple[str, ...]
    foot_markers: dict[Foot, str]

    @property
    def id(self) -> int:
        return self.trial.id

    def rows_at_frames(self, frames: np.ndarray) -> PhaseRows:
        return resample_rows(self.trial, self.velocities, frames)

    def cycle_valid(self, foot: Foot, index: int) -> bool:
        cycles = self.cycles[foot]
        return 0 <= index < len(cycles) and cycles[index].valid

    def pelvis_position(self, frame: int) -> np.ndarray:
        return np.mean(
            [self.trial.markers[name][frame] for name in self.pelvis_markers], axis=0
        )

    def foot_position(self, foot: Foot, frame: int) -> np.ndarray:
        return self.trial.markers[self.foot_markers[foot]][frame]


def butterworth_lowpass_zerolag(
    x: np.ndarray, fs: float, fc: float = 6.0, order: int = 4
) -> np.ndarray:
    """Forward-backward Butterworth low-pass along axis 0.

    Args:
        x: Series, or ``(n, channels)`` array filtered per column.
        fs: Sampling rate in Hz.
        fc: Cutoff in Hz; the forward-backward gain at ``fc`` is 1/2.
        order: Order of the single-pass filter.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 < fc < fs / 2:
        raise InvalidCutoff(f"cutoff {fc} Hz must lie in (0, {fs / 2}) Hz")
    min_length = 3 * order
    if x.shape[0] < min_length:
        raise TooShort(f"need at least {min_length} samples, got {x.shape[0]}")
    sos = signal.butter(order, fc, btype="low", fs=fs, output="sos")
    padlen = min(3 * order, x.shape[0] - 1)
    return signal.sosfiltfilt(sos, x, axis=0, padtype="odd", padlen=padlen)


def finite_difference_velocity(positions: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order centered differences along axis 0.

    The two outermost samples at each end use second-order one-sided
    stencils.
    """
    f = np.asarray(positions, dtype=np.float64)
    n = f.shape[0]
    if n < 5:
        raise TooShort(f"need at least 5 samples, got {n}")
    v = np.empty_like(f)
    v[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * dt)
    for i in (0, 1):
        v[i] = (-3 * f[i] + 4 * f[i + 1] - f[i + 2]) / (2 * dt)
    for i in (n - 1, n - 2):
        v[i] = (3 * f[i] - 4 * f[i - 1] + f[i - 2]) / (2 * dt)
    return v


def belt_speed_adjust(y: np.ndarray, v: float, t: np.ndarray) -> np.ndarray:
    """Treadmill fore-aft position to the belt-adjusted frame: y + v t."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if y.shape[0] != t.shape[0]:
        raise LengthMismatch(f"y has {y.shape[0]} samples, t has {t.shape[0]}")
    if y.ndim > 1:
        return y + v * t.reshape((-1,) + (1,) * (y.ndim - 1))
    return y + v * t


def align_overground(trial: Trial, pelvis_markers: tuple[str, ...]) -> Trial:
    """Rotate and shift an overground trial.

    Afterwards the pelvis starts at (0, 0) and travels towards +y.
    """
    pelvis = np.mean([trial.marker(name) for name in pelvis_markers], axis=0)
    origin = pelvis[0, :2].copy()
    heading = pelvis[-1, :2] - origin
    norm = float(np.hypot(*heading))
    if norm == 0:
        logger.warning(f"trial {trial.id}: pelvis does not travel, skipping rotation")
        angle = 0.0
    else:
        angle = np.arctan2(heading[0], heading[1])
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    rotation = np.array([[cos_a, -sin_a], [sin_a, cos_a]])

    def _transform(xy: np.ndarray) -> np.ndarray:
        return (xy - origin) @ rotation.T

    markers = {}
    for name, trajectory in trial.markers.items():
        moved = trajectory.copy()
        moved[:, :2] = _transform(trajectory[:, :2])
        markers[name] = moved
    gaze = None if trial.gaze is None else _transform(trial.gaze)
    return replace(trial, markers=markers, gaze=gaze)


def detect_heel_strikes(
    foot_y: np.ndarray,
    pelvis_y: np.ndarray,
    fs: float,
    foot: Foot = Foot.Left,
    min_separation_s: float = 0.4,
    prominence_fraction: float = 0.1,
    t0: float = 0.0,
    min_record_s: float = 2.0,
) -> list[HeelStrikeEvent]:
    """Heel strikes at maxima of the foot-minus-pelvis fore-aft distance."""
    foot_y = np.asarray(foot_y, dtype=np.float64)
    pelvis_y = np.asarray(pelvis_y, dtype=np.float64)
    if foot_y.shape != pelvis_y.shape:
        raise LengthMismatch(
            f"foot series has {foot_y.shape[0]} samples, pelvis has {pelvis_y.shape[0]}"
        )
    if foot_y.shape[0] < min_record_s * fs:
        raise TooShort(f"heel-strike detection needs at least {min_record_s} s of data")
    d = foot_y - pelvis_y
    spread = float(np.ptp(d))
    if spread == 0:
        raise NoGaitDetected(f"{foot.value} foot: foot-pelvis distance is constant")
    peaks, _ = signal.find_peaks(
        d,
        distance=max(1, round(min_separation_s * fs)),
        prominence=prominence_fraction * spread,
    )
    if len(peaks) < 2:
        raise NoGaitDetected(f"{foot.value} foot: found {len(peaks)} heel strikes")
    return [
        HeelStrikeEvent(time=t0 + int(frame) / fs, frame=int(frame), foot=foot)
        for frame in peaks
    ]


def merge_events(events: dict[Foot, list[HeelStrikeEvent]]) -> list[HeelStrikeEvent]:
    merged = sorted(events[Foot.Left] + events[Foot.Right])
    repeats = sum(a.foot is b.foot for a, b in zip(merged, merged[1:], strict=False))
    if repeats:
        logger.warning(f"{repeats} heel strikes do not alternate between feet")
    return merged


def resample_rows(
    trial: Trial, velocities: dict[str, np.ndarray], frames: np.ndarray
) -> PhaseRows:
    """Linear interpolation of kinematics at fractional frame positions.

    Gaze is held from the most recent frame at or before each position.
    """
    frames = np.asarray(frames, dtype=np.float64)
    grid = np.arange(trial.n_frames, dtype=np.float64)
    names = tuple(trial.markers)
    positions = np.empty((len(frames), len(names), 3))
    speeds = np.empty_like(positions)
    for m, name in enumerate(names):
        for axis in range(3):
            positions[:, m, axis] = np.interp(frames, grid, trial.markers[name][:, axis])
            speeds[:, m, axis] = np.interp(frames, grid, velocities[name][:, axis])
    gaze = None
    if trial.gaze is not None:
        held = np.clip(np.floor(frames + 1e-9).astype(int), 0, trial.n_frames - 1)
        gaze = trial.gaze[held]
    return PhaseRows(marker_names=names, positions=positions, velocities=speeds, gaze=gaze)


def cycle_frames(start: HeelStrikeEvent, end: HeelStrikeEvent, rows: int) -> np.ndarray:
    return start.frame + (end.frame - start.frame) * np.arange(rows) / PHASES_PER_CYCLE


def segment_cycles(
    trial: Trial,
    events: dict[Foot, list[HeelStrikeEvent]],
    velocities: dict[str, np.ndarray] | None = None,
) -> list[GaitCycle]:
    """One cycle per consecutive same-foot event pair, on 20 phase rows."""
    if velocities is None:
        velocities = {
            name: finite_difference_velocity(p, 1.0 / trial.fs)
            for name, p in trial.markers.items()
        }
    cycles = []
    for foot in (Foot.Left, Foot.Right):
        foot_events = events.get(foot, [])
        if len(foot_events) < 2:
            raise NoGaitDetected(f"trial {trial.id}: {foot.value} foot has < 2 events")
        for index, (start, end) in enumerate(
            zip(foot_events, foot_events[1:], strict=False)
        ):
            rows = resample_rows(
                trial, velocities, cycle_frames(start, end, PHASES_PER_CYCLE)
            )
            cycles.append(GaitCycle(foot=foot, index=index, start=start, end=end, rows=rows))
    return cycles


def reject_anomalous_cycles(
    cycles: list[GaitCycle],
    trial: Trial,
    foot_markers: dict[Foot, str],
    stance_lift_threshold: float = 0.03,
    duration_band: tuple[float, float] = (0.5, 1.5),
) -> tuple[list[GaitCycle], list[Rejection]]:
    """Flag cycles with a lifted stance foot or an implausible duration.

    The stance check covers the first half of each cycle and applies to
    walking trials only.
    """
    if not cycles:
        raise AllCyclesRejected(f"trial {trial.id}: no cycles to check")
    median_duration = float(np.median([c.duration for c in cycles]))
    stance_rows = PHASES_PER_CYCLE // 2
    baselines: dict[Foot, float] = {}
    if trial.task.is_walking:
        for foot in (Foot.Left, Foot.Right):
            heights = [
                c.positions[:stance_rows, c.rows.marker_index(foot_markers[foot]), 2]
                for c in cycles
                if c.foot is foot
            ]
            if heights:
                baselines[foot] = float(np.median(np.concatenate(heights)))

    kept: list[GaitCycle] = []
    rejections: list[Rejection] = []
    low, high = duration_band
    for cycle in cycles:
        reasons = []
        if cycle.foot in baselines:
            m = cycle.rows.marker_index(foot_markers[cycle.foot])
            lift = np.max(cycle.positions[:stance_rows, m, 2]) - baselines[cycle.foot]
            if lift > stance_lift_threshold:
                reasons.append("stance_lift")
        if not low * median_duration <= cycle.duration <= high * median_duration:
            reasons.append("duration")
        if reasons:
            rejections.append(Rejection(cycle.index, cycle.foot, "+".join(reasons)))
            kept.append(replace(cycle, valid=False))
        else:
            kept.append(cycle)

    if rejections and len(rejections) == len(cycles):
        raise AllCyclesRejected(f"trial {trial.id}: all {len(cycles)} cycles rejected")
    if rejections:
        logger.info(
            f"trial {trial.id}: rejected {len(rejections)}/{len(cycles)} cycles "
            f"({100 * len(rejections) / len(cycles):.2f}%)"
        )
    return [c for c in kept if c.valid], rejections


def _fill_gaze(gaze: np.ndarray) -> np.ndarray:
    """Hold each fixation until the next one; rows before the first fixation are zero."""
    return pd.DataFrame(gaze).ffill().fillna(0.0).to_numpy(dtype=np.float64)


def preprocess_trial(trial: Trial, settings: PreprocessSettings) -> ProcessedTrial:
    """Run the full processing chain on one raw trial."""
    pelvis_markers = tuple(settings.pelvis_markers)
    foot_markers = {Foot.Left: settings.left_foot_marker, Foot.Right: settings.right_foot_marker}
    for name in (*pelvis_markers, *foot_markers.values()):
        trial.marker(name)

    markers = {
        name: butterworth_lowpass_zerolag(p, trial.fs, settings.cutoff_hz, settings.filter_order)
        for name, p in trial.markers.items()
    }
    trial = replace(trial, markers=markers)
    if trial.task is Task.OvergroundWalk:
        trial = align_overground(trial, pelvis_markers)
    elif trial.belt_speed:
        adjusted = {}
        for name, p in trial.markers.items():
            p = p.copy()
            p[:, 1] = belt_speed_adjust(p[:, 1], trial.belt_speed, trial.time)
            adjusted[name] = p
        gaze = trial.gaze
        if gaze is not None:
            gaze = gaze.copy()
            gaze[:, 1] = belt_speed_adjust(gaze[:, 1], trial.belt_speed, trial.time)
        trial = replace(trial, markers=adjusted, gaze=gaze)
    if trial.gaze is not None:
        trial = replace(trial, gaze=_fill_gaze(trial.gaze))

    velocities = {
        name: finite_difference_velocity(p, 1.0 / trial.fs) for name, p in trial.markers.items()
    }
    pelvis_y = np.mean([trial.markers[name][:, 1] for name in pelvis_markers], axis=0)
    events = {
        foot: detect_heel_strikes(
            trial.markers[marker][:, 1],
            pelvis_y,
            trial.fs,
            foot=foot,
            min_separation_s=settings.min_strike_separation_s,
            prominence_fraction=settings.strike_prominence_fraction,
            t0=float(trial.time[0]),
            min_record_s=settings.min_record_s,
        )
        for foot, marker in foot_markers.items()
    }
    merge_events(events)
    cycles = segment_cycles(trial, events, velocities)
    _, rejections = reject_anomalous_cycles(
        cycles,
        trial,
        foot_markers,
        stance_lift_threshold=settings.stance_lift_threshold_m,
        duration_band=(settings.duration_band_low, settings.duration_band_high),
    )
    rejected = {(r.foot, r.cycle_index) for r in rejections}
    by_foot: dict[Foot, list[GaitCycle]] = {Foot.Left: [], Foot.Right: []}
    for cycle in cycles:
        if (cycle.foot, cycle.index) in rejected:
            cycle = replace(cycle, valid=False)
        by_foot[cycle.foot].append(cycle)
    return ProcessedTrial(
        trial=trial,
        velocities=velocities,
        events=events,
        cycles=by_foot,
        rejections=rejections,
        pelvis_markers=pelvis_markers,
        foot_markers=foot_markers,
    )


def swing_velocity_profile(processed: ProcessedTrial) -> np.ndarray:
    """Mean fore-aft velocity of the striking foot on the 21-point grid.

    Averages every valid cycle of both feet; phase 1 is the closing heel
    strike of each cycle.
    """
    profiles = []
    for foot, cycles in processed.cycles.items():
        marker = processed.foot_markers[foot]
        for cycle in cycles:
            if not cycle.valid:
                continue
            frames = cycle_frames(cycle.start, cycle.end, PHASES_PER_CYCLE + 1)
            grid = np.arange(processed.trial.n_frames, dtype=np.float64)
            profiles.append(np.interp(frames, grid, processed.velocities[marker][:, 1]))
    return np.mean(profiles, axis=0)
