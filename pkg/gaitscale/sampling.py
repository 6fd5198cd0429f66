"""Model-ready samples: input windows, trial IDs, L/R flags and targets.

For a heel strike of foot F that is the k-th strike of that foot, the
window starts at phase 0 of F's stride ``k - history`` and ends at phase
``phi`` of F's final stride before the strike (the stride ending at the
strike itself). With the default three strides of history the window has
``41 + 20 * phi`` rows.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from gaitscale.config.model import PreprocessSettings
from gaitscale.config.model import SamplingSettings
from gaitscale.const import PHASE_GRID
from gaitscale.const import PHASES_PER_CYCLE
from gaitscale.dataio import Foot
from gaitscale.dataio import write_table
from gaitscale.errors import GaitscaleError
from gaitscale.preprocess import HeelStrikeEvent
from gaitscale.preprocess import PhaseRows
from gaitscale.preprocess import ProcessedTrial

logger = logging.getLogger(__name__)

_AXES = ("x", "y", "z")


class NoPriorOppositeStrike(GaitscaleError):
    """The opposite foot has no heel strike before the predicted one."""


class InvalidPhase(GaitscaleError):
    """Ending phase is not on the 21-point grid."""


class InsufficientHistory(GaitscaleError):
    """A strike lacks the required valid strides of history."""


class UnknownMarker(GaitscaleError):
    """A modality references a marker the trial does not carry."""


class TargetOutOfBounds(GaitscaleError):
    """A foot-placement target exceeds the sanity bounds."""


class ModalityKind(enum.Enum):
    Com = "com"
    FullBody = "full_body"
    SwingFoot = "swing_foot"
    Gaze = "gaze"


@dataclass(frozen=True)
class ModalitySpec:
    """Which channels feed a model.

    ``full_body_markers`` empty means every marker of the trial.
    """

    kind: ModalityKind
    pelvis_markers: tuple[str, ...] = ("pelvis",)
    full_body_markers: tuple[str, ...] = ()
    include_velocity: bool = True

    @classmethod
    def from_settings(
        cls,
        kind: str | ModalityKind,
        preprocess: PreprocessSettings,
        sampling: SamplingSettings,
    ) -> ModalitySpec:
        return cls(
            kind=ModalityKind(kind),
            pelvis_markers=tuple(preprocess.pelvis_markers),
            full_body_markers=tuple(sampling.full_body_markers),
            include_velocity=sampling.include_velocity,
        )

    def markers_for(self, processed: ProcessedTrial, foot: Foot) -> tuple[str, ...]:
        """Sorted marker names this modality reads for a strike of ``foot``."""
        available = processed.trial.markers
        if self.kind is ModalityKind.Com:
            names = self.pelvis_markers
        elif self.kind is ModalityKind.FullBody:
            names = self.full_body_markers or tuple(available)
        elif self.kind is ModalityKind.SwingFoot:
            names = (processed.foot_markers[foot],)
        else:
            return ()
        if not names:
            raise UnknownMarker(f"modality {self.kind.value} has no markers configured")
        for name in names:
            if name not in available:
                raise UnknownMarker(f"trial {processed.id}: modality {self.kind.value} needs marker {name!r}")
        return tuple(sorted(names))

    def feature_names(self, processed: ProcessedTrial, foot: Foot) -> tuple[str, ...]:
        if self.kind is ModalityKind.Gaze:
            return ("gaze_x", "gaze_y")
        markers = self.markers_for(processed, foot)
        if self.kind is ModalityKind.Com:
            markers = ("com",)
        elif self.kind is ModalityKind.SwingFoot:
            markers = ("swing_foot",)
        kinds = ("pos", "vel") if self.include_velocity else ("pos",)
        return tuple(f"{m}_{axis}_{k}" for m in markers for axis in _AXES for k in kinds)


@dataclass(frozen=True)
class FootPlacement:
    ml: float
    ap: float

    def as_array(self) -> np.ndarray:
        return np.array([self.ml, self.ap])

    def check_bounds(self, max_abs_ml: float = 1.0, max_abs_ap: float = 3.0) -> FootPlacement:
        if not (np.isfinite(self.ml) and np.isfinite(self.ap)):
            raise TargetOutOfBounds(f"non-finite target ({self.ml}, {self.ap})")
        if abs(self.ml) >= max_abs_ml or abs(self.ap) >= max_abs_ap:
            raise TargetOutOfBounds(
                f"target ({self.ml:.3f}, {self.ap:.3f}) m outside bounds ({max_abs_ml}, {max_abs_ap})"
            )
        return self


@dataclass(frozen=True)
class Sample:
    """One prediction instance; ``window`` is (rows, features)."""

    window: np.ndarray
    trial: int
    foot: Foot
    index: int
    phi: float
    target: FootPlacement

    @property
    def flag(self) -> int:
        return self.foot.flag

    @property
    def key(self) -> tuple[int, str, int]:
        return (self.trial, self.foot.value, self.index)


@dataclass(frozen=True)
class SampleBatch:
    """Stacked samples of one (context, modality, phase).

    ``windows`` is (n, rows, features); ``targets`` is (n, 2) as (ML, AP).
    """

    windows: np.ndarray
    trials: np.ndarray
    flags: np.ndarray
    targets: np.ndarray
    phi: float
    keys: tuple[tuple[int, str, int], ...]
    feature_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def n_rows(self) -> int:
        return self.windows.shape[1]

    @property
    def n_features(self) -> int:
        return self.windows.shape[2]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], feature_names: Sequence[str] = ()) -> SampleBatch:
        if not samples:
            raise InsufficientHistory("no samples to stack")
        return cls(
            windows=np.stack([s.window for s in samples]),
            trials=np.array([s.trial for s in samples], dtype=np.int64),
            flags=np.array([s.flag for s in samples], dtype=np.int64),
            targets=np.stack([s.target.as_array() for s in samples]),
            phi=samples[0].phi,
            keys=tuple(s.key for s in samples),
            feature_names=tuple(feature_names),
        )

    def subset(self, indices: np.ndarray | Sequence[int]) -> SampleBatch:
        indices = np.asarray(indices, dtype=np.int64)
        return SampleBatch(
            windows=self.windows[indices],
            trials=self.trials[indices],
            flags=self.flags[indices],
            targets=self.targets[indices],
            phi=self.phi,
            keys=tuple(self.keys[i] for i in indices),
            feature_names=self.feature_names,
        )

    def with_targets(self, targets: np.ndarray) -> SampleBatch:
        return SampleBatch(
            windows=self.windows,
            trials=self.trials,
            flags=self.flags,
            targets=np.asarray(targets, dtype=np.float64),
            phi=self.phi,
            keys=self.keys,
            feature_names=self.feature_names,
        )

    def with_windows(self, windows: np.ndarray) -> SampleBatch:
        return SampleBatch(
            windows=np.asarray(windows, dtype=np.float64),
            trials=self.trials,
            flags=self.flags,
            targets=self.targets,
            phi=self.phi,
            keys=self.keys,
            feature_names=self.feature_names,
        )


def check_phase(phi: float) -> float:
    matches = np.flatnonzero(np.isclose(PHASE_GRID, phi, atol=1e-9))
    if matches.size == 0:
        raise InvalidPhase(f"phase {phi} is not on the 21-point grid")
    return float(PHASE_GRID[matches[0]])


def window_rows(phi: float, history_strides: int = 3) -> int:
    return PHASES_PER_CYCLE * (history_strides - 1) + 1 + round(PHASES_PER_CYCLE * check_phase(phi))


def relative_placement(strike_xy: np.ndarray, contact_xy: np.ndarray) -> FootPlacement:
    """Striking-foot contact relative to the opposite foot's contact."""
    delta = np.asarray(strike_xy, dtype=np.float64)[:2] - np.asarray(contact_xy, dtype=np.float64)[:2]
    return FootPlacement(ml=float(delta[0]), ap=float(delta[1]))


def foot_placement_target(processed: ProcessedTrial, strike: HeelStrikeEvent) -> FootPlacement:
    """Placement of ``strike`` relative to the opposite foot's previous contact.

    Positions are read at the event frames in the belt-adjusted frame.
    """
    opposite = strike.foot.opposite
    prior = [e for e in processed.events[opposite] if e.frame < strike.frame]
    if not prior:
        raise NoPriorOppositeStrike(
            f"trial {processed.id}: {strike.foot.value} strike at frame {strike.frame} "
            f"has no earlier {opposite.value} strike"
        )
    return relative_placement(
        processed.foot_position(strike.foot, strike.frame),
        processed.foot_position(opposite, prior[-1].frame),
    )


def modality_features(
    processed: ProcessedTrial, rows: PhaseRows, modality: ModalitySpec, foot: Foot
) -> np.ndarray:
    """Feature columns (rows, m): sorted marker, then axis, then position/velocity."""
    if modality.kind is ModalityKind.Gaze:
        if rows.gaze is None:
            raise UnknownMarker(f"trial {processed.id} has no gaze track")
        return np.asarray(rows.gaze, dtype=np.float64)
    markers = modality.markers_for(processed, foot)
    indices = [rows.marker_index(name) for name in markers]
    positions = rows.positions[:, indices, :]
    velocities = rows.velocities[:, indices, :]
    if modality.kind is ModalityKind.Com:
        positions = positions.mean(axis=1, keepdims=True)
        velocities = velocities.mean(axis=1, keepdims=True)
    if modality.include_velocity:
        # (rows, markers, axes, 2) -> pos/vel interleaved per axis
        stacked = np.stack([positions, velocities], axis=-1)
    else:
        stacked = positions[..., None]
    return stacked.reshape(stacked.shape[0], -1)


def _head(rows: PhaseRows, n: int) -> PhaseRows:
    return PhaseRows(
        marker_names=rows.marker_names,
        positions=rows.positions[:n],
        velocities=rows.velocities[:n],
        gaze=None if rows.gaze is None else rows.gaze[:n],
    )


def strike_window(
    processed: ProcessedTrial, foot: Foot, k: int, phi: float, history_strides: int = 3
) -> PhaseRows:
    """Phase rows of the window ending at ``phi`` before the k-th strike of ``foot``."""
    phi = check_phase(phi)
    cycles = processed.cycles[foot]
    first = k - history_strides
    if first < 0 or k - 1 >= len(cycles):
        raise InsufficientHistory(
            f"trial {processed.id}: {foot.value} strike {k} lacks {history_strides} strides of history"
        )
    history = cycles[first:k]
    invalid = [c.index for c in history if not c.valid]
    if invalid:
        raise InsufficientHistory(
            f"trial {processed.id}: {foot.value} strike {k} history contains rejected cycles {invalid}"
        )
    final_rows = round(PHASES_PER_CYCLE * phi) + 1
    parts = [c.rows for c in history[:-1]]
    final = history[-1]
    if final_rows <= PHASES_PER_CYCLE:
        parts.append(_head(final.rows, final_rows))
    else:
        parts.append(final.rows)
        parts.append(processed.rows_at_frames(np.array([float(final.end.frame)])))
    return PhaseRows.concat(parts)


def build_samples(
    processed: Sequence[ProcessedTrial],
    modality: ModalitySpec,
    phi: float,
    settings: SamplingSettings | None = None,
) -> list[Sample]:
    """Samples at ending phase ``phi`` for every strike with valid history.

    Strikes without a prior opposite contact, with rejected history or with
    out-of-bounds targets are dropped; the drop counts are logged.
    """
    if settings is None:
        settings = SamplingSettings()
    phi = check_phase(phi)
    samples: list[Sample] = []
    dropped: Counter[str] = Counter()
    for trial in sorted(processed, key=lambda p: p.id):
        for foot in (Foot.Left, Foot.Right):
            for k, event in enumerate(trial.events[foot]):
                try:
                    rows = strike_window(trial, foot, k, phi, settings.history_strides)
                    target = foot_placement_target(trial, event).check_bounds(
                        settings.max_abs_ml, settings.max_abs_ap
                    )
                except InsufficientHistory:
                    dropped["history"] += 1
                    continue
                except NoPriorOppositeStrike:
                    dropped["no_prior_opposite"] += 1
                    continue
                except TargetOutOfBounds as e:
                    logger.warning(str(e))
                    dropped["target_bounds"] += 1
                    continue
                window = modality_features(trial, rows, modality, foot)
                if not np.all(np.isfinite(window)):
                    dropped["non_finite"] += 1
                    continue
                samples.append(Sample(window=window, trial=trial.id, foot=foot, index=k, phi=phi, target=target))
    if not samples:
        raise InsufficientHistory(
            f"no strike has {settings.history_strides} valid strides of history ({dict(dropped)})"
        )
    logger.debug(f"{modality.kind.value} phi={phi}: {len(samples)} samples, dropped {dict(dropped)}")
    return samples


def build_batch(
    processed: Sequence[ProcessedTrial],
    modality: ModalitySpec,
    phi: float,
    settings: SamplingSettings | None = None,
) -> SampleBatch:
    samples = build_samples(processed, modality, phi, settings)
    first = min(processed, key=lambda p: p.id)
    return SampleBatch.from_samples(samples, modality.feature_names(first, Foot.Left))


def write_samples(batch: SampleBatch, path: Path | str) -> None:
    """One row per sample: flattened window, then v, l, phi and the target."""
    n, rows, features = batch.windows.shape
    names = batch.feature_names or tuple(f"f{j}" for j in range(features))
    columns = [f"t{r:02d}_{name}" for r in range(rows) for name in names]
    frame = pd.DataFrame(batch.windows.reshape(n, rows * features), columns=columns)
    frame["v"] = batch.trials
    frame["l"] = batch.flags
    frame["phi"] = batch.phi
    frame["y_ml"] = batch.targets[:, 0]
    frame["y_ap"] = batch.targets[:, 1]
    write_table(frame, path)
