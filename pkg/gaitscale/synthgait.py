"""Synthetic walker with a scripted foot-placement controller.

Every trial is built in the belt-adjusted (world) frame and then stored in
the treadmill frame, so the pipeline has to undo the belt motion exactly
as it does for recorded data.

Construction, per trial:

* heel strikes sit on exact frame indices, left and right half a stride
  apart;
* the pelvis progresses at the trial speed; lateral and vertical pelvis
  channels carry a deterministic sway plus, for every strike, a narrow
  bump centred at the control phase of the striking foot's final stride;
* the bump amplitudes are the CoM-state deviations the controller reads,
  and the strike's placement relative to the opposite foot's previous
  contact is ``offset + gain @ state + noise``;
* each foot's fore-aft distance to the pelvis is a cosine peaking at its
  own heel strikes, so the relative-distance detector recovers the
  scripted events; the foot moves towards its next placement between
  ``placement_ramp_start`` and ``placement_ramp_end`` of its stride and is
  still around every contact, which keeps the filtered distance maximum on
  the scripted frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import Field

from gaitscale.const import PHASE_GRID
from gaitscale.dataio import Dataset
from gaitscale.dataio import Foot
from gaitscale.dataio import Task
from gaitscale.dataio import Trial
from gaitscale.dataio import write_table
from gaitscale.errors import ConfigInvalid

logger = logging.getLogger(__name__)

# order of the CoM-state features: sorted axis, then position/velocity
COM_STATE_COLUMNS = ("x_pos", "x_vel", "y_pos", "y_vel", "z_pos", "z_vel")
_FORE_AFT_STATE = (2, 3)
_SWING_LIFT_START = 0.6


class SynthConfig(BaseModel):
    """Synthetic walker settings"""

    n_trials: int = Field(default=8, description="Number of trials T")
    strides: int = Field(default=200, description="Strides per trial")
    cadence: float = Field(default=0.9, description="Stride frequency in Hz")
    fs: float = Field(default=100.0, description="Sampling rate in Hz")
    control_phase: float = Field(
        default=0.5, description="Phase of the final stride the controller reads"
    )
    gain: list[list[float]] = Field(
        default=[[1.0, 0.2, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0, 0.2]],
        description="Gain B from CoM-state deviations (x, vx, y, vy, z, vz) to (ML, AP) placement",
    )
    noise_sigma: float = Field(default=0.01, description="Placement noise std in m")
    offset_sigma: float = Field(default=0.02, description="Spread of per-trial offsets in m")
    belt_speed: float = Field(default=1.2, description="Nominal walking speed in m/s")
    step_width: float = Field(default=0.0, description="Nominal lateral step width in m")
    placement_ramp_start: float = Field(
        default=0.6, description="Stride phase at which the foot starts moving to its next placement"
    )
    placement_ramp_end: float = Field(
        default=0.85, description="Stride phase at which the foot reaches its next placement"
    )
    state_position_sigma: float = Field(default=0.02, description="CoM position deviation std in m")
    state_velocity_sigma: float = Field(default=0.1, description="CoM velocity deviation std in m/s")
    state_bump_width: float = Field(
        default=0.06, description="Width of the CoM deviation bump as a fraction of the stride"
    )
    sway_amplitude: float = Field(default=0.03, description="Lateral pelvis sway in m")
    bounce_amplitude: float = Field(default=0.02, description="Vertical pelvis bounce in m")
    swing_height: float = Field(default=0.08, description="Foot clearance during swing in m")
    with_full_body: bool = Field(default=True, description="Emit knee and torso markers")
    with_gaze: bool = Field(default=True, description="Emit gaze fixations")
    gaze_sigma: float = Field(default=0.01, description="Fixation scatter in m")
    seed: int = Field(default=0, description="Generator seed")

    def validate_settings(self) -> None:
        if self.n_trials < 1:
            raise ConfigInvalid("synth.n_trials must be >= 1")
        if self.strides < 5:
            raise ConfigInvalid("synth.strides must be >= 5")
        if self.noise_sigma < 0 or self.offset_sigma < 0:
            raise ConfigInvalid("synth.noise_sigma and synth.offset_sigma must be >= 0")
        if not np.any(np.isclose(PHASE_GRID, self.control_phase, atol=1e-9)):
            raise ConfigInvalid(
                f"synth.control_phase {self.control_phase} is not on the 21-point grid"
            )
        gain = np.asarray(self.gain, dtype=np.float64)
        if gain.shape != (2, len(COM_STATE_COLUMNS)):
            raise ConfigInvalid(f"synth.gain must be 2x6, got {gain.shape}")
        if np.any(gain[:, _FORE_AFT_STATE] != 0):
            raise ConfigInvalid(
                "synth.gain columns for the fore-aft CoM state must be zero: "
                "the synthetic walker's fore-aft progression carries no per-stride variation"
            )
        if not 0.5 <= self.placement_ramp_start < self.placement_ramp_end <= 0.9:
            raise ConfigInvalid(
                "synth.placement_ramp_start and placement_ramp_end must satisfy 0.5 <= start < end <= 0.9"
            )
        if self.cadence <= 0 or self.fs <= 0:
            raise ConfigInvalid("synth.cadence and synth.fs must be positive")

    @property
    def stride_frames(self) -> int:
        # even, so right strikes fall on whole frames half a stride later
        return 2 * round(self.fs / (2 * self.cadence))

    @property
    def stride_period(self) -> float:
        return self.stride_frames / self.fs


class CeilingReport(BaseModel):
    """Maximum achievable pooled R² of a synthetic dataset"""

    noise_sigma: float
    r2_max: dict[str, float]
    target_variance: dict[str, float]
    per_trial_variance_ml: list[float]
    per_trial_variance_ap: list[float]


@dataclass(frozen=True)
class SynthTruth:
    """Generator ground truth attached to a synthetic dataset.

    ``strikes[v]`` has one row per heel strike with a prior opposite
    contact: foot, index, frame, time, the CoM-state deviation, the
    per-(trial, foot) offset, the noise draw and the resulting target.
    """

    config: SynthConfig
    strikes: dict[int, pd.DataFrame]

    def all_strikes(self) -> pd.DataFrame:
        return pd.concat(
            [frame.assign(trial=v) for v, frame in sorted(self.strikes.items())],
            ignore_index=True,
        )


def _ramp(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * u))


def _hold_and_ramp(
    t: np.ndarray,
    strike_times: np.ndarray,
    values: np.ndarray,
    period: float,
    ramp_start: float,
    ramp_end: float,
) -> np.ndarray:
    """Hold ``values[k-1]`` after strike k-1, ramp to ``values[k]`` in late swing."""
    out = np.full_like(t, values[0])
    for k in range(1, len(strike_times)):
        begin = strike_times[k - 1] + ramp_start * period
        end = strike_times[k - 1] + ramp_end * period
        span = (t >= strike_times[k - 1]) & (t < strike_times[k])
        u = (t[span] - begin) / (end - begin)
        out[span] = values[k - 1] + (values[k] - values[k - 1]) * _ramp(u)
    out[t >= strike_times[-1]] = values[-1]
    return out


def _lift(t: np.ndarray, strike_times: np.ndarray, period: float, height: float) -> np.ndarray:
    out = np.zeros_like(t)
    for k in range(1, len(strike_times)):
        begin = strike_times[k - 1] + _SWING_LIFT_START * period
        span = (t >= begin) & (t < strike_times[k])
        u = (t[span] - begin) / (strike_times[k] - begin)
        out[span] = height * np.sin(np.pi * u) ** 2
    return out


class _Bumps:
    """Sum of Gaussian position bumps and derivative-of-Gaussian velocity bumps."""

    def __init__(self, centres: np.ndarray, pos_amp: np.ndarray, vel_amp: np.ndarray, width: float):
        self.centres = centres
        self.pos_amp = pos_amp
        self.vel_amp = vel_amp
        self.width = width

    def value(self, t: np.ndarray) -> np.ndarray:
        tau = t[:, None] - self.centres[None, :]
        g = np.exp(-0.5 * (tau / self.width) ** 2)
        return (g * self.pos_amp + tau * g * self.vel_amp).sum(axis=1)

    def rate(self, t: np.ndarray) -> np.ndarray:
        tau = t[:, None] - self.centres[None, :]
        g = np.exp(-0.5 * (tau / self.width) ** 2)
        dg = -tau / self.width**2 * g
        return (dg * self.pos_amp + (g + tau * dg) * self.vel_amp).sum(axis=1)


def _generate_trial(config: SynthConfig, v: int) -> tuple[Trial, pd.DataFrame]:
    rng = np.random.default_rng([config.seed, v])
    fs = config.fs
    n_stride = config.stride_frames
    period = config.stride_period
    omega = 2 * np.pi / period
    gain = np.asarray(config.gain, dtype=np.float64)

    offset_ml, offset_ap = rng.normal(0.0, config.offset_sigma, size=2)
    base_step = config.belt_speed * period / 2
    speed = 2 * (base_step + offset_ap) / period
    amplitude = speed / omega

    first = n_stride // 2
    frames = {
        Foot.Left: first + n_stride * np.arange(config.strides + 1),
        Foot.Right: first + n_stride // 2 + n_stride * np.arange(config.strides + 1),
    }
    n_frames = int(frames[Foot.Right][-1] + n_stride // 2 + 1)
    t = np.arange(n_frames) / fs
    strike_times = {foot: f / fs for foot, f in frames.items()}

    # CoM deviation bumps, one per strike with a completed previous stride
    centres, keys = [], []
    for foot in (Foot.Left, Foot.Right):
        for k in range(1, config.strides + 1):
            centres.append(strike_times[foot][k - 1] + config.control_phase * period)
            keys.append((foot, k))
    centres = np.asarray(centres)
    width = config.state_bump_width * period
    draws = {
        axis: (
            rng.normal(0.0, config.state_position_sigma, size=len(centres)),
            rng.normal(0.0, config.state_velocity_sigma, size=len(centres)),
        )
        for axis in ("x", "z")
    }
    bumps = {axis: _Bumps(centres, pos, vel, width) for axis, (pos, vel) in draws.items()}
    state_at = {
        key: np.array(
            [
                bumps["x"].value(np.array([c]))[0],
                bumps["x"].rate(np.array([c]))[0],
                0.0,
                0.0,
                bumps["z"].value(np.array([c]))[0],
                bumps["z"].rate(np.array([c]))[0],
            ]
        )
        for key, c in zip(keys, centres, strict=True)
    }

    # events in time order; each placement is relative to the previous contact
    events = sorted(
        [(strike_times[foot][k], foot, k) for foot in (Foot.Left, Foot.Right) for k in range(config.strides + 1)]
    )
    landing: dict[tuple[Foot, int], np.ndarray] = {}
    first_time, first_foot, first_k = events[0]
    landing[(first_foot, first_k)] = np.array(
        [-0.5 * config.step_width, speed * first_time + amplitude]
    )
    rows = []
    for (_, prev_foot, prev_k), (time, foot, k) in zip(events, events[1:], strict=False):
        sign = 1.0 if foot is Foot.Right else -1.0
        offset = np.array([sign * (config.step_width + offset_ml), base_step + offset_ap])
        state = state_at.get((foot, k), np.zeros(len(COM_STATE_COLUMNS)))
        noise = rng.normal(0.0, config.noise_sigma, size=2)
        target = offset + gain @ state + noise
        landing[(foot, k)] = landing[(prev_foot, prev_k)] + target
        rows.append(
            {
                "foot": foot.value,
                "index": k,
                "frame": int(frames[foot][k]),
                "time": time,
                **{f"com_{name}": value for name, value in zip(COM_STATE_COLUMNS, state, strict=True)},
                "offset_ml": offset[0],
                "offset_ap": offset[1],
                "noise_ml": noise[0],
                "noise_ap": noise[1],
                "target_ml": target[0],
                "target_ap": target[1],
            }
        )

    pelvis = np.empty((n_frames, 3))
    phase_left = omega * (t - strike_times[Foot.Left][0])
    pelvis[:, 0] = -config.sway_amplitude * np.sin(phase_left) + bumps["x"].value(t)
    pelvis[:, 1] = speed * t
    pelvis[:, 2] = 1.0 + config.bounce_amplitude * np.cos(2 * phase_left) + bumps["z"].value(t)

    markers = {"pelvis": pelvis}
    for foot, name in ((Foot.Left, "foot_l"), (Foot.Right, "foot_r")):
        n_k = config.strides + 1
        xs = np.array([landing[(foot, k)][0] for k in range(n_k)])
        ys = np.array([landing[(foot, k)][1] for k in range(n_k)])
        deltas = ys - speed * strike_times[foot] - amplitude
        foot_xyz = np.empty((n_frames, 3))
        foot_xyz[:, 0] = _hold_and_ramp(
            t, strike_times[foot], xs, period, config.placement_ramp_start, config.placement_ramp_end
        )
        foot_xyz[:, 1] = (
            speed * t
            + amplitude * np.cos(omega * (t - strike_times[foot][0]))
            + _hold_and_ramp(
                t, strike_times[foot], deltas, period, config.placement_ramp_start, config.placement_ramp_end
            )
        )
        foot_xyz[:, 2] = 0.05 + _lift(t, strike_times[foot], period, config.swing_height)
        markers[name] = foot_xyz
    if config.with_full_body:
        for side, name in (("l", "foot_l"), ("r", "foot_r")):
            markers[f"knee_{side}"] = 0.5 * (pelvis + markers[name]) + np.array([0.0, 0.05, 0.0])
        markers["torso"] = pelvis + np.array([0.0, 0.02, 0.45])

    gaze = None
    if config.with_gaze:
        gaze = np.full((n_frames, 2), np.nan)
        ordered = [(foot, k) for _, foot, k in events]
        for n, (time, foot, k) in enumerate(events):
            if n + 2 >= len(ordered):
                break
            frame = int(frames[foot][k])
            gaze[frame] = landing[ordered[n + 2]] + rng.normal(0.0, config.gaze_sigma, size=2)
        gaze[0] = landing[ordered[min(2, len(ordered) - 1)]]

    # world frame -> treadmill frame
    for trajectory in markers.values():
        trajectory[:, 1] -= speed * t
    if gaze is not None:
        gaze[:, 1] -= speed * t

    trial = Trial(
        id=v,
        time=t,
        markers=markers,
        fs=fs,
        belt_speed=speed,
        task=Task.TreadmillWalk,
        gaze=gaze,
    )
    return trial, pd.DataFrame(rows)


def generate(config: SynthConfig, context: str = "synthetic") -> Dataset:
    """Generate a dataset; the ground truth rides on ``dataset.ground_truth``."""
    config.validate_settings()
    trials, strikes = [], {}
    for v in range(config.n_trials):
        trial, truth = _generate_trial(config, v)
        trials.append(trial)
        strikes[v] = truth
    logger.info(
        f"generated {config.n_trials} synthetic trials x {config.strides} strides "
        f"(control phase {config.control_phase}, seed {config.seed})"
    )
    return Dataset(trials=trials, context=context, ground_truth=SynthTruth(config, strikes))


def ceiling_from_variance(noise_sigma: float, variance: float) -> float:
    if variance <= 0:
        return 0.0
    return float(np.clip(1.0 - noise_sigma**2 / variance, 0.0, 1.0))


def analytic_ceiling(config: SynthConfig, dataset: Dataset | None = None) -> CeilingReport:
    """R²_max = 1 − σ_ε² / Var(y) per axis, from the realized targets."""
    if dataset is None:
        dataset = generate(config)
    truth: SynthTruth = dataset.ground_truth
    pooled = truth.all_strikes()
    variance = {
        "ml": float(np.var(pooled["target_ml"])),
        "ap": float(np.var(pooled["target_ap"])),
    }
    per_trial = {
        axis: [float(np.var(truth.strikes[v][f"target_{axis}"])) for v in sorted(truth.strikes)]
        for axis in ("ml", "ap")
    }
    return CeilingReport(
        noise_sigma=config.noise_sigma,
        r2_max={axis: ceiling_from_variance(config.noise_sigma, var) for axis, var in variance.items()},
        target_variance=variance,
        per_trial_variance_ml=per_trial["ml"],
        per_trial_variance_ap=per_trial["ap"],
    )


def write_ground_truth(truth: SynthTruth, directory: Path | str) -> list[Path]:
    """One sidecar table per trial next to the trial files."""
    directory = Path(directory)
    paths = []
    for v, frame in sorted(truth.strikes.items()):
        path = directory / f"trial_{v:03d}_truth.csv"
        write_table(frame, path)
        paths.append(path)
    return paths
