from dataclasses import replace

import numpy as np
import pytest

from gaitscale.config.model import PreprocessSettings
from gaitscale.dataio import Foot
from gaitscale.dataio import Task
from gaitscale.dataio import Trial
from gaitscale.preprocess import HeelStrikeEvent
from gaitscale.preprocess import InvalidCutoff
from gaitscale.preprocess import LengthMismatch
from gaitscale.preprocess import NoGaitDetected
from gaitscale.preprocess import TooShort
from gaitscale.preprocess import align_overground
from gaitscale.preprocess import belt_speed_adjust
from gaitscale.preprocess import butterworth_lowpass_zerolag
from gaitscale.preprocess import detect_heel_strikes
from gaitscale.preprocess import finite_difference_velocity
from gaitscale.preprocess import preprocess_trial
from gaitscale.preprocess import reject_anomalous_cycles
from gaitscale.preprocess import segment_cycles
from gaitscale.preprocess import swing_velocity_profile

FS = 100.0


def _amplitude(x: np.ndarray) -> float:
    return float(np.sqrt(2 * np.mean(x**2)))


def test_lowpass_keeps_constant():
    x = np.full(500, 3.25)
    np.testing.assert_allclose(butterworth_lowpass_zerolag(x, FS), 3.25, atol=1e-12)
    np.testing.assert_allclose(butterworth_lowpass_zerolag(x, 250.0, fc=20.0), 3.25, atol=1e-12)


def test_lowpass_halves_amplitude_at_cutoff():
    t = np.arange(2000) / FS
    out = butterworth_lowpass_zerolag(np.sin(2 * np.pi * 6.0 * t), FS, fc=6.0)
    assert _amplitude(out[500:1500]) == pytest.approx(0.5, rel=0.02)


def test_lowpass_removes_five_times_cutoff():
    t = np.arange(2000) / FS
    out = butterworth_lowpass_zerolag(np.sin(2 * np.pi * 30.0 * t), FS, fc=6.0)
    assert np.max(np.abs(out[500:1500])) < 1e-4


def test_lowpass_filters_columns_independently():
    t = np.arange(400) / FS
    x = np.column_stack([np.ones_like(t), 2 * np.ones_like(t)])
    out = butterworth_lowpass_zerolag(x, FS)
    assert out.shape == (400, 2)
    np.testing.assert_allclose(out[:, 1], 2.0, atol=1e-12)


@pytest.mark.parametrize("fc", [0.0, 50.0, 75.0])
def test_lowpass_rejects_cutoff_outside_band(fc):
    with pytest.raises(InvalidCutoff):
        butterworth_lowpass_zerolag(np.zeros(100), FS, fc=fc)


def test_lowpass_rejects_short_series():
    with pytest.raises(TooShort):
        butterworth_lowpass_zerolag(np.zeros(11), FS, order=4)


def test_velocity_of_ramp_is_exact():
    dt = 0.01
    t = np.arange(50) * dt
    v = finite_difference_velocity(2 * t + 1, dt)
    np.testing.assert_allclose(v, 2.0, atol=1e-9)


def test_velocity_of_cubic_is_exact_inside():
    dt = 0.01
    t = np.arange(100) * dt
    v = finite_difference_velocity(t**3, dt)
    np.testing.assert_allclose(v[2:-2], 3 * t[2:-2] ** 2, atol=1e-9)


def test_velocity_of_sine_is_fourth_order():
    dt = 0.01
    t = np.arange(700) * dt
    v = finite_difference_velocity(np.sin(t), dt)
    assert np.max(np.abs(v[2:-2] - np.cos(t[2:-2]))) < 1e-8


def test_velocity_needs_five_samples():
    with pytest.raises(TooShort):
        finite_difference_velocity(np.arange(4.0), 0.01)


def test_belt_adjust_zero_input():
    t = np.arange(100) / FS
    np.testing.assert_allclose(belt_speed_adjust(np.zeros(100), 1.2, t), 1.2 * t)


def test_belt_adjust_zero_speed_is_identity(rng):
    y = rng.normal(size=100)
    np.testing.assert_array_equal(belt_speed_adjust(y, 0.0, np.arange(100) / FS), y)


def test_belt_adjust_adds_belt_slope():
    t = np.arange(1100) / FS
    y = 0.3 * np.sin(2 * np.pi * t / 1.1)
    adjusted = belt_speed_adjust(y, 1.0, t)
    slope = np.polyfit(t, adjusted, 1)[0] - np.polyfit(t, y, 1)[0]
    assert slope == pytest.approx(1.0, abs=1e-9)


def test_belt_adjust_length_mismatch():
    with pytest.raises(LengthMismatch):
        belt_speed_adjust(np.zeros(10), 1.0, np.zeros(9))


def test_heel_strikes_on_sinusoid():
    t = np.arange(1000) / FS
    events = detect_heel_strikes(np.sin(2 * np.pi * t / 1.1), np.zeros_like(t), FS)
    assert len(events) == 9
    expected = 0.275 + 1.1 * np.arange(9)
    np.testing.assert_allclose([e.time for e in events], expected, atol=0.006)
    assert all(e.foot is Foot.Left for e in events)


def test_heel_strikes_constant_distance():
    with pytest.raises(NoGaitDetected):
        detect_heel_strikes(np.ones(1000), np.zeros(1000), FS)


def test_heel_strikes_short_record():
    with pytest.raises(TooShort):
        detect_heel_strikes(np.zeros(150), np.zeros(150), FS)


def test_heel_strikes_recover_synthetic_truth(small_dataset, small_processed):
    for processed in small_processed:
        truth = small_dataset.ground_truth.strikes[processed.id]
        for foot in (Foot.Left, Foot.Right):
            detected = {e.frame for e in processed.events[foot]}
            scripted = set(truth.loc[truth["foot"] == foot.value, "frame"].tolist())
            assert scripted <= detected


def _ramp_trial(n_frames: int, channel) -> Trial:
    t = np.arange(n_frames) / FS
    marker = np.column_stack([channel(t), np.zeros_like(t), np.zeros_like(t)])
    return Trial(id=0, time=t, markers={"m": marker}, fs=FS)


def _events(foot: Foot, frames: list[int]) -> list[HeelStrikeEvent]:
    return [HeelStrikeEvent(time=f / FS, frame=f, foot=foot) for f in frames]


def test_segment_cycles_twenty_frame_cycle_keeps_raw_rows():
    trial = _ramp_trial(80, lambda t: t)
    events = {Foot.Left: _events(Foot.Left, [0, 20, 40]), Foot.Right: _events(Foot.Right, [10, 30])}
    cycles = segment_cycles(trial, events)
    first = cycles[0]
    assert first.foot is Foot.Left
    assert first.positions.shape == (20, 1, 3)
    np.testing.assert_array_equal(first.positions[:, 0, :], trial.markers["m"][:20])


def test_segment_cycles_linear_channel_is_linear_in_phase():
    trial = _ramp_trial(120, lambda t: 3 * t - 1)
    events = {Foot.Left: _events(Foot.Left, [3, 40]), Foot.Right: _events(Foot.Right, [20, 57])}
    cycle = segment_cycles(trial, events)[0]
    expected = 3 * (3 + 37 * np.arange(20) / 20) / FS - 1
    np.testing.assert_allclose(cycle.positions[:, 0, 0], expected, atol=1e-12)


def test_segment_cycles_quadratic_channel():
    trial = _ramp_trial(80, lambda t: t**2)
    events = {Foot.Left: _events(Foot.Left, [0, 37]), Foot.Right: _events(Foot.Right, [18, 55])}
    cycle = segment_cycles(trial, events)[0]
    expected = (0.37 * np.arange(20) / 20) ** 2
    np.testing.assert_allclose(cycle.positions[:, 0, 0], expected, atol=3e-5)


def test_segment_cycles_needs_two_events_per_foot():
    trial = _ramp_trial(80, lambda t: t)
    with pytest.raises(NoGaitDetected):
        segment_cycles(trial, {Foot.Left: _events(Foot.Left, [0, 20]), Foot.Right: _events(Foot.Right, [10])})


def test_clean_synthetic_trials_keep_every_cycle(small_processed):
    for processed in small_processed:
        assert processed.rejections == []
        assert all(c.valid for cycles in processed.cycles.values() for c in cycles)


def test_raised_stance_foot_is_rejected(small_dataset, small_processed):
    raw = small_dataset.trials[0]
    target = small_processed[0].cycles[Foot.Left][3]
    foot = raw.markers["foot_l"].copy()
    foot[target.start.frame + 3 : target.start.frame + 45, 2] += 0.10
    trial = replace(raw, markers={**raw.markers, "foot_l": foot})

    processed = preprocess_trial(trial, PreprocessSettings())

    reasons = {(r.foot, r.cycle_index): r.reason for r in processed.rejections}
    assert reasons[(Foot.Left, 3)] == "stance_lift"
    assert not processed.cycle_valid(Foot.Left, 3)
    assert processed.cycle_valid(Foot.Left, 2)


def test_missing_heel_strike_is_rejected_for_duration(small_processed):
    processed = small_processed[1]
    events = dict(processed.events)
    events[Foot.Right] = events[Foot.Right][:5] + events[Foot.Right][6:]
    cycles = segment_cycles(processed.trial, events, processed.velocities)
    kept, rejections = reject_anomalous_cycles(cycles, processed.trial, processed.foot_markers)

    assert len(rejections) == 1
    assert rejections[0].foot is Foot.Right
    assert rejections[0].cycle_index == 4
    assert "duration" in rejections[0].reason.split("+")
    assert len(kept) == len(cycles) - 1


def test_align_overground_starts_at_origin_heading_forward():
    t = np.arange(300) / FS
    pelvis = np.column_stack([2.0 + 1.1 * t, np.full_like(t, -0.5), np.ones_like(t)])
    foot = pelvis + np.array([0.0, 0.1, -0.9])
    trial = Trial(
        id=0, time=t, markers={"pelvis": pelvis, "foot": foot}, fs=FS, task=Task.OvergroundWalk
    )

    aligned = align_overground(trial, ("pelvis",))

    moved = aligned.markers["pelvis"]
    np.testing.assert_allclose(moved[0, :2], 0.0, atol=1e-12)
    np.testing.assert_allclose(moved[:, 0], 0.0, atol=1e-12)
    assert np.all(np.diff(moved[:, 1]) > 0)
    np.testing.assert_allclose(moved[:, 2], 1.0)
    np.testing.assert_allclose(aligned.markers["foot"][:, 0], -0.1, atol=1e-12)


def test_swing_profile_has_grid_shape(small_processed):
    profile = swing_velocity_profile(small_processed[0])
    assert profile.shape == (21,)
    assert np.all(np.isfinite(profile))


def test_gaze_before_first_fixation_is_zero(small_dataset):
    raw = small_dataset.trials[0]
    gaze = raw.gaze.copy()
    gaze[0] = np.nan
    first = int(np.flatnonzero(~np.isnan(gaze[:, 0]))[0])
    trial = replace(raw, gaze=gaze)

    held = preprocess_trial(trial, PreprocessSettings()).trial.gaze

    assert first > 0
    np.testing.assert_array_equal(held[:first], 0.0)
    assert np.all(held[first] != 0.0)
    np.testing.assert_array_equal(held[first + 1], held[first])


def test_heel_strikes_ignore_common_fore_aft_drift():
    t = np.arange(1000) / FS
    foot = 0.3 * np.sin(2 * np.pi * t / 1.1)
    pelvis = 0.02 * np.sin(2 * np.pi * t / 0.55)
    before = [e.frame for e in detect_heel_strikes(foot, pelvis, FS)]
    for drift in (1.2 * t, np.full_like(t, 4.0)):
        after = [e.frame for e in detect_heel_strikes(foot + drift, pelvis + drift, FS)]
        assert after == before


def test_belt_adjustment_leaves_strikes_unchanged(small_dataset, small_processed):
    raw = small_dataset.trials[0]
    assert raw.belt_speed
    markers = {}
    for name, p in raw.markers.items():
        p = p.copy()
        p[:, 1] = p[:, 1] + raw.belt_speed * raw.time
        markers[name] = p
    world = replace(raw, markers=markers, belt_speed=0.0)

    processed = preprocess_trial(world, PreprocessSettings())

    for foot in (Foot.Left, Foot.Right):
        expected = [e.frame for e in small_processed[0].events[foot]]
        assert [e.frame for e in processed.events[foot]] == expected
