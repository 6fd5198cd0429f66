import numpy as np
import pandas as pd
import pytest

from gaitscale.dataio import Task
from gaitscale.errors import ConfigInvalid
from gaitscale.synthgait import COM_STATE_COLUMNS
from gaitscale.synthgait import SynthConfig
from gaitscale.synthgait import analytic_ceiling
from gaitscale.synthgait import ceiling_from_variance
from gaitscale.synthgait import generate
from gaitscale.synthgait import write_ground_truth

ZERO_GAIN = [[0.0] * 6, [0.0] * 6]


def test_same_seed_is_bit_identical(small_synth_config, small_dataset):
    again = generate(small_synth_config, context="small")
    for first, second in zip(small_dataset.trials, again.trials, strict=True):
        assert first.markers.keys() == second.markers.keys()
        for name in first.markers:
            np.testing.assert_array_equal(first.markers[name], second.markers[name])
        np.testing.assert_array_equal(first.gaze, second.gaze)
    pd.testing.assert_frame_equal(
        small_dataset.ground_truth.all_strikes(), again.ground_truth.all_strikes()
    )


def test_seed_changes_data(small_synth_config, small_dataset):
    other = generate(small_synth_config.model_copy(update={"seed": 8}))
    assert not np.array_equal(other.trials[0].markers["pelvis"], small_dataset.trials[0].markers["pelvis"])


def test_dataset_layout(small_synth_config, small_dataset):
    assert small_dataset.n_trials == 4
    trial = small_dataset.trials[0]
    assert trial.task is Task.TreadmillWalk
    assert trial.fs == 100.0
    assert {"pelvis", "foot_l", "foot_r", "knee_l", "knee_r", "torso"} == set(trial.markers)
    assert trial.gaze.shape == (trial.n_frames, 2)
    truth = small_dataset.ground_truth.strikes[0]
    # every strike but the very first has a prior opposite contact
    assert len(truth) == 2 * (small_synth_config.strides + 1) - 1
    assert np.all(truth["frame"].diff().dropna() > 0)


def test_noiseless_uncontrolled_targets_equal_offsets():
    dataset = generate(SynthConfig(n_trials=3, strides=10, noise_sigma=0.0, gain=ZERO_GAIN, seed=1))
    for truth in dataset.ground_truth.strikes.values():
        np.testing.assert_array_equal(truth["target_ml"], truth["offset_ml"])
        np.testing.assert_array_equal(truth["target_ap"], truth["offset_ap"])
        assert truth["target_ap"].nunique() == 1


def test_noiseless_controller_gain_is_recoverable():
    config = SynthConfig(n_trials=2, strides=40, noise_sigma=0.0, seed=3)
    truth = generate(config).ground_truth.all_strikes()
    used = [name for j, name in enumerate(COM_STATE_COLUMNS) if j not in (2, 3)]
    state = truth[[f"com_{name}" for name in used]].to_numpy()
    residual = truth[["target_ml", "target_ap"]].to_numpy() - truth[["offset_ml", "offset_ap"]].to_numpy()
    recovered, *_ = np.linalg.lstsq(state, residual, rcond=None)
    expected = np.asarray(config.gain)[:, [0, 1, 4, 5]].T
    np.testing.assert_allclose(recovered, expected, atol=1e-10)


def test_fore_aft_gain_is_rejected():
    gain = [[1.0, 0.0, 0.5, 0.0, 0.0, 0.0], [0.0] * 6]
    with pytest.raises(ConfigInvalid):
        generate(SynthConfig(gain=gain))


@pytest.mark.parametrize(
    "update",
    [
        {"control_phase": 0.33},
        {"n_trials": 0},
        {"strides": 2},
        {"noise_sigma": -0.1},
        {"gain": [[1.0] * 6]},
        {"placement_ramp_end": 0.95},
        {"placement_ramp_start": 0.7, "placement_ramp_end": 0.65},
    ],
)
def test_invalid_configs(update):
    with pytest.raises(ConfigInvalid):
        SynthConfig(**update).validate_settings()


def test_stride_frames_are_even():
    assert SynthConfig(cadence=0.9, fs=100.0).stride_frames == 112
    assert SynthConfig(cadence=1.0, fs=120.0).stride_frames % 2 == 0


def test_ceiling_formula():
    assert ceiling_from_variance(0.0, 0.3) == 1.0
    assert ceiling_from_variance(0.1, 2 * 0.1**2) == pytest.approx(0.5)
    assert ceiling_from_variance(0.1, 0.0) == 0.0
    assert ceiling_from_variance(0.2, 0.01) == 0.0


def test_noiseless_ceiling_is_one():
    report = analytic_ceiling(SynthConfig(n_trials=2, strides=10, noise_sigma=0.0))
    assert report.r2_max == {"ml": 1.0, "ap": 1.0}


def test_pure_noise_ceiling_is_near_zero():
    config = SynthConfig(
        n_trials=2, strides=200, gain=ZERO_GAIN, offset_sigma=0.0, state_position_sigma=0.0, state_velocity_sigma=0.0
    )
    report = analytic_ceiling(config)
    assert report.r2_max["ml"] < 0.15
    assert report.r2_max["ap"] < 0.15
    assert len(report.per_trial_variance_ml) == 2


def test_write_ground_truth(small_dataset, tmp_path):
    paths = write_ground_truth(small_dataset.ground_truth, tmp_path)
    assert [p.name for p in paths] == [f"trial_{v:03d}_truth.csv" for v in range(4)]
    loaded = pd.read_csv(paths[2])
    np.testing.assert_allclose(loaded["target_ap"], small_dataset.ground_truth.strikes[2]["target_ap"])
