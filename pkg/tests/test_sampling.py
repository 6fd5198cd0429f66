from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from gaitscale.config.model import SamplingSettings
from gaitscale.dataio import Foot
from gaitscale.sampling import InvalidPhase
from gaitscale.sampling import ModalityKind
from gaitscale.sampling import ModalitySpec
from gaitscale.sampling import build_batch
from gaitscale.sampling import build_samples
from gaitscale.sampling import check_phase
from gaitscale.sampling import relative_placement
from gaitscale.sampling import window_rows
from gaitscale.sampling import write_samples

COM = ModalitySpec(ModalityKind.Com)


@pytest.mark.parametrize(("phi", "rows"), [(0.0, 41), (0.5, 51), (1.0, 61), (0.05, 42)])
def test_window_rows(phi, rows):
    assert window_rows(phi) == rows


@pytest.mark.parametrize("phi", [-0.05, 0.33, 1.05])
def test_off_grid_phase(phi):
    with pytest.raises(InvalidPhase):
        check_phase(phi)
    with pytest.raises(InvalidPhase):
        window_rows(phi)


def test_relative_placement():
    placement = relative_placement(np.array([0.1, 2.0]), np.array([-0.1, 1.4]))
    assert placement.ml == pytest.approx(0.2)
    assert placement.ap == pytest.approx(0.6)


def test_coincident_contacts():
    placement = relative_placement(np.array([0.3, 1.0, 0.05]), np.array([0.3, 1.0, 0.05]))
    assert (placement.ml, placement.ap) == (0.0, 0.0)


@pytest.mark.parametrize("phi", [0.0, 0.5, 1.0])
def test_samples_have_phase_dependent_length(small_processed, phi):
    samples = build_samples(small_processed, COM, phi)
    assert samples
    assert {s.window.shape for s in samples} == {(window_rows(phi), 6)}
    assert {s.phi for s in samples} == {phi}


def test_feature_widths(small_processed):
    processed = small_processed[0]
    assert len(COM.feature_names(processed, Foot.Left)) == 6
    assert len(ModalitySpec(ModalityKind.Gaze).feature_names(processed, Foot.Left)) == 2
    assert len(ModalitySpec(ModalityKind.SwingFoot).feature_names(processed, Foot.Right)) == 6
    full_body = ModalitySpec(ModalityKind.FullBody)
    assert len(full_body.feature_names(processed, Foot.Left)) == 6 * len(processed.trial.markers)
    assert len(ModalitySpec(ModalityKind.Com, include_velocity=False).feature_names(processed, Foot.Left)) == 3


def test_full_body_with_many_markers(small_processed):
    processed = small_processed[0]
    n = processed.trial.n_frames
    markers = {f"m{j:02d}": np.zeros((n, 3)) for j in range(29)}
    wide = replace(processed, trial=replace(processed.trial, markers=markers))
    assert len(ModalitySpec(ModalityKind.FullBody).feature_names(wide, Foot.Left)) == 174


def test_com_feature_order(small_processed):
    names = COM.feature_names(small_processed[0], Foot.Left)
    assert names[:3] == ("com_x_pos", "com_x_vel", "com_y_pos")


def test_swing_foot_reads_striking_foot(small_processed):
    samples = build_samples(small_processed[:1], ModalitySpec(ModalityKind.SwingFoot), 0.5)
    processed = small_processed[0]
    sample = next(s for s in samples if s.foot is Foot.Right)
    frame = processed.cycles[Foot.Right][sample.index - 1].start.frame
    np.testing.assert_allclose(sample.window[40, 0::2], processed.trial.markers["foot_r"][frame], atol=1e-12)


def test_build_batch_shapes(small_processed):
    batch = build_batch(small_processed, COM, 0.5)
    n = len(batch)
    assert batch.windows.shape == (n, 51, 6)
    assert batch.targets.shape == (n, 2)
    assert set(batch.flags.tolist()) == {0, 1}
    assert set(batch.trials.tolist()) == {0, 1, 2, 3}
    assert np.all(np.diff(batch.trials) >= 0)
    assert len(batch.feature_names) == 6
    assert len(set(batch.keys)) == n


def test_targets_match_generator(small_dataset, small_processed):
    samples = build_samples(small_processed, COM, 0.5)
    by_id = {p.id: p for p in small_processed}
    for sample in samples:
        truth = small_dataset.ground_truth.strikes[sample.trial]
        frame = by_id[sample.trial].events[sample.foot][sample.index].frame
        row = truth[(truth["foot"] == sample.foot.value) & (truth["frame"] == frame)]
        assert len(row) == 1
        assert sample.target.ml == pytest.approx(row["target_ml"].iloc[0], abs=2e-5)
        assert sample.target.ap == pytest.approx(row["target_ap"].iloc[0], abs=2e-5)


def test_longer_history_drops_early_strikes(small_processed):
    short = build_samples(small_processed, COM, 0.5, SamplingSettings(history_strides=3))
    long = build_samples(small_processed, COM, 0.5, SamplingSettings(history_strides=5))
    assert len(long) < len(short)
    assert long[0].window.shape[0] == window_rows(0.5, history_strides=5)


def test_write_samples_layout(small_processed, tmp_path):
    batch = build_batch(small_processed[:1], COM, 0.0)
    path = tmp_path / "samples.csv"
    write_samples(batch, path)
    frame = pd.read_csv(path)
    assert len(frame) == len(batch)
    assert frame.columns[0] == "t00_com_x_pos"
    assert list(frame.columns[-5:]) == ["v", "l", "phi", "y_ml", "y_ap"]
    assert frame.shape[1] == 41 * 6 + 5
    np.testing.assert_allclose(frame["y_ap"], batch.targets[:, 1])


def test_windows_share_their_prefix_across_phases(small_processed):
    short = {(s.trial, s.foot, s.index): s for s in build_samples(small_processed, COM, 0.25)}
    full = build_samples(small_processed, COM, 1.0)
    rows = window_rows(0.25)
    matched = 0
    for sample in full:
        early = short.get((sample.trial, sample.foot, sample.index))
        if early is None:
            continue
        np.testing.assert_array_equal(sample.window[:rows], early.window)
        matched += 1
    assert matched > 0
