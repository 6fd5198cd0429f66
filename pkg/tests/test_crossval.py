import numpy as np
import pandas as pd
import pytest

from gaitscale.config.model import CrossValSettings
from gaitscale.config.model import TrainingSettings
from gaitscale.const import PHASE_GRID
from gaitscale.crossval import TooFewPoints
from gaitscale.crossval import TooFewSamples
from gaitscale.crossval import critical_phase
from gaitscale.crossval import evaluate_curve
from gaitscale.crossval import make_fold_plan
from gaitscale.crossval import model_score
from gaitscale.crossval import nested_cv_evaluate
from gaitscale.crossval import search_strategy
from gaitscale.crossval import smooth_curve
from gaitscale.crossval.evaluate import per_trial_r2
from gaitscale.crossval.evaluate import r2_score
from gaitscale.crossval.scoring import color_band
from gaitscale.crossval.search import HYPERPARAM_SPACES
from gaitscale.crossval.search import candidate_configs
from gaitscale.crossval.search import validate_space_overrides
from gaitscale.errors import ConfigInvalid


@pytest.fixture
def linear_batch(make_batch):
    """Noiseless three-trial task linear in the final window row."""

    def _make(phi=0.5, n_per_trial=20, seed=0):
        rng = np.random.default_rng(seed)
        n = 3 * n_per_trial
        windows = rng.normal(size=(n, 4, 2))
        trials = np.repeat(np.arange(3), n_per_trial)
        last = windows[:, -1, :]
        targets = np.column_stack([0.5 * last[:, 0] - 0.2 * last[:, 1], last[:, 1]]) + 0.1 * trials[:, None]
        return make_batch(windows, targets, trials=trials, phi=phi)

    return _make


def test_fold_plan_even_split():
    plan = make_fold_plan(25, seed=3)
    np.testing.assert_array_equal(np.bincount(plan.outer), [5] * 5)
    for k in range(5):
        assert plan.outer_train(k).size == 20
        np.testing.assert_array_equal(np.bincount(plan.inner[k]), [4] * 5)


def test_fold_plan_near_equal_split():
    plan = make_fold_plan(27, seed=3)
    assert sorted(np.bincount(plan.outer).tolist(), reverse=True) == [6, 6, 5, 5, 5]
    for k in range(5):
        sizes = np.bincount(plan.inner[k])
        assert sizes.max() - sizes.min() <= 1


def test_fold_plan_is_deterministic():
    first, second = make_fold_plan(40, seed=11), make_fold_plan(40, seed=11)
    np.testing.assert_array_equal(first.outer, second.outer)
    for a, b in zip(first.inner, second.inner, strict=True):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(first.outer, make_fold_plan(40, seed=12).outer)


def test_fold_plan_partitions_samples():
    plan = make_fold_plan(33, seed=0)
    tests = np.concatenate([plan.outer_test(k) for k in range(5)])
    np.testing.assert_array_equal(np.sort(tests), np.arange(33))
    for k in range(5):
        assert np.intersect1d(plan.outer_test(k), plan.outer_train(k)).size == 0
        for j in range(plan.n_inner(k)):
            train, val = plan.inner_split(k, j)
            np.testing.assert_array_equal(np.sort(np.concatenate([train, val])), plan.outer_train(k))
            assert np.intersect1d(val, plan.outer_test(k)).size == 0


def test_fold_plan_needs_enough_samples():
    with pytest.raises(TooFewSamples):
        make_fold_plan(24)


@pytest.mark.parametrize(
    ("arch", "kind", "n_configs"),
    [("GRU", "grid", 8), ("FCNN", "grid", 16), ("LI", "grid", 1), ("Transformer", "random", 100), ("TCN", "random", 100)],
)
def test_search_strategy(arch, kind, n_configs):
    strategy = search_strategy(HYPERPARAM_SPACES[arch])
    assert (strategy.kind, strategy.n_configs) == (kind, n_configs)


def test_random_search_is_seeded_and_distinct():
    space = HYPERPARAM_SPACES["Transformer"]
    configs = candidate_configs(space, seed=5)
    assert len(configs) == 100
    assert len({tuple(sorted(c.items())) for c in configs}) == 100
    assert configs == candidate_configs(space, seed=5)
    assert all(c["hidden_dim"] % c["num_heads"] == 0 for c in configs)


def test_grid_search_enumerates_space():
    configs = candidate_configs(HYPERPARAM_SPACES["GRU"])
    assert [c["hidden_dim"] for c in configs] == [2, 4, 8, 16, 32, 64, 128, 256]


@pytest.mark.parametrize(
    "overrides",
    [{"RNN": {"hidden_dim": [4]}}, {"GRU": {"decay": [2]}}, {"GRU": {"hidden_dim": []}}, {"GRU": {"hidden_dim": [3]}}],
)
def test_space_overrides_only_narrow(overrides):
    with pytest.raises(ConfigInvalid):
        validate_space_overrides(overrides)


def test_model_score_hand_example():
    score = model_score({"A": np.array([1.0, 1.0]), "B": np.array([2.0, 1.0])}, 1.0, phases=np.array([0.5, 1.0]))
    assert score.scores == pytest.approx([1.0, 0.75])
    assert score.normalized == pytest.approx([1.0, 0.75])
    assert score.best_arch == "A"
    assert score.bands() == {"A": "dark_green", "B": "red"}


def test_model_score_window_stops_at_critical_phase():
    curves = {"A": np.array([1.0, 1.0, 5.0]), "B": np.array([1.0, 1.0, 1.0])}
    score = model_score(curves, 0.5, phases=np.array([0.0, 0.5, 1.0]))
    assert score.psi == [0.0, 0.5]
    assert score.normalized == pytest.approx([1.0, 1.0])


def test_model_scores_lie_in_unit_interval(rng):
    curves = {arch: rng.uniform(0.01, 0.05, size=21) for arch in ("LI", "GRU", "TCN")}
    score = model_score(curves, 0.7)
    assert all(0 < s <= 1 for s in score.normalized)
    assert max(score.normalized) == 1.0


def test_model_score_zero_rmse_convention():
    score = model_score({"A": np.array([0.0, 1.0]), "B": np.array([1.0, 1.0])}, 1.0, phases=np.array([0.0, 1.0]))
    assert score.scores == pytest.approx([1.0, 0.5])
    assert score.zero_rmse == ["A@0.00"]


def test_critical_phase_examples():
    baseline = np.ones(21)
    dip = np.ones(21)
    dip[8] = 0.5
    assert critical_phase(dip, baseline) == pytest.approx(0.4)
    assert critical_phase(baseline, baseline) == 0.0
    assert critical_phase(1.0 - 0.5 * PHASE_GRID, baseline) == 1.0


def test_color_bands():
    assert [color_band(s) for s in (1.0, 0.96, 0.91, 0.5)] == ["dark_green", "light_green", "orange", "red"]


def test_smooth_constant_curve():
    smoothed = smooth_curve(np.full(21, 0.4))
    np.testing.assert_allclose(smoothed.values, 0.4, atol=1e-12)
    np.testing.assert_allclose(smoothed.dense_values, 0.4, atol=1e-12)
    assert smoothed.dense_phases.size == 201


def test_smooth_linear_curve():
    values = 0.1 + 0.7 * PHASE_GRID
    smoothed = smooth_curve(values)
    np.testing.assert_allclose(smoothed.values, values, atol=1e-9)


def test_smooth_reduces_spike():
    values = np.zeros(21)
    values[10] = 1.0
    smoothed = smooth_curve(values, frac=0.4, iterations=0)
    assert smoothed.values[10] <= 0.5


def test_smooth_needs_five_points():
    values = np.full(21, np.nan)
    values[:4] = 1.0
    with pytest.raises(TooFewPoints):
        smooth_curve(values)


def test_r2_score_allows_negative_values():
    targets = np.column_stack([np.arange(10.0), np.arange(10.0)])
    r2 = r2_score(targets, np.full_like(targets, 20.0))
    assert np.all(r2 < 0)
    np.testing.assert_allclose(r2_score(targets, targets), 1.0)


def test_nested_cv_predicts_each_sample_once(linear_batch):
    batch = linear_batch()
    result = nested_cv_evaluate(batch, "LI", make_fold_plan(len(batch), seed=0))
    assert np.all(np.isfinite(result.predictions))
    assert result.keys == batch.keys
    np.testing.assert_array_equal(np.bincount(result.folds), [12] * 5)
    assert np.all(result.r2 > 0.999)
    assert result.fold_r2().shape == (5, 2)
    assert len(result.selected) == 5


def test_nested_cv_never_sees_outer_test_targets(linear_batch):
    batch = linear_batch()
    plan = make_fold_plan(len(batch), seed=4)
    test = plan.outer_test(2)
    scrambled = batch.targets.copy()
    scrambled[test] = np.random.default_rng(0).normal(size=(test.size, 2)) * 100
    first = nested_cv_evaluate(batch, "LH2", plan)
    second = nested_cv_evaluate(batch.with_targets(scrambled), "LH2", plan)
    np.testing.assert_array_equal(first.predictions[test], second.predictions[test])
    assert not np.array_equal(first.predictions, second.predictions)


def test_nested_cv_network_never_sees_outer_test_targets(linear_batch):
    batch = linear_batch(n_per_trial=10)
    plan = make_fold_plan(len(batch), seed=2)
    crossval = CrossValSettings(space_overrides={"GRU": {"hidden_dim": [4]}})
    training = TrainingSettings(max_epochs=3, patience=2, batch_size=8)
    test = plan.outer_test(0)
    scrambled = batch.targets.copy()
    scrambled[test] += 10.0
    first = nested_cv_evaluate(batch, "GRU", plan, crossval, training)
    second = nested_cv_evaluate(batch.with_targets(scrambled), "GRU", plan, crossval, training)
    np.testing.assert_array_equal(first.predictions[test], second.predictions[test])
    assert all(history is not None for history in first.histories)


def test_evaluate_curve_over_phases(linear_batch):
    phases = [0.0, 0.25, 0.5, 0.75, 1.0]
    batches = {phi: linear_batch(phi=phi, seed=i) for i, phi in enumerate(phases)}
    curve, results = evaluate_curve(batches, "LI", context="c", modality="com")
    assert curve.phases == phases
    assert curve.arch == "LI"
    assert len(curve.smoothed_mean) == 5
    assert np.array(curve.fold_r2("ml")).shape == (5, 5)
    assert all(r > 0.999 for r in curve.r2_mean)
    frame = curve.to_frame()
    assert set(frame["axis"]) == {"ml", "ap", "mean"}
    assert len(frame) == 15

    table = per_trial_r2(results)
    assert list(table.columns) == ["trial", "phi", "r2_ml", "r2_ap", "r2_mean"]
    assert len(table) == 15
    pd.testing.assert_frame_equal(table, per_trial_r2(pd.concat([r.to_frame() for r in results], ignore_index=True)))
