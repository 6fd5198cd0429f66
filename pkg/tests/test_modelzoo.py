import numpy as np
import pytest

from gaitscale.dataio import ArchitectureMismatch
from gaitscale.dataio import load_checkpoint
from gaitscale.dataio import save_checkpoint
from gaitscale.gradcore.layers import GRUCell
from gaitscale.gradcore.layers import LSTMCell
from gaitscale.gradcore.train import TrainConfig
from gaitscale.modelzoo import InvalidSpec
from gaitscale.modelzoo import ModelSpec
from gaitscale.modelzoo import UnknownTrial
from gaitscale.modelzoo import build_model
from gaitscale.modelzoo import embedding_dim
from gaitscale.modelzoo import fit_linear
from gaitscale.modelzoo import fit_model
from gaitscale.modelzoo import params_for
from gaitscale.modelzoo.networks import fcnn_widths
from gaitscale.modelzoo.spec import ARCHITECTURE_METADATA_MAP

NETWORKS = [arch for arch, metadata in ARCHITECTURE_METADATA_MAP.items() if not metadata.is_linear]


@pytest.fixture
def linear_task(make_batch, rng):
    """Noiseless single-trial task driven by the last window row."""
    windows = rng.normal(size=(40, 5, 3))
    last = windows[:, -1, :]
    targets = np.column_stack([2 * last[:, 0] + 1, -last[:, 1] + 0.5 * last[:, 2] - 0.25])
    return make_batch(windows, targets, flags=np.zeros(40))


@pytest.mark.parametrize(("n_trials", "dim"), [(1, 1), (4, 2), (9, 3), (10, 4), (17, 5)])
def test_embedding_dim(n_trials, dim):
    assert embedding_dim(n_trials) == dim


def test_embedding_dim_needs_a_trial():
    with pytest.raises(InvalidSpec):
        embedding_dim(0)


def test_fcnn_width_chain():
    assert fcnn_widths(291, 2) == [145, 72, 36, 18, 9]
    assert fcnn_widths(20, 4) == [8, 8]


def test_fcnn_first_layer_width():
    model = build_model(ModelSpec(params=params_for("FCNN"), n_rows=41, n_features=7, n_trials=9))
    assert model.input_width == 291
    assert model.hidden[0].weight.shape == (291, 145)


def test_recurrent_hidden_init_width():
    for arch in ("GRU", "LSTM"):
        model = build_model(ModelSpec(params=params_for(arch, hidden_dim=16), n_rows=5, n_features=3, n_trials=4))
        assert model.init.weight.shape == (2, 16)


def test_params_for_rejects_unknown():
    with pytest.raises(InvalidSpec):
        params_for("RNN")
    with pytest.raises(InvalidSpec):
        params_for("GRU", kernel_size=3)


@pytest.mark.parametrize(
    ("arch", "values"),
    [
        ("Transformer", {"hidden_dim": 30, "num_heads": 4}),
        ("TCN", {"kernel_size": 4}),
        ("FCNN", {"dropout": 1.0}),
        ("LI2", {"ridge_lambda": -1.0}),
    ],
)
def test_invalid_hyperparameters(arch, values):
    spec = ModelSpec(params=params_for(arch, **values), n_rows=5, n_features=3, n_trials=2)
    with pytest.raises(InvalidSpec):
        build_model(spec)


def test_li_recovers_noiseless_coefficients(linear_task):
    model = fit_linear(linear_task, "LI")
    coefficients = model.model.coefficients[0]
    np.testing.assert_allclose(coefficients[:, 0], [1.0, 2.0, 0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(coefficients[:, 1], [-0.25, 0.0, -1.0, 0.5], atol=1e-10)
    assert not model.model.uses_flag[0]


def test_li_matches_normal_equations(make_batch, rng):
    windows = rng.normal(size=(30, 4, 2))
    batch = make_batch(windows, rng.normal(size=(30, 2)))
    x = np.column_stack([np.ones(30), windows[:, -1, :], batch.flags])
    expected = np.linalg.solve(x.T @ x, x.T @ batch.targets)
    model = fit_linear(batch, "LI")
    assert model.model.uses_flag[0]
    np.testing.assert_allclose(model.model.coefficients[0], expected, atol=1e-10)


def test_zero_penalty_ridge_is_least_squares(linear_task):
    ols = fit_linear(linear_task, "LI").model.coefficients[0]
    ridge = fit_linear(linear_task, "LI2", ridge_lambda=0.0).model.coefficients[0]
    np.testing.assert_allclose(ridge, ols, atol=1e-12)


def test_ridge_path_approaches_least_squares(make_batch, rng):
    batch = make_batch(rng.normal(size=(25, 3, 2)), rng.normal(size=(25, 2)))
    ols = fit_linear(batch, "LH").model.coefficients[0]
    ridge = fit_linear(batch, "LH2", ridge_lambda=1e-10).model.coefficients[0]
    np.testing.assert_allclose(ridge, ols, atol=1e-6)


def test_heavy_ridge_keeps_only_the_intercept(linear_task):
    ridge = fit_linear(linear_task, "LI2", ridge_lambda=1e9).model.coefficients[0]
    np.testing.assert_allclose(ridge[1:], 0.0, atol=1e-6)
    np.testing.assert_allclose(ridge[0], linear_task.targets.mean(axis=0), atol=1e-6)


def test_linear_models_are_per_trial(make_batch, rng):
    windows = rng.normal(size=(40, 2, 2))
    trials = np.repeat([0, 1], 20)
    targets = np.where(trials[:, None] == 0, 1.0, -1.0) * windows[:, -1, :]
    model = fit_linear(make_batch(windows, targets, trials=trials), "LI")
    assert set(model.model.coefficients) == {0, 1}
    np.testing.assert_allclose(model.model.coefficients[1][1:3], -np.eye(2), atol=1e-10)


def test_linear_prediction_needs_fitted_trial(linear_task, make_batch):
    model = fit_linear(linear_task, "LI")
    other = make_batch(linear_task.windows[:3], linear_task.targets[:3], trials=[2, 2, 2])
    with pytest.raises(UnknownTrial):
        model.predict(other)


def test_linear_prediction_is_scale_equivariant(make_batch, rng):
    batch = make_batch(rng.normal(size=(30, 3, 2)), rng.normal(size=(30, 2)))
    before = fit_linear(batch, "LH").predict(batch)
    scaled = batch.with_windows(2 * batch.windows)
    after = fit_linear(scaled, "LH").predict(scaled)
    np.testing.assert_allclose(after, before, atol=1e-10)


@pytest.mark.parametrize("arch", NETWORKS)
def test_network_forward_shapes(arch, make_batch, rng):
    spec = ModelSpec(params=params_for(arch), n_rows=9, n_features=3, n_trials=3, seed=1)
    model = build_model(spec)
    batch = make_batch(rng.normal(size=(6, 9, 3)), np.zeros((6, 2)), trials=[0, 1, 2, 0, 1, 2])
    model.eval()
    out = model.forward_batch(batch)
    assert out.shape == (6, 2)
    assert np.all(np.isfinite(out.data))


@pytest.mark.parametrize("arch", NETWORKS)
def test_duplicated_rows_give_duplicated_predictions(arch, make_batch, rng):
    spec = ModelSpec(params=params_for(arch), n_rows=9, n_features=3, n_trials=2, seed=2)
    windows = rng.normal(size=(12, 9, 3))
    batch = make_batch(windows, rng.normal(size=(12, 2)), trials=np.arange(12) % 2)
    trained = fit_model(spec, batch.subset(np.arange(8)), batch.subset(np.arange(8, 12)), TrainConfig(max_epochs=2))
    repeated = batch.subset([0, 0, 5, 5])
    out = trained.predict(repeated)
    np.testing.assert_allclose(out[0], out[1], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(out[2], out[3], rtol=1e-12, atol=1e-15)


def test_network_rejects_unknown_trial(make_batch, rng):
    model = build_model(ModelSpec(params=params_for("GRU"), n_rows=4, n_features=2, n_trials=2))
    with pytest.raises(UnknownTrial):
        model.forward_batch(make_batch(rng.normal(size=(2, 4, 2)), np.zeros((2, 2)), trials=[0, 5]))


def test_linear_checkpoint_round_trip(linear_task, tmp_path):
    model = fit_linear(linear_task, "LI2", ridge_lambda=0.5, standardize=True)
    path = tmp_path / "li2.gsck"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path, expected_arch="LI2")
    np.testing.assert_array_equal(loaded.model.coefficients[0], model.model.coefficients[0])
    assert np.max(np.abs(loaded.predict(linear_task) - model.predict(linear_task))) == 0.0


def test_network_checkpoint_round_trip(make_batch, rng, tmp_path):
    spec = ModelSpec(params=params_for("GRU", hidden_dim=4), n_rows=6, n_features=2, n_trials=2, seed=3)
    batch = make_batch(rng.normal(size=(16, 6, 2)), rng.normal(size=(16, 2)), trials=np.arange(16) % 2)
    model = fit_model(spec, batch.subset(np.arange(12)), batch.subset(np.arange(12, 16)), TrainConfig(max_epochs=3))
    path = tmp_path / "gru.gsck"
    save_checkpoint(model, path)

    loaded = load_checkpoint(path)

    assert loaded.arch == "GRU"
    assert np.max(np.abs(loaded.predict(batch) - model.predict(batch))) == 0.0
    with pytest.raises(ArchitectureMismatch):
        load_checkpoint(path, expected_arch="LSTM")


def test_li_ignores_all_but_the_last_row(make_batch, rng):
    batch = make_batch(rng.normal(size=(30, 4, 2)), rng.normal(size=(30, 2)))
    windows = batch.windows.copy()
    windows[:, :-1, :] += rng.normal(size=(30, 3, 2))
    perturbed = batch.with_windows(windows)

    li = fit_linear(batch, "LI")
    np.testing.assert_array_equal(li.predict(perturbed), li.predict(batch))
    lh = fit_linear(batch, "LH")
    assert not np.allclose(lh.predict(perturbed), lh.predict(batch))


@pytest.mark.parametrize(("n_in", "hidden"), [(3, 8), (7, 16), (40, 5)])
def test_gru_has_three_quarters_of_lstm_parameters(n_in, hidden, rng):
    gru = GRUCell(n_in, hidden, rng).n_parameters()
    lstm = LSTMCell(n_in, hidden, rng).n_parameters()
    assert 4 * gru == 3 * lstm


@pytest.mark.parametrize("arch", NETWORKS)
def test_zero_embedding_makes_trials_indistinguishable(arch, make_batch, rng):
    spec = ModelSpec(params=params_for(arch), n_rows=9, n_features=3, n_trials=3, seed=4)
    model = build_model(spec)
    model.embedding.data[...] = 0.0
    model.eval()
    window = rng.normal(size=(1, 9, 3))
    batch = make_batch(np.repeat(window, 3, axis=0), np.zeros((3, 2)), trials=[0, 1, 2], flags=np.zeros(3))

    out = model.forward_batch(batch).data

    np.testing.assert_allclose(out[1], out[0], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(out[2], out[0], rtol=1e-12, atol=1e-15)
