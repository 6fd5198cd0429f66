import pytest

from gaitscale.config import ConfigManager
from gaitscale.config import SettingsModel
from gaitscale.errors import ConfigInvalid


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "gaitscale.toml"
    path.write_text(
        '[basic]\nseed = 3\njobs = 2\n\n[crossval]\narchitectures = ["LI", "LI2"]\n\n'
        '[[contexts]]\nname = "synthetic"\nsource = "synth"\n\n[contexts.synth]\nn_trials = 6\n',
        encoding="utf-8",
    )
    return path


def test_defaults_are_valid():
    command, settings = ConfigManager().initialize_config([], environ={})
    assert command == "all"
    assert settings.basic.seed == 0
    assert len(settings.sampling.phases) == 21


def test_toml_values_are_read(config_file):
    command, settings = ConfigManager().initialize_config(["train", "--config", str(config_file)], environ={})
    assert command == "train"
    assert settings.basic.seed == 3
    assert settings.basic.jobs == 2
    assert settings.crossval.architectures == ["LI", "LI2"]
    assert settings.contexts[0].synth.n_trials == 6


def test_environment_overrides_toml(config_file):
    _, settings = ConfigManager().initialize_config(
        ["--config", str(config_file)], environ={"GAITSCALE_SEED": "5", "GAITSCALE_DEBUG": "yes"}
    )
    assert settings.basic.seed == 5
    assert settings.basic.debug is True
    assert settings.basic.jobs == 2


def test_cli_overrides_environment(config_file):
    _, settings = ConfigManager().initialize_config(
        ["--config", str(config_file), "--seed", "7", "--no-save-history"], environ={"GAITSCALE_SEED": "5"}
    )
    assert settings.basic.seed == 7
    assert settings.training.save_history is False


def test_config_file_from_environment(config_file):
    _, settings = ConfigManager().initialize_config([], environ={"GAITSCALE_CONFIG": str(config_file)})
    assert settings.basic.seed == 3


def test_bad_environment_value():
    with pytest.raises(ConfigInvalid, match="GAITSCALE_SEED"):
        ConfigManager().initialize_config([], environ={"GAITSCALE_SEED": "abc"})


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigInvalid, match="does not exist"):
        ConfigManager().initialize_config(["--config", str(tmp_path / "nope.toml")], environ={})


def test_missing_dataset_directory_is_named(tmp_path):
    missing = tmp_path / "trials"
    path = tmp_path / "files.toml"
    path.write_text(f'[[contexts]]\nname = "lab"\nsource = "files"\ndataset_dir = "{missing.as_posix()}"\n')
    with pytest.raises(ConfigInvalid, match="dataset directory does not exist") as excinfo:
        ConfigManager().initialize_config(["--config", str(path)], environ={})
    assert str(missing) in str(excinfo.value)


@pytest.mark.parametrize(
    "text",
    [
        "[basic]\njobs = 0\n",
        '[crossval]\narchitectures = ["RNN"]\n',
        "[sampling]\nphases = [0.33]\n",
        '[timescale]\nonset_replication = "strides"\n',
        "[stats]\nbootstrap_replicates = 10\n",
        '[[contexts]]\nname = "a:b"\n',
        '[[contexts]]\nname = "x"\n\n[[contexts]]\nname = "x"\n',
    ],
)
def test_invalid_settings(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigInvalid):
        ConfigManager().initialize_config(["--config", str(path)], environ={})


def test_snapshot_reproduces_settings(config_file, tmp_path):
    manager = ConfigManager()
    _, settings = manager.initialize_config(["--config", str(config_file), "--seed", "11"], environ={})
    snapshot = tmp_path / "snapshot.toml"
    manager.write_config_snapshot(settings, snapshot)

    _, again = manager.initialize_config(["--config", str(snapshot)], environ={})

    assert again.model_dump(exclude={"basic": {"config"}}) == settings.model_dump(exclude={"basic": {"config"}})
    assert isinstance(again, SettingsModel)
