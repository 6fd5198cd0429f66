import numpy as np
import pytest

from gaitscale.config.model import PreprocessSettings
from gaitscale.preprocess import preprocess_trial
from gaitscale.sampling import SampleBatch
from gaitscale.synthgait import SynthConfig
from gaitscale.synthgait import generate


@pytest.fixture(scope="session")
def small_synth_config() -> SynthConfig:
    return SynthConfig(n_trials=4, strides=30, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_synth_config):
    return generate(small_synth_config, context="small")


@pytest.fixture(scope="session")
def small_processed(small_dataset):
    settings = PreprocessSettings()
    return [preprocess_trial(trial, settings) for trial in small_dataset.trials]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def make_batch():
    """Factory for sample batches built straight from arrays."""

    def _make(windows, targets, trials=None, flags=None, phi=0.5) -> SampleBatch:
        windows = np.asarray(windows, dtype=np.float64)
        n = windows.shape[0]
        trials = np.zeros(n, dtype=np.int64) if trials is None else np.asarray(trials, dtype=np.int64)
        flags = np.arange(n, dtype=np.int64) % 2 if flags is None else np.asarray(flags, dtype=np.int64)
        keys = tuple((int(v), "left" if f == 0 else "right", i) for i, (v, f) in enumerate(zip(trials, flags, strict=True)))
        return SampleBatch(
            windows=windows,
            trials=trials,
            flags=flags,
            targets=np.asarray(targets, dtype=np.float64),
            phi=phi,
            keys=keys,
        )

    return _make
