__version__ = "0.3.0"
__major_version__ = "0"
__report_schema_version__ = 1
__checkpoint_schema_version__ = 1

from pathlib import Path

import numpy as np

# 20 resampled rows per gait cycle; phase 1 belongs to the next cycle
PHASES_PER_CYCLE = 20
# 21-point analysis grid {0, 0.05, ..., 1}
PHASE_GRID = np.round(np.arange(PHASES_PER_CYCLE + 1) / PHASES_PER_CYCLE, 2)
HISTORY_STRIDES = 3
BASE_WINDOW_ROWS = 2 * PHASES_PER_CYCLE + 1

AXES = ("ml", "ap")

DEFAULT_RUNS_DIR = Path("runs")
DEFAULT_RUN_ID = "default"
MANIFEST_FILE_NAME = "trials.toml"
CONFIG_SNAPSHOT_FILE_NAME = "config.toml"

MODALITIES = ("com", "full_body", "swing_foot", "gaze")
ARCHITECTURES = ("LI", "LH", "LI2", "LH2", "FCNN", "GRU", "LSTM", "TCN", "Transformer")
LINEAR_ARCHITECTURES = ("LI", "LH", "LI2", "LH2")

OUTER_FOLDS = 5
INNER_FOLDS = 5

COMMANDS = ("ingest", "synth", "preprocess", "train", "evaluate", "timescales", "report", "all")
ENV_PREFIX = "GAITSCALE_"
