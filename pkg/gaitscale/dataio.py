"""Trial loading and run-artifact persistence.

Trials are comma-delimited text files with a ``time`` column followed by
``<marker>_x,<marker>_y,<marker>_z`` triplets and optional ``gaze_x,gaze_y``
columns. A dataset directory holds one such file per trial plus a
``trials.toml`` manifest carrying the per-trial metadata.

Reports are pydantic models persisted as TOML with a schema version;
checkpoints are a TOML header followed by little-endian float64 arrays.
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import tomlkit
from pydantic import BaseModel
from pydantic import Field

from gaitscale.const import MANIFEST_FILE_NAME
from gaitscale.const import __checkpoint_schema_version__
from gaitscale.const import __report_schema_version__
from gaitscale.errors import GaitscaleError

logger = logging.getLogger(__name__)

_AXES = ("x", "y", "z")
_GAZE_COLUMNS = ("gaze_x", "gaze_y")
_MAX_SAMPLING_JITTER = 0.01
_CHECKPOINT_MAGIC = b"GAITSCALE-CKPT\n"


class MissingColumn(GaitscaleError):
    """A required column is absent from a trial file."""


class NonUniformSampling(GaitscaleError):
    """Time stamps are not uniformly spaced within tolerance."""


class EmptyFile(GaitscaleError):
    """A trial file holds no usable rows."""


class InvalidTrial(GaitscaleError):
    """Trial content violates a structural invariant."""


class IoFailure(GaitscaleError):
    """Reading or writing an artifact failed."""


class SchemaVersionMismatch(GaitscaleError):
    """A persisted artifact was written by another schema version."""


class RejectedEmpty(GaitscaleError):
    """Refusing to persist an empty artifact."""


class ArchitectureMismatch(GaitscaleError):
    """Checkpoint architecture differs from the requested one."""


class Task(enum.Enum):
    """Locomotor task of a trial"""

    TreadmillWalk = "treadmill_walk"
    TreadmillRun = "treadmill_run"
    OvergroundWalk = "overground_walk"

    @property
    def is_walking(self) -> bool:
        return self is not Task.TreadmillRun


class Terrain(enum.Enum):
    """Terrain label, carried as opaque metadata"""

    NoTerrain = "none"
    Even = "even"
    Uneven = "uneven"
    Flat = "flat"
    Medium = "medium"
    Rough = "rough"


class Foot(enum.Enum):
    Left = "left"
    Right = "right"

    @property
    def opposite(self) -> Foot:
        return Foot.Right if self is Foot.Left else Foot.Left

    @property
    def flag(self) -> int:
        """L/R flag used by the models: left 0, right 1."""
        return 0 if self is Foot.Left else 1


class TrialMeta(BaseModel):
    """Per-trial metadata as listed in a dataset manifest"""

    id: int = Field(default=0, description="Trial index v within the dataset")
    file: str = Field(default="", description="Trial file name, relative to the dataset")
    belt_speed: float = Field(default=0.0, description="Belt speed in m/s (0 overground)")
    task: str = Field(default="treadmill_walk", description="Locomotor task label")
    terrain: str = Field(default="none", description="Terrain label")


@dataclass(frozen=True)
class Trial:
    """One recording.

    Marker trajectories are ``(n_frames, 3)`` arrays of lateral, fore-aft and
    vertical position in meters. ``gaze`` is ``(n_frames, 2)`` and may hold NaN
    between fixation updates.
    """

    id: int
    time: np.ndarray
    markers: dict[str, np.ndarray]
    fs: float
    belt_speed: float = 0.0
    task: Task = Task.TreadmillWalk
    terrain: Terrain = Terrain.NoTerrain
    gaze: np.ndarray | None = None

    def __post_init__(self):
        if self.fs <= 0:
            raise InvalidTrial(f"trial {self.id}: fs must be positive, got {self.fs}")
        if self.belt_speed < 0:
            raise InvalidTrial(
                f"trial {self.id}: belt_speed must be >= 0, got {self.belt_speed}"
            )
        if not self.markers:
            raise InvalidTrial(f"trial {self.id}: no markers")
        n = len(self.time)
        for name, trajectory in self.markers.items():
            if trajectory.shape != (n, 3):
                raise InvalidTrial(
                    f"trial {self.id}: marker {name} has shape {trajectory.shape}, expected ({n}, 3)"
                )
        if self.gaze is not None and self.gaze.shape != (n, 2):
            raise InvalidTrial(
                f"trial {self.id}: gaze has shape {self.gaze.shape}, expected ({n}, 2)"
            )

    @property
    def n_frames(self) -> int:
        return len(self.time)

    @property
    def marker_names(self) -> list[str]:
        return list(self.markers)

    def marker(self, name: str) -> np.ndarray:
        try:
            return self.markers[name]
        except KeyError:
            raise MissingColumn(f"trial {self.id}: no marker named {name}") from None


@dataclass(frozen=True)
class Dataset:
    trials: list[Trial]
    context: str = "default"
    ground_truth: Any = field(default=None, compare=False)

    def __post_init__(self):
        if not self.trials:
            raise InvalidTrial(f"dataset {self.context} is empty")
        ids = sorted(trial.id for trial in self.trials)
        if ids != list(range(len(ids))):
            raise InvalidTrial(
                f"dataset {self.context}: trial ids must form 0..{len(ids) - 1}, got {ids}"
            )

    @property
    def n_trials(self) -> int:
        return len(self.trials)


def _parse_marker_columns(columns: list[str]) -> list[str]:
    markers: list[str] = []
    seen = set()
    for column in columns:
        if column == "time" or column in _GAZE_COLUMNS:
            continue
        stem, _, axis = column.rpartition("_")
        if not stem or axis not in _AXES:
            raise MissingColumn(f"column {column} is not a <marker>_<x|y|z> column")
        if stem not in seen:
            seen.add(stem)
            markers.append(stem)
    present = set(columns)
    for marker in markers:
        for axis in _AXES:
            if f"{marker}_{axis}" not in present:
                raise MissingColumn(f"missing column {marker}_{axis}")
    return markers


def _infer_fs(time: np.ndarray) -> float:
    if len(time) < 2:
        raise EmptyFile("need at least two rows to infer the sampling rate")
    steps = np.diff(time)
    if np.any(steps <= 0):
        raise NonUniformSampling("time column is not strictly increasing")
    median_step = float(np.median(steps))
    jitter = float(np.max(np.abs(steps - median_step)) / median_step)
    if jitter > _MAX_SAMPLING_JITTER:
        raise NonUniformSampling(
            f"relative time-step jitter {jitter:.3g} exceeds {_MAX_SAMPLING_JITTER}"
        )
    return 1.0 / median_step


def load_trial(path: Path | str, meta: TrialMeta | None = None) -> Trial:
    """Parse one trial file.

    Args:
        path: Delimited text file with a header row.
        meta: Trial metadata; defaults apply when omitted.

    Returns:
        The parsed trial with fs inferred from the median time step.
    """
    path = Path(path)
    meta = meta or TrialMeta()
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"{path} is empty") from None
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if frame.empty:
        raise EmptyFile(f"{path} has a header but no rows")
    columns = [str(c).strip() for c in frame.columns]
    frame.columns = columns
    if "time" not in columns:
        raise MissingColumn(f"{path}: missing column time")

    marker_names = _parse_marker_columns(columns)
    if not marker_names:
        raise MissingColumn(f"{path}: no marker columns")
    has_gaze = [c in columns for c in _GAZE_COLUMNS]
    if any(has_gaze) and not all(has_gaze):
        missing = _GAZE_COLUMNS[has_gaze.index(False)]
        raise MissingColumn(f"{path}: missing column {missing}")

    time = frame["time"].to_numpy(dtype=np.float64)
    fs = _infer_fs(time)
    markers = {
        name: frame[[f"{name}_{axis}" for axis in _AXES]].to_numpy(dtype=np.float64)
        for name in marker_names
    }
    for name, trajectory in markers.items():
        if not np.all(np.isfinite(trajectory)):
            raise InvalidTrial(f"{path}: marker {name} has missing frames")
    gaze = frame[list(_GAZE_COLUMNS)].to_numpy(dtype=np.float64) if all(has_gaze) else None

    logger.debug(
        f"loaded {path.name}: {len(time)} frames at {fs:.3f} Hz, {len(markers)} markers"
    )
    return Trial(
        id=meta.id,
        time=time,
        markers=markers,
        fs=fs,
        belt_speed=meta.belt_speed,
        task=Task(meta.task),
        terrain=Terrain(meta.terrain),
        gaze=gaze,
    )


def write_trial(trial: Trial, path: Path | str) -> None:
    """Write a trial in the input file format."""
    columns: dict[str, np.ndarray] = {"time": trial.time}
    for name, trajectory in trial.markers.items():
        for i, axis in enumerate(_AXES):
            columns[f"{name}_{axis}"] = trajectory[:, i]
    if trial.gaze is not None:
        columns["gaze_x"] = trial.gaze[:, 0]
        columns["gaze_y"] = trial.gaze[:, 1]
    write_table(pd.DataFrame(columns), path)


def read_manifest(directory: Path | str) -> list[TrialMeta]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE_NAME
    try:
        content = tomlkit.loads(manifest_path.read_text(encoding="utf-8")).unwrap()
    except OSError as e:
        raise IoFailure(f"cannot read manifest {manifest_path}: {e}") from e
    return [TrialMeta(**entry) for entry in content.get("trial", [])]


def load_dataset(directory: Path | str, context: str = "default") -> Dataset:
    """Load every trial listed in ``<directory>/trials.toml``."""
    directory = Path(directory)
    metas = read_manifest(directory)
    trials = [load_trial(directory / meta.file, meta) for meta in metas]
    logger.info(f"context {context}: loaded {len(trials)} trials from {directory}")
    return Dataset(trials=sorted(trials, key=lambda t: t.id), context=context)


def write_dataset(dataset: Dataset, directory: Path | str) -> list[Path]:
    """Write trials and their manifest; returns the trial file paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    document = tomlkit.document()
    entries = tomlkit.aot()
    paths = []
    for trial in dataset.trials:
        file_name = f"trial_{trial.id:03d}.csv"
        write_trial(trial, directory / file_name)
        paths.append(directory / file_name)
        meta = TrialMeta(
            id=trial.id,
            file=file_name,
            belt_speed=trial.belt_speed,
            task=trial.task.value,
            terrain=trial.terrain.value,
        )
        entry = tomlkit.table()
        entry.update(meta.model_dump())
        entries.append(entry)
    document.add("trial", entries)
    (directory / MANIFEST_FILE_NAME).write_text(tomlkit.dumps(document), encoding="utf-8")
    return paths


def write_table(frame: pd.DataFrame, path: Path | str) -> None:
    """Write a delimited-text table with full float precision."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def _none_to_null(value):
    if value is None:
        return "null"
    if isinstance(value, dict):
        return {k: _none_to_null(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_none_to_null(v) for v in value]
    return value


def _null_to_none(value):
    if isinstance(value, str) and value == "null":
        return None
    if isinstance(value, dict):
        return {k: _null_to_none(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_null_to_none(v) for v in value]
    return value


def _report_types() -> dict[str, type[BaseModel]]:
    from gaitscale.crossval.evaluate import EvalCurve
    from gaitscale.crossval.scoring import ModelScore
    from gaitscale.synthgait import CeilingReport
    from gaitscale.timescale import TimescaleReport
    from gaitscale.timescale import TradeoffReport

    return {
        cls.__name__: cls
        for cls in (EvalCurve, ModelScore, TimescaleReport, TradeoffReport, CeilingReport)
    }


def save_report(report: BaseModel, path: Path | str) -> None:
    """Persist a report model as versioned TOML.

    Raises:
        RejectedEmpty: The report carries no phases.
        IoFailure: The file cannot be written.
    """
    path = Path(path)
    is_empty = getattr(report, "is_empty", None)
    if callable(is_empty) and is_empty():
        raise RejectedEmpty(f"refusing to save empty {type(report).__name__} to {path}")
    document = tomlkit.document()
    document.add("schema_version", __report_schema_version__)
    document.add("kind", type(report).__name__)
    document.add("data", _none_to_null(report.model_dump()))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(tomlkit.dumps(document), encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_report(path: Path | str) -> BaseModel:
    path = Path(path)
    try:
        content = tomlkit.loads(path.read_text(encoding="utf-8")).unwrap()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    version = content.get("schema_version")
    if version != __report_schema_version__:
        raise SchemaVersionMismatch(
            f"{path}: schema version {version}, this build reads {__report_schema_version__}"
        )
    kind = content.get("kind")
    types = _report_types()
    if kind not in types:
        raise IoFailure(f"{path}: unknown report kind {kind}")
    return types[kind].model_validate(_null_to_none(content["data"]))


def save_checkpoint(model, path: Path | str) -> None:
    """Write a trained model as a TOML header plus raw float64 arrays."""
    path = Path(path)
    header, arrays = model.to_checkpoint()
    header = dict(header)
    header["schema_version"] = __checkpoint_schema_version__
    header["arrays"] = [
        {"name": name, "shape": list(array.shape)} for name, array in arrays.items()
    ]
    header_bytes = tomlkit.dumps(_none_to_null(header)).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as f:
            f.write(_CHECKPOINT_MAGIC)
            f.write(struct.pack("<Q", len(header_bytes)))
            f.write(header_bytes)
            for array in arrays.values():
                f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: Path | str, expected_arch: str | None = None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Args:
        path: Checkpoint file.
        expected_arch: When given, the stored architecture must match it.
    """
    from gaitscale.modelzoo.zoo import TrainedModel

    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read checkpoint {path}: {e}") from e
    if not raw.startswith(_CHECKPOINT_MAGIC):
        raise IoFailure(f"{path} is not a gaitscale checkpoint")
    offset = len(_CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<Q", raw[offset : offset + 8])
    offset += 8
    header = _null_to_none(
        tomlkit.loads(raw[offset : offset + header_len].decode("utf-8")).unwrap()
    )
    offset += header_len
    if header.get("schema_version") != __checkpoint_schema_version__:
        raise SchemaVersionMismatch(
            f"{path}: checkpoint schema {header.get('schema_version')}, "
            f"this build reads {__checkpoint_schema_version__}"
        )
    arch = header["spec"]["params"]["arch"]
    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureMismatch(
            f"{path} holds a {arch} model, {expected_arch} was requested"
        )
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = array.reshape(shape).astype(np.float64)
        offset += count * 8
    return TrainedModel.from_checkpoint(header, arrays)
