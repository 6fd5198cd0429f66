from __future__ import annotations

import math
import typing
from typing import Literal
from typing import TypeAlias

from pydantic import BaseModel
from pydantic import Field

from gaitscale.errors import GaitscaleError


class InvalidSpec(GaitscaleError):
    """Model specification outside its declared constraints."""


class InsufficientSamples(GaitscaleError):
    """Too few samples to fit a model."""


class UnknownTrial(GaitscaleError):
    """A sample references a trial the model was not fitted on."""


def embedding_dim(n_trials: int) -> int:
    """Trial-embedding width: the ceiling of the square root of the trial count."""
    if n_trials < 1:
        raise InvalidSpec(f"trial count must be >= 1, got {n_trials}")
    root = math.isqrt(n_trials)
    return root if root * root == n_trials else root + 1


def _check_dropout(value: float, arch: str) -> None:
    if not 0 <= value < 1:
        raise InvalidSpec(f"{arch}: dropout must lie in [0, 1), got {value}")


## Please add the architecture parameter classes below this location.


class LIParams(BaseModel):
    """Least squares on the final row of the window."""

    arch: Literal["LI"] = Field(default="LI")

    def validate_settings(self) -> None:
        pass


class LHParams(BaseModel):
    """Least squares on the flattened window."""

    arch: Literal["LH"] = Field(default="LH")

    def validate_settings(self) -> None:
        pass


class LI2Params(BaseModel):
    """Ridge regression on the final row of the window."""

    arch: Literal["LI2"] = Field(default="LI2")
    ridge_lambda: float = Field(default=1.0, description="L2 penalty, intercept excluded")

    def validate_settings(self) -> None:
        if self.ridge_lambda < 0:
            raise InvalidSpec(f"LI2: ridge_lambda must be >= 0, got {self.ridge_lambda}")


class LH2Params(BaseModel):
    """Ridge regression on the flattened window."""

    arch: Literal["LH2"] = Field(default="LH2")
    ridge_lambda: float = Field(default=1.0, description="L2 penalty, intercept excluded")

    def validate_settings(self) -> None:
        if self.ridge_lambda < 0:
            raise InvalidSpec(f"LH2: ridge_lambda must be >= 0, got {self.ridge_lambda}")


class FCNNParams(BaseModel):
    """Fully connected network on the flattened window."""

    arch: Literal["FCNN"] = Field(default="FCNN")
    decay: int = Field(default=2, description="Width divisor between hidden layers")
    dropout: float = Field(default=0.0, description="Dropout after every hidden layer")

    def validate_settings(self) -> None:
        if self.decay < 2:
            raise InvalidSpec(f"FCNN: decay must be >= 2, got {self.decay}")
        _check_dropout(self.dropout, self.arch)


class GRUParams(BaseModel):
    """Gated recurrent unit over time."""

    arch: Literal["GRU"] = Field(default="GRU")
    hidden_dim: int = Field(default=16, description="Hidden state width")

    def validate_settings(self) -> None:
        if self.hidden_dim < 1:
            raise InvalidSpec(f"GRU: hidden_dim must be >= 1, got {self.hidden_dim}")


class LSTMParams(BaseModel):
    """Long short-term memory over time."""

    arch: Literal["LSTM"] = Field(default="LSTM")
    hidden_dim: int = Field(default=16, description="Hidden state width")

    def validate_settings(self) -> None:
        if self.hidden_dim < 1:
            raise InvalidSpec(f"LSTM: hidden_dim must be >= 1, got {self.hidden_dim}")


class TCNParams(BaseModel):
    """Two dilated causal convolution blocks with residual connections."""

    arch: Literal["TCN"] = Field(default="TCN")
    hidden_dim: int = Field(default=8, description="Channels of both convolution blocks")
    kernel_size: int = Field(default=3, description="Odd kernel length")
    dilation: int = Field(default=1, description="Dilation of the first block; doubled in the second")
    dropout: float = Field(default=0.0, description="Dropout after each block")

    def validate_settings(self) -> None:
        if self.hidden_dim < 1:
            raise InvalidSpec(f"TCN: hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidSpec(f"TCN: kernel_size must be odd, got {self.kernel_size}")
        if self.dilation < 1:
            raise InvalidSpec(f"TCN: dilation must be >= 1, got {self.dilation}")
        _check_dropout(self.dropout, self.arch)


class TransformerParams(BaseModel):
    """Encoder-only transformer with an appended trial token."""

    arch: Literal["Transformer"] = Field(default="Transformer")
    hidden_dim: int = Field(default=32, description="Model width")
    num_layers: int = Field(default=2, description="Encoder layers")
    num_heads: int = Field(default=2, description="Attention heads; must divide hidden_dim")
    ff_dim: int = Field(default=32, description="Feed-forward width inside each layer")
    dropout: float = Field(default=0.0, description="Dropout on both residual branches")

    def validate_settings(self) -> None:
        if self.hidden_dim % 2:
            raise InvalidSpec(f"Transformer: hidden_dim must be even, got {self.hidden_dim}")
        if self.num_heads < 1 or self.hidden_dim % self.num_heads:
            raise InvalidSpec(
                f"Transformer: hidden_dim {self.hidden_dim} is not divisible by {self.num_heads} heads"
            )
        if self.num_layers < 1 or self.ff_dim < 1:
            raise InvalidSpec("Transformer: num_layers and ff_dim must be >= 1")
        _check_dropout(self.dropout, self.arch)


## Please add the architecture parameter classes above this location.

ARCH_PARAMS_TYPE: TypeAlias = (
    LIParams
    | LHParams
    | LI2Params
    | LH2Params
    | FCNNParams
    | GRUParams
    | LSTMParams
    | TCNParams
    | TransformerParams
)


class ArchitectureMetadata:
    arch: str
    params_type: type[BaseModel]
    module_name: str
    is_linear: bool
    hyperparameters: tuple[str, ...]

    def __init__(self, params_type: type[BaseModel]) -> None:
        self.arch = params_type.model_fields["arch"].default
        self.params_type = params_type
        self.hyperparameters = tuple(name for name in params_type.model_fields if name != "arch")
        self.is_linear = self.arch in ("LI", "LH", "LI2", "LH2")
        self.module_name = "linear" if self.is_linear else "networks"


ARCHITECTURE_METADATA = [ArchitectureMetadata(arg) for arg in typing.get_args(ARCH_PARAMS_TYPE)]

ARCHITECTURE_METADATA_MAP = {metadata.arch: metadata for metadata in ARCHITECTURE_METADATA}

# auto check duplicate architecture metadata
assert len(ARCHITECTURE_METADATA_MAP) == len(ARCHITECTURE_METADATA), "Duplicate architecture metadata"


def params_for(arch: str, **values) -> ARCH_PARAMS_TYPE:
    """Parameter model of ``arch`` filled with ``values``."""
    if arch not in ARCHITECTURE_METADATA_MAP:
        raise InvalidSpec(f"unknown architecture {arch!r}; known: {sorted(ARCHITECTURE_METADATA_MAP)}")
    metadata = ARCHITECTURE_METADATA_MAP[arch]
    unknown = set(values) - set(metadata.hyperparameters)
    if unknown:
        raise InvalidSpec(f"{arch} has no hyperparameters {sorted(unknown)}")
    return metadata.params_type(**values)


class ModelSpec(BaseModel):
    """Architecture, hyperparameters and input dimensions of one model."""

    params: ARCH_PARAMS_TYPE = Field(discriminator="arch")
    n_rows: int = Field(description="Window rows t")
    n_features: int = Field(description="Features per row m")
    n_trials: int = Field(description="Trials T seen by the embedding table")
    seed: int = Field(default=0, description="Initialisation and shuffling seed")

    @property
    def arch(self) -> str:
        return self.params.arch

    @property
    def metadata(self) -> ArchitectureMetadata:
        return ARCHITECTURE_METADATA_MAP[self.arch]

    @property
    def is_linear(self) -> bool:
        return self.metadata.is_linear

    @property
    def embedding_dim(self) -> int:
        return embedding_dim(self.n_trials)

    def hyperparameters(self) -> dict[str, int | float]:
        return {name: getattr(self.params, name) for name in self.metadata.hyperparameters}

    def validate_settings(self) -> None:
        for name in ("n_rows", "n_features", "n_trials"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{self.arch}: {name} must be >= 1, got {getattr(self, name)}")
        self.params.validate_settings()
