"""Nonlinear foot-placement networks.

Every network owns a learned trial-embedding table with ``ceil(sqrt(T))``
columns and consumes it in the way that fits its input layout: the FCNN
appends it to the flattened window, the recurrent nets map it to the
initial hidden state, the TCN repeats it along time as extra channels and
the transformer appends it as one more token.
"""

from __future__ import annotations

import numpy as np

from gaitscale.gradcore.layers import CausalConv1d
from gaitscale.gradcore.layers import Dense
from gaitscale.gradcore.layers import Dropout
from gaitscale.gradcore.layers import GRUCell
from gaitscale.gradcore.layers import LayerNorm
from gaitscale.gradcore.layers import LSTMCell
from gaitscale.gradcore.layers import Module
from gaitscale.gradcore.layers import ModuleList
from gaitscale.gradcore.layers import SelfAttention
from gaitscale.gradcore.layers import positional_encoding
from gaitscale.gradcore.tensor import Parameter
from gaitscale.gradcore.tensor import ShapeMismatch
from gaitscale.gradcore.tensor import Tensor
from gaitscale.gradcore.tensor import concat
from gaitscale.modelzoo.spec import ModelSpec
from gaitscale.modelzoo.spec import UnknownTrial
from gaitscale.sampling import SampleBatch

MIN_FCNN_WIDTH = 8
MIN_FCNN_LAYERS = 2


def fcnn_widths(input_width: int, decay: int, min_width: int = MIN_FCNN_WIDTH) -> list[int]:
    """Hidden widths: repeated floor division by ``decay`` while at least ``min_width``.

    Padded with ``min_width`` layers up to two hidden layers.
    """
    widths = []
    width = input_width // decay
    while width >= min_width:
        widths.append(width)
        width //= decay
    while len(widths) < MIN_FCNN_LAYERS:
        widths.append(min_width)
    return widths


class NetworkModel(Module):
    """Shared embedding lookup and input checks."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.rng = np.random.default_rng([spec.seed, 0])
        self.dropout_rng = np.random.default_rng([spec.seed, 1])
        self.embedding = Parameter(self.rng.normal(0.0, 0.1, size=(spec.n_trials, spec.embedding_dim)))

    def check_batch(self, batch: SampleBatch) -> None:
        expected = (self.spec.n_rows, self.spec.n_features)
        if (batch.n_rows, batch.n_features) != expected:
            raise ShapeMismatch(
                f"{self.spec.arch}: windows are {(batch.n_rows, batch.n_features)}, model expects {expected}"
            )
        if len(batch) and (batch.trials.min() < 0 or batch.trials.max() >= self.spec.n_trials):
            raise UnknownTrial(
                f"{self.spec.arch}: trial ids {sorted(set(batch.trials.tolist()))} "
                f"outside the {self.spec.n_trials} embedded trials"
            )

    def embed(self, batch: SampleBatch) -> Tensor:
        return self.embedding[batch.trials]

    @staticmethod
    def sequence(batch: SampleBatch) -> np.ndarray:
        """Windows with the L/R flag repeated along time as a last channel."""
        flags = np.broadcast_to(batch.flags[:, None, None].astype(np.float64), (*batch.windows.shape[:2], 1))
        return np.concatenate([batch.windows, flags], axis=2)

    def forward_batch(self, batch: SampleBatch) -> Tensor:
        self.check_batch(batch)
        return self.forward(batch)


class FCNNModel(NetworkModel):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        params = spec.params
        self.input_width = spec.n_rows * spec.n_features + spec.embedding_dim + 1
        self.widths = fcnn_widths(self.input_width, params.decay)
        self.hidden = ModuleList()
        self.drops = ModuleList()
        width = self.input_width
        for out in self.widths:
            self.hidden.append(Dense(width, out, self.rng))
            self.drops.append(Dropout(params.dropout, self.dropout_rng))
            width = out
        self.out = Dense(width, 2, self.rng)

    def forward(self, batch: SampleBatch) -> Tensor:
        n = len(batch)
        flat = Tensor(batch.windows.reshape(n, -1))
        flags = Tensor(batch.flags.reshape(n, 1).astype(np.float64))
        x = concat([flat, self.embed(batch), flags], axis=1)
        for dense, drop in zip(self.hidden, self.drops, strict=True):
            x = drop(dense(x).relu())
        return self.out(x)


class RecurrentModel(NetworkModel):
    cell_type: type[Module]

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        hidden = spec.params.hidden_dim
        self.init = Dense(spec.embedding_dim, hidden, self.rng)
        self.cell = self.cell_type(spec.n_features + 1, hidden, self.rng)
        self.head = Dense(hidden, hidden, self.rng)
        self.out = Dense(hidden, 2, self.rng)

    def run(self, steps: np.ndarray, h0: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, batch: SampleBatch) -> Tensor:
        h = self.run(self.sequence(batch), self.init(self.embed(batch)))
        return self.out(self.head(h).relu())


class GRUModel(RecurrentModel):
    cell_type = GRUCell

    def run(self, steps: np.ndarray, h0: Tensor) -> Tensor:
        h = h0
        for t in range(steps.shape[1]):
            h = self.cell(Tensor(steps[:, t, :]), h)
        return h


class LSTMModel(RecurrentModel):
    cell_type = LSTMCell

    def run(self, steps: np.ndarray, h0: Tensor) -> Tensor:
        h = h0
        c = Tensor(np.zeros(h0.shape))
        for t in range(steps.shape[1]):
            h, c = self.cell(Tensor(steps[:, t, :]), h, c)
        return h


class TemporalBlock(Module):
    """Strided dilated causal convolution with a residual path."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        kernel_size: int,
        dilation: int,
        dropout: float,
        rng: np.random.Generator,
        dropout_rng: np.random.Generator,
        stride: int = 2,
    ):
        super().__init__()
        self.stride = stride
        self.conv = CausalConv1d(n_in, n_out, kernel_size, rng, dilation=dilation, stride=stride)
        self.drop = Dropout(dropout, dropout_rng)
        self.projection = Dense(n_in, n_out, rng) if n_in != n_out else None

    def forward(self, x: Tensor) -> Tensor:
        residual = x[:, :: self.stride, :]
        if self.projection is not None:
            residual = self.projection(residual)
        return (self.drop(self.conv(x).relu()) + residual).relu()


class TCNModel(NetworkModel):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        params = spec.params
        channels = spec.n_features + 1 + spec.embedding_dim
        self.blocks = ModuleList(
            [
                TemporalBlock(
                    channels, params.hidden_dim, params.kernel_size, params.dilation,
                    params.dropout, self.rng, self.dropout_rng,
                ),
                TemporalBlock(
                    params.hidden_dim, params.hidden_dim, params.kernel_size, 2 * params.dilation,
                    params.dropout, self.rng, self.dropout_rng,
                ),
            ]
        )
        self.head = Dense(params.hidden_dim, params.hidden_dim, self.rng)
        self.out = Dense(params.hidden_dim, 2, self.rng)

    def forward(self, batch: SampleBatch) -> Tensor:
        steps = self.sequence(batch)
        n, t, _ = steps.shape
        repeated = self.embed(batch).reshape(n, 1, self.spec.embedding_dim) * Tensor(np.ones((1, t, 1)))
        x = concat([Tensor(steps), repeated], axis=2)
        for block in self.blocks:
            x = block(x)
        return self.out(self.head(x[:, -1, :]).relu())


class EncoderLayer(Module):
    """Post-norm self-attention and feed-forward sublayers."""

    def __init__(self, d: int, heads: int, ff_dim: int, dropout: float, rng, dropout_rng):
        super().__init__()
        self.attention = SelfAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.ff1 = Dense(d, ff_dim, rng)
        self.ff2 = Dense(ff_dim, d, rng)
        self.norm2 = LayerNorm(d)
        self.drop = Dropout(dropout, dropout_rng)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.drop(self.attention(x)))
        return self.norm2(x + self.drop(self.ff2(self.ff1(x).relu())))


class TransformerModel(NetworkModel):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        params = spec.params
        d = params.hidden_dim
        self.input = Dense(spec.n_features + 1, d, self.rng)
        self.trial_token = Dense(spec.embedding_dim, d, self.rng)
        self.layers = ModuleList(
            [
                EncoderLayer(d, params.num_heads, params.ff_dim, params.dropout, self.rng, self.dropout_rng)
                for _ in range(params.num_layers)
            ]
        )
        self.head = Dense(d, d, self.rng)
        self.out = Dense(d, 2, self.rng)
        self.encoding = positional_encoding(spec.n_rows + 1, d)

    def forward(self, batch: SampleBatch) -> Tensor:
        n = len(batch)
        d = self.spec.params.hidden_dim
        tokens = self.input(Tensor(self.sequence(batch)))
        token = self.trial_token(self.embed(batch)).reshape(n, 1, d)
        x = concat([tokens, token], axis=1) + self.encoding
        for layer in self.layers:
            x = layer(x)
        return self.out(self.head(x.mean(axis=1)).relu())
