"""Layers built on :mod:`gaitscale.gradcore.tensor`.

The cell functions (``gru_cell_step``, ``lstm_cell_step``), the causal
convolution and self-attention are plain functions of tensors so they can
be checked in isolation; the ``Module`` classes own the parameters.
"""

from __future__ import annotations

import math
from collections.abc import Iterator

import numpy as np

from gaitscale.errors import GaitscaleError
from gaitscale.gradcore.tensor import Parameter
from gaitscale.gradcore.tensor import ShapeMismatch
from gaitscale.gradcore.tensor import Tensor
from gaitscale.gradcore.tensor import as_tensor
from gaitscale.gradcore.tensor import concat
from gaitscale.gradcore.tensor import softmax


class DimNotDivisible(GaitscaleError):
    """Model width is not divisible by the number of attention heads."""


class OddDim(GaitscaleError):
    """Sinusoidal encodings need an even width."""


class InvalidRate(GaitscaleError):
    """Dropout rate outside [0, 1)."""


def mse_loss(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    return ((pred - target) ** 2).mean()


def dropout_apply(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity in evaluation mode."""
    if not 0 <= rate < 1:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask


def _check_cell(x: Tensor, h: Tensor, w: Tensor, u: Tensor, b: Tensor, gates: int) -> int:
    hidden = h.shape[-1]
    if w.shape != (x.shape[-1], gates * hidden) or u.shape != (hidden, gates * hidden) or b.shape != (gates * hidden,):
        raise ShapeMismatch(
            f"cell weights {w.shape}, {u.shape}, {b.shape} do not fit input {x.shape[-1]} and hidden {hidden}"
        )
    return hidden


def gru_cell_step(x: Tensor, h: Tensor, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """One GRU step; gate blocks are stacked as (update, reset, candidate).

    h' = (1 - z) * h + z * h~
    """
    n = _check_cell(x, h, w, u, b, 3)
    xw = x @ w + b
    hu = h @ u[:, : 2 * n]
    z = (xw[..., :n] + hu[..., :n]).sigmoid()
    r = (xw[..., n : 2 * n] + hu[..., n:]).sigmoid()
    candidate = (xw[..., 2 * n :] + (r * h) @ u[:, 2 * n :]).tanh()
    return (1.0 - z) * h + z * candidate


def lstm_cell_step(
    x: Tensor, h: Tensor, c: Tensor, w: Tensor, u: Tensor, b: Tensor
) -> tuple[Tensor, Tensor]:
    """One LSTM step; gate blocks are stacked as (input, forget, output, cell)."""
    n = _check_cell(x, h, w, u, b, 4)
    if c.shape != h.shape:
        raise ShapeMismatch(f"cell state {c.shape} and hidden state {h.shape} differ")
    gates = x @ w + h @ u + b
    i = gates[..., :n].sigmoid()
    f = gates[..., n : 2 * n].sigmoid()
    o = gates[..., 2 * n : 3 * n].sigmoid()
    g = gates[..., 3 * n :].tanh()
    c_next = f * c + i * g
    return o * c_next.tanh(), c_next


def dilated_causal_conv1d(
    x: Tensor, kernel: Tensor, bias: Tensor | None = None, dilation: int = 1, stride: int = 1
) -> Tensor:
    """Causal 1-D convolution over (batch, time, channels) or (time, channels).

    ``kernel`` is (K, in, out); output step t sees inputs t - j * dilation for
    j < K. The output keeps ceil(time / stride) steps.
    """
    if kernel.ndim != 3 or x.shape[-1] != kernel.shape[1]:
        raise ShapeMismatch(f"kernel {kernel.shape} does not fit input channels {x.shape[-1]}")
    size = kernel.shape[0]
    if size % 2 == 0 and size != 1:
        raise ShapeMismatch(f"kernel size must be odd, got {size}")
    if dilation < 1 or stride < 1:
        raise ShapeMismatch(f"dilation and stride must be >= 1, got {dilation}, {stride}")
    steps = x.shape[-2]
    pad = (size - 1) * dilation
    if pad:
        zeros = Tensor(np.zeros(x.shape[:-2] + (pad, x.shape[-1])))
        x = concat([zeros, x], axis=-2)
    out = None
    for j in range(size):
        tap = x[..., j * dilation : j * dilation + steps, :] @ kernel[j]
        out = tap if out is None else out + tap
    if bias is not None:
        out = out + bias
    if stride > 1:
        out = out[..., ::stride, :]
    return out


def multi_head_self_attention(
    x: Tensor,
    heads: int,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
) -> Tensor:
    """Scaled dot-product self-attention over (batch, time, d) or (time, d)."""
    d = x.shape[-1]
    if d % heads:
        raise DimNotDivisible(f"width {d} is not divisible by {heads} heads")
    for w in (wq, wk, wv, wo):
        if w.shape != (d, d):
            raise ShapeMismatch(f"projection {w.shape} does not fit width {d}")
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    batch, steps, _ = x.shape
    dk = d // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(batch, steps, heads, dk).transpose(0, 2, 1, 3)

    q, k, v = split(x @ wq), split(x @ wk), split(x @ wv)
    scores = (q @ k.transpose(0, 1, 3, 2)) / math.sqrt(dk)
    attended = softmax(scores, axis=-1) @ v
    out = attended.transpose(0, 2, 1, 3).reshape(batch, steps, d) @ wo
    return out.reshape(steps, d) if squeeze else out


def positional_encoding(tmax: int, d: int) -> np.ndarray:
    """PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(...)."""
    if d % 2:
        raise OddDim(f"positional encoding width must be even, got {d}")
    pos = np.arange(tmax)[:, None]
    rates = 10000.0 ** (np.arange(0, d, 2) / d)
    pe = np.zeros((tmax, d))
    pe[:, 0::2] = np.sin(pos / rates)
    pe[:, 1::2] = np.cos(pos / rates)
    return pe


class Module:
    """Parameter container with train/eval mode."""

    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield f"{prefix}{name}", param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> Module:
        object.__setattr__(self, "training", mode)
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            raise ShapeMismatch(f"state keys {sorted(state)} do not match parameters {sorted(params)}")
        for name, param in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeMismatch(f"{name}: stored shape {value.shape}, expected {param.shape}")
            param.data = value.copy()

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(_glorot(rng, n_in, n_out, (n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0 <= rate < 1:
            raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return dropout_apply(x, self.rate, self.training, self.rng)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centred = x - mu
        var = (centred**2).mean(axis=-1, keepdims=True)
        return centred / (var + self.eps).sqrt() * self.gamma + self.beta


class GRUCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.w = Parameter(_glorot(rng, n_in, hidden, (n_in, 3 * hidden)))
        self.u = Parameter(_glorot(rng, hidden, hidden, (hidden, 3 * hidden)))
        self.b = Parameter(np.zeros(3 * hidden))

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_cell_step(x, h, self.w, self.u, self.b)


class LSTMCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.w = Parameter(_glorot(rng, n_in, hidden, (n_in, 4 * hidden)))
        self.u = Parameter(_glorot(rng, hidden, hidden, (hidden, 4 * hidden)))
        self.b = Parameter(np.zeros(4 * hidden))

    def forward(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return lstm_cell_step(x, h, c, self.w, self.u, self.b)


class CausalConv1d(Module):
    def __init__(
        self, n_in: int, n_out: int, kernel_size: int, rng: np.random.Generator, dilation: int = 1, stride: int = 1
    ):
        super().__init__()
        self.kernel = Parameter(_glorot(rng, n_in * kernel_size, n_out, (kernel_size, n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out))
        self.dilation = dilation
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return dilated_causal_conv1d(x, self.kernel, self.bias, self.dilation, self.stride)


class SelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if d % heads:
            raise DimNotDivisible(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.wq = Parameter(_glorot(rng, d, d, (d, d)))
        self.wk = Parameter(_glorot(rng, d, d, (d, d)))
        self.wv = Parameter(_glorot(rng, d, d, (d, d)))
        self.wo = Parameter(_glorot(rng, d, d, (d, d)))

    def forward(self, x: Tensor) -> Tensor:
        return multi_head_self_attention(x, self.heads, self.wq, self.wk, self.wv, self.wo)
