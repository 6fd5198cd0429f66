"""Reverse-mode automatic differentiation over float64 numpy arrays.

Each operation records its parents and a closure that pushes the output
gradient back to them. ``Tensor.backward`` walks the graph in reverse
topological order.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from gaitscale.errors import GaitscaleError


class ShapeMismatch(GaitscaleError):
    """Operand shapes are inconsistent."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    def __init__(self, data, requires_grad: bool = False, _parents: tuple[Tensor, ...] = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch(f"backward without a seed gradient needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _make(self, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = Tensor(data, _parents=parents)
        if out.requires_grad:
            out._backward = backward
        return out

    # arithmetic

    def __add__(self, other) -> Tensor:
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return self._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return self._make(-self.data, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        return self._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = as_tensor(other)

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(_unbroadcast(-g * self.data / other.data**2, other.shape))

        return self._make(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other) -> Tensor:
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> Tensor:
        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return self._make(self.data**exponent, (self,), backward)

    def __matmul__(self, other) -> Tensor:
        other = as_tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeMismatch(f"matmul needs matrices, got {self.shape} @ {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeMismatch(f"matmul inner dimensions differ: {self.shape} @ {other.shape}")

        def backward(g):
            self._accumulate(_unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape))
            other._accumulate(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape))

        return self._make(self.data @ other.data, (self, other), backward)

    # elementwise functions

    def exp(self) -> Tensor:
        value = np.exp(self.data)
        return self._make(value, (self,), lambda g: self._accumulate(g * value))

    def tanh(self) -> Tensor:
        value = np.tanh(self.data)
        return self._make(value, (self,), lambda g: self._accumulate(g * (1.0 - value**2)))

    def sigmoid(self) -> Tensor:
        value = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return self._make(value, (self,), lambda g: self._accumulate(g * value * (1.0 - value)))

    def relu(self) -> Tensor:
        mask = self.data > 0
        return self._make(self.data * mask, (self,), lambda g: self._accumulate(g * mask))

    def sqrt(self) -> Tensor:
        value = np.sqrt(self.data)
        return self._make(value, (self,), lambda g: self._accumulate(g * 0.5 / value))

    # reductions and shape

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], tuple | list):
            shape = tuple(shape[0])
        return self._make(
            self.data.reshape(shape), (self,), lambda g: self._accumulate(g.reshape(self.shape))
        )

    def transpose(self, *axes) -> Tensor:
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], tuple | list):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        return self._make(
            self.data.transpose(axes), (self,), lambda g: self._accumulate(g.transpose(inverse))
        )

    @property
    def T(self) -> Tensor:  # noqa: N802
        return self.transpose()

    def __getitem__(self, index) -> Tensor:
        def backward(g):
            if not self.requires_grad:
                return
            # scatter into the existing buffer; slices of a long sequence stay cheap
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            np.add.at(self.grad, index, g)

        return self._make(self.data[index], (self,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    sizes = [t.shape[axis] for t in tensors]
    for t in tensors:
        expected = tensors[0].shape[:axis] + tensors[0].shape[axis + 1 :]
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1 :] != expected:
            raise ShapeMismatch(f"cannot concatenate {[t.shape for t in tensors]} on axis {axis}")
    bounds = np.cumsum([0, *sizes])

    def backward(g):
        for t, start, stop in zip(tensors, bounds[:-1], bounds[1:], strict=True):
            t._accumulate(np.take(g, np.arange(start, stop), axis=axis))

    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    if out.requires_grad:
        out._backward = backward
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeMismatch(f"cannot stack shapes {sorted(shapes)}")
    axis = axis % (tensors[0].ndim + 1)

    def backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    out = Tensor(np.stack([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    if out.requires_grad:
        out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(value * (g - (g * value).sum(axis=axis, keepdims=True)))

    return x._make(value, (x,), backward)


class Parameter(Tensor):
    """A trainable tensor."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def gradient_check(fn, arrays: Sequence[np.ndarray], step: float = 1e-5) -> list[float]:
    """Relative error between analytic and central-difference gradients.

    ``fn`` maps a list of tensors to a scalar tensor. One error per input:
    ``|g_analytic - g_numeric| / max(|g_analytic| + |g_numeric|, 1e-12)``
    in the Euclidean norm.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    fn(inputs).backward()
    errors = []
    for k, tensor in enumerate(inputs):
        analytic = np.zeros_like(arrays[k]) if tensor.grad is None else tensor.grad
        numeric = np.zeros_like(arrays[k])
        for idx in np.ndindex(arrays[k].shape):
            original = arrays[k][idx]
            arrays[k][idx] = original + step
            plus = fn([Tensor(a) for a in arrays]).item()
            arrays[k][idx] = original - step
            minus = fn([Tensor(a) for a in arrays]).item()
            arrays[k][idx] = original
            numeric[idx] = (plus - minus) / (2 * step)
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        errors.append(float(np.linalg.norm(analytic - numeric) / scale))
    return errors
