from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field

import numpy as np

from gaitscale.gradcore.tensor import Parameter
from gaitscale.gradcore.tensor import ShapeMismatch

LEARNING_RATE = 0.001
BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class OptimizerState:
    """ADAM moment accumulators, one pair per parameter."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0
    lr: float = LEARNING_RATE
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> OptimizerState:
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState
) -> tuple[list[np.ndarray], OptimizerState]:
    """Bias-corrected ADAM update; returns new parameter arrays and advances ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch(
            f"{len(params)} parameters, {len(grads)} gradients, {len(state.m)} moment slots"
        )
    state.step += 1
    t = state.step
    updated = []
    for i, (p, g) in enumerate(zip(params, grads, strict=True)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeMismatch(f"parameter {i}: shape {p.shape}, gradient {g.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1**t)
        v_hat = state.v[i] / (1 - state.beta2**t)
        updated.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return updated, state


class Adam:
    def __init__(self, params: list[Parameter]):
        self.params = params
        self.state = OptimizerState.for_params([p.data for p in params])

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        updated, self.state = adam_step([p.data for p in self.params], grads, self.state)
        for p, value in zip(self.params, updated, strict=True):
            p.data = value
