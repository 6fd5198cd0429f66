"""Per-trial linear foot-placement models.

One coefficient set is fitted per trial. ``LI`` models regress on the last
row of the window, ``LH`` models on the whole flattened window; the ``2``
variants add an L2 penalty that leaves the intercept alone.
"""

from __future__ import annotations

import logging

import numpy as np

from gaitscale.modelzoo.spec import InsufficientSamples
from gaitscale.modelzoo.spec import ModelSpec
from gaitscale.modelzoo.spec import UnknownTrial
from gaitscale.sampling import SampleBatch

logger = logging.getLogger(__name__)


def design_matrix(windows: np.ndarray, flags: np.ndarray | None, history: bool) -> np.ndarray:
    """Intercept column, then window features, then the L/R flag when given."""
    n = windows.shape[0]
    features = windows.reshape(n, -1) if history else windows[:, -1, :]
    columns = [np.ones((n, 1)), features]
    if flags is not None:
        columns.append(np.asarray(flags, dtype=np.float64).reshape(n, 1))
    return np.hstack(columns)


def solve_least_squares(x: np.ndarray, y: np.ndarray, ridge_lambda: float = 0.0) -> np.ndarray:
    """Minimum-norm least squares, optionally with a ridge penalty on all but column 0."""
    if ridge_lambda > 0:
        penalty = np.sqrt(ridge_lambda) * np.eye(x.shape[1])[1:]
        x = np.vstack([x, penalty])
        y = np.vstack([y, np.zeros((penalty.shape[0], y.shape[1]))])
    coefficients, *_ = np.linalg.lstsq(x, y, rcond=None)
    return coefficients


class LinearModel:
    history: bool = False
    ridge: bool = False

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.coefficients: dict[int, np.ndarray] = {}
        self.uses_flag: dict[int, bool] = {}

    @property
    def ridge_lambda(self) -> float:
        return float(self.spec.params.ridge_lambda) if self.ridge else 0.0

    def fit(self, batch: SampleBatch) -> LinearModel:
        for trial in np.unique(batch.trials):
            rows = np.flatnonzero(batch.trials == trial)
            if rows.size < 2:
                raise InsufficientSamples(f"{self.spec.arch}: trial {trial} has {rows.size} training samples")
            flags = batch.flags[rows]
            uses_flag = bool(np.unique(flags).size > 1)
            x = design_matrix(batch.windows[rows], flags if uses_flag else None, self.history)
            self.coefficients[int(trial)] = solve_least_squares(x, batch.targets[rows], self.ridge_lambda)
            self.uses_flag[int(trial)] = uses_flag
        logger.debug(f"{self.spec.arch}: fitted {len(self.coefficients)} trials")
        return self

    def predict(self, batch: SampleBatch) -> np.ndarray:
        out = np.empty((len(batch), 2))
        for trial in np.unique(batch.trials):
            trial = int(trial)
            if trial not in self.coefficients:
                raise UnknownTrial(f"{self.spec.arch}: no coefficients for trial {trial}")
            rows = np.flatnonzero(batch.trials == trial)
            flags = batch.flags[rows] if self.uses_flag[trial] else None
            out[rows] = design_matrix(batch.windows[rows], flags, self.history) @ self.coefficients[trial]
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"coef.{trial}": coef.copy() for trial, coef in sorted(self.coefficients.items())}

    def load_state_dict(self, state: dict[str, np.ndarray], uses_flag: dict[int, bool]) -> None:
        self.coefficients = {int(name.split(".", 1)[1]): np.asarray(value) for name, value in state.items()}
        self.uses_flag = dict(uses_flag)


class LIModel(LinearModel):
    pass


class LHModel(LinearModel):
    history = True


class LI2Model(LinearModel):
    ridge = True


class LH2Model(LinearModel):
    history = True
    ridge = True
