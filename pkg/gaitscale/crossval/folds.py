from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaitscale.const import INNER_FOLDS
from gaitscale.const import OUTER_FOLDS
from gaitscale.errors import GaitscaleError

EARLY_STOP_FRACTION = 0.2


class TooFewSamples(GaitscaleError):
    """Fewer samples than a nested 5 x 5 plan needs."""


@dataclass(frozen=True)
class FoldPlan:
    """Outer and inner fold assignments of ``n`` samples.

    ``outer[i]`` is the outer test fold of sample ``i``. ``inner[k]`` holds
    the inner fold of each outer-training sample of fold ``k``, in the
    order of :meth:`outer_train`.
    """

    outer: np.ndarray
    inner: tuple[np.ndarray, ...]
    seed: int

    @property
    def n(self) -> int:
        return self.outer.shape[0]

    @property
    def n_outer(self) -> int:
        return len(self.inner)

    def outer_test(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.outer == k)

    def outer_train(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.outer != k)

    def inner_split(self, k: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """(train, validation) sample indices of inner fold ``j`` inside outer fold ``k``."""
        train = self.outer_train(k)
        assignment = self.inner[k]
        return train[assignment != j], train[assignment == j]

    def n_inner(self, k: int) -> int:
        return int(self.inner[k].max()) + 1


def _assign(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    assignment = np.empty(n, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(rng.permutation(n), folds)):
        assignment[chunk] = fold
    return assignment


def make_fold_plan(n: int, seed: int = 0, outer_folds: int = OUTER_FOLDS, inner_folds: int = INNER_FOLDS) -> FoldPlan:
    """Random nested split; fold sizes differ by at most one at both levels."""
    if n < outer_folds * inner_folds:
        raise TooFewSamples(f"{n} samples, a {outer_folds} x {inner_folds} plan needs at least {outer_folds * inner_folds}")
    outer = _assign(n, outer_folds, np.random.default_rng(seed))
    inner = tuple(
        _assign(int(np.sum(outer != k)), inner_folds, np.random.default_rng([seed, k + 1]))
        for k in range(outer_folds)
    )
    return FoldPlan(outer=outer, inner=inner, seed=seed)


def early_stop_split(
    indices: np.ndarray, seed: int, fraction: float = EARLY_STOP_FRACTION
) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``fraction`` of ``indices`` (at least one) for early stopping."""
    indices = np.asarray(indices)
    order = np.random.default_rng(seed).permutation(indices.shape[0])
    n_val = max(1, round(fraction * indices.shape[0]))
    return np.sort(indices[order[n_val:]]), np.sort(indices[order[:n_val]])
