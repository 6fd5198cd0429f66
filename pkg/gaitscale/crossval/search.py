"""Hyperparameter spaces and the grid-or-random search rule."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from gaitscale.errors import ConfigInvalid

DEFAULT_SEARCH_BUDGET = 100

_DROPOUT = (0.0, 0.1, 0.2, 0.3)
_RECURRENT_HIDDEN = (2, 4, 8, 16, 32, 64, 128, 256)

HyperparamSpace = dict[str, tuple]

HYPERPARAM_SPACES: dict[str, HyperparamSpace] = {
    "LI": {},
    "LH": {},
    "LI2": {},
    "LH2": {},
    "FCNN": {"decay": (2, 4, 8, 16), "dropout": _DROPOUT},
    "GRU": {"hidden_dim": _RECURRENT_HIDDEN},
    "LSTM": {"hidden_dim": _RECURRENT_HIDDEN},
    "TCN": {
        "hidden_dim": (4, 8, 16),
        "kernel_size": (1, 3, 5, 7),
        "dilation": (1, 2, 4),
        "dropout": _DROPOUT,
    },
    "Transformer": {
        "hidden_dim": (16, 32, 64),
        "num_layers": (2, 3, 4),
        "num_heads": (2, 4, 8),
        "ff_dim": (16, 32, 64),
        "dropout": _DROPOUT,
    },
}


@dataclass(frozen=True)
class SearchStrategy:
    kind: Literal["grid", "random"]
    n_configs: int


def space_size(space: HyperparamSpace) -> int:
    return math.prod(len(values) for values in space.values())


def search_strategy(space: HyperparamSpace, budget: int = DEFAULT_SEARCH_BUDGET) -> SearchStrategy:
    """Full grid when it fits in ``budget`` configurations, else ``budget`` random draws."""
    size = space_size(space)
    if size <= budget:
        return SearchStrategy(kind="grid", n_configs=size)
    return SearchStrategy(kind="random", n_configs=budget)


def resolve_space(arch: str, overrides: dict[str, dict[str, list]] | None = None) -> HyperparamSpace:
    """Declared space of ``arch`` with configured subsets applied."""
    space = dict(HYPERPARAM_SPACES[arch])
    for name, values in ((overrides or {}).get(arch) or {}).items():
        space[name] = tuple(values)
    return space


def candidate_configs(space: HyperparamSpace, budget: int = DEFAULT_SEARCH_BUDGET, seed: int = 0) -> list[dict]:
    """Configurations to try, in a fixed order.

    Random search draws flat grid indices without replacement from a
    generator seeded with ``seed``, then visits them in ascending order.
    """
    names = list(space)
    grids = [space[name] for name in names]
    strategy = search_strategy(space, budget)
    if strategy.kind == "grid":
        return [dict(zip(names, combo, strict=True)) for combo in itertools.product(*grids)]
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(space_size(space), size=strategy.n_configs, replace=False))
    shape = tuple(len(values) for values in grids)
    configs = []
    for index in flat:
        position = np.unravel_index(int(index), shape)
        configs.append({name: grids[i][int(p)] for i, (name, p) in enumerate(zip(names, position, strict=True))})
    return configs


def validate_space_overrides(overrides: dict[str, dict[str, list]]) -> None:
    """Overrides may only narrow a declared space to a non-empty subset."""
    for arch, entries in overrides.items():
        if arch not in HYPERPARAM_SPACES:
            raise ConfigInvalid(f"crossval.space_overrides: unknown architecture {arch!r}")
        declared = HYPERPARAM_SPACES[arch]
        for name, values in entries.items():
            if name not in declared:
                raise ConfigInvalid(f"crossval.space_overrides.{arch}: {name!r} is not a hyperparameter of {arch}")
            if not values:
                raise ConfigInvalid(f"crossval.space_overrides.{arch}.{name} must not be empty")
            outside = [v for v in values if v not in declared[name]]
            if outside:
                raise ConfigInvalid(
                    f"crossval.space_overrides.{arch}.{name}: {outside} not in declared values {list(declared[name])}"
                )
