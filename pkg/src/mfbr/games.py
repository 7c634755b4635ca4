"""Named test games used by the CLI and the test-suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measure import (ReferenceMeasure, StrategySpace, gaussian_reference,
                      uniform_reference)
from .objective import BilinearObjective, ObjectiveOracle


@dataclass(frozen=True)
class Game:
    name: str
    objective: ObjectiveOracle
    pi: ReferenceMeasure
    rho: ReferenceMeasure

    @property
    def refs(self):
        return self.pi, self.rho


def matching_pennies() -> Game:
    s = StrategySpace.finite(2)
    ref = uniform_reference(s)
    return Game("matching_pennies", BilinearObjective([[1, -1], [-1, 1]], s, s),
                ref, ref)


def asym_2x2() -> Game:
    # equalizers nu = (1/4, 3/4), mu = (1/2, 1/2) give the unregularized value 3/2
    s = StrategySpace.finite(2)
    ref = uniform_reference(s)
    return Game("asym_2x2", BilinearObjective([[3, 0], [1, 2]], s, s), ref, ref)


def smooth_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``tanh(x y) + sin(x - y) / 2``: bounded by 1.5, not separable."""
    return np.tanh(np.outer(x, y)) + 0.5 * np.sin(x[:, None] - y[None, :])


def gaussian_grid_64(lower: float = -3.0, upper: float = 3.0, n: int = 64) -> Game:
    s = StrategySpace.grid(lower, upper, n)
    ref = gaussian_reference(s, 0.0, 1.0)
    x = s.points[:, 0]
    return Game("gaussian_grid_64", BilinearObjective(smooth_kernel(x, x), s, s),
                ref, ref)


BUILTIN_GAMES = {
    "matching_pennies": matching_pennies,
    "asym_2x2": asym_2x2,
    "gaussian_grid_64": gaussian_grid_64,
}


def builtin_game(name: str) -> Game:
    try:
        return BUILTIN_GAMES[name]()
    except KeyError:
        raise ValueError(
            f"unknown builtin game {name!r}; known: {sorted(BUILTIN_GAMES)}") from None
