"""Population games: memoryless payoff maps on the simplex and their Jacobians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError, NumericalError

STRUCTURES = ("affine", "separable", "general")


@dataclass(frozen=True)
class PopulationGame:
    """A continuous payoff map ``F`` on the mass-``mass`` simplex.

    ``payoff_fn`` must accept arrays of shape ``(..., n)`` and return the same
    shape, so that grids and batches of states can be evaluated at once.

    Attributes:
        n: number of strategies.
        payoff_fn: vectorised map ``z -> F(z)``.
        jacobian_fn: optional analytic Jacobian for a single state.
        structure: one of ``affine``, ``separable`` or ``general``.
        matrix: the F-matrix when ``structure == "affine"``.
        offset: the constant term when ``structure == "affine"``.
        rewards: per-strategy ``(R_i, R_i')`` pairs when ``structure == "separable"``.
        mass: total population mass.
        name: label used in reports.
    """

    n: int
    payoff_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    structure: str = "general"
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = field(default=None, repr=False)
    rewards: Optional[tuple] = field(default=None, repr=False)
    mass: float = 1.0
    name: str = "game"

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("a game needs at least one strategy")
        if self.structure not in STRUCTURES:
            raise InvalidArgumentError(f"unknown structure tag {self.structure!r}")
        if not self.mass > 0:
            raise InvalidArgumentError("mass must be positive")
        if self.structure == "affine" and (self.matrix is None or self.offset is None):
            raise InvalidArgumentError("affine games need a matrix and an offset")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.payoff_fn(z)


def _check_dim(game: PopulationGame, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (game.n,):
        raise InvalidArgumentError(f"state has shape {z.shape}, game expects {game.n} strategies")
    return z


def payoff(game: PopulationGame, z) -> np.ndarray:
    """Evaluate ``F(z)``; ``z`` may carry leading batch axes."""
    return game.payoff_fn(_check_dim(game, z))


def jacobian(game: PopulationGame, z, fd_step: float = 1e-6, analytic: bool = True) -> np.ndarray:
    """Jacobian ``DF(z)`` as an ``n x n`` matrix.

    Uses the analytic Jacobian when the game provides one (and ``analytic``
    is true); otherwise raw coordinate central differences. Consumers that
    need tangent-space quantities project the result themselves.

    Raises:
        InvalidArgumentError: on a dimension mismatch or a non-positive step.
        NumericalError: if a perturbed payoff is non-finite.
    """
    z = _check_dim(game, z)
    if analytic and game.jacobian_fn is not None:
        return np.asarray(game.jacobian_fn(z), dtype=float)
    if not fd_step > 0:
        raise InvalidArgumentError("fd_step must be positive")
    steps = np.eye(game.n) * fd_step
    plus = game.payoff_fn(z + steps)
    minus = game.payoff_fn(z - steps)
    if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
        raise NumericalError("non-finite payoff during finite-difference perturbation")
    # row k of plus holds F(z + h e_k), which is column k of DF
    return ((plus - minus) / (2 * fd_step)).T


def affine_game(matrix, offset, mass: float = 1.0, name: str = "affine") -> PopulationGame:
    """The game ``F(z) = matrix @ z + offset``."""
    M = np.array(matrix, dtype=float)
    b = np.array(offset, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or b.shape != (M.shape[0],):
        raise InvalidArgumentError(f"incompatible matrix {M.shape} and offset {b.shape}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
        raise InvalidArgumentError("affine game coefficients must be finite")
    M.setflags(write=False)
    b.setflags(write=False)
    return PopulationGame(
        n=M.shape[0],
        payoff_fn=lambda z: z @ M.T + b,
        jacobian_fn=lambda z: M.copy(),
        structure="affine",
        matrix=M,
        offset=b,
        mass=mass,
        name=name,
    )


def separable_game(
    rewards: Sequence[Callable[[np.ndarray], np.ndarray]],
    derivatives: Sequence[Callable[[np.ndarray], np.ndarray]],
    mass: float = 1.0,
    name: str = "separable",
) -> PopulationGame:
    """The game ``F_i(z) = R_i(z_i)`` with vectorised scalar rewards and their derivatives."""
    if len(rewards) != len(derivatives) or not rewards:
        raise InvalidArgumentError("need one derivative per reward function")
    n = len(rewards)
    rewards = tuple(rewards)
    derivatives = tuple(derivatives)

    def payoff_fn(z):
        return np.stack([rewards[i](z[..., i]) for i in range(n)], axis=-1)

    def jacobian_fn(z):
        return np.diag([float(derivatives[i](z[i])) for i in range(n)])

    return PopulationGame(
        n=n,
        payoff_fn=payoff_fn,
        jacobian_fn=jacobian_fn,
        structure="separable",
        rewards=tuple(zip(rewards, derivatives)),
        mass=mass,
        name=name,
    )


def congestion_example() -> PopulationGame:
    """Three-route congestion game with a shared link; symmetric negative definite."""
    M = [[-3.0, 0.0, -1.0], [0.0, -2.0, -1.0], [-1.0, -1.0, -3.0]]
    return affine_game(M, np.zeros(3), name="congestion")


def demand_response_example() -> PopulationGame:
    """Three-period demand response cost signal with diagonal slopes."""
    return affine_game(np.diag([-10.0, -5.0, -1.0]), [-0.01, -0.1, -1.0], name="demand_response")


def task_reward(s):
    """Bump-shaped reward ``expit(100 (s - 0.2)) - expit(20 (s - 0.5))``."""
    return expit(100.0 * (s - 0.2)) - expit(20.0 * (s - 0.5))


def task_reward_derivative(s):
    a = expit(100.0 * (s - 0.2))
    b = expit(20.0 * (s - 0.5))
    return 100.0 * a * (1.0 - a) - 20.0 * b * (1.0 - b)


def task_allocation_example() -> PopulationGame:
    """Three identical tasks whose reward rises sharply at 0.2 and decays past 0.5."""
    return separable_game(
        [task_reward] * 3, [task_reward_derivative] * 3, name="task_allocation"
    )


def constant_game(values, mass: float = 1.0) -> PopulationGame:
    """Convenience constant map, tagged affine with a zero matrix."""
    values = np.asarray(values, dtype=float)
    return affine_game(np.zeros((values.size, values.size)), values, mass=mass, name="constant")
