"""Payoff dynamics models: a filter state ``q`` driven by the population state.

The smoothing-anticipatory family is

    q' = alpha * (F(u) - q)
    p  = mu0 * F(u) + mu1 * q + mu2 * q'
       = (mu0 + alpha mu2) F(u) + (mu1 - alpha mu2) q

with ``mu0 + mu1 = 1``. The memoryless model outputs ``p = F(u)`` and keeps
a passive state ``q' = F(u) - q`` only so every model has the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .games import PopulationGame, payoff
from .simplex import barycentric_grid, simplex3_grid, sup_norm

KINDS = ("memoryless", "smoothing_anticipatory")


@dataclass(frozen=True)
class PdmModel:
    """A payoff dynamics model over a base game.

    Build instances with :meth:`memoryless`, :meth:`anticipatory`,
    :meth:`smoothing` or :meth:`general` rather than directly.
    """

    game: PopulationGame
    kind: str = "memoryless"
    alpha: float = 1.0
    mu0: float = 1.0
    mu1: float = 0.0
    mu2: float = 0.0
    label: str = field(default="memoryless", compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown PDM kind {self.kind!r}")
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        if min(self.mu0, self.mu1, self.mu2) < 0:
            raise InvalidArgumentError("mu0, mu1 and mu2 must be nonnegative")
        if abs(self.mu0 + self.mu1 - 1.0) > 1e-12:
            raise InvalidArgumentError(f"mu0 + mu1 must equal 1, got {self.mu0 + self.mu1}")

    @classmethod
    def memoryless(cls, game: PopulationGame) -> "PdmModel":
        return cls(game, "memoryless", 1.0, 1.0, 0.0, 0.0, label="memoryless")

    @classmethod
    def anticipatory(cls, game: PopulationGame, alpha: float, mu2: float) -> "PdmModel":
        if not mu2 > 0:
            raise InvalidArgumentError("anticipatory PDMs need mu2 > 0")
        return cls(game, "smoothing_anticipatory", alpha, 1.0, 0.0, mu2, label="anticipatory")

    @classmethod
    def smoothing(cls, game: PopulationGame, alpha: float) -> "PdmModel":
        return cls(game, "smoothing_anticipatory", alpha, 0.0, 1.0, 0.0, label="smoothing")

    @classmethod
    def general(cls, game: PopulationGame, alpha: float, mu0: float, mu1: float, mu2: float) -> "PdmModel":
        return cls(game, "smoothing_anticipatory", alpha, mu0, mu1, mu2, label="general")

    @property
    def n(self) -> int:
        return self.game.n

    @property
    def mass(self) -> float:
        return self.game.mass

    @property
    def output_gain(self) -> float:
        """Coefficient of ``F(u)`` in the substituted output, ``mu0 + alpha mu2``."""
        if self.kind == "memoryless":
            return 1.0
        return self.mu0 + self.alpha * self.mu2

    @property
    def is_memoryless(self) -> bool:
        return self.kind == "memoryless"

    def stationary_set_compact(self) -> bool:
        """Whether ``{(z, s) : H(s, z) = F(z)}`` is the graph of ``F`` (true iff ``mu1 != alpha mu2``)."""
        if self.is_memoryless:
            return True
        return self.mu1 != self.alpha * self.mu2


def _check(pdm: PdmModel, q, u):
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    if q.shape[-1] != pdm.n or u.shape[-1] != pdm.n:
        raise InvalidArgumentError(f"PDM of dimension {pdm.n} got q {q.shape}, u {u.shape}")
    return q, u


def pdm_derivative(pdm: PdmModel, q, u) -> np.ndarray:
    """State derivative ``q'``; batched over leading axes."""
    q, u = _check(pdm, q, u)
    F = pdm.game.payoff_fn(u)
    if pdm.is_memoryless:
        return F - q
    return pdm.alpha * (F - q)


def pdm_output_from_payoff(pdm: PdmModel, q: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Output ``p`` given a precomputed ``F(u)``."""
    if pdm.is_memoryless:
        return F
    g = pdm.output_gain
    return g * F + (1.0 - g) * q


def pdm_output(pdm: PdmModel, q, u) -> np.ndarray:
    """Output ``p = (mu0 + alpha mu2) F(u) + (mu1 - alpha mu2) q``."""
    q, u = _check(pdm, q, u)
    return pdm_output_from_payoff(pdm, q, pdm.game.payoff_fn(u))


def stationary_game(pdm: PdmModel) -> PopulationGame:
    """The game the output settles to under a constant input: the base game."""
    return pdm.game


def default_initial_state(pdm: PdmModel, x0) -> np.ndarray:
    """``q(0) = F(x(0))``, which starts the filter on its stationary manifold."""
    return np.array(payoff(pdm.game, x0), dtype=float)


def max_payoff_norm(game: PopulationGame, resolution: int = 200) -> float:
    """Grid estimate of ``max_z ||F(z)||`` in the sup-norm."""
    grid = simplex3_grid(resolution, game.mass) if game.n == 3 else barycentric_grid(
        min(resolution, 20), game.n, game.mass
    )
    return float(np.max(sup_norm(game.payoff_fn(grid))))


def state_bound(pdm: PdmModel, q0, resolution: int = 200) -> float:
    """Upper bound ``max ||F|| + ||q(0)||`` on ``||q(t)||`` for any input trajectory."""
    return max_payoff_norm(pdm.game, resolution) + float(np.max(np.abs(q0)))


@dataclass
class StationaryResponseReport:
    """Decay of ``||p(t) - F(u)||`` under a constant input.

    Attributes:
        times: sample times.
        deviation: sup-norm deviation at each sample.
        rate: fitted exponential decay rate (``inf`` when identically zero).
        required_rate: ``alpha * (1 - eps)``.
        passed: whether the fitted rate meets the requirement.
    """

    times: np.ndarray
    deviation: np.ndarray
    rate: float
    required_rate: float
    passed: bool

    @property
    def final_deviation(self) -> float:
        return float(self.deviation[-1])


def stationary_response_check(
    pdm: PdmModel, u_const, T: float = 20.0, h: float = 0.01, eps: float = 0.05, q0=None
) -> StationaryResponseReport:
    """Integrate the PDM from ``q(0) = 0`` under constant input and fit the decay rate."""
    if not (T > 0 and h > 0):
        raise InvalidArgumentError("T and h must be positive")
    u = np.asarray(u_const, dtype=float)
    F = payoff(pdm.game, u)
    q = np.zeros(pdm.n) if q0 is None else np.array(q0, dtype=float)
    steps = int(round(T / h))
    times = np.arange(steps + 1) * h
    dev = np.empty(steps + 1)
    dev[0] = sup_norm(pdm_output_from_payoff(pdm, q, F) - F)
    a = 1.0 if pdm.is_memoryless else pdm.alpha
    for k in range(steps):
        # constant input: q' = a (F - q)
        k1 = a * (F - q)
        k2 = a * (F - q - 0.5 * h * k1)
        k3 = a * (F - q - 0.5 * h * k2)
        k4 = a * (F - q - h * k3)
        q = q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        dev[k + 1] = sup_norm(pdm_output_from_payoff(pdm, q, F) - F)
    required = pdm.alpha * (1.0 - eps) if not pdm.is_memoryless else 0.0
    mask = dev > 1e-10
    if mask.sum() < 2:
        # nothing measurable to fit: identically zero or below rounding from the start
        rate = np.inf
        passed = bool(dev[-1] <= 1e-10 or mask.sum() == 0)
    else:
        slope, _ = np.polyfit(times[mask], np.log(dev[mask]), 1)
        rate = float(-slope)
        passed = rate >= required
    return StationaryResponseReport(times, dev, rate, required, passed)
