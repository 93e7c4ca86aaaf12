"""Finite-population agent simulation as a Markov jump process.

Each of ``N`` agents carries a Poisson clock; aggregated, revision
opportunities arrive at rate ``N * rho``. At an opportunity the revising
agent's strategy ``i`` is drawn from the empirical distribution and it
switches to ``j != i`` with probability ``T_ij / rho``. Between jumps the
payoff-model state evolves under the frozen population state.

For memoryless payoff models the switch rates are constant between jumps, so
self-loops can be skipped exactly: the next switch is exponential with rate
``N * sum_i z_i sum_{j != i} T_ij / m`` and the pair ``(i, j)`` is drawn in
proportion to ``z_i T_ij``. The law of the population path is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .closedloop import Trajectory, integrate
from .edm import Protocol, rate_matrix
from .errors import InvalidArgumentError, RateBoundViolatedError
from .pdm import PdmModel, pdm_output_from_payoff
from .simplex import round_to_lattice, simplex3_grid, barycentric_grid

ACCEPT_SLACK = 1e-12


def off_diagonal_row_sums(T: np.ndarray) -> np.ndarray:
    """``sum_{j != i} T_ij`` for every ``i`` (batched)."""
    return T.sum(axis=-1) - np.diagonal(T, axis1=-2, axis2=-1)


def choose_rate_bound(
    protocol: Protocol,
    payoff_box,
    points_per_axis: int = 11,
    state_resolution: int = 10,
    safety: float = 1.1,
    mass: float = 1.0,
) -> float:
    """Upper bound ``rho`` on total switch rates over a box of payoff vectors.

    Args:
        protocol: revision protocol.
        payoff_box: pair ``(lower, upper)`` of per-strategy payoff bounds.
        points_per_axis: grid points per payoff coordinate (endpoints included).
        state_resolution: barycentric grid resolution for state-dependent (EPT) rates.
        safety: multiplicative margin.
        mass: population mass.

    Logit rows sum to one, so PBR protocols get ``safety * 1`` directly.
    """
    if protocol.family == "pbr":
        return safety * 1.0
    lo, hi = (np.asarray(b, dtype=float) for b in payoff_box)
    if lo.shape != (protocol.n,) or hi.shape != (protocol.n,) or np.any(hi < lo):
        raise InvalidArgumentError("payoff_box must be (lower, upper) vectors with lower <= upper")
    axes = [np.linspace(a, b, points_per_axis) for a, b in zip(lo, hi)]
    R = np.array(list(product(*axes)))
    if protocol.family == "ipc":
        z = np.full(protocol.n, mass / protocol.n)
        best = np.max(off_diagonal_row_sums(rate_matrix(protocol, np.broadcast_to(z, R.shape), R, mass)))
    else:
        Z = simplex3_grid(state_resolution, mass) if protocol.n == 3 else barycentric_grid(state_resolution, protocol.n, mass)
        best = 0.0
        for z in Z:
            T = rate_matrix(protocol, np.broadcast_to(z, R.shape), R, mass)
            best = max(best, float(np.max(off_diagonal_row_sums(T))))
    return float(safety * best)


def estimate_payoff_box(
    pdm: PdmModel, protocol: Protocol, x0, q0=None, T: float = 50.0, h: float = 0.01, inflate: float = 1.5
):
    """Per-strategy payoff interval for rate-bound selection.

    Memoryless models use the range of ``F`` over the whole simplex, which
    bounds every payoff the finite population can see. Dynamic models use the
    payoff range of a deterministic pre-run, inflated about its centre.
    """
    game = pdm.game
    if pdm.is_memoryless:
        grid = simplex3_grid(200, game.mass) if game.n == 3 else barycentric_grid(20, game.n, game.mass)
        F = game.payoff_fn(grid)
        return F.min(axis=0), F.max(axis=0)
    traj = integrate(pdm, protocol, x0, q0, T, h)
    lo, hi = traj.p.min(axis=0), traj.p.max(axis=0)
    centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    half = np.maximum(half * inflate, 1e-9)
    return centre - half, centre + half


@dataclass
class JumpTrajectory:
    """A sample path of the finite-population process.

    Attributes:
        N: population size.
        event_times: times of strategy switches, starting with ``0``.
        counts: agents per strategy after each event, shape ``(K, n)``.
        payoffs: payoff vector seen at each event.
        grid_t: output grid for the payoff-model state.
        q: payoff-model state on ``grid_t``.
        T: horizon.
        rho: rate bound used.
        seed: RNG seed.
        max_acceptance: largest total switch probability encountered.
        opportunities: number of revision opportunities (switches plus self-loops when simulated).
    """

    N: int
    event_times: np.ndarray
    counts: np.ndarray
    payoffs: np.ndarray
    grid_t: np.ndarray
    q: np.ndarray
    T: float
    rho: float
    seed: int
    mass: float = 1.0
    max_acceptance: float = 0.0
    opportunities: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def states(self) -> np.ndarray:
        return self.counts * (self.mass / self.N)

    def state_at(self, t) -> np.ndarray:
        """Right-continuous population state at time(s) ``t``."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="right") - 1
        return self.states[np.clip(idx, 0, None)]


def _rk4_constant_input(q, F, a, dt, h):
    """Advance ``q' = a (F - q)`` by ``dt`` with RK4 steps no longer than ``h``.

    For a linear field with frozen input one RK4 step of size ``s`` maps
    ``q - F`` to ``R(a s) (q - F)`` with ``R(x) = 1 - x + x^2/2 - x^3/6 + x^4/24``,
    so the steps are applied in closed form.
    """
    if dt <= 0:
        return q
    steps = max(1, int(np.ceil(dt / h - 1e-12)))
    x = a * dt / steps
    R = 1.0 - x + x * x / 2.0 - x**3 / 6.0 + x**4 / 24.0
    return F + (q - F) * R**steps


class _Draws:
    """Block-buffered exponential and uniform variates from one generator."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._exp = np.empty(0)
        self._uni = np.empty(0)
        self._ie = 0
        self._iu = 0

    def exponential(self) -> float:
        if self._ie == self._exp.size:
            self._exp = self.rng.standard_exponential(self.block)
            self._ie = 0
        self._ie += 1
        return float(self._exp[self._ie - 1])

    def uniform(self) -> float:
        if self._iu == self._uni.size:
            self._uni = self.rng.random(self.block)
            self._iu = 0
        self._iu += 1
        return float(self._uni[self._iu - 1])


def _pick(weights, u: float) -> int:
    """First index whose running sum of ``weights`` exceeds ``u``; ``len(weights)`` if none does."""
    acc = 0.0
    for k, w in enumerate(weights):
        acc += w
        if u < acc:
            return k
    return len(weights)


class _QRecorder:
    """Advances the payoff-model state and samples it on a uniform output grid."""

    def __init__(self, q0, a, T, h):
        self.q = np.array(q0, dtype=float)
        self.a = a
        self.h = h
        self.grid = np.arange(int(round(T / h)) + 1) * h
        self.samples = np.empty((len(self.grid), self.q.size))
        self.samples[0] = self.q
        self.next = 1
        self.t = 0.0

    def advance(self, t_new, F):
        while self.next < len(self.grid) and self.grid[self.next] <= t_new:
            tg = self.grid[self.next]
            self.q = _rk4_constant_input(self.q, F, self.a, tg - self.t, self.h)
            self.t = tg
            self.samples[self.next] = self.q
            self.next += 1
        self.q = _rk4_constant_input(self.q, F, self.a, t_new - self.t, self.h)
        self.t = t_new


def simulate_finite_population(
    N: int,
    protocol: Protocol,
    pdm: PdmModel,
    x0,
    q0=None,
    T: float = 50.0,
    rho: float | None = None,
    seed: int = 0,
    h: float = 0.01,
    skip_self_loops: bool | None = None,
) -> JumpTrajectory:
    """Simulate the jump process on ``[0, T]``.

    Args:
        N: number of agents.
        protocol: revision protocol.
        pdm: payoff dynamics model.
        x0: initial state, rounded to the nearest point of the ``1/N`` lattice.
        q0: initial payoff-model state; defaults to ``F`` at the rounded state.
        T: horizon.
        rho: rate bound; chosen by :func:`choose_rate_bound` when omitted.
        seed: seed for ``numpy.random.default_rng``.
        h: maximal RK4 step for the payoff-model state and output grid spacing.
        skip_self_loops: use the exact self-loop-free sampler; defaults to
            true for memoryless models (the only case where it is exact).

    Raises:
        InvalidArgumentError: on bad arguments.
        RateBoundViolatedError: if some switch probability ``sum_j T_ij / rho`` exceeds one.
    """
    if N < 1:
        raise InvalidArgumentError("N must be at least 1")
    if not T > 0:
        raise InvalidArgumentError("T must be positive")
    if protocol.n != pdm.n:
        raise InvalidArgumentError("protocol and payoff model dimensions differ")
    game = pdm.game
    m = game.mass
    counts = round_to_lattice(np.asarray(x0, dtype=float), N)
    z = counts * (m / N)
    if rho is None:
        rho = choose_rate_bound(protocol, estimate_payoff_box(pdm, protocol, z, q0, T), mass=m)
    if not rho > 0:
        raise InvalidArgumentError("rho must be positive")
    if skip_self_loops is None:
        skip_self_loops = pdm.is_memoryless
    elif skip_self_loops and not pdm.is_memoryless:
        raise InvalidArgumentError("self-loop skipping is exact only for memoryless payoff models")

    draws = _Draws(np.random.default_rng(seed))
    a = 1.0 if pdm.is_memoryless else pdm.alpha
    F = game.payoff_fn(z)
    rec = _QRecorder(F if q0 is None else q0, a, T, h)
    n = game.n
    times = [0.0]
    history = [counts.copy()]
    pays = [pdm_output_from_payoff(pdm, rec.q, F)]
    max_acc = 0.0
    opportunities = 0
    t = 0.0

    while True:
        if skip_self_loops:
            P = F
            Tm = rate_matrix(protocol, z, P, m)
            np.fill_diagonal(Tm, 0.0)
            rows = Tm.sum(axis=1)
            occupied = counts > 0
            acc = float(np.max(rows[occupied])) / rho
            max_acc = max(max_acc, acc)
            if acc > 1.0 + ACCEPT_SLACK:
                raise RateBoundViolatedError(f"switch probability {acc:.6g} > 1 at t={t:.6g}; raise rho")
            flows = (z / m)[:, None] * Tm
            total = float(flows.sum())
            if total <= 0.0:
                rec.advance(T, F)
                break
            dt = draws.exponential() / (N * total)
            if t + dt > T:
                rec.advance(T, F)
                break
            t += dt
            rec.advance(t, F)
            cum = np.cumsum(flows.ravel())
            k = min(int(np.searchsorted(cum, draws.uniform() * cum[-1], side="right")), n * n - 1)
            i, j = divmod(k, n)
            opportunities += 1
        else:
            dt = draws.exponential() / (N * rho)
            if t + dt > T:
                rec.advance(T, F)
                break
            t += dt
            rec.advance(t, F)
            opportunities += 1
            P = pdm_output_from_payoff(pdm, rec.q, F)
            i = _pick(counts.tolist(), draws.uniform() * N)
            row = rate_matrix(protocol, z, P, m)[i].copy()
            row[i] = 0.0
            acc = float(row.sum()) / rho
            max_acc = max(max_acc, acc)
            if acc > 1.0 + ACCEPT_SLACK:
                raise RateBoundViolatedError(f"switch probability {acc:.6g} > 1 at t={t:.6g}; raise rho")
            j = _pick(row.tolist(), draws.uniform() * rho)
            if j >= n:
                continue  # self-loop: the agent keeps its strategy
        counts[i] -= 1
        counts[j] += 1
        z = counts * (m / N)
        F = game.payoff_fn(z)
        times.append(t)
        history.append(counts.copy())
        pays.append(pdm_output_from_payoff(pdm, rec.q, F))

    return JumpTrajectory(
        N=N,
        event_times=np.array(times),
        counts=np.array(history),
        payoffs=np.array(pays),
        grid_t=rec.grid,
        q=rec.samples,
        T=float(T),
        rho=float(rho),
        seed=seed,
        mass=m,
        max_acceptance=max_acc,
        opportunities=opportunities,
    )


def sup_deviation(jump: JumpTrajectory, mean: Trajectory) -> float:
    """``max_k ||X^N(t_k) - x(t_k)||`` over the mean trajectory's grid.

    Raises:
        InvalidArgumentError: if the two horizons differ.
    """
    if abs(jump.T - mean.T) > 1e-9 * max(1.0, mean.T):
        raise InvalidArgumentError(f"horizon mismatch: jump {jump.T} vs mean {mean.T}")
    XN = jump.state_at(mean.t)
    return float(np.max(np.abs(XN - mean.x)))
