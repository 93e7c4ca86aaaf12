"""Fixed-step integration of the payoff-model / protocol feedback loop.

The joint state is ``(q, x)`` with

    q' = G(q, x)          (payoff model state)
    p  = H(q, x)          (payoff model output)
    x' = V(x, p)          (mean dynamic of the protocol)

Several initial conditions are integrated together as one batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .edm import Protocol, mean_dynamic
from .equilibria import EquilibriumSet
from .errors import IntegrationDivergedError, InvalidArgumentError, NumericalError
from .games import PopulationGame
from .pdm import PdmModel, pdm_output_from_payoff
from .simplex import project_to_simplex, simplex_state, sup_norm


@dataclass
class Trajectory:
    """Samples of a closed-loop solution on a uniform time grid.

    Attributes:
        t: sample times, shape ``(K,)``.
        x, q, p: population state, payoff-model state and payoff, shape ``(K, n)``.
        xdot, qdot: model-evaluated derivatives at the samples.
        pdot: central differences of ``p`` (second-order one-sided at the ends).
        h: step size.
        projection_max: largest single-step simplex correction (sup-norm).
        projection_total: sum of all single-step corrections.
        storage: optional storage values per sample.
        distance: optional distance-to-equilibrium per sample.
    """

    t: np.ndarray
    x: np.ndarray
    q: np.ndarray
    p: np.ndarray
    xdot: np.ndarray
    qdot: np.ndarray
    pdot: np.ndarray
    h: float
    projection_max: float = 0.0
    projection_total: float = 0.0
    storage: Optional[np.ndarray] = None
    distance: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.x[-1]


def _vector_field(pdm: PdmModel, protocol: Protocol, x, q):
    F = pdm.game.payoff_fn(x)
    p = pdm_output_from_payoff(pdm, q, F)
    xdot = mean_dynamic(protocol, x, p, pdm.mass)
    a = 1.0 if pdm.is_memoryless else pdm.alpha
    qdot = a * (F - q)
    return xdot, qdot, p


def integrate_batch(
    pdm: PdmModel, protocol: Protocol, x0, q0=None, T: float = 100.0, h: float = 0.01
) -> list[Trajectory]:
    """Classic RK4 for a batch of initial conditions, projecting ``x`` after every step.

    Args:
        pdm: payoff dynamics model.
        protocol: revision protocol; its dimension must match the model.
        x0: initial population states, shape ``(B, n)`` or ``(n,)``.
        q0: initial model states with the same shape; defaults to ``F(x0)``.
        T: horizon.
        h: step size; ``T / h`` is rounded to the nearest integer step count.

    Raises:
        InvalidArgumentError: on bad horizons, steps or initial states.
        IntegrationDivergedError: if the state becomes non-finite.
    """
    if not (T > 0 and 0 < h <= T):
        raise InvalidArgumentError(f"need T > 0 and 0 < h <= T, got T={T}, h={h}")
    if protocol.n != pdm.n:
        raise InvalidArgumentError("protocol and payoff model dimensions differ")
    X = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    for row in X:
        simplex_state(row, pdm.mass)
    Q = pdm.game.payoff_fn(X).astype(float) if q0 is None else np.atleast_2d(np.asarray(q0, dtype=float)).copy()
    if Q.shape != X.shape:
        raise InvalidArgumentError(f"q0 shape {Q.shape} does not match x0 shape {X.shape}")
    if not np.all(np.isfinite(Q)):
        raise InvalidArgumentError("q0 has non-finite entries")

    steps = int(round(T / h))
    B, n = X.shape
    xs = np.empty((steps + 1, B, n))
    qs = np.empty_like(xs)
    ps = np.empty_like(xs)
    xds = np.empty_like(xs)
    qds = np.empty_like(xs)
    proj_max = np.zeros(B)
    proj_total = np.zeros(B)

    # overflow on the way to divergence is reported through the non-finite checks below
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps + 1):
            try:
                k1x, k1q, p = _vector_field(pdm, protocol, X, Q)
                xs[k], qs[k], ps[k], xds[k], qds[k] = X, Q, p, k1x, k1q
                if k == steps:
                    break
                k2x, k2q, _ = _vector_field(pdm, protocol, X + 0.5 * h * k1x, Q + 0.5 * h * k1q)
                k3x, k3q, _ = _vector_field(pdm, protocol, X + 0.5 * h * k2x, Q + 0.5 * h * k2q)
                k4x, k4q, _ = _vector_field(pdm, protocol, X + h * k3x, Q + h * k3q)
            except NumericalError as exc:
                raise IntegrationDivergedError(k * h, f"integration diverged at t={k * h:.6g}: {exc}") from exc
            X_raw = X + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            Q = Q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
            if not (np.all(np.isfinite(X_raw)) and np.all(np.isfinite(Q))):
                raise IntegrationDivergedError((k + 1) * h)
            X = project_to_simplex(X_raw, pdm.mass)
            corr = sup_norm(X - X_raw)
            proj_max = np.maximum(proj_max, corr)
            proj_total += corr

    t = np.arange(steps + 1) * h
    out = []
    for b in range(B):
        p = ps[:, b]
        pdot = np.gradient(p, h, axis=0, edge_order=2) if steps >= 2 else np.zeros_like(p)
        out.append(
            Trajectory(
                t=t,
                x=xs[:, b].copy(),
                q=qs[:, b].copy(),
                p=p.copy(),
                xdot=xds[:, b].copy(),
                qdot=qds[:, b].copy(),
                pdot=pdot,
                h=h,
                projection_max=float(proj_max[b]),
                projection_total=float(proj_total[b]),
            )
        )
    return out


def integrate(pdm: PdmModel, protocol: Protocol, x0, q0=None, T: float = 100.0, h: float = 0.01) -> Trajectory:
    """Integrate a single initial condition; see :func:`integrate_batch`."""
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise InvalidArgumentError("integrate takes a single initial state; use integrate_batch")
    return integrate_batch(pdm, protocol, x0[None], None if q0 is None else np.asarray(q0, float)[None], T, h)[0]


def distance_to_set(z, eqset: EquilibriumSet | np.ndarray) -> np.ndarray:
    """Sup-norm distance from ``z`` (batched) to the nearest point of the set."""
    points = eqset.points if isinstance(eqset, EquilibriumSet) else np.atleast_2d(np.asarray(eqset, float))
    if len(points) == 0:
        raise InvalidArgumentError("distance to an empty set is undefined")
    z = np.asarray(z, dtype=float)
    d = np.max(np.abs(z[..., None, :] - points), axis=-1)
    return np.min(d, axis=-1)


def time_to_tolerance(t: np.ndarray, distance: np.ndarray, threshold: float) -> float:
    """First time after which ``distance`` stays below ``threshold`` (``inf`` if it never settles)."""
    above = np.flatnonzero(distance >= threshold)
    if above.size == 0:
        return float(t[0])
    last = above[-1]
    if last == len(t) - 1:
        return float("inf")
    return float(t[last + 1])


@dataclass
class ConvergenceReport:
    """Distance and payoff-gap series of a trajectory.

    Attributes:
        t: sample times.
        distance: sup-norm distance of ``x(t)`` to the equilibrium set.
        payoff_gap: ``||p(t) - F(x(t))||`` in the sup-norm.
        terminal_distance: last distance sample.
        terminal_gap: last payoff-gap sample.
    """

    t: np.ndarray
    distance: np.ndarray
    payoff_gap: np.ndarray
    terminal_distance: float
    terminal_gap: float

    def time_to(self, threshold: float) -> float:
        return time_to_tolerance(self.t, self.distance, threshold)


def convergence_report(traj: Trajectory, eqset: EquilibriumSet, stationary: PopulationGame) -> ConvergenceReport:
    dist = distance_to_set(traj.x, eqset)
    gap = sup_norm(traj.p - stationary.payoff_fn(traj.x))
    traj.distance = dist
    return ConvergenceReport(traj.t, dist, gap, float(dist[-1]), float(gap[-1]))
