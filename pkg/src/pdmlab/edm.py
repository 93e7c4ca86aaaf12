"""Revision protocols and the mean dynamic they induce.

Three protocol families are supported:

* ``ept`` (excess payoff target): the switch rate to ``j`` depends only on
  the excess payoff vector, ``T_ij = tau_j(r_hat)``. BNN is the member with
  ``tau_j = [r_hat_j]_+``.
* ``ipc`` (impartial pairwise comparison): ``T_ij = tau_j(r_j - r_i)``.
  Smith is the member with ``tau_j = [d]_+``.
* ``pbr`` (perturbed best response): ``T_ij = C_j(r)`` with ``C`` the logit
  choice map at noise level ``eta``.

All functions accept a leading batch axis on ``z`` and ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import softmax

from .errors import InvalidArgumentError, NumericalError

FAMILIES = ("ept", "ipc", "pbr")
CLAMP_TOL = 1e-12


def relu(d):
    return np.maximum(d, 0.0)


@dataclass(frozen=True)
class Protocol:
    """A revision protocol.

    Attributes:
        family: ``ept``, ``ipc`` or ``pbr``.
        n: number of strategies.
        scalar_maps: per-destination scalar rate maps ``tau_j`` (separable EPT
            and IPC). All maps must accept numpy arrays.
        ept_map: optional non-separable EPT map ``r_hat (..., n) -> (..., n)``;
            takes precedence over ``scalar_maps``.
        eta: logit noise level (PBR only).
        name: ``bnn``, ``smith``, ``logit`` or a user label.
    """

    family: str
    n: int
    scalar_maps: Optional[tuple] = None
    ept_map: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eta: Optional[float] = None
    name: str = "custom"
    validate: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown protocol family {self.family!r}")
        if self.n < 2:
            raise InvalidArgumentError("protocols need n >= 2")
        if self.family == "pbr":
            if self.eta is None or not self.eta > 0:
                raise InvalidArgumentError(f"logit noise level must be positive, got {self.eta}")
            return
        if self.ept_map is None:
            if self.scalar_maps is None or len(self.scalar_maps) != self.n:
                raise InvalidArgumentError("need one scalar rate map per strategy")
        elif self.family == "ipc":
            raise InvalidArgumentError("ipc protocols are specified by scalar maps")
        if self.validate:
            self._check_rate_conditions()

    @property
    def uniform(self) -> bool:
        """True when every strategy shares the same scalar map object."""
        return self.scalar_maps is not None and all(f is self.scalar_maps[0] for f in self.scalar_maps)

    def _check_rate_conditions(self, samples: int = 200) -> None:
        rng = np.random.default_rng(12345)
        if self.family == "ept":
            r_hat = rng.normal(size=(samples, self.n))
            r_hat[:, 0] = np.abs(r_hat[:, 0]) + 1e-3
            tau = self.target_rates(r_hat)
            if np.any(np.einsum("ki,ki->k", r_hat, tau) <= 0):
                raise InvalidArgumentError("EPT protocol violates the acuteness condition")
        else:
            d = rng.normal(scale=3.0, size=samples)
            d = np.concatenate([d, [0.0]])
            for f in self.scalar_maps:
                out = np.asarray(f(d), dtype=float)
                if np.any(out[d > 0] <= 0) or np.any(out[d <= 0] != 0):
                    raise InvalidArgumentError("IPC protocol violates sign preservation")

    def target_rates(self, r_hat: np.ndarray) -> np.ndarray:
        """EPT rates ``tau(r_hat)`` with the same shape as ``r_hat``."""
        if self.ept_map is not None:
            out = self.ept_map(r_hat)
        elif self.uniform:
            out = self.scalar_maps[0](r_hat)
        else:
            out = np.stack([self.scalar_maps[j](r_hat[..., j]) for j in range(self.n)], axis=-1)
        return _sanitize_rates(np.asarray(out, dtype=float))

    def pairwise_rates(self, diff: np.ndarray) -> np.ndarray:
        """IPC rates for a difference array whose entry ``[..., i, j]`` is ``r_j - r_i``."""
        if self.uniform:
            out = self.scalar_maps[0](diff)
        else:
            out = np.stack([self.scalar_maps[j](diff[..., j]) for j in range(self.n)], axis=-1)
        return _sanitize_rates(np.asarray(out, dtype=float))


def _sanitize_rates(out: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericalError("protocol returned non-finite rates")
    if np.any(out < 0):
        if np.any(out < -CLAMP_TOL):
            raise NumericalError(f"protocol returned a negative rate {out.min():.3g}")
        out = np.maximum(out, 0.0)
    return out


def _check_dims(n: int, *arrays) -> None:
    for a in arrays:
        if a.shape[-1] != n:
            raise InvalidArgumentError(f"expected last axis {n}, got shape {a.shape}")


def excess_payoff(z, r, mass: float = 1.0) -> np.ndarray:
    """``r_hat = r - (z . r) / mass`` along the last axis."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    if z.shape[-1] != r.shape[-1]:
        raise InvalidArgumentError("state and payoff dimensions differ")
    avg = np.sum(z * r, axis=-1, keepdims=True) / mass
    return r - avg


def logit_choice(r, eta: float) -> np.ndarray:
    """Softmax of ``r / eta`` along the last axis (max-shifted, overflow free)."""
    if not eta > 0:
        raise InvalidArgumentError(f"eta must be positive, got {eta}")
    return softmax(np.asarray(r, dtype=float) / eta, axis=-1)


def rate_matrix(protocol: Protocol, z, r, mass: float = 1.0) -> np.ndarray:
    """Switch-rate matrix ``T_ij(r, z)`` with shape ``(..., n, n)``."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    _check_dims(protocol.n, z, r)
    n = protocol.n
    if protocol.family == "ept":
        tau = protocol.target_rates(excess_payoff(z, r, mass))
        return np.broadcast_to(tau[..., None, :], tau.shape[:-1] + (n, n)).copy()
    if protocol.family == "ipc":
        diff = r[..., None, :] - r[..., :, None]
        return protocol.pairwise_rates(diff)
    choice = logit_choice(r, protocol.eta)
    return np.broadcast_to(choice[..., None, :], choice.shape[:-1] + (n, n)).copy()


def flow_dynamic(T: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Inflow minus outflow: ``V_i = sum_j z_j T_ji - z_i sum_j T_ij``."""
    inflow = np.einsum("...j,...ji->...i", z, T)
    outflow = z * T.sum(axis=-1)
    return inflow - outflow


def mean_dynamic(protocol: Protocol, z, r, mass: float = 1.0) -> np.ndarray:
    """The mean dynamic ``V(z, r)``, a tangent vector for every state.

    EPT and PBR use the algebraically equivalent closed forms
    ``mass * tau - z * sum(tau)`` and ``mass * C(r) - z``.
    """
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    _check_dims(protocol.n, z, r)
    if protocol.family == "pbr":
        return mass * logit_choice(r, protocol.eta) - z
    if protocol.family == "ept":
        tau = protocol.target_rates(excess_payoff(z, r, mass))
        return mass * tau - z * tau.sum(axis=-1, keepdims=True)
    return flow_dynamic(rate_matrix(protocol, z, r, mass), z)


def bnn_protocol(n: int) -> Protocol:
    """Brown-von Neumann-Nash: ``tau_j = [r_hat_j]_+``."""
    return Protocol("ept", n, scalar_maps=(relu,) * n, name="bnn")


def smith_protocol(n: int) -> Protocol:
    """Smith: ``tau_j(d) = [d]_+`` on pairwise payoff differences."""
    return Protocol("ipc", n, scalar_maps=(relu,) * n, name="smith")


def logit_protocol(n: int, eta: float) -> Protocol:
    """Logit choice with noise level ``eta``."""
    return Protocol("pbr", n, eta=float(eta) if eta is not None else None, name="logit")


def best_response_set(r, mass: float = 1.0, tol: float = 1e-9) -> frozenset:
    """Zero-based indices ``i`` with ``r_i >= max(r) - tol``.

    ``mass`` does not affect the result; it is accepted for symmetry with the
    other state-dependent helpers.
    """
    if tol < 0:
        raise InvalidArgumentError("tol must be nonnegative")
    r = np.asarray(r, dtype=float)
    return frozenset(int(i) for i in np.flatnonzero(r >= r.max() - tol))
