"""Storage and antistorage functions, passivity certificates and trajectory checks.

A protocol is certified through a storage function ``S(z, r) >= 0`` whose
gradient in ``r`` is the mean dynamic; a payoff model is certified through an
antistorage function ``L(z, s) >= 0``. The integral inequalities

    S(t) - S(t0) <= int (x'.p' - eta |x'|^2)         (passivity, surplus eta)
    L(t0) - L(t) >= int (x'.p' - nu  |x'|^2)         (antipassivity, deficit nu)

are checked on sampled trajectories with trapezoidal quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad
from scipy.optimize import minimize
from scipy.special import logsumexp, xlogy

from .edm import Protocol, excess_payoff, mean_dynamic, relu
from .errors import InvalidArgumentError
from .games import PopulationGame, jacobian
from .pdm import PdmModel
from .simplex import barycentric_grid, centering_projection, simplex3_grid, tangent_basis

STORAGE_KINDS = ("bnn", "separable_ept", "ipc_numeric", "smith", "pbr_logit")
ANTISTORAGE_KINDS = ("zero_memoryless", "affine_quadratic", "legendre_smoothing")


# --------------------------------------------------------------------------- storage


@dataclass(frozen=True)
class StorageFunction:
    """A storage function for a revision protocol.

    Attributes:
        kind: one of ``bnn``, ``separable_ept``, ``ipc_numeric``, ``smith``, ``pbr_logit``.
        eta: logit noise level (``pbr_logit``).
        scalar_maps: rate maps ``tau_j`` integrated numerically (``separable_ept``, ``ipc_numeric``).
        mass: population mass.
    """

    kind: str
    eta: Optional[float] = None
    scalar_maps: Optional[tuple] = None
    mass: float = 1.0

    def __post_init__(self):
        if self.kind not in STORAGE_KINDS:
            raise InvalidArgumentError(f"unknown storage kind {self.kind!r}")
        if self.kind == "pbr_logit" and not (self.eta is not None and self.eta > 0):
            raise InvalidArgumentError("logit storage needs eta > 0")
        if self.kind in ("separable_ept", "ipc_numeric") and not self.scalar_maps:
            raise InvalidArgumentError(f"{self.kind} storage needs scalar rate maps")

    def __call__(self, z, r) -> np.ndarray:
        return storage_eval(self, z, r)


def _integral(f: Callable, upper: float) -> float:
    if upper == 0.0:
        return 0.0
    val, _ = quad(lambda s: float(f(np.float64(s))), 0.0, upper, limit=200)
    return val


def storage_eval(sf: StorageFunction, z, r) -> np.ndarray:
    """Evaluate ``S(z, r)``; batched over leading axes except for the quadrature kinds."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    if z.shape[-1] != r.shape[-1]:
        raise InvalidArgumentError("state and payoff dimensions differ")
    m = sf.mass
    if sf.kind == "bnn":
        r_hat = excess_payoff(z, r, m)
        return m * 0.5 * np.sum(relu(r_hat) ** 2, axis=-1)
    if sf.kind == "smith":
        diff = r[..., None, :] - r[..., :, None]
        return 0.5 * np.einsum("...i,...ij->...", z, relu(diff) ** 2)
    if sf.kind == "pbr_logit":
        eta = sf.eta
        best = m * eta * logsumexp(r / eta, axis=-1) - eta * xlogy(m, m)
        return best - np.sum(z * r, axis=-1) + eta * np.sum(xlogy(z, z), axis=-1)
    # quadrature kinds: one (z, r) pair at a time
    if z.ndim > 1:
        return np.array([storage_eval(sf, zi, ri) for zi, ri in zip(z.reshape(-1, z.shape[-1]), r.reshape(-1, r.shape[-1]))]).reshape(z.shape[:-1])
    n = z.size
    if sf.kind == "separable_ept":
        r_hat = excess_payoff(z, r, m)
        return np.float64(m * sum(_integral(sf.scalar_maps[j], r_hat[j]) for j in range(n)))
    total = 0.0
    for i in range(n):
        if z[i] == 0:
            continue
        total += z[i] * sum(_integral(sf.scalar_maps[j], r[j] - r[i]) for j in range(n) if j != i)
    return np.float64(total)


def storage_for(protocol: Protocol, mass: float = 1.0) -> StorageFunction:
    """The storage function matched to ``protocol``."""
    if protocol.family == "pbr":
        return StorageFunction("pbr_logit", eta=protocol.eta, mass=mass)
    if protocol.name == "bnn":
        return StorageFunction("bnn", mass=mass)
    if protocol.name == "smith":
        return StorageFunction("smith", mass=mass)
    if protocol.family == "ept":
        if protocol.ept_map is not None:
            raise InvalidArgumentError("no storage function available for non-separable EPT maps")
        return StorageFunction("separable_ept", scalar_maps=protocol.scalar_maps, mass=mass)
    return StorageFunction("ipc_numeric", scalar_maps=protocol.scalar_maps, mass=mass)


# ----------------------------------------------------------------------- antistorage


@dataclass(frozen=True)
class AntistorageFunction:
    """An antistorage function ``L(z, s)`` for a payoff model with state ``s``.

    Attributes:
        kind: ``zero_memoryless``, ``affine_quadratic`` or ``legendre_smoothing``.
        matrix: F-matrix of an affine game (``affine_quadratic`` and closed-form Legendre).
        offset: affine offset.
        scale: multiplier ``c`` in ``L = -c v^T F^-1 v`` with ``v = F z + offset - s``.
        alpha: filter rate (``legendre_smoothing``).
        potential: concave potential ``f`` for the numeric Legendre fallback.
        potential_grad: gradient of ``potential``.
        box: upper bound of the box ``[0, box]^n`` searched by the numeric fallback.
    """

    kind: str
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = field(default=None, repr=False)
    scale: float = 1.0
    alpha: float = 1.0
    potential: Optional[Callable] = field(default=None, repr=False)
    potential_grad: Optional[Callable] = field(default=None, repr=False)
    box: float = 1.0
    inverse: Optional[np.ndarray] = field(default=None, repr=False)

    def __call__(self, z, s) -> np.ndarray:
        return antistorage_eval(self, z, s)


def _negative_definite_inverse(matrix) -> np.ndarray:
    M = np.asarray(matrix, dtype=float)
    if not np.allclose(M, M.T, atol=1e-12):
        raise InvalidArgumentError("antistorage needs a symmetric F-matrix")
    eig = np.linalg.eigvalsh(M)
    if np.max(eig) >= 0 or abs(np.min(eig)) < 1e-12:
        raise InvalidArgumentError("antistorage needs an invertible negative definite F-matrix")
    return np.linalg.inv(M)


def zero_antistorage() -> AntistorageFunction:
    return AntistorageFunction("zero_memoryless")


def affine_quadratic_antistorage(matrix, offset, scale: float = 1.0) -> AntistorageFunction:
    """``L(z, s) = -scale * v^T F^-1 v`` with ``v = F z + offset - s``."""
    if not scale >= 0:
        raise InvalidArgumentError("scale must be nonnegative")
    inv = _negative_definite_inverse(matrix)
    return AntistorageFunction(
        "affine_quadratic", np.asarray(matrix, float), np.asarray(offset, float), scale=scale, inverse=inv
    )


def legendre_antistorage(
    alpha: float, matrix=None, offset=None, potential=None, potential_grad=None, box: float = 1.0
) -> AntistorageFunction:
    """``L(z, s) = alpha * (f*(s) - f(z) + s^T z)`` with ``f*(s) = sup_y f(y) - s^T y``.

    With ``matrix``/``offset`` the potential is ``f(y) = y^T F y / 2 + offset^T y``
    and the conjugate has a closed form. Otherwise ``potential`` (and optionally
    its gradient) is maximised numerically over the box ``[0, box]^n``, which
    lower-bounds the true conjugate.
    """
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    if matrix is not None:
        inv = _negative_definite_inverse(matrix)
        return AntistorageFunction(
            "legendre_smoothing", np.asarray(matrix, float), np.asarray(offset, float), alpha=alpha, inverse=inv
        )
    if potential is None:
        raise InvalidArgumentError("legendre antistorage needs a quadratic game or a potential")
    return AntistorageFunction(
        "legendre_smoothing", alpha=alpha, potential=potential, potential_grad=potential_grad, box=box
    )


def _numeric_conjugate(af: AntistorageFunction, s: np.ndarray) -> float:
    n = s.size
    f, g = af.potential, af.potential_grad

    def obj(y):
        return -(f(y) - s @ y)

    jac = (lambda y: -(g(y) - s)) if g is not None else None
    best = -np.inf
    for y0 in (np.full(n, af.box / n), np.full(n, af.box / 2)):
        res = minimize(obj, y0, jac=jac, bounds=[(0.0, af.box)] * n, method="L-BFGS-B")
        best = max(best, -res.fun)
    return best


def antistorage_eval(af: AntistorageFunction, z, s) -> np.ndarray:
    """Evaluate ``L(z, s)``; batched for the closed-form kinds."""
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    if af.kind == "zero_memoryless":
        return np.zeros(np.broadcast_shapes(z.shape, s.shape)[:-1])
    if af.inverse is not None:
        v = z @ af.matrix.T + af.offset - s
        quad_form = -np.einsum("...i,ij,...j->...", v, af.inverse, v)
        if af.kind == "affine_quadratic":
            return af.scale * quad_form
        return af.alpha * 0.5 * quad_form
    if z.ndim > 1:
        flat = [antistorage_eval(af, zi, si) for zi, si in zip(z.reshape(-1, z.shape[-1]), s.reshape(-1, s.shape[-1]))]
        return np.array(flat).reshape(z.shape[:-1])
    return np.float64(af.alpha * (_numeric_conjugate(af, s) - af.potential(z) + s @ z))


def quadratic_potential(matrix, offset):
    """``f(y) = y^T F y / 2 + offset^T y`` and its gradient for a symmetric F-matrix."""
    M = np.asarray(matrix, float)
    b = np.asarray(offset, float)
    return (lambda y: 0.5 * y @ M @ y + b @ y), (lambda y: M @ y + b)


def anticipatory_antistorage_scale(pdm: PdmModel) -> float:
    """Scale ``c`` for which ``-c v^T F^-1 v`` satisfies the antipassivity inequality.

    Pointwise the inequality reduces to ``(2c + alpha (g - 1))^2 <= 8 c alpha g``
    with ``g = mu0 + alpha mu2``, whose solution interval is
    ``[alpha (sqrt(g) - 1)^2 / 2, alpha (sqrt(g) + 1)^2 / 2]``. The midpoint
    ``alpha (1 + g) / 2`` is returned.
    """
    return 0.5 * pdm.alpha * (1.0 + pdm.output_gain)


def _is_symmetric_negative_definite(M) -> bool:
    M = np.asarray(M, float)
    return bool(np.allclose(M, M.T, atol=1e-12) and np.max(np.linalg.eigvalsh(M)) < 0)


def antistorage_for(pdm: PdmModel) -> AntistorageFunction | None:
    """A valid antistorage function for ``pdm`` when one is known, else ``None``.

    Memoryless models use ``L = 0``. Smoothing-anticipatory models over a
    symmetric negative definite affine game use the quadratic form with the
    scale from :func:`anticipatory_antistorage_scale`.
    """
    game = pdm.game
    if pdm.is_memoryless:
        return zero_antistorage()
    if game.structure == "affine" and _is_symmetric_negative_definite(game.matrix):
        return affine_quadratic_antistorage(game.matrix, game.offset, anticipatory_antistorage_scale(pdm))
    return None


# ---------------------------------------------------------------------- certificates


def lambda_star(F_matrix, n: int | None = None) -> float:
    """Largest eigenvalue of ``Phi F Phi`` with ``Phi`` the centering projection.

    Raises:
        InvalidArgumentError: if ``Phi F Phi`` is not symmetric within 1e-9.
    """
    F = np.asarray(F_matrix, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise InvalidArgumentError("F-matrix must be square")
    P = centering_projection(F.shape[0])
    A = P @ F @ P
    if np.max(np.abs(A - A.T)) > 1e-9:
        raise InvalidArgumentError("Phi F Phi is not symmetric")
    return float(np.max(np.linalg.eigvalsh(0.5 * (A + A.T))))


def _grid(n: int, resolution: int, mass: float) -> np.ndarray:
    return simplex3_grid(resolution, mass) if n == 3 else barycentric_grid(resolution, n, mass)


def _jacobians(game: PopulationGame, grid: np.ndarray, fd_step: float = 1e-6) -> np.ndarray:
    if game.structure == "affine":
        return np.broadcast_to(game.matrix, (len(grid),) + game.matrix.shape)
    if game.structure == "separable":
        diag = np.stack([d(grid[:, i]) for i, (_, d) in enumerate(game.rewards)], axis=1)
        J = np.zeros((len(grid), game.n, game.n))
        idx = np.arange(game.n)
        J[:, idx, idx] = diag
        return J
    # interior-shifted finite differences keep the stencil on the payoff's domain
    return np.stack([jacobian(game, z, fd_step) for z in grid])


def tangent_eigenvalues(matrices: np.ndarray) -> np.ndarray:
    """Eigenvalues of the symmetric part restricted to the tangent space, ascending."""
    n = matrices.shape[-1]
    B = tangent_basis(n)
    sym = 0.5 * (matrices + np.swapaxes(matrices, -1, -2))
    return np.linalg.eigvalsh(B.T @ sym @ B)


def memoryless_deficit(game: PopulationGame, grid_resolution: int = 200) -> float:
    """Grid estimate of the least ``nu`` with ``v^T DF(z) v <= nu |v|^2`` on tangent ``v``."""
    grid = _grid(game.n, grid_resolution, game.mass)
    top = tangent_eigenvalues(_jacobians(game, grid))[..., -1]
    return float(max(0.0, np.max(top)))


def pbr_surplus_bound(eta: float, grid_resolution: int = 200, n: int = 3) -> float:
    """Grid minimum of the smallest tangent eigenvalue of ``eta * diag(1 / z)``.

    Points with any share below ``1 / (4 grid_resolution)`` are excluded.
    """
    if not eta > 0:
        raise InvalidArgumentError("eta must be positive")
    grid = _grid(n, grid_resolution, 1.0)
    grid = grid[np.all(grid >= 1.0 / (4 * grid_resolution), axis=1)]
    H = np.zeros((len(grid), n, n))
    idx = np.arange(n)
    H[:, idx, idx] = eta / grid
    return float(np.min(tangent_eigenvalues(H)[..., 0]))


# ---------------------------------------------------------------- trajectory checks


@dataclass
class PassivityReport:
    """Outcome of a numerical passivity check.

    Attributes:
        max_violation: largest violation of the inequality over all checked intervals.
        tolerance: admissible violation.
        rate: surplus or deficit used in the inequality.
        passed: ``max_violation <= tolerance``.
        detail: free-form extra data.
    """

    max_violation: float
    tolerance: float
    rate: float
    passed: bool
    detail: dict = field(default_factory=dict)


def check_storage_gradient(
    sf: StorageFunction,
    protocol: Protocol,
    samples: int = 200,
    step: float = 1e-6,
    tol: float = 1e-5,
    seed: int = 0,
    payoff_scale: float = 1.0,
) -> PassivityReport:
    """Compare the central-difference ``r``-gradient of ``S`` to the mean dynamic."""
    rng = np.random.default_rng(seed)
    n = protocol.n
    z = rng.dirichlet(np.ones(n), size=samples) * sf.mass
    r = rng.normal(scale=payoff_scale, size=(samples, n))
    worst = 0.0
    for zi, ri in zip(z, r):
        plus = ri + step * np.eye(n)
        minus = ri - step * np.eye(n)
        zz = np.broadcast_to(zi, plus.shape)
        grad = (storage_eval(sf, zz, plus) - storage_eval(sf, zz, minus)) / (2 * step)
        worst = max(worst, float(np.max(np.abs(grad - mean_dynamic(protocol, zi, ri, sf.mass)))))
    return PassivityReport(worst, tol, 0.0, worst <= tol, {"samples": samples, "step": step})


def quadrature_tolerance(h: float, xdot: np.ndarray, pdot: np.ndarray, c: float = 10.0) -> float:
    """``c h^2 (1 + max |x'| max |p'|)`` with Euclidean norms per sample."""
    xs = float(np.max(np.linalg.norm(xdot, axis=-1)))
    ps = float(np.max(np.linalg.norm(pdot, axis=-1)))
    return c * h * h * (1.0 + xs * ps)


def _worst_increase(D: np.ndarray) -> float:
    """``max_{k <= t} D_t - D_k``: the largest rise of ``D`` over any sub-interval."""
    return float(np.max(D - np.minimum.accumulate(D)))


def _supply(traj, rate: float) -> np.ndarray:
    """Cumulative ``int x'.p' - rate |x'|^2``.

    The first term is the trapezoid sum of ``x' . dp`` over grid increments of
    ``p``, which avoids differentiating ``p`` numerically.
    """
    if traj.xdot is None or traj.pdot is None:
        raise InvalidArgumentError("trajectory is missing derivative samples")
    xd = traj.xdot
    work = np.einsum("ki,ki->k", 0.5 * (xd[1:] + xd[:-1]), np.diff(traj.p, axis=0))
    cross = np.concatenate([[0.0], np.cumsum(work)])
    return cross - rate * cumulative_trapezoid(np.einsum("ki,ki->k", xd, xd), traj.t, initial=0.0)


def check_delta_passivity(traj, sf: StorageFunction, eta: float = 0.0) -> PassivityReport:
    """Check ``S(t) - S(t0) <= int (x'.p' - eta |x'|^2)`` on every sub-interval."""
    if eta < 0:
        raise InvalidArgumentError("surplus must be nonnegative")
    S = storage_eval(sf, traj.x, traj.p)
    D = S - _supply(traj, eta)
    worst = _worst_increase(D)
    tol = quadrature_tolerance(traj.h, traj.xdot, traj.pdot)
    return PassivityReport(worst, tol, eta, worst <= tol, {"storage_final": float(S[-1])})


def check_delta_antipassivity(traj, af: AntistorageFunction, nu: float = 0.0) -> PassivityReport:
    """Check ``L(t0) - L(t) >= int (x'.p' - nu |x'|^2)`` on every sub-interval."""
    if nu < 0:
        raise InvalidArgumentError("deficit must be nonnegative")
    L = antistorage_eval(af, traj.x, traj.q)
    D = L + _supply(traj, nu)
    worst = _worst_increase(D)
    tol = quadrature_tolerance(traj.h, traj.xdot, traj.pdot)
    return PassivityReport(worst, tol, nu, worst <= tol, {"antistorage_final": float(np.ravel(L)[-1])})


# ------------------------------------------------------------------------- certify


@dataclass
class PdmCertificate:
    """What is known about a payoff model's antipassivity."""

    strong: bool
    deficit: Optional[float]
    lambda_star: Optional[float]
    reason: str


def pdm_certificate(pdm: PdmModel, grid_resolution: int = 200, zero_tol: float = 1e-10) -> PdmCertificate:
    """Antipassivity status and deficit of ``pdm`` from the known sufficient conditions."""
    game = pdm.game
    if pdm.is_memoryless:
        nu = memoryless_deficit(game, grid_resolution)
        lam = None
        if game.structure == "affine":
            try:
                lam = lambda_star(game.matrix)
            except InvalidArgumentError:
                lam = None
        return PdmCertificate(True, 0.0 if nu <= zero_tol else nu, lam, "memoryless: Jacobian tangent bound")
    if game.structure == "affine":
        try:
            lam = lambda_star(game.matrix)
        except InvalidArgumentError:
            return PdmCertificate(False, None, None, "affine game is not potential")
        if _is_symmetric_negative_definite(game.matrix):
            return PdmCertificate(True, 0.0, lam, "symmetric negative definite affine game: quadratic antistorage")
        if lam <= zero_tol:
            return PdmCertificate(False, 0.0, lam, "affine potential game with lambda* = 0")
        g = pdm.output_gain
        nu = lam if g <= 1 else g * lam
        return PdmCertificate(False, nu, lam, "affine potential game with lambda* > 0")
    return PdmCertificate(False, None, None, "no antipassivity certificate for this model")


def certify(pdm: PdmModel, protocol: Protocol, grid_resolution: int = 200, zero_tol: float = 1e-10) -> dict:
    """Select the applicable convergence theorem and its conclusion.

    Returns a JSON-ready dict with ``lambda_star``, ``deficit``,
    ``surplus_bound``, ``theorem_applied`` (``Thm1``, ``Thm2``, ``Thm3-I``,
    ``Thm3-II`` or ``none``), ``conclusion`` (``GAS``,
    ``globally_attractive`` or ``inconclusive``) and ``lyapunov_stability``.
    """
    cert = pdm_certificate(pdm, grid_resolution, zero_tol)
    surplus = None
    theorem = "none"
    target = "NE"
    deficit = cert.deficit
    if protocol.family == "pbr":
        surplus = pbr_surplus_bound(protocol.eta, grid_resolution, protocol.n)
        target = "PE"
        if deficit is not None:
            if deficit <= zero_tol:
                theorem = "Thm3-I"
            elif surplus > deficit:
                theorem = "Thm3-II"
    elif deficit is not None and deficit <= zero_tol:
        theorem = "Thm1" if protocol.family == "ept" else "Thm2"
    if theorem == "none":
        conclusion = "inconclusive"
    else:
        conclusion = "GAS" if cert.strong else "globally_attractive"
    return {
        "lambda_star": cert.lambda_star,
        "deficit": deficit,
        "surplus_bound": surplus,
        "theorem_applied": theorem,
        "conclusion": conclusion,
        "equilibrium_set": target,
        "lyapunov_stability": "by theorem" if conclusion == "GAS" else "not claimed",
        "pdm_strongly_antipassive": cert.strong,
        "pdm_reason": cert.reason,
        "grid_resolution": grid_resolution,
    }
