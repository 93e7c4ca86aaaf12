"""Nash equilibria of stationary games and logit perturbed equilibria."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import root

from .edm import logit_choice, mean_dynamic, smith_protocol
from .errors import InvalidArgumentError
from .games import PopulationGame, payoff
from .simplex import barycenter, simplex3_grid, sup_norm

DEDUP_RADIUS = 1e-4


@dataclass
class EquilibriumSet:
    """A finite set of equilibrium points.

    Attributes:
        points: array of shape ``(k, n)``, sorted lexicographically.
        kind: ``nash`` or ``perturbed``.
        tolerance: membership tolerance the points were verified at.
        diagnostic: empty on success, otherwise a short reason.
        eta: logit noise level for perturbed sets.
    """

    points: np.ndarray
    kind: str
    tolerance: float
    diagnostic: str = ""
    eta: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "tolerance": self.tolerance, "points": self.points.tolist()}
        if self.diagnostic:
            out["diagnostic"] = self.diagnostic
        if self.eta is not None:
            out["eta"] = self.eta
        return out


def is_nash(game: PopulationGame, z, tol: float = 1e-8) -> bool:
    """True iff every strategy with share above ``tol`` earns within ``tol`` of the best payoff."""
    if tol < 0:
        raise InvalidArgumentError("tol must be nonnegative")
    z = np.asarray(z, dtype=float)
    r = payoff(game, z)
    support = z > tol
    return bool(np.all(r[support] >= r.max() - tol))


def dedupe(points, radius: float = DEDUP_RADIUS) -> np.ndarray:
    """Sort lexicographically, then drop points within ``radius`` (sup-norm) of a kept one."""
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
    order = np.lexsort(pts.T[::-1])
    kept: list[np.ndarray] = []
    for p in pts[order]:
        if all(np.max(np.abs(p - k)) > radius for k in kept):
            kept.append(p)
    return np.array(kept)


def _supports(n: int):
    for size in range(1, n + 1):
        yield from combinations(range(n), size)


def _affine_support_solution(M, b, support, mass):
    """Solve ``(M z + b)_i = c`` for ``i`` in support, ``sum z = mass``, ``z = 0`` off support."""
    S = list(support)
    k = len(S)
    A = np.zeros((k + 1, k + 1))
    rhs = np.zeros(k + 1)
    A[:k, :k] = M[np.ix_(S, S)]
    A[:k, k] = -1.0
    rhs[:k] = -b[S]
    A[k, :k] = 1.0
    rhs[k] = mass
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if np.max(np.abs(A @ sol - rhs)) > 1e-9:
        return None
    z = np.zeros(M.shape[0])
    z[S] = sol[:k]
    return z


def _nash_affine(game: PopulationGame, tol: float) -> list[np.ndarray]:
    if game.n > 10:
        raise InvalidArgumentError("support enumeration is limited to n <= 10")
    found = []
    for support in _supports(game.n):
        z = _affine_support_solution(game.matrix, game.offset, support, game.mass)
        if z is None or np.any(z < -tol):
            continue
        z = np.clip(z, 0.0, None)
        z *= game.mass / z.sum()
        if is_nash(game, z, tol):
            found.append(z)
    return found


def _grid_neighbours(resolution: int):
    """Index pairs of adjacent points in :func:`simplex3_grid` ordering."""
    i, j = np.meshgrid(np.arange(resolution + 1), np.arange(resolution + 1), indexing="ij")
    keep = i + j <= resolution
    index = -np.ones((resolution + 1, resolution + 1), dtype=int)
    index[i[keep], j[keep]] = np.arange(keep.sum())
    moves = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]
    nbrs = []
    for di, dj in moves:
        ii, jj = i[keep] + di, j[keep] + dj
        valid = (ii >= 0) & (jj >= 0) & (ii + jj <= resolution) & (ii <= resolution) & (jj <= resolution)
        out = np.full(keep.sum(), -1)
        out[valid] = index[ii[valid], jj[valid]]
        nbrs.append(out)
    return np.stack(nbrs, axis=1)


def _refine_on_support(game: PopulationGame, start: np.ndarray, support, tol: float):
    """Newton-type solve of the equal-payoff system restricted to ``support``."""
    S = list(support)
    k = len(S)
    z = np.zeros(game.n)
    if k == 1:
        z[S[0]] = game.mass
        return z
    x0 = np.clip(start[S], 1e-6, None)
    x0 *= game.mass / x0.sum()

    def residual(y):
        w = np.zeros(game.n)
        w[S] = y
        r = game.payoff_fn(w)[S]
        return np.concatenate([r[1:] - r[0], [y.sum() - game.mass]])

    # judge by the residual: hybr reports failure when it cannot improve an already exact root
    sol = root(residual, x0, method="hybr", tol=1e-14)
    if not np.all(np.isfinite(sol.x)) or np.max(np.abs(residual(sol.x))) > 1e-10:
        return None
    if np.any(sol.x < -tol):
        return None
    z[S] = np.clip(sol.x, 0.0, None)
    return z


def _nash_general(game: PopulationGame, resolution: int, tol: float, max_candidates: int):
    if game.n != 3:
        raise InvalidArgumentError("the grid scan for general games supports n = 3 only")
    grid = simplex3_grid(resolution, game.mass)
    speed = sup_norm(mean_dynamic(smith_protocol(3), grid, game.payoff_fn(grid), game.mass))
    nbrs = _grid_neighbours(resolution)
    padded = np.concatenate([speed, [np.inf]])
    is_min = np.all(speed[:, None] <= padded[nbrs], axis=1)
    cand = np.flatnonzero(is_min)
    cand = cand[np.argsort(speed[cand], kind="stable")][:max_candidates]
    found = []
    for c in cand:
        start = grid[c]
        for support in _supports(3):
            z = _refine_on_support(game, start, support, tol)
            if z is not None and is_nash(game, z, tol):
                found.append(z)
    return found, len(cand)


def nash_set(
    game: PopulationGame, grid_resolution: int = 60, tol: float = 1e-8, max_candidates: int = 400
) -> EquilibriumSet:
    """Nash equilibria of ``game``.

    Affine games use exact support enumeration. Other games (``n = 3`` only)
    scan a barycentric grid for local minima of the Smith dynamic speed and
    refine each candidate on every support by a root solve of the equal-payoff
    system.
    """
    if grid_resolution < 50:
        raise InvalidArgumentError("grid_resolution must be at least 50")
    meta = {}
    if game.structure == "affine":
        found = _nash_affine(game, tol)
        meta["method"] = "support_enumeration"
    else:
        found, ncand = _nash_general(game, grid_resolution, tol, max_candidates)
        meta.update(method="grid_scan", candidates=ncand, grid_resolution=grid_resolution)
    points = dedupe(found) if found else np.zeros((0, game.n))
    diag = "" if len(points) else "no equilibrium candidates found"
    return EquilibriumSet(points, "nash", tol, diag, meta=meta)


def logit_residual(game: PopulationGame, z, eta: float) -> np.ndarray:
    """Sup-norm of ``z - m C(F(z))``, batched."""
    z = np.asarray(z, dtype=float)
    return sup_norm(z - game.mass * logit_choice(game.payoff_fn(z), eta))


def _starts(n: int, mass: float, pull: float = 0.1) -> np.ndarray:
    centre = barycenter(n, mass)
    vertices = np.eye(n) * mass
    return np.vstack([centre, (1 - pull) * vertices + pull * centre])


def perturbed_equilibrium(
    game: PopulationGame,
    eta: float,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 20000,
    starts=None,
) -> EquilibriumSet:
    """Fixed points of ``z -> m C(F(z))`` by damped iteration from several starts.

    The step ``kappa`` starts at ``damping`` and is halved whenever the
    residual grows, so the iteration also settles at fixed points where the
    undamped map is expansive along some direction.
    """
    if not eta > 0:
        raise InvalidArgumentError(f"eta must be positive, got {eta}")
    if not 0 < damping <= 1:
        raise InvalidArgumentError("damping must lie in (0, 1]")
    starts = _starts(game.n, game.mass) if starts is None else np.atleast_2d(np.asarray(starts, float))
    found = []
    for z0 in starts:
        z = z0.copy()
        kappa = damping
        res = np.inf
        for _ in range(max_iter):
            target = game.mass * logit_choice(game.payoff_fn(z), eta)
            new_res = float(np.max(np.abs(target - z)))
            if new_res <= tol:
                found.append(z)
                break
            if new_res > res and kappa > 1e-6:
                kappa *= 0.5
            res = new_res
            z = (1 - kappa) * z + kappa * target
    if not found:
        return EquilibriumSet(np.zeros((0, game.n)), "perturbed", tol, "max_iter exceeded from all starts", eta)
    return EquilibriumSet(dedupe(found), "perturbed", tol, "", eta)
