"""Population states on the mass-m simplex and tangent-space helpers.

States are plain numpy arrays whose last axis indexes strategies. The
helpers here validate them, build barycentric grids, and project onto the
tangent subspace ``{v : sum(v) = 0}``.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .errors import InvalidArgumentError

SIMPLEX_ATOL = 1e-9


def simplex_state(entries, mass: float = 1.0, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate ``entries`` as a population state and return it as a float array.

    Raises:
        InvalidArgumentError: on negative entries, a wrong total mass, a
            non-positive mass or non-finite values.
    """
    z = np.array(entries, dtype=float)
    if z.ndim != 1 or z.size < 1:
        raise InvalidArgumentError(f"population state must be a 1-d vector, got shape {z.shape}")
    if not mass > 0:
        raise InvalidArgumentError(f"mass must be positive, got {mass}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("population state has non-finite entries")
    if np.any(z < 0):
        raise InvalidArgumentError(f"population state has negative entries: {z}")
    if abs(z.sum() - mass) > atol:
        raise InvalidArgumentError(f"population state sums to {z.sum()!r}, expected mass {mass}")
    return z


def payoff_vector(entries) -> np.ndarray:
    r = np.array(entries, dtype=float)
    if r.ndim != 1:
        raise InvalidArgumentError(f"payoff vector must be 1-d, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidArgumentError("payoff vector has non-finite entries")
    return r


def barycenter(n: int, mass: float = 1.0) -> np.ndarray:
    return np.full(n, mass / n)


def barycentric_grid(resolution: int, n: int = 3, mass: float = 1.0) -> np.ndarray:
    """All points ``mass * k / resolution`` with nonnegative integer ``k`` summing to ``resolution``.

    Returns an array of shape ``(C(resolution + n - 1, n - 1), n)`` in
    lexicographic order of ``k`` (descending first coordinate).
    """
    if resolution < 1 or n < 1:
        raise InvalidArgumentError("resolution and n must be positive")
    rows = []
    # stars and bars: choose bar positions among resolution + n - 1 slots
    for bars in combinations(range(resolution + n - 1), n - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(resolution + n - 2 - prev)
        rows.append(counts)
    grid = np.array(rows, dtype=float) * (mass / resolution)
    return grid


def simplex3_grid(resolution: int, mass: float = 1.0) -> np.ndarray:
    """Vectorised barycentric grid for n = 3 (faster than the generic version)."""
    i, j = np.meshgrid(np.arange(resolution + 1), np.arange(resolution + 1), indexing="ij")
    keep = i + j <= resolution
    i, j = i[keep], j[keep]
    k = resolution - i - j
    return np.stack([i, j, k], axis=1).astype(float) * (mass / resolution)


def project_to_simplex(z: np.ndarray, mass: float = 1.0) -> np.ndarray:
    """Clip negative entries and renormalise to ``mass`` along the last axis."""
    clipped = np.clip(z, 0.0, None)
    total = clipped.sum(axis=-1, keepdims=True)
    return clipped * (mass / total)


def round_to_lattice(z, N: int) -> np.ndarray:
    """Nearest point of ``(1/N) * N^n`` on the unit simplex, as integer counts.

    Uses largest-remainder rounding; ties go to the lower strategy index.
    """
    z = np.asarray(z, dtype=float)
    scaled = z / z.sum() * N
    counts = np.floor(scaled).astype(np.int64)
    short = N - int(counts.sum())
    if short > 0:
        remainders = scaled - counts
        order = np.argsort(-remainders, kind="stable")
        counts[order[:short]] += 1
    return counts


def centering_projection(n: int) -> np.ndarray:
    """The orthogonal projection onto the tangent space: ``I - 11^T / n``."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def tangent_basis(n: int) -> np.ndarray:
    """Orthonormal basis of the tangent space as the columns of an ``n x (n-1)`` matrix."""
    # columns of the centering projection span the tangent space; QR gives an orthonormal basis
    q, _ = np.linalg.qr(centering_projection(n)[:, : n - 1])
    return q


def sup_norm(v: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.max(np.abs(v), axis=axis)


def random_simplex_points(rng: np.random.Generator, count: int, n: int, mass: float = 1.0) -> np.ndarray:
    """Uniform samples from the simplex interior (flat Dirichlet)."""
    return rng.dirichlet(np.ones(n), size=count) * mass
