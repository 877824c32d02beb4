"""Reproducible random streams and time grids.

Every random draw in the package is addressed by a :class:`StreamKey`: a root
seed plus a path of (role, index) pairs.  Distinct key paths map to distinct
Philox counter keys, so streams are independent, order-free and safe to
generate concurrently; the same key always reproduces the same draws.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StreamKey",
    "TimeGrid",
    "derive_key",
    "generator",
    "standard_normals",
    "brownian_increments",
    "brownian_path",
]


@dataclass(frozen=True)
class StreamKey:
    """Address of one random stream: a seed plus a derivation path."""

    seed: int
    path: tuple[tuple[str, int], ...] = ()

    def child(self, role: str, index: int) -> "StreamKey":
        return StreamKey(self.seed, self.path + ((str(role), int(index)),))

    def is_prefix_of(self, other: "StreamKey") -> bool:
        return (
            self.seed == other.seed
            and len(self.path) <= len(other.path)
            and other.path[: len(self.path)] == self.path
        )

    def __str__(self) -> str:
        tail = "/".join(f"{role}:{idx}" for role, idx in self.path)
        return f"{self.seed}" + (f"/{tail}" if tail else "")


def derive_key(parent: StreamKey, role: str, index: int) -> StreamKey:
    """Child stream key; same (parent, role, index) always gives the same key."""
    return parent.child(role, index)


def _philox_words(key: StreamKey) -> np.ndarray:
    h = hashlib.sha256()
    h.update(str(key.seed).encode())
    for role, idx in key.path:
        h.update(b"/")
        h.update(role.encode())
        h.update(b":")
        h.update(str(idx).encode())
    # Philox keys are 128-bit; take the first 16 digest bytes.
    return np.frombuffer(h.digest()[:16], dtype=np.uint64).copy()


def generator(key: StreamKey) -> np.random.Generator:
    """Fresh counter-based generator for this key."""
    return np.random.Generator(np.random.Philox(key=_philox_words(key)))


def standard_normals(key: StreamKey, count: int) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.empty(0)
    return generator(key).standard_normal(count)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * h on [0, T] with h = T / steps."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def node_at(self, t: float, tol: float = 1e-9) -> int:
        """Index of the grid node equal to t (raises if t is off-grid)."""
        i = int(round(t / self.h))
        if i < 0 or i > self.steps or abs(i * self.h - t) > tol:
            raise ValueError(f"t={t} is not a node of {self}")
        return i

    def __str__(self) -> str:
        return f"TimeGrid(T={self.horizon}, n={self.steps})"


def brownian_increments(key: StreamKey, grid: TimeGrid, dim: int) -> np.ndarray:
    """(steps, dim) array of N(0, h) increments, deterministic per key."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    z = generator(key).standard_normal((grid.steps, dim))
    return np.sqrt(grid.h) * z


def brownian_path(key: StreamKey, grid: TimeGrid, dim: int) -> np.ndarray:
    """(steps + 1, dim) Brownian path at the grid nodes, starting at 0."""
    dw = brownian_increments(key, grid, dim)
    w = np.zeros((grid.steps + 1, dim))
    np.cumsum(dw, axis=0, out=w[1:])
    return w
