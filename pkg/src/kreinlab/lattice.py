"""Enumeration of boundary Fourier modes xi in Z^{n-1} inside a ball."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kreinlab.fiber import Geometry, ModelOperator


def lattice_points(dim: int, radius: float) -> np.ndarray:
    """Integer points of Z^dim with |xi| <= radius, sorted by (|xi|^2, lexicographic).

    Every lattice point appears once, so multiplicities of equal |xi| are
    counted by enumeration.
    """
    if dim < 1:
        raise ValueError("lattice dimension must be >= 1")
    r = int(np.floor(radius))
    axis = np.arange(-r, r + 1)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    sq = np.sum(pts.astype(np.int64) ** 2, axis=1)
    pts = pts[sq <= radius * radius]
    sq = sq[sq <= radius * radius]
    keys = [pts[:, k] for k in range(dim - 1, -1, -1)] + [sq]
    order = np.lexsort(keys)
    return pts[order]


@dataclass(frozen=True)
class Lattice:
    """Truncated mode lattice ``|xi| <= R`` with the derived per-mode scalars."""

    geom: Geometry
    op: ModelOperator
    R: float
    xi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "xi", lattice_points(self.geom.boundary_dim, self.R))

    def __len__(self) -> int:
        return self.xi.shape[0]

    @property
    def xi_sq(self) -> np.ndarray:
        return np.sum(self.xi.astype(float) ** 2, axis=1)

    @property
    def a(self) -> np.ndarray:
        return self.xi_sq + self.op.msq

    @property
    def bracket(self) -> np.ndarray:
        """<xi> = (1 + |xi|^2)^{1/2}."""
        return np.sqrt(1.0 + self.xi_sq)

    def mode(self, index: int):
        return self.op.mode(self.xi[index])
