"""Periodic x-grid and polar velocity grid on the unit ball."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .closure import grading_power, xi1_weighted_integral
from .errors import DomainError
from .fibers import DirectionGrid


@dataclass(frozen=True)
class XGrid:
    """Cell-centred periodic grid on [0, L)^n with N cells per axis."""

    n: int
    N: int
    length: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise DomainError("dimension must be 1 or 2")
        if self.N < 1:
            raise DomainError("need at least one cell per axis")

    @property
    def h(self) -> float:
        return self.length / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h

    def mesh(self) -> np.ndarray:
        """Cell centres with shape ``shape + (n,)``."""
        axes = np.meshgrid(*([self.centers] * self.n), indexing="ij")
        return np.stack(axes, axis=-1)

    def points(self) -> np.ndarray:
        """Cell centres flattened row-major to (P, n)."""
        return self.mesh().reshape(-1, self.n)

    def integrate(self, field_) -> np.ndarray:
        """Sum over the spatial axes times the cell volume."""
        axes = tuple(range(self.n))
        return np.sum(field_, axis=axes) * self.cell_volume

    def refined(self, factor: int = 2) -> "XGrid":
        return XGrid(self.n, self.N * factor, self.length)


class PhaseGrid:
    """x-grid times a polar velocity grid.

    Radial cells have edges e_j = (j/Ns)^p with p = max(1, 2a), so they are
    graded towards v = 0 where the equilibrium profile is singular.  Each
    (radial cell, direction) pair is one velocity cell with measure
    ``weights[j, k]`` (exact annulus area times the angular spacing).

    Velocity moments use profile-weighted radial factors: within a cell the
    s-dependence is assumed proportional to xi1, which makes moments of the
    equilibrium exact and is second order for any smooth state.
    """

    def __init__(self, xgrid: XGrid, Ns: int, K: int = 32, a: float = 1.0):
        if Ns < 2:
            raise DomainError("need at least two radial cells")
        self.x = xgrid
        self.n = xgrid.n
        self.Ns = Ns
        self.dirs = DirectionGrid(self.n, K)
        self.K = self.dirs.K
        self.a = float(a)
        self.p = grading_power(a)

    @cached_property
    def edges(self) -> np.ndarray:
        return (np.arange(self.Ns + 1) / self.Ns) ** self.p

    @cached_property
    def radial_measure(self) -> np.ndarray:
        """int_cell s^{n-1} ds."""
        e = self.edges
        return (e[1:] ** self.n - e[:-1] ** self.n) / self.n

    @property
    def dtheta(self) -> float:
        return self.dirs.spacing

    @cached_property
    def weights(self) -> np.ndarray:
        """Velocity cell measures, shape (Ns, K); they sum to the ball volume."""
        return np.outer(self.radial_measure, self.dirs.weights)

    @cached_property
    def xi1_average(self) -> np.ndarray:
        """Cell averages of xi1 with respect to s^{n-1} ds."""
        e = self.edges
        return xi1_weighted_integral(e[:-1], e[1:], self.a, self.n, 0) / self.radial_measure

    @cached_property
    def radial_moment(self) -> dict:
        """Profile-weighted factors R_m[j] ~ int_cell s^{n-1+m} ds, for m = 0..3."""
        e = self.edges
        base = xi1_weighted_integral(e[:-1], e[1:], self.a, self.n, 0)
        out = {0: self.radial_measure.copy()}
        for m in (1, 2, 3):
            out[m] = self.radial_measure * xi1_weighted_integral(e[:-1], e[1:], self.a, self.n, m) / base
        return out

    @cached_property
    def speeds(self) -> np.ndarray:
        """Representative speed of each radial cell (first moment / measure)."""
        return self.radial_moment[1] / self.radial_measure

    @cached_property
    def velocities(self) -> np.ndarray:
        """Node velocities, shape (Ns, K, n)."""
        return self.speeds[:, None, None] * self.dirs.vectors[None, :, :]

    @property
    def ball_volume(self) -> float:
        return float(self.weights.sum())

    @property
    def state_shape(self) -> tuple:
        return self.x.shape + (self.Ns, self.K)

    def velocity_integral(self, c) -> np.ndarray:
        return np.einsum("...jk,jk->...", c, self.weights)

    def first_moment(self, c) -> np.ndarray:
        w1 = np.outer(self.radial_moment[1], self.dirs.weights)
        return np.einsum("...jk,jk,kn->...n", c, w1, self.dirs.vectors)

    def second_moment(self, c) -> np.ndarray:
        w2 = np.outer(self.radial_moment[2], self.dirs.weights)
        V = self.dirs.vectors
        return np.einsum("...jk,jk,ki,kl->...il", c, w2, V, V)

    def polynomial_moment(self, c, degree: int, direction_factor: np.ndarray) -> np.ndarray:
        """int c(v) s^degree f(theta) dv for a direction factor f sampled on the K nodes."""
        wm = np.outer(self.radial_moment[degree], self.dirs.weights)
        return np.einsum("...jk,jk,k->...", c, wm, direction_factor)

    def refined(self, factor: int = 2, velocity: bool = False) -> "PhaseGrid":
        if velocity:
            K = self.K if self.n == 1 else self.K * factor
            return PhaseGrid(self.x.refined(factor), self.Ns * factor, K, self.a)
        return PhaseGrid(self.x.refined(factor), self.Ns, self.K, self.a)
