"""Orientational fiber distributions q(x, theta) and their moment tensors.

Directions live on the unit sphere S_1(0).  In one space dimension the
sphere is the two-point set {-1, +1} with counting measure; in two
dimensions it is the circle, discretised by a uniform trapezoidal rule.

Spatially varying parameters (mean direction, concentration, ``p_plus``)
may be given either as numbers or as callables mapping an ``(P, n)`` array
of positions to a length-``P`` array.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import i0e

from .errors import DomainError, FiberMigError

Field = Union[float, Callable[[np.ndarray], np.ndarray]]

DEFAULT_K = 128


@dataclass(frozen=True)
class DirectionGrid:
    """Quadrature on S_1(0): nodes ``vectors`` (K, n) and ``weights`` (K,)."""

    n: int
    K: int = DEFAULT_K

    def __post_init__(self):
        if self.n not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {self.n}")
        if self.n == 1:
            object.__setattr__(self, "K", 2)

    @property
    def angles(self) -> np.ndarray:
        if self.n == 1:
            return np.array([np.pi, 0.0])
        return 2.0 * np.pi * np.arange(self.K) / self.K

    @property
    def vectors(self) -> np.ndarray:
        if self.n == 1:
            return np.array([[-1.0], [1.0]])
        th = self.angles
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    @property
    def weights(self) -> np.ndarray:
        if self.n == 1:
            return np.ones(2)
        return np.full(self.K, 2.0 * np.pi / self.K)

    @property
    def spacing(self) -> float:
        return 1.0 if self.n == 1 else 2.0 * np.pi / self.K


@dataclass(frozen=True)
class FiberMoments:
    """Moments of q: mean ``E``, second moment ``D``, covariance ``V``, third moment ``T``.

    Arrays may carry leading batch dimensions (one entry per position).
    """

    E: np.ndarray
    D: np.ndarray
    V: np.ndarray
    T: np.ndarray


def _as_points(x, n: int) -> tuple[np.ndarray, tuple]:
    """Reshape positions into ``(P, n)``; return the batch shape as well."""
    arr = np.asarray(x, dtype=float)
    if n == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != n:
        raise DomainError(f"positions must have trailing dimension {n}, got shape {arr.shape}")
    batch = arr.shape[:-1]
    return arr.reshape(-1, n), batch


def _as_directions(theta, n: int) -> tuple[np.ndarray, tuple]:
    """Accept unit vectors (..., n), angles (n=2) or signs (n=1)."""
    arr = np.asarray(theta, dtype=float)
    if n == 1:
        if arr.ndim > 0 and arr.shape[-1] == 1:
            arr = arr[..., 0]
        if not np.all(np.isin(arr, (-1.0, 1.0))):
            raise DomainError("one-dimensional directions must be -1 or +1")
        batch = arr.shape
        return arr.reshape(-1, 1), batch
    if arr.ndim >= 1 and arr.shape[-1] == 2:
        norms = np.linalg.norm(arr, axis=-1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise DomainError("direction vectors must have unit length")
        batch = arr.shape[:-1]
        return arr.reshape(-1, 2), batch
    batch = arr.shape
    ang = arr.reshape(-1)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1), batch


def _field(value: Field, pts: np.ndarray) -> np.ndarray:
    if callable(value):
        out = np.asarray(value(pts), dtype=float)
        return np.broadcast_to(out, (pts.shape[0],)).copy()
    return np.full(pts.shape[0], float(value))


class FiberDistribution:
    """Base class.  Subclasses implement :meth:`values`."""

    n: int
    variant: str = "abstract"

    def values(self, pts: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Density on positions ``pts`` (P, n) and unit directions ``dirs`` (K, n) -> (P, K)."""
        raise NotImplementedError

    def eval_q(self, x, theta) -> np.ndarray:
        """Evaluate q(x, theta).  Broadcasts over a batch of positions or of directions."""
        pts, xb = _as_points(x, self.n)
        dirs, db = _as_directions(theta, self.n)
        vals = self.values(pts, dirs)
        if len(xb) == 0 and len(db) == 0:
            return float(vals[0, 0])
        return vals.reshape(xb + db)

    def table(self, pts: np.ndarray, grid: DirectionGrid) -> np.ndarray:
        """Values on a direction grid, shape (P, K)."""
        return self.values(np.asarray(pts, dtype=float).reshape(-1, self.n), grid.vectors)

    def moments(self, x, grid: DirectionGrid | None = None) -> FiberMoments:
        """Moment tensors at one position or a batch of positions."""
        grid = grid or DirectionGrid(self.n)
        pts, batch = _as_points(x, self.n)
        vals = self.table(pts, grid) * grid.weights
        return _moments_from_weighted(vals, grid.vectors, batch)

    def total(self, x, grid: DirectionGrid | None = None) -> np.ndarray:
        """Direction integral of q; equals one for a valid distribution."""
        grid = grid or DirectionGrid(self.n)
        pts, batch = _as_points(x, self.n)
        return (self.table(pts, grid) @ grid.weights).reshape(batch)


def _moments_from_weighted(wq: np.ndarray, dirs: np.ndarray, batch: tuple) -> FiberMoments:
    E = wq @ dirs
    D = np.einsum("pk,ki,kj->pij", wq, dirs, dirs)
    T = np.einsum("pk,ki,kj,kl->pijl", wq, dirs, dirs, dirs)
    V = D - E[:, :, None] * E[:, None, :]
    n = dirs.shape[1]
    return FiberMoments(
        E=E.reshape(batch + (n,)),
        D=D.reshape(batch + (n, n)),
        V=V.reshape(batch + (n, n)),
        T=T.reshape(batch + (n, n, n)),
    )


class Uniform(FiberDistribution):
    variant = "uniform"

    def __init__(self, n: int):
        if n not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {n}")
        self.n = n

    def values(self, pts, dirs):
        level = 0.5 if self.n == 1 else 1.0 / (2.0 * np.pi)
        return np.full((pts.shape[0], dirs.shape[0]), level)


class VonMises(FiberDistribution):
    """Circular von Mises density with mean angle ``mu`` and concentration ``kappa``."""

    variant = "vonmises"

    def __init__(self, mu: Field = 0.0, kappa: Field = 1.0):
        self.n = 2
        if not callable(kappa) and kappa < 0:
            raise DomainError("von Mises concentration must be nonnegative")
        self.mu = mu
        self.kappa = kappa

    def values(self, pts, dirs):
        mu = _field(self.mu, pts)[:, None]
        kap = _field(self.kappa, pts)[:, None]
        if np.any(kap < 0):
            raise DomainError("von Mises concentration must be nonnegative")
        ang = np.arctan2(dirs[:, 1], dirs[:, 0])[None, :]
        return np.exp(kap * (np.cos(ang - mu) - 1.0)) / (2.0 * np.pi * i0e(kap))


class Discrete(FiberDistribution):
    """One-dimensional two-point distribution with mass ``p_plus`` at +1."""

    variant = "discrete"

    def __init__(self, p_plus: Field = 0.5):
        self.n = 1
        if not callable(p_plus) and not 0.0 <= p_plus <= 1.0:
            raise DomainError("p_plus must lie in [0, 1]")
        self.p_plus = p_plus

    def values(self, pts, dirs):
        p = _field(self.p_plus, pts)
        if np.any((p < 0) | (p > 1)):
            raise DomainError("p_plus must lie in [0, 1]")
        sign = dirs[:, 0][None, :]
        return np.where(sign > 0, p[:, None], 1.0 - p[:, None])


class Mixture(FiberDistribution):
    variant = "mixture"

    def __init__(self, components: Sequence[FiberDistribution], weights: Sequence[float]):
        if len(components) == 0 or len(components) != len(weights):
            raise FiberMigError("mixture needs matching, nonempty component and weight lists")
        dims = {c.n for c in components}
        if len(dims) != 1:
            raise FiberMigError("mixture components must share the dimension")
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise FiberMigError("mixture weights must be nonnegative with positive sum")
        self.n = dims.pop()
        self.components = list(components)
        self.weights = w / w.sum()

    def values(self, pts, dirs):
        return sum(w * c.values(pts, dirs) for w, c in zip(self.weights, self.components))


class Gridded(FiberDistribution):
    """Tabulated q on the nodes of a periodic box.

    ``table`` has shape ``(N,)*n + (K,)``: nearest-node lookup in x and
    piecewise-constant bins in theta.  Rows are rescaled to unit integral.
    """

    variant = "gridded"

    def __init__(self, table: np.ndarray, length: float):
        table = np.asarray(table, dtype=float)
        self.n = table.ndim - 1
        if self.n not in (1, 2):
            raise DomainError("gridded table must have 2 or 3 axes")
        if self.n == 1 and table.shape[-1] != 2:
            raise DomainError("one-dimensional gridded q needs exactly two signs")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise DomainError("gridded q must be finite and nonnegative")
        self.grid = DirectionGrid(self.n, table.shape[-1])
        mass = table @ self.grid.weights
        if np.any(mass <= 0):
            raise DomainError("gridded q has a node with zero total mass")
        self.data = table / mass[..., None]
        self.length = float(length)
        self.nodes = table.shape[0]

    def _node_index(self, pts: np.ndarray) -> tuple:
        if np.any(pts < 0) or np.any(pts >= self.length):
            raise DomainError(f"position outside the tabulated box [0, {self.length})")
        h = self.length / self.nodes
        idx = np.floor(pts / h).astype(int)
        idx = np.clip(idx, 0, self.nodes - 1)
        return tuple(idx[:, i] for i in range(self.n))

    def _bin(self, dirs: np.ndarray) -> np.ndarray:
        if self.n == 1:
            return (dirs[:, 0] > 0).astype(int)
        K = self.grid.K
        ang = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * np.pi)
        return np.mod(np.floor(ang / (2 * np.pi / K) + 0.5).astype(int), K)

    def values(self, pts, dirs):
        rows = self.data[self._node_index(pts)]
        return rows[:, self._bin(dirs)]

    def moments(self, x, grid=None):
        # exact bin integrals, independent of any requested quadrature grid
        pts, batch = _as_points(x, self.n)
        rows = self.data[self._node_index(pts)]
        if self.n == 1:
            return _moments_from_weighted(rows, self.grid.vectors, batch)
        K = self.grid.K
        dth = 2 * np.pi / K
        g, gw = np.polynomial.legendre.leggauss(16)
        sub = (self.grid.angles[:, None] + 0.5 * dth * g[None, :]).ravel()
        subw = np.tile(0.5 * dth * gw, K)
        vecs = np.stack([np.cos(sub), np.sin(sub)], axis=-1)
        wq = np.repeat(rows, 16, axis=1) * subw
        return _moments_from_weighted(wq, vecs, batch)

    def total(self, x, grid=None):
        pts, batch = _as_points(x, self.n)
        return (self.data[self._node_index(pts)] @ self.grid.weights).reshape(batch)

    @classmethod
    def from_csv(cls, path: str | Path, length: float, nodes_per_axis: int | None = None,
                 n: int | None = None) -> "Gridded":
        """Load ``x_index,theta_index,value`` (n=2) or ``x_index,sign,value`` (n=1).

        For n=2 the x index is the row-major flattening of the node pair.
        """
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            rows = list(reader)
        if fields[:3] == ["x_index", "sign", "value"]:
            dim = 1
        elif fields[:3] == ["x_index", "theta_index", "value"]:
            dim = 2
        else:
            raise FiberMigError(f"unrecognised gridded q header: {fields}")
        if n is not None and n != dim:
            raise FiberMigError(f"file holds n={dim} data, expected n={n}")
        xi = np.array([int(r["x_index"]) for r in rows])
        vals = np.array([float(r["value"]) for r in rows])
        if np.any(vals < 0):
            raise DomainError("gridded q file contains negative values")
        if dim == 1:
            col = np.array([1 if int(float(r["sign"])) > 0 else 0 for r in rows])
            N = nodes_per_axis or int(xi.max()) + 1
            table = np.zeros((N, 2))
            table[xi, col] = vals
        else:
            col = np.array([int(r["theta_index"]) for r in rows])
            N = nodes_per_axis or int(round(np.sqrt(xi.max() + 1)))
            table = np.zeros((N * N, int(col.max()) + 1))
            table[xi, col] = vals
            table = table.reshape(N, N, -1)
        return cls(table, length)


def eval_q(q: FiberDistribution, x, theta):
    return q.eval_q(x, theta)


def moments(q: FiberDistribution, x, grid: DirectionGrid | None = None) -> FiberMoments:
    return q.moments(x, grid)


def symmetry_check(q: FiberDistribution, tol: float = 1e-10, samples=None,
                   length: float = 1.0, grid: DirectionGrid | None = None) -> dict:
    """Decide whether q is undirected on a set of sample positions.

    Returns ``undirected`` (sup |E| <= tol), ``max_E`` and ``max_asym``, the
    largest sampled |q(x, theta) - q(x, -theta)|.
    """
    grid = grid or DirectionGrid(q.n)
    if samples is None:
        ticks = (np.arange(8) + 0.5) * length / 8
        if q.n == 1:
            samples = ticks[:, None]
        else:
            samples = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), -1).reshape(-1, 2)
    pts = np.asarray(samples, dtype=float).reshape(-1, q.n)
    E = q.moments(pts, grid).E
    max_E = float(np.max(np.linalg.norm(E, axis=-1)))
    fwd = q.values(pts, grid.vectors)
    bwd = q.values(pts, -grid.vectors)
    return {
        "undirected": max_E <= tol,
        "max_E": max_E,
        "max_asym": float(np.max(np.abs(fwd - bwd))),
    }
