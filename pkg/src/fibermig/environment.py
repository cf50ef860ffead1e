"""Signal Q, anisotropy tensor F, taxis velocity v*, and scaling parameters."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .fibers import FiberDistribution, _as_points


@dataclass(frozen=True)
class ScalingParams:
    epsilon: float = 0.1
    kappa: int = 2
    a: float = 1.0
    n: int = 1

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.kappa not in (1, 2):
            raise ConfigError(f"kappa must be 1 or 2, got {self.kappa}")
        if not self.a > 0:
            raise ConfigError(f"a must be positive, got {self.a}")
        if self.n not in (1, 2):
            raise ConfigError(f"n must be 1 or 2, got {self.n}")

    @property
    def relaxation_time(self) -> float:
        """epsilon**kappa: the time scale of turning and of the velocity drift."""
        return self.epsilon ** self.kappa

    @property
    def transport_speed(self) -> float:
        """epsilon**(1 - kappa): factor in front of the free streaming term."""
        return self.epsilon ** (1 - self.kappa)


# -- signal fields ----------------------------------------------------------


class SignalField:
    n: int

    def value(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class NoSignal(SignalField):
    def __init__(self, n: int):
        self.n = n

    def value(self, pts):
        return np.zeros(pts.shape[0])

    def gradient(self, pts):
        return np.zeros_like(pts)


class GaussianBump(SignalField):
    """Q(x) = A exp(-|x - x0|^2 / (2 w^2)).  Not periodised; keep it inside the box."""

    def __init__(self, center, width: float, amplitude: float = 1.0):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.n = self.center.size
        if width <= 0:
            raise ConfigError("Gaussian width must be positive")
        self.width = float(width)
        self.amplitude = float(amplitude)

    def value(self, pts):
        r2 = np.sum((pts - self.center) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * r2 / self.width**2)

    def gradient(self, pts):
        d = pts - self.center
        return -(self.value(pts) / self.width**2)[:, None] * d


class Ramp(SignalField):
    """Q(x) = slope . x; only the (constant) gradient matters on a periodic box."""

    def __init__(self, slope):
        self.slope = np.atleast_1d(np.asarray(slope, dtype=float))
        self.n = self.slope.size

    def value(self, pts):
        return pts @ self.slope

    def gradient(self, pts):
        return np.broadcast_to(self.slope, pts.shape).copy()


class GriddedSignal(SignalField):
    """Q tabulated on periodic nodes; gradient by centred differences with wraparound."""

    def __init__(self, values: np.ndarray, length: float):
        self.values = np.asarray(values, dtype=float)
        self.n = self.values.ndim
        self.length = float(length)
        self.N = self.values.shape[0]
        h = self.length / self.N
        self.grad_nodes = np.stack(
            [(np.roll(self.values, -1, axis=i) - np.roll(self.values, 1, axis=i)) / (2 * h)
             for i in range(self.n)], axis=-1)

    def _idx(self, pts):
        if np.any(pts < 0) or np.any(pts >= self.length):
            raise DomainError(f"position outside the tabulated box [0, {self.length})")
        idx = np.clip(np.floor(pts / (self.length / self.N)).astype(int), 0, self.N - 1)
        return tuple(idx[:, i] for i in range(self.n))

    def value(self, pts):
        return self.values[self._idx(pts)]

    def gradient(self, pts):
        return self.grad_nodes[self._idx(pts)]

    @classmethod
    def from_csv(cls, path: str | Path, length: float) -> "GriddedSignal":
        """Read ``x_index[,y_index],value``."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            two_d = "y_index" in (reader.fieldnames or [])
        ix = np.array([int(r["x_index"]) for r in rows])
        vals = np.array([float(r["value"]) for r in rows])
        N = int(ix.max()) + 1
        if two_d:
            iy = np.array([int(r["y_index"]) for r in rows])
            table = np.zeros((N, int(iy.max()) + 1))
            table[ix, iy] = vals
        else:
            table = np.zeros(N)
            table[ix] = vals
        return cls(table, length)


# -- tensor fields ----------------------------------------------------------


def spectral_norm(F: np.ndarray, iters: int = 200) -> float:
    """Power iteration on F^T F for a single n x n matrix."""
    F = np.asarray(F, dtype=float)
    M = F.T @ F
    x = np.ones(M.shape[0]) / np.sqrt(M.shape[0])
    x = x + 1e-3 * np.arange(M.shape[0])  # break symmetric stalls
    lam = 0.0
    for _ in range(iters):
        y = M @ x
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        x = y / nrm
        lam = float(x @ M @ x)
    return float(np.sqrt(max(lam, 0.0)))


class TensorField:
    n: int

    def matrix(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ScaledIdentity(TensorField):
    def __init__(self, n: int, alpha: float = 1.0):
        if abs(alpha) > 1.0:
            raise ConfigError("identity scale alpha must satisfy |alpha| <= 1")
        self.n = n
        self.alpha = float(alpha)

    def matrix(self, pts):
        return np.broadcast_to(self.alpha * np.eye(self.n), (pts.shape[0], self.n, self.n)).copy()


class ConstantTensor(TensorField):
    def __init__(self, F):
        self.F = np.atleast_2d(np.asarray(F, dtype=float))
        self.n = self.F.shape[0]
        if spectral_norm(self.F) > 1.0 + 1e-10:
            raise ConfigError("tensor F must have spectral norm <= 1")

    def matrix(self, pts):
        return np.broadcast_to(self.F, (pts.shape[0], self.n, self.n)).copy()


class GriddedTensor(TensorField):
    def __init__(self, table: np.ndarray, length: float):
        self.table = np.asarray(table, dtype=float)
        self.n = self.table.shape[-1]
        self.length = float(length)
        self.N = self.table.shape[0]
        for M in self.table.reshape(-1, self.n, self.n):
            if spectral_norm(M) > 1.0 + 1e-10:
                raise ConfigError("tensor F must have spectral norm <= 1 at every node")

    def matrix(self, pts):
        if np.any(pts < 0) or np.any(pts >= self.length):
            raise DomainError(f"position outside the tabulated box [0, {self.length})")
        idx = np.clip(np.floor(pts / (self.length / self.N)).astype(int), 0, self.N - 1)
        return self.table[tuple(idx[:, i] for i in range(self.n))]

    @classmethod
    def from_csv(cls, path: str | Path, length: float) -> "GriddedTensor":
        """Read ``x_index[,y_index],f11,f12,f21,f22`` (n=2) or ``x_index,f11`` (n=1)."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            two_d = "y_index" in (reader.fieldnames or [])
        ix = np.array([int(r["x_index"]) for r in rows])
        N = int(ix.max()) + 1
        if two_d:
            iy = np.array([int(r["y_index"]) for r in rows])
            table = np.zeros((N, int(iy.max()) + 1, 2, 2))
            for r, i, j in zip(rows, ix, iy):
                table[i, j] = [[float(r["f11"]), float(r["f12"])], [float(r["f21"]), float(r["f22"])]]
        else:
            table = np.zeros((N, 1, 1))
            for r, i in zip(rows, ix):
                table[i, 0, 0] = float(r["f11"])
        return cls(table, length)


# -- the bundle -------------------------------------------------------------


@dataclass
class Environment:
    """Everything the cells sense: fibers q, signal Q, tensor F, scalings, box length."""

    scaling: ScalingParams
    fiber: FiberDistribution
    signal: SignalField = None
    tensor: TensorField = None
    length: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.scaling.n
        if self.signal is None:
            self.signal = NoSignal(n)
        if self.tensor is None:
            self.tensor = ScaledIdentity(n)
        for name, obj in (("fiber", self.fiber), ("signal", self.signal), ("tensor", self.tensor)):
            if obj.n != n:
                raise ConfigError(f"{name} has dimension {obj.n}, scaling says n={n}")

    @property
    def n(self) -> int:
        return self.scaling.n

    def points(self, x) -> tuple[np.ndarray, tuple]:
        return _as_points(x, self.n)

    def Q(self, x) -> np.ndarray:
        pts, batch = self.points(x)
        return self.signal.value(pts).reshape(batch)

    def grad_Q(self, x) -> np.ndarray:
        pts, batch = self.points(x)
        return self.signal.gradient(pts).reshape(batch + (self.n,))

    def F(self, x) -> np.ndarray:
        pts, batch = self.points(x)
        return self.tensor.matrix(pts).reshape(batch + (self.n, self.n))

    def F_grad_Q(self, x) -> np.ndarray:
        """The unlimited taxis direction F grad Q."""
        pts, batch = self.points(x)
        g = self.signal.gradient(pts)
        return np.einsum("pij,pj->pi", self.tensor.matrix(pts), g).reshape(batch + (self.n,))

    def v_star(self, x, epsilon: float | None = None) -> np.ndarray:
        """Scaled taxis velocity F eps grad Q / (1 + eps |grad Q|)."""
        eps = self.scaling.epsilon if epsilon is None else float(epsilon)
        if not 0.0 <= eps <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {eps}")
        pts, batch = self.points(x)
        g = self.signal.gradient(pts)
        Fg = np.einsum("pij,pj->pi", self.tensor.matrix(pts), g)
        scale = eps / (1.0 + eps * np.linalg.norm(g, axis=-1))
        return (Fg * scale[:, None]).reshape(batch + (self.n,))

    def v_star_remainder(self, x, epsilon: float) -> np.ndarray:
        """|v*_eps - eps F grad Q + eps^2 F grad Q |grad Q||, the O(eps^3) tail."""
        pts, batch = self.points(x)
        g = self.signal.gradient(pts)
        Fg = np.einsum("pij,pj->pi", self.tensor.matrix(pts), g)
        gn = np.linalg.norm(g, axis=-1)[:, None]
        vs = self.v_star(pts, epsilon).reshape(-1, self.n)
        rem = vs - epsilon * Fg + epsilon**2 * Fg * gn
        return np.linalg.norm(rem, axis=-1).reshape(batch)

    def max_tensor_norm(self, pts) -> float:
        P, _ = self.points(pts)
        return max(spectral_norm(M) for M in self.tensor.matrix(P))


def grad_Q(env: Environment, x):
    return env.grad_Q(x)


def v_star(env: Environment, x, epsilon: float | None = None):
    return env.v_star(x, epsilon)


def v_star_remainder(env: Environment, x, epsilon: float):
    return env.v_star_remainder(x, epsilon)
