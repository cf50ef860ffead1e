"""Macroscopic limit models on a periodic finite-volume grid.

Every model is written as

    d_t cbar = div div (Dm cbar) - div (u cbar)

with a symmetric tensor field Dm and a drift field u, both assembled once
from the fiber moments and the environment.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .closure import m1_coefficient, periodic_gradient
from .environment import Environment
from .errors import DomainError, StepSizeError, UnsupportedConfiguration
from .fibers import DirectionGrid, FiberMoments
from .phase_grid import XGrid

SYMMETRY_TOL = 1e-10


class ModelKind(str, enum.Enum):
    PARABOLIC_ZERO = "ParabolicZero"
    HYPERBOLIC_ZERO = "HyperbolicZero"
    PARABOLIC_CORRECTED = "ParabolicCorrected"
    HYPERBOLIC_CORRECTED = "HyperbolicCorrected"

    @property
    def parabolic(self) -> bool:
        return self in (ModelKind.PARABOLIC_ZERO, ModelKind.PARABOLIC_CORRECTED)


def myopic_coefficient(a: float, n: int) -> float:
    """1/((a+1)(2a+1)) * n/(n+2)."""
    return n / ((a + 1.0) * (2.0 * a + 1.0) * (n + 2.0))


def taxis_coefficient(a: float) -> float:
    return a / (a + 1.0)


def mean_square_coefficient(a: float, n: int) -> float:
    """Coefficient of the E(x)E double divergence in the corrected hyperbolic model."""
    return (n / (n + 1.0)) ** 2 / (a + 1.0) ** 3


def hyperbolic_first_order_tensor(q_moments: FiberMoments, a: float, n: int) -> np.ndarray:
    """V + (1 - (2a+1)n(n+2)/((a+1)^2 (n+1)^2)) E E^T; raises if not PSD."""
    E = np.asarray(q_moments.E, dtype=float)
    V = np.asarray(q_moments.V, dtype=float)
    coef = 1.0 - (2 * a + 1) * n * (n + 2) / ((a + 1) ** 2 * (n + 1) ** 2)
    M = V + coef * E[..., :, None] * E[..., None, :]
    lam = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
    if np.min(lam) < -1e-12:
        raise AssertionError(f"first-order tensor not PSD (min eigenvalue {np.min(lam):.3e})")
    return M


@dataclass
class MacroModel:
    kind: ModelKind
    xgrid: XGrid
    env: Environment
    epsilon: float
    diffusion: np.ndarray  # shape xgrid.shape + (n, n)
    drift: np.ndarray  # shape xgrid.shape + (n,)
    moments: FiberMoments = None

    @property
    def n(self) -> int:
        return self.xgrid.n

    def max_dt(self) -> float:
        """Positivity bound of the forward Euler stage: dt (sum|u_i|/h + 2 n lam/h^2) <= 1.

        This is never larger than min(h/max|u|, h^2/(2 n lam)); taking that
        minimum alone is unstable when drift and diffusion are both active.
        """
        h = self.xgrid.h
        usum = float(np.max(np.sum(np.abs(self.drift), axis=-1))) if self.drift.size else 0.0
        lam = float(np.max(np.linalg.eigvalsh(self.diffusion))) if self.diffusion.size else 0.0
        rate = usum / h + 2 * self.n * lam / (h * h)
        return 1.0 / rate if rate > 0 else math.inf

    def default_dt(self) -> float:
        return 0.5 * self.max_dt()

    def rhs(self, cbar: np.ndarray) -> np.ndarray:
        h = self.xgrid.h
        out = myopic_operator(cbar, self.diffusion, h, self.n)
        out -= upwind_divergence(cbar, self.drift, h, self.n)
        return out


def _check_precondition(kind: ModelKind, env: Environment, pts, grid) -> FiberMoments:
    mom = env.fiber.moments(pts, grid)
    if kind.parabolic:
        maxE = float(np.max(np.linalg.norm(mom.E, axis=-1)))
        if maxE > SYMMETRY_TOL:
            raise UnsupportedConfiguration(
                f"{kind.value} requires undirected fibers (E[q] = 0); max |E| = {maxE:.3e}")
    if kind is ModelKind.PARABOLIC_CORRECTED:
        maxT = float(np.max(np.abs(mom.T)))
        if maxT > SYMMETRY_TOL:
            raise UnsupportedConfiguration(
                f"{kind.value} requires a vanishing third moment T[q]; max |T| = {maxT:.3e}")
    return mom


def assemble(kind, env: Environment, xgrid: XGrid, epsilon: float | None = None,
             directions: int = 128) -> MacroModel:
    kind = ModelKind(kind)
    if xgrid.n != env.n:
        raise DomainError("grid and environment dimensions differ")
    eps = env.scaling.epsilon if epsilon is None else float(epsilon)
    a, n = env.scaling.a, env.n
    shape = xgrid.shape
    pts = xgrid.points()
    mom = _check_precondition(kind, env, pts, DirectionGrid(n, directions))
    D = mom.D.reshape(shape + (n, n))
    E = mom.E.reshape(shape + (n,))
    FgQ = env.F_grad_Q(pts).reshape(shape + (n,))
    mu = myopic_coefficient(a, n)
    chi = taxis_coefficient(a)

    if kind is ModelKind.PARABOLIC_ZERO:
        diff, drift = mu * D, chi * FgQ
    elif kind is ModelKind.PARABOLIC_CORRECTED:
        gnorm = np.linalg.norm(env.grad_Q(pts), axis=-1).reshape(shape)
        diff, drift = mu * D, chi * FgQ / (1.0 + eps * gnorm)[..., None]
    elif kind is ModelKind.HYPERBOLIC_ZERO:
        diff, drift = np.zeros(shape + (n, n)), m1_coefficient(a, n) * E
    else:
        # div(E div(cbar E)) = div div(E E^T cbar) - div(cbar (E . grad) E)
        beta = mean_square_coefficient(a, n)
        EE = E[..., :, None] * E[..., None, :]
        EgradE = np.einsum("...j,...ij->...i", E, periodic_gradient(E, xgrid.h, n))
        diff = eps * (mu * D - beta * EE)
        drift = m1_coefficient(a, n) * E + eps * (chi * FgQ - beta * EgradE)
    diff = 0.5 * (diff + np.swapaxes(diff, -1, -2))
    lam = np.linalg.eigvalsh(diff)
    if lam.size and lam.min() < -1e-12:
        raise UnsupportedConfiguration(
            f"assembled diffusion tensor is not PSD (min eigenvalue {lam.min():.3e})")
    return MacroModel(kind, xgrid, env, eps, diff, drift, mom)


# -- discrete operators -----------------------------------------------------


def myopic_operator(cbar: np.ndarray, Dm: np.ndarray, h: float, n: int) -> np.ndarray:
    """Conservative nested differences for div div(Dm cbar) on a periodic grid.

    Face fluxes J_i = sum_j d_j P_ij with P = Dm cbar; the diagonal part uses
    the two-point difference across the face, the mixed part the average of
    centred differences on both sides.
    """
    P = Dm * cbar[..., None, None]
    out = np.zeros_like(cbar)
    for i in range(n):
        J = (np.roll(P[..., i, i], -1, axis=i) - P[..., i, i]) / h
        for j in range(n):
            if j == i:
                continue
            Pij = P[..., i, j]
            cen = (np.roll(Pij, -1, axis=j) - np.roll(Pij, 1, axis=j)) / (2 * h)
            J = J + 0.5 * (cen + np.roll(cen, -1, axis=i))
        out += (J - np.roll(J, 1, axis=i)) / h
    return out


def upwind_divergence(cbar: np.ndarray, u: np.ndarray, h: float, n: int) -> np.ndarray:
    """First-order upwind div(u cbar); face velocity is the mean of the neighbours."""
    out = np.zeros_like(cbar)
    for i in range(n):
        ui = u[..., i]
        uf = 0.5 * (ui + np.roll(ui, -1, axis=i))
        right = np.roll(cbar, -1, axis=i)
        flux = np.maximum(uf, 0.0) * cbar + np.minimum(uf, 0.0) * right
        out += (flux - np.roll(flux, 1, axis=i)) / h
    return out


# -- time stepping ------------------------------------------------------------


@dataclass
class MacroState:
    t: float
    cbar: np.ndarray


@dataclass
class MacroTrajectory:
    model: MacroModel
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def append(self, state: MacroState):
        self.times.append(float(state.t))
        self.states.append(state.cbar.copy())

    @property
    def xgrid(self) -> XGrid:
        return self.model.xgrid

    @property
    def final(self) -> MacroState:
        return MacroState(self.times[-1], self.states[-1])

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation between snapshots."""
        times = np.asarray(self.times)
        if t <= times[0]:
            return self.states[0].copy()
        if t >= times[-1]:
            return self.states[-1].copy()
        k = int(np.searchsorted(times, t)) - 1
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1 - w) * self.states[k] + w * self.states[k + 1]


def step_macro(state: MacroState, model: MacroModel, dt: float) -> MacroState:
    """One Heun step."""
    if dt <= 0:
        raise StepSizeError("time step must be positive")
    if dt > model.max_dt() * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.4e} exceeds the macro CFL bound {model.max_dt():.4e}")
    c = state.cbar
    k1 = model.rhs(c)
    pred = c + dt * k1
    k2 = model.rhs(pred)
    return MacroState(state.t + dt, c + 0.5 * dt * (k1 + k2))


def solve(model: MacroModel, cbar_init, t_end: float, dt: float | None = None,
          record_every: int = 1, t0: float = 0.0) -> MacroTrajectory:
    cbar = np.asarray(cbar_init, dtype=float).reshape(model.xgrid.shape)
    if np.any(cbar < 0):
        raise DomainError("initial density must be nonnegative")
    state = MacroState(t0, cbar.copy())
    traj = MacroTrajectory(model)
    traj.append(state)
    dt = model.default_dt() if dt is None else dt
    if not math.isfinite(dt):
        dt = max(t_end - t0, 0.0) or 1.0
    nsteps = max(0, math.ceil((t_end - t0) / dt - 1e-9))
    if nsteps == 0:
        return traj
    dt = (t_end - t0) / nsteps
    for i in range(1, nsteps + 1):
        state = step_macro(state, model, dt)
        if i % record_every == 0 or i == nsteps:
            traj.append(state)
    return traj
