"""Truncated first-order mesoscopic equation driven by an external macroscopic density.

The equation is the kinetic one with the turning target n q cbar replaced by
n q cbar01(t, x), where cbar01 is supplied as snapshots (e.g. a macroscopic
solve).  Positivity and mass preservation follow from the same splitting as
the kinetic solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .kinetic import KineticSolver, KineticState, KineticTrajectory


@dataclass
class SourceTrajectory:
    """Snapshots of cbar01 with linear interpolation in time."""

    times: np.ndarray
    fields: np.ndarray
    interpolated: bool = False

    @classmethod
    def from_any(cls, obj) -> "SourceTrajectory":
        if isinstance(obj, SourceTrajectory):
            return obj
        if hasattr(obj, "times") and hasattr(obj, "states"):
            return cls(np.asarray(obj.times, dtype=float), np.stack(obj.states))
        times, fields = obj
        return cls(np.asarray(times, dtype=float), np.asarray(fields, dtype=float))

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.fields = np.asarray(self.fields, dtype=float)
        if self.fields.shape[0] != self.times.size:
            raise DomainError("one source field per snapshot time is required")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("source snapshot times must increase")
        if np.any(self.fields < 0):
            raise DomainError("source density must be nonnegative")

    def __call__(self, t: float) -> np.ndarray:
        times = self.times
        k = int(np.searchsorted(times, t))
        if k < times.size and math.isclose(times[k], t, rel_tol=0, abs_tol=1e-12):
            return self.fields[k]
        self.interpolated = True
        if t <= times[0]:
            return self.fields[0]
        if t >= times[-1]:
            return self.fields[-1]
        w = (t - times[k - 1]) / (times[k] - times[k - 1])
        return (1 - w) * self.fields[k - 1] + w * self.fields[k]

    def masses(self, cell_volume: float) -> np.ndarray:
        axes = tuple(range(1, self.fields.ndim))
        return self.fields.sum(axis=axes) * cell_volume


@dataclass
class TildeTrajectory(KineticTrajectory):
    source: SourceTrajectory = None
    interpolated: bool = False


def solve_tilde(cbar01_traj, c_init, solver: KineticSolver, t_end: float,
                dt: float | None = None, record_every: int = 1) -> TildeTrajectory:
    """Integrate the source-driven mesoscopic equation from ``c_init`` up to ``t_end``."""
    source = SourceTrajectory.from_any(cbar01_traj)
    c0 = c_init.c if isinstance(c_init, KineticState) else np.asarray(c_init, dtype=float)
    if c0.shape != solver.grid.state_shape:
        raise DomainError(f"initial density has shape {c0.shape}, expected {solver.grid.state_shape}")
    if np.any(c0 < 0):
        raise DomainError("initial density must be nonnegative")
    traj = solver.run(KineticState(0.0, c0.copy()), t_end, dt, record_every, source=source)
    out = TildeTrajectory(traj.grid, traj.env, traj.times, traj.states, traj.epsilon,
                          source=source, interpolated=source.interpolated)
    return out


@dataclass
class ConservationReport:
    mass_drift: float
    min_value: float
    precondition_ok: bool
    source_mass: float
    initial_mass: float
    transient_error: float = 0.0
    masses: list = field(default_factory=list)


def expected_mass(t, initial_mass: float, source_mass: float, relaxation_time: float):
    """Solution of dM/dt = (M_src - M)/tau."""
    return source_mass + (initial_mass - source_mass) * np.exp(-np.asarray(t) / relaxation_time)


def verify_conservation(trajectory: KineticTrajectory, cbar01_traj, rtol: float = 1e-8
                        ) -> ConservationReport:
    """Mass drift and minimum of a tilde trajectory.

    When the source carries a different total mass than the initial datum the
    precondition is flagged and the measured masses are compared with the
    exponential transient instead.
    """
    grid = trajectory.grid
    source = SourceTrajectory.from_any(cbar01_traj)
    cell = grid.x.cell_volume
    masses = np.array([float(grid.x.integrate(grid.velocity_integral(c))) for c in trajectory.states])
    m_init = masses[0]
    src = source.masses(cell)
    m_src = float(src[0])
    scale = max(abs(m_init), abs(m_src), 1e-300)
    ok = bool(np.all(np.abs(src - m_init) <= rtol * scale))
    drift = float(np.max(np.abs(masses - m_init)) / m_init) if m_init > 0 else float(np.max(np.abs(masses)))
    min_value = float(min(np.min(c) for c in trajectory.states))
    tau = trajectory.env.scaling.epsilon ** trajectory.env.scaling.kappa
    if trajectory.epsilon is not None:
        tau = trajectory.epsilon ** trajectory.env.scaling.kappa
    transient = 0.0
    if not ok:
        pred = expected_mass(np.asarray(trajectory.times), m_init, m_src, tau)
        transient = float(np.max(np.abs(masses - pred)) / scale)
    return ConservationReport(drift, min_value, ok, m_src, m_init, transient, masses.tolist())
