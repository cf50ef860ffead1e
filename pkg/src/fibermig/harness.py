"""Experiment orchestration: runs, epsilon sweeps, profile checks and artifacts."""

from __future__ import annotations

import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .closure import closure_mass, m1_coefficient, m2_coefficient, tabulate_profiles
from .config import ExperimentConfig
from .errors import DomainError
from .fibers import DirectionGrid
from .kinetic import KineticSolver, KineticState, KineticTrajectory
from .macro import ModelKind, assemble, solve
from .meso import solve_tilde, verify_conservation
from .phase_grid import PhaseGrid, XGrid
from .records import write_csv, write_field_snapshots, write_kinetic_snapshots
from .weak import build_test_suite, weak_residual

logger = logging.getLogger(__name__)


# -- building blocks ------------------------------------------------------------


def phase_grid(config: ExperimentConfig) -> PhaseGrid:
    xg = XGrid(config.n, config.number("grid.nx", int), config.length)
    return PhaseGrid(xg, config.number("grid.ns", int), config.number("grid.k", int),
                     config.number("scaling.a"))


def _dt(config: ExperimentConfig):
    return config.number("run.dt") if config.raw["run.dt"] else None


def _record_every(t_end: float, dt: float, snapshots: int) -> int:
    steps = max(1, int(np.ceil(t_end / dt - 1e-9)))
    return max(1, steps // max(1, snapshots))


def kinetic_run(config: ExperimentConfig, epsilon: float | None = None, t_end: float | None = None,
                dense: bool = False) -> tuple[KineticSolver, KineticTrajectory]:
    env = config.environment(epsilon)
    grid = phase_grid(config)
    solver = KineticSolver(env, grid)
    cbar = config.initial_density(grid.x)
    state = solver.init_state(cbar, config.raw["init.velocity"])
    t_end = config.t_end if t_end is None else t_end
    dt = _dt(config) or solver.default_dt()
    every = 1 if dense else _record_every(t_end, dt, config.number("run.snapshots", int))
    return solver, solver.run(state, t_end, dt, record_every=every)


def macro_run(config: ExperimentConfig, model_kind: str, epsilon: float | None = None,
              t_end: float | None = None, dense: bool = False, dt: float | None = None):
    env = config.environment(epsilon)
    xg = XGrid(config.n, config.number("grid.nx", int), config.length)
    model = assemble(model_kind, env, xg, epsilon)
    t_end = config.t_end if t_end is None else t_end
    dt = min(dt, model.max_dt()) if dt else model.default_dt()
    every = 1 if dense or not np.isfinite(dt) else _record_every(t_end, dt, config.number("run.snapshots", int))
    return solve(model, config.initial_density(xg), t_end, dt, record_every=every)


def profile_distance(solver: KineticSolver, c: np.ndarray, threshold: float = 0.01) -> float:
    """Max over cells with m0 above ``threshold`` * max(m0) of the L1 distance to q xi1."""
    g = solver.grid
    m0 = g.velocity_integral(c)
    top = float(np.max(m0)) if m0.size else 0.0
    if top <= 0:
        raise DomainError("profile check needs a snapshot with positive mass")
    mask = m0 > threshold * top
    target = solver.q[..., None, :] * g.xi1_average[:, None]
    safe = np.where(mask, m0, 1.0)
    dist = np.einsum("...jk,jk->...", np.abs(c / safe[..., None, None] - target), g.weights)
    return float(np.max(dist[mask]))


def profile_check(trajectory: KineticTrajectory, env=None) -> float:
    if not trajectory.states:
        raise DomainError("profile check needs a non-empty trajectory")
    solver = KineticSolver(env or trajectory.env, trajectory.grid, trajectory.epsilon)
    return profile_distance(solver, trajectory.states[-1])


def center_of_mass(field_: np.ndarray, xgrid: XGrid) -> np.ndarray:
    X = xgrid.mesh()
    mass = xgrid.integrate(field_)
    return np.array([xgrid.integrate(field_ * X[..., i]) / mass for i in range(xgrid.n)])


# -- convergence sweep ----------------------------------------------------------------


@dataclass
class ConvergenceRow:
    epsilon: float
    error_half: float
    error_final: float
    kinetic_speed: float
    macro_speed: float
    runtime_seconds: float

    @property
    def error(self) -> float:
        return max(self.error_half, self.error_final)


@dataclass
class ConvergenceReport:
    model: str
    rows: list = field(default_factory=list)

    @property
    def errors(self) -> list[float]:
        return [r.error for r in self.rows]

    @property
    def ratios(self) -> list[float]:
        e = self.errors
        return [e[i + 1] / e[i] if e[i] > 0 else float("nan") for i in range(len(e) - 1)]

    def strictly_decreasing(self) -> bool:
        e = self.errors
        return all(e[i + 1] < e[i] for i in range(len(e) - 1))

    def csv_rows(self):
        ratios = [float("nan")] + self.ratios
        for r, q in zip(self.rows, ratios):
            yield (self.model, r.epsilon, r.error_half, r.error_final, r.error, q,
                   r.kinetic_speed, r.macro_speed, r.runtime_seconds)

    header = ("model", "epsilon", "error_half", "error_final", "error", "ratio",
              "kinetic_speed", "macro_speed", "runtime_seconds")


def _l1(a: np.ndarray, b: np.ndarray, xgrid: XGrid) -> float:
    return float(xgrid.integrate(np.abs(a - b)))


def converge(config: ExperimentConfig, model_kind: str | None = None,
             epsilons=None) -> ConvergenceReport:
    """Kinetic m0 against the macroscopic model for each epsilon, at T/2 and T."""
    eps_list = list(config.epsilons if epsilons is None else epsilons)
    if len(eps_list) < 2 or any(b > a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("a sweep needs at least two non-increasing epsilon values")
    kind = model_kind or config.models()[0]
    report = ConvergenceReport(kind)
    T = config.t_end
    for eps in eps_list:
        start = time.perf_counter()
        env = config.environment(eps)
        grid = phase_grid(config)
        solver = KineticSolver(env, grid)
        cbar0 = config.initial_density(grid.x)
        state = solver.init_state(cbar0, "equilibrium")
        dt = _dt(config) or solver.default_dt()
        half = solver.run(state, T / 2, dt, record_every=10**9).final
        full = solver.run(half, T, dt, record_every=10**9).final
        model = assemble(kind, env, grid.x, eps)
        mtraj = solve(model, cbar0, T / 2)
        mfull = solve(model, mtraj.final.cbar, T, t0=T / 2)
        k_half, k_full = grid.velocity_integral(half.c), grid.velocity_integral(full.c)
        m_half, m_full = mtraj.final.cbar, mfull.final.cbar
        com0 = center_of_mass(cbar0, grid.x)
        kspeed = float(np.linalg.norm(center_of_mass(k_full, grid.x) - com0) / T) if T > 0 else 0.0
        mspeed = float(np.linalg.norm(center_of_mass(m_full, grid.x) - com0) / T) if T > 0 else 0.0
        report.rows.append(ConvergenceRow(eps, _l1(k_half, m_half, grid.x), _l1(k_full, m_full, grid.x),
                                          kspeed, mspeed, time.perf_counter() - start))
        logger.info("epsilon=%g error=%.4e", eps, report.rows[-1].error)
    return report


# -- full runs --------------------------------------------------------------------


@dataclass
class RunArtifacts:
    out_dir: Path
    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    runtimes: dict = field(default_factory=dict)


def write_manifest(config: ExperimentConfig, artifacts: RunArtifacts, command: str) -> Path:
    lines = [f"# fibermig {__version__} {command}",
             f"# python {platform.python_version()} numpy {np.__version__} scipy {scipy.__version__}"]
    lines += config.echo()
    lines += [f"{k} = {artifacts.summary[k]}" if isinstance(artifacts.summary[k], str)
              else f"{k} = {artifacts.summary[k]:.17g}" for k in sorted(artifacts.summary)]
    lines += [f"runtime_seconds={artifacts.runtimes[k]:.6f}  # {k}" for k in artifacts.runtimes]
    path = artifacts.out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    artifacts.files["manifest"] = path
    return path


def _timed(artifacts: RunArtifacts, name: str):
    class _Timer:
        def __enter__(self):
            self.start = time.perf_counter()

        def __exit__(self, *exc):
            artifacts.runtimes[name] = time.perf_counter() - self.start

    return _Timer()


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunArtifacts:
    """Execute the configured pipeline and write CSV artifacts plus a manifest."""
    out = Path(out_dir or config.raw["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(out)
    n = config.n
    dense = "weak" in config.pipeline
    ktraj = solver = None
    macro_trajs = {}
    with _timed(art, "total"):
        if "kinetic" in config.pipeline or "weak" in config.pipeline:
            with _timed(art, "kinetic"):
                solver, ktraj = kinetic_run(config, dense=dense)
            art.files["kinetic_m0"] = write_field_snapshots(ktraj.times, ktraj.m0(), n, "m0",
                                                            out / "kinetic_m0.csv")
            art.files["kinetic_final"] = write_kinetic_snapshots(
                ktraj.times[-1:], ktraj.states[-1:], n, out / "kinetic_final.csv")
            art.summary["kinetic_mass_drift"] = _mass_drift(solver, ktraj)
            art.summary["kinetic_min"] = float(min(np.min(c) for c in ktraj.states))
            if np.max(ktraj.m0()[-1]) > 0:
                art.summary["profile_distance"] = profile_distance(solver, ktraj.states[-1])
        if "macro" in config.pipeline or "meso" in config.pipeline:
            for kind in config.models():
                with _timed(art, f"macro_{kind}"):
                    step = None
                    if dense and ktraj is not None and len(ktraj.times) > 1:
                        step = ktraj.times[1] - ktraj.times[0]
                    macro_trajs[kind] = macro_run(config, kind, dense=dense, dt=step)
                tr = macro_trajs[kind]
                art.files[f"macro_{kind}"] = write_field_snapshots(tr.times, tr.states, n, "cbar",
                                                                   out / f"macro_{kind}.csv")
                if ktraj is not None:
                    art.summary[f"l1_error_{kind}"] = float(
                        ktraj.grid.x.integrate(np.abs(ktraj.m0()[-1] - tr.final.cbar)))
        if "meso" in config.pipeline:
            with _timed(art, "meso"):
                _run_meso(config, art, macro_trajs[config.models()[0]])
        if "weak" in config.pipeline:
            with _timed(art, "weak"):
                _run_weak(config, art, ktraj, macro_trajs)
    write_manifest(config, art, "run")
    return art


def _mass_drift(solver: KineticSolver, traj: KineticTrajectory) -> float:
    masses = np.array([solver.total_mass(KineticState(t, c)) for t, c in zip(traj.times, traj.states)])
    return float(np.max(np.abs(masses - masses[0])) / masses[0]) if masses[0] > 0 else 0.0


def _run_meso(config: ExperimentConfig, art: RunArtifacts, source):
    env = config.environment()
    grid = phase_grid(config)
    solver = KineticSolver(env, grid)
    c0 = solver.init_state(config.initial_density(grid.x), config.raw["init.velocity"])
    traj = solve_tilde(source, c0, solver, config.t_end, _dt(config),
                       record_every=_record_every(config.t_end, _dt(config) or solver.default_dt(),
                                                  config.number("run.snapshots", int)))
    report = verify_conservation(traj, source)
    art.files["meso_m0"] = write_field_snapshots(traj.times, traj.m0(), config.n, "m0", out_path(art, "meso_m0.csv"))
    art.files["meso_conservation"] = write_csv(
        [(report.mass_drift, report.min_value, int(report.precondition_ok), report.transient_error,
          int(traj.interpolated))],
        ["mass_drift", "min_value", "precondition_ok", "transient_error", "time_interpolated"],
        out_path(art, "meso_conservation.csv"))
    art.summary["meso_mass_drift"] = report.mass_drift
    art.summary["meso_min"] = report.min_value


def out_path(art: RunArtifacts, name: str) -> Path:
    return art.out_dir / name


def weak_kinds(config: ExperimentConfig, macro_kinds) -> list[tuple[str, str]]:
    """(residual kind, trajectory label) pairs applicable to the configuration."""
    pairs = [("KTE", "kinetic"), ("Moment0", "kinetic"), ("Moment012", "kinetic")]
    for kind in macro_kinds:
        if kind == ModelKind.PARABOLIC_ZERO.value:
            pairs.append(("ParabolicLimit", kind))
        elif kind == ModelKind.HYPERBOLIC_ZERO.value:
            pairs.append(("HyperbolicLimit", kind))
    return pairs


def _run_weak(config: ExperimentConfig, art: RunArtifacts, ktraj, macro_trajs):
    tests = build_test_suite(config.length, config.n, config.t_end, 8, seed=config.seed)
    rows = []
    worst = 0.0
    for kind, label in weak_kinds(config, macro_trajs):
        traj = ktraj if label == "kinetic" else macro_trajs[label]
        report = weak_residual(kind, traj, tests=tests)
        rows.extend(report.rows())
        worst = max(worst, report.max_normalized)
    art.files["weak"] = write_csv(rows, ["kind", "test_id", "residual", "normalized_residual"],
                                  out_path(art, "weak_residuals.csv"))
    art.summary["weak_max_normalized"] = worst


def moments_table(config: ExperimentConfig, out_dir) -> RunArtifacts:
    """Closure constants, fiber moments per x-cell and the radial profile table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(out)
    with _timed(art, "total"):
        a, n = config.number("scaling.a"), config.n
        env = config.environment()
        xg = XGrid(n, config.number("grid.nx", int), config.length)
        mom = env.fiber.moments(xg.points(), DirectionGrid(n))
        rows = []
        for p, idx in enumerate(np.ndindex(xg.shape)):
            rows.append((*idx, *mom.E[p].ravel(), *mom.D[p].ravel()))
        comps = [f"E{i + 1}" for i in range(n)] + [f"D{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        idx_cols = ["x_index"] if n == 1 else ["x_index", "y_index"]
        art.files["fiber_moments"] = write_csv(rows, idx_cols + comps, out / "fiber_moments.csv")
        s = (np.arange(1, 50) / 50.0)
        prof = tabulate_profiles(s, a, n)
        art.files["profiles"] = write_csv(prof.rows(), ["s", "xi1", "xi2", "xi3", "xi4", "xi5"],
                                          out / "profiles.csv")
        art.summary.update({"closure_mass": closure_mass(a, n), "m1_coefficient": m1_coefficient(a, n),
                            "m2_coefficient": m2_coefficient(a, n)})
    write_manifest(config, art, "moments")
    return art
