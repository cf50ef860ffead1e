"""Weak-form residuals of the kinetic, limit and moment equations on discrete trajectories.

A test triple (phi, psi, eta) is integrated against a trajectory with
midpoint quadrature in x, profile-weighted cell quadrature in v and the
trapezoid rule over snapshots in t.  The residual is |LHS - RHS| of the
weak identity; the normalised residual divides by
max|phi| * max|psi| * max|eta| * initial mass.
"""

from __future__ import annotations

import csv
import enum
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .fibers import DirectionGrid
from .kinetic import KineticTrajectory
from .macro import MacroTrajectory, myopic_coefficient, taxis_coefficient

MIN_SNAPSHOTS = 20


class ResidualKind(str, enum.Enum):
    KTE = "KTE"
    PARABOLIC_LIMIT = "ParabolicLimit"
    HYPERBOLIC_LIMIT = "HyperbolicLimit"
    MOMENT0 = "Moment0"
    MOMENT012 = "Moment012"


# -- test functions -----------------------------------------------------------


@dataclass(frozen=True)
class SpatialTest:
    """phi(x) = exp(-|x - c|^2 / (2 w^2)) * P(x - c) with P in {1, y_i, y_i y_j}."""

    center: tuple
    width: float
    poly: tuple = ()  # indices of the polynomial factor

    @property
    def n(self) -> int:
        return len(self.center)

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        if self.n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        y = x - np.asarray(self.center)
        G = np.exp(-0.5 * np.sum(y * y, axis=-1) / self.width**2)
        return y, G

    def _poly(self, y):
        n = self.n
        P = np.ones(y.shape[:-1])
        dP = np.zeros(y.shape)
        ddP = np.zeros(y.shape + (n,))
        if len(self.poly) == 1:
            (i,) = self.poly
            P = y[..., i].copy()
            dP[..., i] = 1.0
        elif len(self.poly) == 2:
            i, j = self.poly
            P = y[..., i] * y[..., j]
            dP[..., i] += y[..., j]
            dP[..., j] += y[..., i]
            ddP[..., i, j] += 1.0
            ddP[..., j, i] += 1.0
        return P, dP, ddP

    def value(self, x):
        y, G = self._parts(x)
        return G * self._poly(y)[0]

    def gradient(self, x):
        y, G = self._parts(x)
        P, dP, _ = self._poly(y)
        w2 = self.width**2
        return G[..., None] * (dP - P[..., None] * y / w2)

    def hessian(self, x):
        y, G = self._parts(x)
        P, dP, ddP = self._poly(y)
        w2 = self.width**2
        eye = np.eye(self.n)
        yy = y[..., :, None] * y[..., None, :]
        cross = dP[..., :, None] * y[..., None, :] + y[..., :, None] * dP[..., None, :]
        inner = ddP - cross / w2 - P[..., None, None] * eye / w2 + P[..., None, None] * yy / w2**2
        return G[..., None, None] * inner


@dataclass(frozen=True)
class VelocityTest:
    """Monomial psi(v): () -> 1, (i,) -> v_i, (i, j) -> v_i v_j."""

    index: tuple = ()

    @property
    def degree(self) -> int:
        return len(self.index)

    def direction_factor(self, dirs: np.ndarray) -> np.ndarray:
        f = np.ones(dirs.shape[0])
        for i in self.index:
            f = f * dirs[:, i]
        return f

    def times(self, k: int) -> "VelocityTest":
        return VelocityTest(tuple(sorted(self.index + (k,))))

    def derivative(self, k: int) -> list:
        """d psi / d v_k as a list of (coefficient, monomial)."""
        out = []
        for pos, i in enumerate(self.index):
            if i == k:
                rest = self.index[:pos] + self.index[pos + 1:]
                out.append((1.0, VelocityTest(rest)))
        return out

    def value(self, v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        out = np.ones(v.shape[0])
        for i in self.index:
            out = out * v[:, i]
        return out

    def gradient(self, v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        g = np.zeros_like(v)
        for k in range(v.shape[1]):
            for coef, mono in self.derivative(k):
                g[:, k] += coef * mono.value(v)
        return g


@dataclass(frozen=True)
class TimeTest:
    """eta(t) = (1 - t/T)^3 on [0, T), zero afterwards; C^2 with eta(T) = eta'(T) = eta''(T) = 0."""

    support: float

    def value(self, t):
        r = np.clip(1.0 - np.asarray(t, dtype=float) / self.support, 0.0, None)
        return r**3

    def derivative(self, t):
        r = np.clip(1.0 - np.asarray(t, dtype=float) / self.support, 0.0, None)
        return -3.0 * r**2 / self.support

    def second_derivative(self, t):
        r = np.clip(1.0 - np.asarray(t, dtype=float) / self.support, 0.0, None)
        return 6.0 * r / self.support**2


@dataclass(frozen=True)
class TestTriple:
    phi: SpatialTest
    psi: VelocityTest
    eta: TimeTest
    test_id: int = 0

    def self_check(self, samples: int = 16, seed: int = 0, rel_step: float = 1e-2) -> float:
        """Largest gap between analytic derivatives and sixth-order centred differences.

        Steps scale with the width of each function (``rel_step`` times the
        bump width, the time support, or 1 for the velocity monomials).
        """
        rng = np.random.default_rng(seed)
        n = self.phi.n
        c = np.asarray(self.phi.center)
        x = c + rng.uniform(-2, 2, size=(samples, n)) * self.phi.width
        hx = rel_step * self.phi.width
        err = 0.0
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            fd = _central(lambda d: self.phi.value(x + d * e), hx)
            err = max(err, float(np.max(np.abs(fd - self.phi.gradient(x)[:, k]))))
            fd2 = _central(lambda d: self.phi.gradient(x + d * e), hx)
            err = max(err, float(np.max(np.abs(fd2 - self.phi.hessian(x)[:, k, :]))))
        v = rng.uniform(-0.7, 0.7, size=(samples, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            fd = _central(lambda d: self.psi.value(v + d * e), rel_step)
            err = max(err, float(np.max(np.abs(fd - self.psi.gradient(v)[:, k]))))
        T = self.eta.support
        t = rng.uniform(0, 0.9, size=samples) * T
        ht = rel_step * 0.01 * T
        fd = _central(lambda d: self.eta.value(t + d), ht)
        err = max(err, float(np.max(np.abs(fd - self.eta.derivative(t)))))
        fd = _central(lambda d: self.eta.derivative(t + d), ht)
        err = max(err, float(np.max(np.abs(fd - self.eta.second_derivative(t)))))
        return err


_STENCIL = ((1, 45.0), (2, -9.0), (3, 1.0))


def _central(f, h: float):
    """Sixth-order centred first derivative of f at offset 0."""
    return sum(w * (f(k * h) - f(-k * h)) for k, w in _STENCIL) / (60.0 * h)


def build_test_suite(length: float, n: int, t_end: float, count: int, seed: int = 0,
                     boundary_tol: float = 1e-12) -> list[TestTriple]:
    """Deterministic family of test triples.

    The first triple is always the centred Gaussian with psi = 1 and the
    standard time bump; the rest are a seeded shuffle of all combinations.
    """
    if count < 1:
        raise DomainError("count must be at least 1")
    L = float(length)
    widths = (L / 20.0, L / 24.0)
    polys = [()] + [(i,) for i in range(n)] + [(i, j) for i in range(n) for j in range(i, n)]
    psis = [()] + [(i,) for i in range(n)] + [(i, j) for i in range(n) for j in range(i, n)]
    windows = (t_end, 0.75 * t_end)
    phis = []
    for w in widths:
        # distance at which bump times polynomial factor falls below the tolerance
        margin = w * np.sqrt(2.0 * np.log(10.0 * max(1.0, L * L) / boundary_tol))
        ticks = np.unique(np.linspace(margin, L - margin, 3)) if L > 2 * margin else np.array([L / 2])
        for c in itertools.product(ticks, repeat=n):
            for p in polys:
                phis.append(SpatialTest(tuple(float(ci) for ci in c), w, p))
    first = TestTriple(SpatialTest((L / 2,) * n, widths[0]), VelocityTest(), TimeTest(t_end), 0)
    combos = [(phi, VelocityTest(ps), TimeTest(T)) for phi in phis for ps in psis for T in windows]
    combos = [cmb for cmb in combos if cmb != (first.phi, first.psi, first.eta)]
    order = np.random.default_rng(seed).permutation(len(combos))
    suite = [first] + [TestTriple(*combos[i], test_id=k + 1) for k, i in enumerate(order[: count - 1])]
    for tr in suite:
        _check_boundary(tr.phi, L, boundary_tol)
    return suite


def _check_boundary(phi: SpatialTest, length: float, tol: float):
    n = phi.n
    edge = np.linspace(0.0, length, 33)
    pts = []
    for axis in range(n):
        for side in (0.0, length):
            grid = list(np.meshgrid(*([edge] * n), indexing="ij"))
            grid[axis] = np.full_like(grid[axis], side)
            pts.append(np.stack(grid, -1).reshape(-1, n))
    val = np.max(np.abs(phi.value(np.concatenate(pts))))
    if val > tol:
        raise DomainError(f"test bump does not decay at the box boundary ({val:.2e} > {tol:.0e})")


# -- residual assembly ----------------------------------------------------------


@dataclass
class ResidualReport:
    kind: str
    test_ids: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    normalized: list = field(default_factory=list)

    @property
    def max_normalized(self) -> float:
        return max(self.normalized) if self.normalized else 0.0

    def rows(self):
        return [(self.kind, i, r, nr) for i, r, nr in zip(self.test_ids, self.residuals, self.normalized)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "test_id", "residual", "normalized_residual"])
            for kind, i, r, nr in self.rows():
                w.writerow([kind, i, f"{r:.17g}", f"{nr:.17g}"])


def _trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    return float(np.trapezoid(values, times)) if len(times) > 1 else 0.0


class _Context:
    """Per-trajectory data shared by all tests."""

    def __init__(self, trajectory, env=None):
        self.kinetic = isinstance(trajectory, KineticTrajectory)
        if self.kinetic:
            self.grid = trajectory.grid
            self.xgrid = trajectory.grid.x
            self.env = env or trajectory.env
            self.eps = trajectory.epsilon if trajectory.epsilon is not None else self.env.scaling.epsilon
            self.m0 = np.stack([self.grid.velocity_integral(c) for c in trajectory.states])
        elif isinstance(trajectory, MacroTrajectory):
            self.xgrid = trajectory.xgrid
            self.env = env or trajectory.model.env
            self.eps = trajectory.model.epsilon
            self.m0 = np.stack(trajectory.states)
        else:
            raise DomainError(f"unsupported trajectory type {type(trajectory).__name__}")
        self.traj = trajectory
        self.times = np.asarray(trajectory.times, dtype=float)
        self.n = self.xgrid.n
        self.a = self.env.scaling.a
        self.kappa = self.env.scaling.kappa
        self.pts = self.xgrid.points()
        self.shape = self.xgrid.shape
        self.dV = self.xgrid.cell_volume
        mom = self.env.fiber.moments(self.pts, DirectionGrid(self.n))
        self.E = mom.E.reshape(self.shape + (self.n,))
        self.D = mom.D.reshape(self.shape + (self.n, self.n))
        self.FgQ = self.env.F_grad_Q(self.pts).reshape(self.shape + (self.n,))
        self.vstar = self.env.v_star(self.pts, self.eps).reshape(self.shape + (self.n,))
        self.mass = float(self.m0[0].sum() * self.dV)
        self._cache = {}
        if self.kinetic:
            pts = self.pts
            q = self.env.fiber.values(pts, self.grid.dirs.vectors)
            q = q / (q @ self.grid.dirs.weights)[:, None]
            self.q = q.reshape(self.shape + (self.grid.K,))

    def x_integral(self, field_, phi_vals) -> np.ndarray:
        """Per-snapshot int phi * field dx; field_ has a leading time axis."""
        axes = tuple(range(1, 1 + self.n))
        return np.sum(field_ * phi_vals, axis=axes) * self.dV

    def moment(self, psi: VelocityTest) -> np.ndarray:
        """Time series of int psi c dv per x-cell."""
        if psi.index not in self._cache:
            if psi.degree == 0:
                out = self.m0
            else:
                f = psi.direction_factor(self.grid.dirs.vectors)
                out = np.stack([self.grid.polynomial_moment(c, psi.degree, f) for c in self.traj.states])
            self._cache[psi.index] = out
        return self._cache[psi.index]

    def q_moment(self, psi: VelocityTest) -> np.ndarray:
        """int_B psi q dv per x-cell on the solver's direction grid."""
        f = psi.direction_factor(self.grid.dirs.vectors)
        return (self.q @ (f * self.grid.dirs.weights)) / (self.n + psi.degree)


def _validate(kind: ResidualKind, ctx: _Context, tests):
    if kind in (ResidualKind.KTE, ResidualKind.MOMENT0, ResidualKind.MOMENT012) and not ctx.kinetic:
        raise DomainError(f"{kind.value} residual needs a kinetic trajectory")
    for tr in tests:
        inside = np.count_nonzero(ctx.times <= tr.eta.support)
        if inside < MIN_SNAPSHOTS:
            raise DomainError(
                f"only {inside} snapshots inside the time support; need {MIN_SNAPSHOTS}")
        if ctx.times[-1] < tr.eta.support * (1 - 1e-12):
            raise DomainError("trajectory ends before the time test function vanishes")


def _kte(ctx: _Context, tr: TestTriple) -> tuple[float, float]:
    eps, kap, a, n = ctx.eps, ctx.kappa, ctx.a, ctx.n
    t = ctx.times
    phi = tr.phi.value(ctx.pts).reshape(ctx.shape)
    dphi = tr.phi.gradient(ctx.pts).reshape(ctx.shape + (n,))
    psi = tr.psi
    eta, deta = tr.eta.value(t), tr.eta.derivative(t)
    A1 = ctx.x_integral(ctx.moment(psi), phi)
    A2 = sum(ctx.x_integral(ctx.moment(psi.times(k)), dphi[..., k]) for k in range(n))
    drift = psi.degree * ctx.moment(psi)
    for k in range(n):
        for coef, mono in psi.derivative(k):
            drift = drift - coef * ctx.vstar[..., k] * ctx.moment(mono)
    A3 = ctx.x_integral(drift, phi)
    lhs = -eps**kap * eta[0] * A1[0] - _trapezoid(eps**kap * deta * A1 + eps * eta * A2 - a * eta * A3, t)
    gain = ctx.x_integral(n * ctx.q_moment(psi) * ctx.m0, phi)
    rhs = _trapezoid(eta * (gain - A1), t)
    return lhs, rhs


def _moment0(ctx: _Context, tr: TestTriple):
    eps, kap, n = ctx.eps, ctx.kappa, ctx.n
    t = ctx.times
    phi = tr.phi.value(ctx.pts).reshape(ctx.shape)
    dphi = tr.phi.gradient(ctx.pts).reshape(ctx.shape + (n,))
    M = ctx.x_integral(ctx.m0, phi)
    N = sum(ctx.x_integral(ctx.moment(VelocityTest((k,))), dphi[..., k]) for k in range(n))
    eta, deta = tr.eta.value(t), tr.eta.derivative(t)
    lhs = -eta[0] * M[0] - _trapezoid(deta * M + eps ** (1 - kap) * eta * N, t)
    return lhs, 0.0


def _moment012(ctx: _Context, tr: TestTriple):
    """Second-order moment identity, signs as obtained from the strong moment equations."""
    eps, kap, a, n = ctx.eps, ctx.kappa, ctx.a, ctx.n
    t = ctx.times
    phi = tr.phi.value(ctx.pts).reshape(ctx.shape)
    dphi = tr.phi.gradient(ctx.pts).reshape(ctx.shape + (n,))
    hphi = tr.phi.hessian(ctx.pts).reshape(ctx.shape + (n, n))
    eta, deta, d2eta = tr.eta.value(t), tr.eta.derivative(t), tr.eta.second_derivative(t)
    M = ctx.x_integral(ctx.m0, phi)
    lhs = (-eta[0] * M[0] - _trapezoid(deta * M, t)
           + eps**kap / (a + 1) * (deta[0] * M[0] + _trapezoid(d2eta * M, t)))
    m2 = sum(ctx.x_integral(ctx.moment(VelocityTest(tuple(sorted((i, j))))), hphi[..., i, j])
             for i in range(n) for j in range(n))
    vel = eps ** (1 - kap) * (a / (a + 1) * ctx.vstar + n / ((a + 1) * (n + 1)) * ctx.E)
    taxis = ctx.x_integral(ctx.m0, np.einsum("...k,...k->...", dphi, vel))
    rhs = _trapezoid(eta * (eps ** (2 - kap) / (a + 1) * m2 + taxis), t)
    m1_0 = sum(float(np.sum(ctx.moment(VelocityTest((k,)))[0] * dphi[..., k]) * ctx.dV) for k in range(n))
    rhs += eta[0] * eps / (a + 1) * m1_0
    return lhs, rhs


def _parabolic(ctx: _Context, tr: TestTriple):
    a, n = ctx.a, ctx.n
    t = ctx.times
    phi = tr.phi.value(ctx.pts).reshape(ctx.shape)
    dphi = tr.phi.gradient(ctx.pts).reshape(ctx.shape + (n,))
    hphi = tr.phi.hessian(ctx.pts).reshape(ctx.shape + (n, n))
    eta, deta = tr.eta.value(t), tr.eta.derivative(t)
    M = ctx.x_integral(ctx.m0, phi)
    weight = (myopic_coefficient(a, n) * np.einsum("...ij,...ij->...", hphi, ctx.D)
              + taxis_coefficient(a) * np.einsum("...k,...k->...", dphi, ctx.FgQ))
    lhs = -eta[0] * M[0] - _trapezoid(deta * M, t)
    rhs = _trapezoid(eta * ctx.x_integral(ctx.m0, weight), t)
    return lhs, rhs


def _hyperbolic(ctx: _Context, tr: TestTriple):
    a, n = ctx.a, ctx.n
    t = ctx.times
    phi = tr.phi.value(ctx.pts).reshape(ctx.shape)
    dphi = tr.phi.gradient(ctx.pts).reshape(ctx.shape + (n,))
    eta, deta = tr.eta.value(t), tr.eta.derivative(t)
    M = ctx.x_integral(ctx.m0, phi)
    u = n / ((a + 1) * (n + 1)) * ctx.E
    N = ctx.x_integral(ctx.m0, np.einsum("...k,...k->...", dphi, u))
    lhs = -eta[0] * M[0] - _trapezoid(deta * M + eta * N, t)
    return lhs, 0.0


_ASSEMBLERS = {
    ResidualKind.KTE: _kte,
    ResidualKind.MOMENT0: _moment0,
    ResidualKind.MOMENT012: _moment012,
    ResidualKind.PARABOLIC_LIMIT: _parabolic,
    ResidualKind.HYPERBOLIC_LIMIT: _hyperbolic,
}


def weak_residual(kind, trajectory, env=None, tests: Sequence[TestTriple] | None = None
                  ) -> ResidualReport:
    """Evaluate one weak identity for every test triple.

    Limit kinds accept macroscopic trajectories as well as kinetic ones (the
    velocity integral is used).  ``env`` defaults to the trajectory's own.
    """
    kind = ResidualKind(kind)
    ctx = _Context(trajectory, env)
    if tests is None:
        tests = build_test_suite(ctx.xgrid.length, ctx.n, float(ctx.times[-1]), 1)
    _validate(kind, ctx, tests)
    report = ResidualReport(kind.value)
    for tr in tests:
        lhs, rhs = _ASSEMBLERS[kind](ctx, tr)
        res = abs(lhs - rhs)
        phimax = float(np.max(np.abs(tr.phi.value(ctx.pts))))
        scale = phimax * 1.0 * 1.0 * ctx.mass  # |psi| <= 1 on the ball, max eta = 1
        report.test_ids.append(tr.test_id)
        report.residuals.append(res)
        report.normalized.append(res / scale if scale > 0 else res)
    return report
