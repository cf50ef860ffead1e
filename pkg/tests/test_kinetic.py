import numpy as np
import pytest

from fibermig import fibers, records
from fibermig.environment import Environment, GaussianBump, Ramp, ScalingParams
from fibermig.errors import DomainError, NumericalError, StepSizeError
from fibermig.kinetic import KineticSolver, KineticState, remap_linear
from fibermig.phase_grid import PhaseGrid, XGrid


def make_solver(n=2, eps=0.5, kappa=2, a=1.0, fiber=None, signal=None, N=8, Ns=8, K=16, L=1.0):
    fiber = fiber or fibers.Uniform(n)
    env = Environment(ScalingParams(eps, kappa, a, n), fiber, signal, length=L)
    return KineticSolver(env, PhaseGrid(XGrid(n, N, L), Ns, K, a))


def bump(xg, w=0.15):
    x = xg.mesh()
    r2 = np.sum((x - 0.5 * xg.length) ** 2, axis=-1)
    f = np.exp(-r2 / (2 * w**2))
    return f / xg.integrate(f)


def test_init_zero_and_isotropic():
    s = make_solver()
    assert np.all(s.init_state(np.zeros(s.grid.x.shape)).c == 0)
    iso = s.init_state(np.full(s.grid.x.shape, 2.0), "isotropic")
    assert np.allclose(iso.c, 2.0 / np.pi, rtol=1e-6)
    with pytest.raises(DomainError):
        s.init_state(-np.ones(s.grid.x.shape))
    with pytest.raises(DomainError):
        s.init_state(np.ones(s.grid.x.shape), "warm")


def test_equilibrium_init_matches_closure():
    s = make_solver()
    st = s.init_state(np.ones(s.grid.x.shape))
    g = s.grid
    assert np.allclose(st.c[0, 0], g.xi1_average[:, None] / (2 * np.pi))
    mom = s.moments_x(st)
    assert np.allclose(mom["m0"], 1.0, atol=1e-6)
    assert np.allclose(mom["m1"], 0.0, atol=1e-8)
    assert np.allclose(mom["m2"], np.eye(2) / 12, atol=1e-4)


def test_moments_of_zero_state():
    s = make_solver(n=1)
    mom = s.moments_x(s.init_state(np.zeros(8)))
    assert all(np.all(v == 0) for v in mom.values())
    assert s.total_mass(s.init_state(np.zeros(8))) == 0.0


def test_total_mass_of_normalized_bump():
    s = make_solver(N=32)
    st = s.init_state(bump(s.grid.x))
    assert s.total_mass(st) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("n,signal", [(1, Ramp([0.8])), (2, GaussianBump([0.5, 0.5], 0.2)),
                                      (2, None)])
def test_mass_conserved_and_positive_over_100_steps(n, signal):
    fiber = fibers.Discrete(0.7) if n == 1 else fibers.VonMises(0.5, 1.0)
    s = make_solver(n=n, eps=0.3, kappa=1, fiber=fiber, signal=signal, N=16)
    st = s.init_state(bump(s.grid.x), "isotropic")
    m_init = s.total_mass(st)
    dt = s.default_dt()
    for _ in range(100):
        st = s.step(st, dt)
    assert abs(s.total_mass(st) - m_init) <= 1e-8 * m_init
    assert st.c.min() >= 0.0


def test_relaxation_alone_keeps_density_and_decays():
    s = make_solver(eps=0.2, fiber=fibers.VonMises(0.0, 2.0))
    rng = np.random.default_rng(1)
    st = KineticState(0.0, rng.uniform(0, 1, s.grid.state_shape))
    m0 = s.grid.velocity_integral(st.c)
    eq = s.n * s.q[..., None, :] * m0[..., None, None]
    dev0 = np.max(np.abs(st.c - eq))
    one = s.step(st, 0.01, substeps=("C",))
    assert np.max(np.abs(s.grid.velocity_integral(one.c) - m0)) <= 1e-12
    tr = s.run(st, 10 * s.tau, dt=s.tau / 4, substeps=("C",))
    dev = np.max(np.abs(tr.final.c - eq))
    assert dev <= 5e-5 * dev0
    assert dev == pytest.approx(np.exp(-10) * dev0, rel=1e-8)


def test_homogeneous_run_converges_to_equilibrium_profile():
    s = make_solver(n=1, eps=0.5, fiber=fibers.Discrete(0.7), N=4, Ns=32)
    st = s.init_state(np.ones(4), "isotropic")
    eq = s.init_state(np.ones(4)).c
    dists = []
    for _ in range(4):
        tr = s.run(st, st.t + 2.5 * s.tau, dt=0.1 * s.tau)
        st = tr.final
        w = s.grid.weights
        dists.append(float(np.sum(np.abs(st.c[0] - eq[0]) * w)))
    assert all(b < a for a, b in zip(dists, dists[1:]))
    assert dists[-1] <= 0.05


def test_drift_has_no_inflow_through_unit_sphere():
    s = make_solver(n=2, eps=0.5, N=2, Ns=8)
    c = np.zeros(s.grid.state_shape)
    c[..., 3, :] = 1.0  # an interior shell only
    out = s.drift_v(c, 0.3 * s.tau)
    assert np.all(out[..., -1, :] == 0.0)
    assert s.grid.velocity_integral(out) == pytest.approx(s.grid.velocity_integral(c), rel=1e-12)


def test_remap_linear_conserves_and_contracts():
    edges = np.linspace(0, 1, 11)
    dens = np.ones((1, 10))
    out = remap_linear(dens, edges, np.minimum(edges * 2.0, 1.0))
    width = np.diff(edges)
    assert np.sum(out * width) == pytest.approx(1.0)
    assert np.allclose(out[0, :5], 2.0) and np.allclose(out[0, 5:], 0.0)


def test_cfl_violation_raises():
    s = make_solver(n=1, eps=0.1, kappa=1, N=16)
    st = s.init_state(np.ones(16))
    with pytest.raises(StepSizeError):
        s.step(st, 10 * s.max_dt())
    with pytest.raises(StepSizeError):
        s.step(st, 0.0)


def test_nan_detection_reports_location():
    s = make_solver(n=1, N=4)
    c = np.ones(s.grid.state_shape)
    c[2, 1, 0] = np.nan
    with pytest.raises(NumericalError, match="non-finite"):
        s.step(KineticState(0.0, c), s.default_dt(), substeps=("C",))


def test_run_lands_on_end_time_and_records():
    s = make_solver(n=1, N=8)
    tr = s.run(s.init_state(np.ones(8)), 0.05, dt=0.004, record_every=5)
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(0.05, abs=1e-14)
    assert tr.m0().shape == (len(tr.times), 8)
    assert len(s.run(s.init_state(np.ones(8)), 0.0).times) == 1


def test_snapshot_csv_roundtrip(tmp_path):
    s = make_solver(n=1, N=4, Ns=3)
    st = s.init_state(np.linspace(0.5, 1.0, 4))
    path = records.write_kinetic_snapshots([0.0], [st.c], 1, tmp_path / "k.csv")
    header, rows = records.read_csv(path)
    assert header == ["t", "x_index", "s_index", "theta_index", "value"]
    values = np.array([float(r[-1]) for r in rows])
    assert np.array_equal(np.sort(values), np.sort(st.c.ravel()))
