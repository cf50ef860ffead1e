import numpy as np
import pytest
from scipy import integrate

from fibermig import closure, fibers
from fibermig.environment import Environment, GaussianBump, Ramp, ScalingParams
from fibermig.errors import DomainError, UnsupportedConfiguration
from fibermig.phase_grid import XGrid


def test_xi1_direct_value():
    assert closure.xi1(0.5, 1.0, 2) == pytest.approx(2.0)


@pytest.mark.parametrize("a,n", [(0.5, 1), (1.0, 2), (2.0, 2), (0.5, 2)])
def test_xi1_vanishes_at_unit_speed(a, n):
    assert closure.xi1(1.0, a, n) == pytest.approx(0.0, abs=1e-15)


def test_xi1_logarithmic_limit():
    s = np.exp(-1.0)
    assert closure.xi1(s, 0.5, 2) == pytest.approx(4.0)
    near = [closure.xi1(s, 0.5 + d, 2) for d in (1e-4, -1e-4)]
    assert near == pytest.approx([4.0, 4.0], abs=1e-3)


def test_xi1_rejects_zero_speed():
    with pytest.raises(DomainError):
        closure.xi1(0.0, 1.0, 2)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("n", [1, 2])
def test_closure_consistency(a, n):
    # int_0^1 s^{n-1} xi1 ds = n/(na-1) (a - 1/n) = 1 (and -(n/a) int s^{n-1} ln s = 1/(a n) = 1 at na = 1)
    assert closure.closure_mass(a, n) == pytest.approx(1.0, abs=1e-6)
    exact = closure.xi1_weighted_integral(0.0, 1.0, a, n)
    assert exact == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("n", [1, 2])
def test_moment_identities_by_quadrature(a, n):
    s, w = closure.radial_quadrature(a, 400)
    prof = closure.xi1(s, a, n)
    q = fibers.VonMises(0.3, 1.5) if n == 2 else fibers.Discrete(0.8)
    grid = fibers.DirectionGrid(n, 256)
    x = np.zeros((1, n)) + 0.5
    qv = q.values(x, grid.vectors)[0] * grid.weights
    th = grid.vectors
    m1 = np.sum(w * s**n * prof) * np.einsum("k,ki->i", qv, th)
    m2 = np.sum(w * s ** (n + 1) * prof) * np.einsum("k,ki,kj->ij", qv, th, th)
    mom = q.moments(x, grid)
    assert np.allclose(m1, closure.m1_coefficient(a, n) * mom.E[0], atol=1e-6)
    assert np.allclose(m2, closure.m2_coefficient(a, n) * mom.D[0], atol=1e-6)


def test_moment_coefficients():
    assert closure.m1_coefficient(1.0, 2) == pytest.approx(1 / 3)
    assert closure.m2_coefficient(1.0, 2) == pytest.approx(1 / 6)
    m = fibers.Uniform(2).moments(np.array([[0.5, 0.5]]))
    out = closure.closed_moments(np.ones(1), m, 1.0, 2)
    assert np.allclose(out["m1"], 0.0)
    assert np.allclose(out["m2"][0], np.eye(2) / 12)


def test_zero_order_meso_values():
    q = np.full((3, 8), 1 / (2 * np.pi))
    c0 = closure.zero_order_meso(np.ones(3), q, [0.5], 1.0, 2)
    assert c0[0, 0, 0] == pytest.approx(1 / np.pi)
    assert np.all(closure.zero_order_meso(np.zeros(3), q, [0.5, 0.9], 1.0, 2) == 0)
    with pytest.raises(DomainError):
        closure.zero_order_meso(-np.ones(3), q, [0.5], 1.0, 2)


def test_zero_order_meso_mass():
    s, w = closure.radial_quadrature(1.0, 300)
    grid = fibers.DirectionGrid(2, 32)
    q = np.full((1, grid.K), 1 / (2 * np.pi))
    c0 = closure.zero_order_meso(np.ones(1), q, s, 1.0, 2)
    mass = np.einsum("xsk,s,k->x", c0, w * s, grid.weights)
    assert mass[0] == pytest.approx(1.0, abs=1e-6)


def test_radial_characteristic_map_against_ode():
    a = 1.3
    v0 = np.array([[0.6, -0.2], [0.1, 0.9]])
    sig = np.array([0.0, 0.4, 1.7])
    sol = integrate.solve_ivp(lambda t, y: -a * y, (0, sig[-1]), v0.ravel(), t_eval=sig,
                              method="DOP853", rtol=1e-13, atol=1e-14)
    for i, t in enumerate(sig):
        exact = closure.radial_characteristic(np.array([t]), a, v0[None])[0]
        assert np.allclose(exact, sol.y[:, i].reshape(2, 2), atol=1e-10)
    assert closure.radial_characteristic(2.0, 0.5) == pytest.approx(np.exp(-1.0))


def _env(kappa, fiber, signal, n=2, eps=0.1):
    return Environment(ScalingParams(eps, kappa, 1.0, n), fiber, signal, length=1.0)


def _bimodal(mu=0.4, kappa=2.0):
    return fibers.Mixture([fibers.VonMises(mu, kappa), fibers.VonMises(mu + np.pi, kappa)], [0.5, 0.5])


def test_first_order_reduces_to_first_term_without_sources():
    xg = XGrid(2, 6, 1.0)
    env = _env(2, _bimodal(), GaussianBump([0.5, 0.5], 0.2))
    dirs = fibers.DirectionGrid(2, 16).vectors
    s = np.array([0.2, 0.5, 0.8])
    prof = closure.tabulate_profiles(s, 1.0, 2)
    cbar1 = np.linspace(0.5, 1.5, 36).reshape(6, 6)
    c1 = closure.first_order_meso(cbar1, np.zeros((6, 6)), env, 2, xg, dirs, prof)
    q = env.fiber.values(xg.points(), dirs).reshape(6, 6, 16)
    expected = cbar1[..., None, None] * q[..., None, :] * prof.xi1[:, None]
    assert np.allclose(c1, expected, atol=1e-14)


def _correction_mass(env, fiber_K=32):
    xg = XGrid(2, 8, 1.0)
    grid = fibers.DirectionGrid(2, fiber_K)
    s, w = closure.radial_quadrature(1.0, 48)
    prof = closure.tabulate_profiles(s, 1.0, 2)
    x = xg.mesh()
    cbar0 = 1.0 + 0.5 * np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
    c1 = closure.first_order_meso(np.zeros_like(cbar0), cbar0, env, 2, xg, grid.vectors, prof)
    per_s = np.einsum("xysk,k->xys", c1, grid.weights)
    scale = np.einsum("xysk,k->xys", np.abs(c1), grid.weights)
    return np.einsum("xys,s->xy", per_s, w * s), per_s, scale


def test_first_order_corrections_carry_no_mass():
    env = _env(2, _bimodal(), GaussianBump([0.5, 0.5], 0.25))
    mass, _, _ = _correction_mass(env)
    assert np.max(np.abs(mass)) <= 1e-6


def test_radial_taxis_term_averages_out_for_uniform_fibers():
    env = _env(2, fibers.Uniform(2), Ramp([0.7, 0.0]))
    _, per_s, scale = _correction_mass(env)
    # uniform q and a constant gradient: every term is odd in theta
    assert np.all(np.abs(per_s) <= 1e-12 * scale)


def test_corrected_second_moment_stationary():
    xg = XGrid(2, 4, 1.0)
    env = _env(2, fibers.Uniform(2), None)
    out = closure.corrected_moments(np.ones((4, 4)), np.ones((4, 4)), env, 2, xg)
    assert np.allclose(out["m2c"], np.eye(2) / 12, atol=1e-12)
    assert np.allclose(out["m1c"], 0.0, atol=1e-12)
    zero = closure.corrected_moments(np.zeros((4, 4)), np.zeros((4, 4)), env, 2, xg)
    assert np.allclose(zero["m1c"], 0) and np.allclose(zero["m2c"], 0)


def test_corrected_second_moment_against_first_order_quadrature():
    xg = XGrid(2, 4, 1.0)
    env = _env(2, fibers.Uniform(2), None)
    grid = fibers.DirectionGrid(2, 32)
    s, w = closure.radial_quadrature(1.0, 300)
    prof = closure.RadialProfile(s, 1.0, 2, closure.xi1(s, 1.0, 2),
                                 {k: np.zeros_like(s) for k in closure.PROFILE_KERNELS})
    c1 = closure.first_order_meso(np.ones((4, 4)), np.zeros((4, 4)), env, 2, xg, grid.vectors, prof)
    V = grid.vectors
    m2 = np.einsum("xysk,s,k,ki,kj->xyij", c1, w * s**3, grid.weights, V, V)
    assert np.allclose(m2, np.eye(2) / 12, atol=1e-6)


def test_corrected_moments_reject_third_moment():
    xg = XGrid(1, 4, 1.0)
    env = _env(2, fibers.Discrete(0.7), None, n=1)
    with pytest.raises(UnsupportedConfiguration):
        closure.corrected_moments(np.ones(4), np.ones(4), env, 2, xg)


def test_zero_and_first_order_not_orthogonal():
    xg = XGrid(1, 16, 1.0)
    env = _env(2, fibers.Discrete(0.7), Ramp([0.8]), n=1)
    grid = fibers.DirectionGrid(1)
    s, w = closure.radial_quadrature(1.0, 64)
    prof = closure.tabulate_profiles(s, 1.0, 1)
    cbar0 = 1.0 + 0.3 * np.sin(2 * np.pi * xg.centers)
    c1 = closure.first_order_meso(np.zeros(16), cbar0, env, 2, xg, grid.vectors, prof)
    q = env.fiber.values(xg.points(), grid.vectors)
    c0 = closure.zero_order_meso(cbar0, q, s, 1.0, 1)
    inner = np.einsum("xsk,xsk,s,k->x", c0, c1, w, 1 / q[0])
    assert np.max(np.abs(inner)) > 1e-8


def test_adjoint_examples():
    zero = closure.resolve_adjoint(lambda v: np.zeros(v.shape[:-1]), 1.0)
    assert np.allclose(zero(np.array([[0.3, 0.1]])), 0.0)
    one = closure.resolve_adjoint(lambda v: np.ones(v.shape[:-1]), 1.0)
    v = np.array([[0.2, 0.0], [0.0, 0.5], [0.6, 0.6]])
    r = np.linalg.norm(v, axis=-1)
    assert np.allclose(one(v), 1 - 1 / r, atol=1e-12)


def test_adjoint_roundtrip_first_order():
    a = 0.7
    g = lambda v: np.exp(-1.0 / np.maximum(np.sum(v**2, -1), 1e-300)) * (1 + v[..., 0])  # noqa: E731
    psi = closure.resolve_adjoint(g, a)
    rng = np.random.default_rng(3)
    th = rng.uniform(0, 2 * np.pi, 40)
    r = rng.uniform(0.3, 0.9, 40)
    v = np.stack([r * np.cos(th), r * np.sin(th)], -1)
    errs = [np.max(np.abs(closure.apply_adjoint_operator(psi, a, v, h) - g(v))) for h in (1e-3, 5e-4)]
    assert errs[1] < errs[0]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_profile_rows_have_five_columns():
    prof = closure.tabulate_profiles([0.3, 0.7, 1.0], 1.0, 2)
    rows = list(prof.rows())
    assert len(rows) == 3 and all(len(r) == 6 for r in rows)
    assert rows[-1][1] == 0.0 and np.all(np.isfinite(np.array(rows)))
