import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import iv

from fibermig import fibers
from fibermig.errors import DomainError


def test_direction_grid_weights_sum_to_sphere_measure():
    assert fibers.DirectionGrid(1).weights.sum() == 2.0
    assert np.isclose(fibers.DirectionGrid(2, 64).weights.sum(), 2 * np.pi, atol=1e-14)
    assert fibers.DirectionGrid(1, 99).K == 2


def test_uniform_value_is_inverse_circumference():
    q = fibers.Uniform(2)
    assert q.eval_q([0.3, 0.2], 1.234) == pytest.approx(1 / (2 * np.pi))


def test_discrete_plus_direction():
    assert fibers.Discrete(0.75).eval_q(0.1, 1) == pytest.approx(0.75)
    assert fibers.Discrete(0.75).eval_q(0.1, -1) == pytest.approx(0.25)


def test_von_mises_peak_against_bessel_integral():
    # I0(2) from its integral representation, independent of scipy.special
    i0, _ = integrate.quad(lambda t: np.exp(2 * np.cos(t)) / np.pi, 0, np.pi)
    expected = np.exp(2) / (2 * np.pi * i0)
    q = fibers.VonMises(mu=0.0, kappa=2.0)
    assert q.eval_q([0.0, 0.0], [1.0, 0.0]) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.5159, abs=1e-4)


def test_uniform_moments():
    m = fibers.Uniform(2).moments([0.5, 0.5])
    assert np.allclose(m.E, 0, atol=1e-14)
    assert np.allclose(m.D, 0.5 * np.eye(2), atol=1e-14)
    assert np.allclose(m.T, 0, atol=1e-14)


def test_discrete_moments_two_point_arithmetic():
    m = fibers.Discrete(0.75).moments(0.2)
    assert m.E[0] == pytest.approx(0.5)
    assert m.D[0, 0] == pytest.approx(1.0)
    assert m.V[0, 0] == pytest.approx(0.75)


def test_von_mises_mean_against_fine_quadrature():
    m = fibers.VonMises(0.0, 2.0).moments([0.0, 0.0], fibers.DirectionGrid(2, 4096))
    assert m.E[0] == pytest.approx(iv(1, 2) / iv(0, 2), abs=1e-10)
    assert m.E[0] == pytest.approx(0.6978, abs=1e-4)
    assert abs(m.E[1]) < 1e-12


def test_symmetry_check_variants():
    assert fibers.symmetry_check(fibers.Uniform(2))["undirected"]
    rep = fibers.symmetry_check(fibers.Discrete(0.75))
    assert not rep["undirected"]
    assert rep["max_E"] == pytest.approx(0.5)
    mix = fibers.Mixture([fibers.VonMises(0.4, 3.0), fibers.VonMises(0.4 + np.pi, 3.0)], [0.5, 0.5])
    rep = fibers.symmetry_check(mix)
    assert rep["undirected"] and rep["max_asym"] < 1e-12


def test_position_dependent_parameter():
    q = fibers.VonMises(mu=lambda p: p[:, 0], kappa=1.0)
    m = q.moments(np.array([[0.0, 0.0], [np.pi / 2, 0.0]]))
    assert m.E[0, 1] == pytest.approx(0.0, abs=1e-12)
    assert m.E[1, 0] == pytest.approx(0.0, abs=1e-12)
    assert m.E[1, 1] > 0.4


def test_gridded_roundtrip_and_domain(tmp_path):
    path = tmp_path / "q.csv"
    rows = ["x_index,sign,value"] + [f"{i},{s},{v}" for i in range(4) for s, v in ((-1, 1.0), (1, 3.0))]
    path.write_text("\n".join(rows) + "\n")
    q = fibers.Gridded.from_csv(path, length=1.0)
    assert q.eval_q(0.3, 1) == pytest.approx(0.75)
    assert np.allclose(q.total(np.linspace(0.05, 0.95, 7)), 1.0, atol=1e-8)
    with pytest.raises(DomainError):
        q.eval_q(1.5, 1)


def test_gridded_2d_exact_bin_moments():
    K = 8
    table = np.ones((2, 2, K))
    table[..., 0] = 5.0
    q = fibers.Gridded(table, 1.0)
    m = q.moments([[0.25, 0.25]])
    assert np.trace(m.D[0]) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(m.D - m.V - np.einsum("pi,pj->pij", m.E, m.E), 0, atol=1e-12)


def test_negative_parameters_rejected():
    with pytest.raises(DomainError):
        fibers.Discrete(1.5)
    with pytest.raises(DomainError):
        fibers.Gridded(-np.ones((2, 2)), 1.0)


@settings(max_examples=40, deadline=None)
@given(mu=st.floats(-np.pi, np.pi), kappa=st.floats(0.0, 8.0), w=st.floats(0.05, 0.95),
       x=st.floats(0.0, 1.0))
def test_moment_invariants_hold_for_mixtures(mu, kappa, w, x):
    q = fibers.Mixture([fibers.VonMises(mu, kappa), fibers.Uniform(2)], [w, 1 - w])
    m = q.moments([x, 0.5])
    assert q.total([x, 0.5]) == pytest.approx(1.0, abs=1e-8)
    D = m.D[0] if m.D.ndim == 3 else m.D
    E = np.atleast_2d(m.E)[0]
    assert np.allclose(D, D.T, atol=1e-14)
    assert np.trace(D) == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.eigvalsh(D).min() >= -1e-12
    assert np.max(np.abs(D - np.atleast_3d(m.V).reshape(2, 2) - np.outer(E, E))) <= 1e-10
    assert np.linalg.norm(E) <= 1.0 + 1e-12


@settings(max_examples=30, deadline=None)
@given(p=st.floats(0.0, 1.0))
def test_discrete_undirected_iff_balanced(p):
    q = fibers.Discrete(p)
    m = q.moments(0.5)
    assert np.ravel(m.E)[0] == pytest.approx(2 * p - 1)
    assert fibers.symmetry_check(q)["undirected"] == (abs(2 * p - 1) <= 1e-10)
