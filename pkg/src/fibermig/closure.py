"""Equilibrium closure q xi1, first-order correction profiles, moment identities.

Radial profiles are functions of the speed s = |v| in (0, 1].  Along the
velocity characteristics of the drift -a v the speed decays as e^{-a sigma};
substituting u = e^{-a tau} turns the characteristic integral of the
first-order problem into

    K[f](s) = (1/a) s^{-n + 1/a} * int_s^1 u^{n - 1/a - 1} f(u) du,

which is what :func:`characteristic_integral` evaluates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalError, UnsupportedConfiguration

LOG_SWITCH = 1e-8


def _degenerate(a: float, n: int) -> bool:
    return abs(n * a - 1.0) <= LOG_SWITCH


def xi1(s, a: float, n: int):
    """Equilibrium speed profile n/(na-1) (s^{-n+1/a} - 1); -(n/a) ln s when na = 1."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise DomainError("xi1 is singular at s = 0")
    if np.any(s_arr > 1 + 1e-12):
        raise DomainError("xi1 is defined for s in (0, 1]")
    if a <= 0:
        raise DomainError("a must be positive")
    if _degenerate(a, n):
        out = -(n / a) * np.log(s_arr)
    else:
        out = n / (n * a - 1.0) * (s_arr ** (-n + 1.0 / a) - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def xi1_derivative(s, a: float, n: int):
    s = np.asarray(s, dtype=float)
    if _degenerate(a, n):
        return -(n / a) / s
    return n / (n * a - 1.0) * (-n + 1.0 / a) * s ** (-n - 1.0 + 1.0 / a)


def _power_antiderivative(s, k: float):
    """Antiderivative of s^k vanishing at 0 (k > -1)."""
    return s ** (k + 1.0) / (k + 1.0)


def xi1_weighted_integral(lo, hi, a: float, n: int, m: int = 0):
    """Exact int_lo^hi s^{n-1+m} xi1(s) ds (vectorised over lo, hi)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    k = n - 1 + m
    if _degenerate(a, n):
        def prim(s):
            with np.errstate(divide="ignore", invalid="ignore"):
                val = s ** (k + 1) * (np.log(s) / (k + 1) - 1.0 / (k + 1) ** 2)
            return np.where(s > 0, val, 0.0)
        return -(n / a) * (prim(hi) - prim(lo))

    def prim(s):
        return n / (n * a - 1.0) * (
            _power_antiderivative(s, m - 1.0 + 1.0 / a) - _power_antiderivative(s, float(k))
        )
    return prim(hi) - prim(lo)


def grading_power(a: float) -> float:
    return max(1.0, 2.0 * a)


def radial_quadrature(a: float, order: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Graded Gauss-Legendre rule for int_0^1 f(s) ds, with s = u^p and p = max(1, 2a).

    The grading removes the s^{1/a - 1} behaviour of s^{n-1} xi1 near 0.
    """
    p = grading_power(a)
    g, w = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (g + 1.0)
    wu = 0.5 * w
    s = u**p
    return s, wu * p * u ** (p - 1.0)


def closure_mass(a: float, n: int, order: int = 200) -> float:
    """Velocity integral of q xi1, i.e. int_0^1 s^{n-1} xi1(s) ds (q has unit direction mass)."""
    s, w = radial_quadrature(a, order)
    return float(np.sum(w * s ** (n - 1) * xi1(s, a, n)))


def radial_characteristic(sigma, a: float, v0=None):
    """Exact solution of dv/dsigma = -a v: v(sigma) = e^{-a sigma} v(0)."""
    fac = np.exp(-a * np.asarray(sigma, dtype=float))
    if v0 is None:
        return fac
    return fac[..., None] * np.asarray(v0, dtype=float)


# -- zero order -------------------------------------------------------------


def zero_order_meso(cbar0, q_table, s, a: float, n: int) -> np.ndarray:
    """c0(x, s, theta) = cbar0(x) q(x, theta) xi1(s).

    ``cbar0`` has shape (X,), ``q_table`` (X, K), ``s`` (S,); result (X, S, K).
    """
    cbar0 = np.asarray(cbar0, dtype=float)
    if np.any(cbar0 < 0):
        raise DomainError("macroscopic density must be nonnegative")
    prof = np.asarray(xi1(np.asarray(s, dtype=float), a, n))
    return cbar0[:, None, None] * prof[None, :, None] * np.asarray(q_table)[:, None, :]


def m1_coefficient(a: float, n: int) -> float:
    return 1.0 / (a + 1.0) * n / (n + 1.0)


def m2_coefficient(a: float, n: int) -> float:
    return 1.0 / (2.0 * a + 1.0) * n / (n + 2.0)


def closed_moments(cbar0, fiber_moments, a: float, n: int) -> dict:
    """First and second velocity moments of the equilibrium closure."""
    cbar0 = np.asarray(cbar0, dtype=float)
    E = np.asarray(fiber_moments.E)
    D = np.asarray(fiber_moments.D)
    m1 = m1_coefficient(a, n) * E * cbar0[..., None]
    m2 = m2_coefficient(a, n) * D * cbar0[..., None, None]
    return {"m1": m1, "m2": m2}


# -- first order ------------------------------------------------------------


def characteristic_integral(f: Callable[[float], float], s: float, a: float, n: int,
                            rtol: float = 1e-8) -> float:
    """K[f](s) by adaptive quadrature; raises NumericalError when quad gives up."""
    if s <= 0 or s > 1:
        raise DomainError("characteristic integral needs s in (0, 1]")
    if s == 1.0:
        return 0.0
    expo = n - 1.0 / a - 1.0

    def integrand(u):
        return u**expo * f(u)

    # split at a geometric midpoint: the integrand can vary over many decades
    pts = [s, np.sqrt(s), 1.0] if s < 0.25 else [s, 1.0]
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += _quad(integrand, lo, hi, rtol)
    return (1.0 / a) * s ** (-n + 1.0 / a) * total


def _quad(fn, lo, hi, rtol):
    out = integrate.quad(fn, lo, hi, epsrel=rtol, epsabs=0.0, limit=200, full_output=True)
    val, err = out[0], out[1]
    if len(out) > 3 or not np.isfinite(val) or (val != 0 and abs(err) > 10 * rtol * abs(val)):
        raise NumericalError(f"characteristic quadrature did not converge on [{lo}, {hi}]")
    return val


PROFILE_KERNELS = ("time", "transport", "angular", "radial")


@dataclass
class RadialProfile:
    """Tabulated speed profiles on nodes ``s``.

    ``kernels`` holds the raw characteristic integrals

    * ``time``      = K[xi1]           (multiplies d_t cbar0 q)
    * ``transport`` = K[u xi1]         (multiplies theta . grad_x(q cbar0))
    * ``angular``   = K[xi1 / u]       (multiplies a cbar0 F grad Q . grad_theta q)
    * ``radial``    = K[xi1']          (multiplies a cbar0 F grad Q . theta q)

    The coefficient convention used in :meth:`coefficients` rescales these by
    powers of s so that the correction reads
    cbar1 q xi1 - d_t cbar0 q xi2 - div_x(v q cbar0) xi3 - a cbar0 F grad Q.(grad_v q xi4 + v q xi5).
    """

    s: np.ndarray
    a: float
    n: int
    xi1: np.ndarray
    kernels: dict = field(default_factory=dict)
    analytic: str = "xi1"

    def coefficients(self) -> dict:
        s = self.s
        return {
            "xi1": self.xi1,
            "xi2": self.kernels["time"],
            "xi3": self.kernels["transport"] / s,
            "xi4": self.kernels["angular"] * s,
            "xi5": self.kernels["radial"] / s,
        }

    def rows(self):
        c = self.coefficients()
        names = ["xi1", "xi2", "xi3", "xi4", "xi5"]
        for j, sj in enumerate(self.s):
            yield [sj] + [c[k][j] for k in names]


def tabulate_profiles(s, a: float, n: int, rtol: float = 1e-8) -> RadialProfile:
    """Evaluate xi1 and the four characteristic-integral kernels on ``s``."""
    s = np.asarray(s, dtype=float)
    fns = {
        "time": lambda u: xi1(u, a, n),
        "transport": lambda u: u * xi1(u, a, n),
        "angular": lambda u: xi1(u, a, n) / u,
        "radial": lambda u: xi1_derivative(u, a, n),
    }
    kernels = {}
    for name, fn in fns.items():
        vals = np.empty_like(s)
        for j, sj in enumerate(s):
            try:
                vals[j] = characteristic_integral(fn, float(sj), a, n, rtol)
            except NumericalError as exc:
                raise NumericalError(f"{exc} (profile {name}, s={sj})") from exc
        kernels[name] = vals
    return RadialProfile(s=s, a=a, n=n, xi1=np.asarray(xi1(s, a, n)), kernels=kernels)


def periodic_gradient(field_, h: float, n: int) -> np.ndarray:
    """Centred second-order gradient on a periodic grid.

    ``field_`` has ``n`` leading spatial axes (possibly followed by others);
    the gradient index is appended last.
    """
    return np.stack(
        [(np.roll(field_, -1, axis=i) - np.roll(field_, 1, axis=i)) / (2.0 * h) for i in range(n)],
        axis=-1,
    )


def periodic_divergence(vec, h: float, n: int) -> np.ndarray:
    """Divergence of a vector field (spatial axes first, component index last).

    For a matrix field M_ij (components in the last two axes) the row-wise
    divergence sum_j d_j M_ij is returned.
    """
    return sum(
        (np.roll(vec[..., j], -1, axis=j) - np.roll(vec[..., j], 1, axis=j)) / (2.0 * h)
        for j in range(n)
    )


def angular_gradient(q_table, dirs) -> np.ndarray:
    """Tangential gradient of q on the direction grid, shape (..., K, n); zero when n=1."""
    q_table = np.asarray(q_table, dtype=float)
    n = dirs.shape[1]
    if n == 1:
        return np.zeros(q_table.shape + (1,))
    K = dirs.shape[0]
    dth = 2.0 * np.pi / K
    dq = (np.roll(q_table, -1, axis=-1) - np.roll(q_table, 1, axis=-1)) / (2.0 * dth)
    tangent = np.stack([-dirs[:, 1], dirs[:, 0]], axis=-1)
    return dq[..., None] * tangent


def first_order_meso(cbar1, cbar0, env, kappa: int, xgrid, dirs, profile: RadialProfile,
                     q_table=None, dt_cbar0=None) -> np.ndarray:
    """First-order correction c1 on the x-grid, speed nodes and direction nodes.

    ``cbar1``, ``cbar0`` and ``dt_cbar0`` are arrays over the x-grid (shape
    ``xgrid.shape``); ``dirs`` are the (K, n) unit directions.  Returns an
    array of shape ``xgrid.shape + (S, K)``.
    """
    n = env.n
    a = env.scaling.a
    cbar1 = np.asarray(cbar1, dtype=float)
    cbar0 = np.asarray(cbar0, dtype=float)
    pts = xgrid.points()
    if q_table is None:
        q_table = env.fiber.values(pts, dirs).reshape(xgrid.shape + (dirs.shape[0],))
    q = np.asarray(q_table)
    xi = profile.xi1
    kern = profile.kernels
    out = (cbar1[..., None] * q)[..., None, :] * xi[:, None]
    if kappa == 1:
        if dt_cbar0 is None:
            raise DomainError("kappa = 1 needs the time derivative of cbar0")
        out -= (np.asarray(dt_cbar0)[..., None] * q)[..., None, :] * kern["time"][:, None]
    # transport: theta . grad_x(q cbar0) K[u xi1]
    G = periodic_gradient(q * cbar0[..., None], xgrid.h, n)  # (..., K, n)
    theta_G = np.einsum("...kn,kn->...k", G, dirs)
    out -= theta_G[..., None, :] * kern["transport"][:, None]
    # velocity drift of c0 along F grad Q
    FgQ = env.F_grad_Q(pts).reshape(xgrid.shape + (n,))
    ang = np.einsum("...kn,...n->...k", angular_gradient(q, dirs), FgQ)
    rad = np.einsum("kn,...n->...k", dirs, FgQ) * q
    out -= a * cbar0[..., None, None] * (
        ang[..., None, :] * kern["angular"][:, None] + rad[..., None, :] * kern["radial"][:, None]
    )
    return out


def corrected_moments(cbar1, cbar0, env, kappa: int, xgrid, dt_cbar0=None,
                      fiber_moments=None, tol: float = 1e-9) -> dict:
    """First-order corrections to the first and second velocity moments.

    The second moment drops the third-moment term, so it requires T[q] = 0.
    """
    n = env.n
    a = env.scaling.a
    cbar1 = np.asarray(cbar1, dtype=float)
    cbar0 = np.asarray(cbar0, dtype=float)
    pts = xgrid.points()
    mom = fiber_moments or env.fiber.moments(pts)
    E = np.asarray(mom.E).reshape(xgrid.shape + (n,))
    D = np.asarray(mom.D).reshape(xgrid.shape + (n, n))
    T = np.asarray(mom.T)
    if np.max(np.abs(T)) > tol:
        raise UnsupportedConfiguration(
            f"corrected second moment needs T[q] = 0 (max |T| = {np.max(np.abs(T)):.3e})")
    delta = 1.0 if kappa == 1 else 0.0
    if delta and dt_cbar0 is None:
        raise DomainError("kappa = 1 needs the time derivative of cbar0")
    dt0 = np.zeros_like(cbar0) if dt_cbar0 is None else np.asarray(dt_cbar0, dtype=float)
    FgQ = env.F_grad_Q(pts).reshape(xgrid.shape + (n,))
    c1n = n / (n + 1.0)
    c2n = n / (n + 2.0)
    divDc = periodic_divergence(D * cbar0[..., None, None], xgrid.h, n)
    m1c = (c1n * E * cbar1[..., None] - (
        delta / (a + 1.0) * c1n * E * dt0[..., None]
        + 1.0 / (2 * a + 1.0) * c2n * divDc
        - a * cbar0[..., None] * FgQ
    )) / (a + 1.0)
    outer = FgQ[..., :, None] * E[..., None, :] + E[..., :, None] * FgQ[..., None, :]
    m2c = (c2n * D * cbar1[..., None, None] - (
        delta / (2 * a + 1.0) * c2n * D * dt0[..., None, None]
        + a / (a + 1.0) * c1n * cbar0[..., None, None] * outer
    )) / (2 * a + 1.0)
    return {"m1c": m1c, "m2c": m2c}


# -- adjoint problem from the uniqueness argument ---------------------------


def resolve_adjoint(g: Callable[[np.ndarray], np.ndarray], a: float, order: int = 64):
    """Solve a v.grad(psi) + psi = g on the ball along rays.

    psi(v) = -(1/a) |v|^{-1/a} int_{|v|}^1 y^{1/a - 1} g(y v/|v|) dy.
    Returns a callable evaluating psi at points of shape (..., n), |v| > 0.
    """
    gl, gw = np.polynomial.legendre.leggauss(order)

    def psi(v):
        v = np.asarray(v, dtype=float)
        r = np.linalg.norm(v, axis=-1)
        if np.any(r <= 0):
            raise DomainError("psi is evaluated away from v = 0")
        theta = v / r[..., None]
        y = r[..., None] + (1.0 - r[..., None]) * 0.5 * (gl + 1.0)
        wy = (1.0 - r[..., None]) * 0.5 * gw
        gy = np.asarray(g(y[..., None] * theta[..., None, :]))
        integral = np.sum(wy * y ** (1.0 / a - 1.0) * gy, axis=-1)
        return -(1.0 / a) * r ** (-1.0 / a) * integral

    return psi


def apply_adjoint_operator(psi, a: float, v, h: float) -> np.ndarray:
    """a v.grad(psi) + psi with a first-order forward difference along the ray."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    theta = v / r[..., None]
    dpsi = (psi(v + h * theta) - psi(v)) / h
    return a * r * dpsi + psi(v)
