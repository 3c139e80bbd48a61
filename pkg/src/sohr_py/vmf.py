import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sohr_py.angular_kernel import (AngularGrid, TWO_PI, bessel_i, cumulative_integral, panel_nodes,
                                    periodic_grid, spectral_derivative, trapezoid_periodic)

"""
Equilibria without self rotation: the von Mises distribution on the circle and the constants of the SOHR-S model
that derive from it (order parameter c1, convection constant c2, pressure constant c5) together with the closed form
of the collision invariant g.
"""

D_MIN = 0.05
D_MAX = 20.0
DEFAULT_N = 512


def check_noise(d: float) -> float:
    """
    Validate the dimensionless diffusivity d = D / nu.

    :param d: diffusivity
    :return: d as float
    :raises ValueError: outside the supported range
    """
    if not (D_MIN <= d <= D_MAX) or not math.isfinite(d):
        raise ValueError(f"d must lie in [{D_MIN}, {D_MAX}], got {d}")
    return float(d)


def _default_grid(grid: Optional[AngularGrid]) -> AngularGrid:
    return periodic_grid(DEFAULT_N) if grid is None else grid


def _weight(theta: np.ndarray, d: float) -> np.ndarray:
    # e^{cos/d} scaled by e^{-1/d}, ratios are unaffected
    return np.exp((np.cos(theta) - 1.0) / d)


@dataclass(frozen=True)
class VmfProfile:
    d: float
    grid: AngularGrid
    values: np.ndarray = field(repr=False)
    z_d: float


def vmf_profile(d: float, grid: Optional[AngularGrid] = None) -> VmfProfile:
    """
    Sample M(theta) = e^{cos(theta)/d} / Z_d with theta the angle between v and Omega.

    :param d: diffusivity
    :param grid: angular grid, defaults to n = 512
    :return: the profile, normalized to unit mass by quadrature
    """
    d = check_noise(d)
    grid = _default_grid(grid)

    scaled = _weight(grid.nodes, d)
    mass = trapezoid_periodic(scaled, grid)
    values = scaled / mass
    values.setflags(write=False)
    return VmfProfile(d=d, grid=grid, values=values, z_d=float(mass * math.exp(1.0 / d)))


def c1(d: float, grid: Optional[AngularGrid] = None) -> float:
    """
    Order parameter of the von Mises equilibrium, int cos(theta) M dtheta.
    """
    prof = vmf_profile(d, grid)
    return float(trapezoid_periodic(np.cos(prof.grid.nodes) * prof.values, prof.grid))


def c1_bessel(d: float) -> float:
    """
    c1 from the Bessel ratio I1(1/d) / I0(1/d).
    """
    d = check_noise(d)
    return bessel_i(1, 1.0 / d) / bessel_i(0, 1.0 / d)


# ======================================================================================================================
# Collision invariant g
# ======================================================================================================================

def g_values(d: float, thetas: np.ndarray) -> np.ndarray:
    """
    Closed form g(theta) = d theta - d pi F(theta) / F(pi) with F(theta) = int_0^theta e^{-cos/d}, at arbitrary
    angles in [0, 2 pi].

    :param d: diffusivity
    :param thetas: angles
    :return: samples of g
    """
    d = check_noise(d)
    thetas = np.asarray(thetas, dtype=float)

    # e^{-cos/d} scaled by e^{-1/d}
    def integrand(s):
        return np.exp(-(np.cos(s) + 1.0) / d)

    cum = cumulative_integral(integrand, np.append(thetas.ravel(), math.pi))
    f_theta, f_pi = cum[:-1].reshape(thetas.shape), cum[-1]
    return d * thetas - d * math.pi * f_theta / f_pi


def g_profile(d: float, grid: Optional[AngularGrid] = None) -> np.ndarray:
    """
    Samples of g on the grid. Odd and 2 pi periodic.
    """
    grid = _default_grid(grid)
    return g_values(d, grid.nodes)


def g_residual(d: float, grid: Optional[AngularGrid] = None) -> float:
    """
    Sup norm of -(e^{cos/d} g')' - sin(theta) e^{cos/d}, both sides scaled by e^{-1/d}.
    """
    grid = _default_grid(grid)
    g = g_profile(d, grid)
    wgt = _weight(grid.nodes, d)
    flux = wgt * spectral_derivative(g)
    res = -spectral_derivative(flux) - np.sin(grid.nodes) * wgt
    return float(np.max(np.abs(res)))


# ======================================================================================================================
# Convection and pressure constants
# ======================================================================================================================

def _check_denominator(value: float, what: str):
    if abs(value) < 1e-14:
        raise ArithmeticError(f"Denominator of {what} is {value:.3e}, numerical breakdown")


def c2_g(d: float, grid: Optional[AngularGrid] = None) -> float:
    """
    c2 from the g form, int e^{cos/d} g sin cos / int e^{cos/d} g sin, over the full periodic grid.
    """
    d = check_noise(d)
    grid = _default_grid(grid)
    th = grid.nodes
    base = _weight(th, d) * g_profile(d, grid) * np.sin(th)
    den = trapezoid_periodic(base, grid)
    _check_denominator(den, "c2")
    return float(trapezoid_periodic(base * np.cos(th), grid) / den)


def c2_theta(d: float, n_panels: int = 64, order: int = 12) -> float:
    """
    c2 from the theta form on [0, pi] with h(cos theta) = g(theta) / sin(theta), evaluated on interior Gauss nodes.
    """
    d = check_noise(d)
    nodes, weights = panel_nodes(np.linspace(0.0, math.pi, n_panels + 1), order)
    th = nodes.ravel()
    w = weights.ravel()
    s = np.sin(th)
    h = g_values(d, th) / s
    base = _weight(th, d) * s ** 2 * h
    den = np.sum(w * base)
    _check_denominator(den, "c2")
    return float(np.sum(w * base * np.cos(th)) / den)


def c2_cos(d: float, m: int = 1023) -> float:
    """
    c2 as a ratio of integrals in u = v . Omega, int e^{u/d} (1 - u^2) h(u) u over the circle. With the circle
    measure dv = du / sqrt(1 - u^2) this is a Gauss-Chebyshev (second kind) quadrature in u.
    """
    d = check_noise(d)
    k = np.arange(1, m + 1)
    th = k * math.pi / (m + 1)
    u = np.cos(th)
    w = math.pi / (m + 1) * np.sin(th) ** 2
    h = g_values(d, th) / np.sin(th)
    base = np.exp((u - 1.0) / d) * h
    den = np.sum(w * base)
    _check_denominator(den, "c2")
    return float(np.sum(w * base * u) / den)


def c2(d: float, grid: Optional[AngularGrid] = None) -> float:
    """
    Convection constant c2 of the SOH model.

    :param d: diffusivity
    :param grid: grid for the quadrature, defaults to n = 512
    :return: c2(d)
    """
    return c2_g(d, grid)


def c5(d: float, grid: Optional[AngularGrid] = None) -> float:
    """
    Pressure constant of the small zeta limit, int e^{cos/d} sin^2 / int e^{cos/d} cos by quadrature.
    """
    d = check_noise(d)
    grid = _default_grid(grid)
    th = grid.nodes
    wgt = _weight(th, d)
    den = trapezoid_periodic(wgt * np.cos(th), grid)
    _check_denominator(den, "c5")
    return float(trapezoid_periodic(wgt * np.sin(th) ** 2, grid) / den)


def c5_bessel(d: float) -> float:
    """
    c5 from (I0(1/d) - I2(1/d)) / (2 I1(1/d)).
    """
    d = check_noise(d)
    x = 1.0 / d
    return 0.5 * (bessel_i(0, x) - bessel_i(2, x)) / bessel_i(1, x)


def sample_vmf(d: float, size: int, rng: np.random.Generator, mean: float = 0.0) -> np.ndarray:
    """
    Draw headings from the von Mises distribution with concentration 1/d around `mean`.
    """
    d = check_noise(d)
    return np.mod(rng.vonmises(mean, 1.0 / d, size=size), TWO_PI)
