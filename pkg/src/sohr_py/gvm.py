import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from sohr_py.angular_kernel import (AngularGrid, OverflowGuardError, TWO_PI, bin_masses, panel_nodes,
                                    periodic_grid, spectral_derivative, trapezoid_periodic)
from sohr_py.vmf import check_noise, DEFAULT_N

"""
Generalized von Mises equilibria Phi_W of the alignment operator with self rotation W, solving
d Phi'' - ((W - sin theta) Phi)' = 0 with unit mass, plus the scalars derived from them.
"""

EXPONENT_GUARD = 700.0


class DegenerateFluxError(ArithmeticError):
    """
    Raised when the equilibrium has (numerically) no mean heading, so psi is undefined.
    """


class ParityError(ArithmeticError):
    """
    Raised when a W -> -W symmetry identity is violated beyond tolerance.
    """


@dataclass(frozen=True)
class GvmProfile:
    d: float
    w: float
    grid: AngularGrid
    phi: np.ndarray = field(repr=False)
    c1_tilde: float
    psi: float
    lam: float
    c_const: float

    def flux(self) -> Tuple[float, float]:
        """
        Components of int Phi(theta) (cos theta, sin theta), i.e. the flux in the frame of the force direction.
        """
        th = self.grid.nodes
        return (float(trapezoid_periodic(self.phi * np.cos(th), self.grid)),
                float(trapezoid_periodic(self.phi * np.sin(th), self.grid)))

    def residual(self) -> float:
        """
        Sup norm of d Phi'' - ((W - sin) Phi)', evaluated with spectral differentiation.
        """
        th = self.grid.nodes
        res = (self.d * spectral_derivative(self.phi, 2)
               - spectral_derivative((self.w - np.sin(th)) * self.phi))
        return float(np.max(np.abs(res)))

    def compat_residual(self) -> float:
        """
        |int Phi sin(theta - psi)|, zero by construction of psi.
        """
        th = self.grid.nodes
        return float(abs(trapezoid_periodic(self.phi * np.sin(th - self.psi), self.grid)))

    def bin_masses(self, n_bins: int) -> np.ndarray:
        return bin_masses(self.phi, self.grid, n_bins)


def check_overflow_guard(d: float, w: float):
    """
    :raises OverflowGuardError: if |w| 2 pi / d exceeds the exponent guard
    """
    if abs(w) * TWO_PI / d > EXPONENT_GUARD:
        raise OverflowGuardError(f"|w| 2 pi / d = {abs(w) * TWO_PI / d:.1f} exceeds the overflow guard "
                                 f"{EXPONENT_GUARD:.0f} (d={d}, w={w})")


def _log_abs_expm1(x: float) -> float:
    if x == 0.0:
        return -math.inf
    if x > 30.0:
        return x + math.log1p(-math.exp(-x))
    return math.log(abs(math.expm1(x)))


def solve_gvm(d: float, w: float, grid: Optional[AngularGrid] = None) -> GvmProfile:
    """
    Evaluate the closed form of Phi_W,

    Phi(theta) = e^{H(theta)} / Delta (e^{H(2 pi)} int_theta^{2 pi} e^{-H} + int_0^theta e^{-H}),
    H(theta) = (W theta + cos theta - 1) / d

    in log space. The cumulative integrals use Gauss-Legendre panels between grid nodes, so the profile is accurate
    to roundoff and can be differentiated spectrally.

    :param d: diffusivity in [0.05, 20]
    :param w: angular velocity (dimensionless)
    :param grid: angular grid, defaults to n = 512
    :return: the profile
    :raises OverflowGuardError: if |w| 2 pi / d > 700
    :raises DegenerateFluxError: if the order parameter vanishes
    """
    d = check_noise(d)
    w = float(w)
    check_overflow_guard(d, w)
    grid = periodic_grid(DEFAULT_N) if grid is None else grid
    th = grid.nodes

    # Panel integrals of e^{-H - shift} over [theta_j, theta_{j+1}]
    nodes, weights = panel_nodes(grid.edges())
    neg_h = -(w * nodes + np.cos(nodes) - 1.0) / d
    shift = float(neg_h.max())
    panels = np.sum(np.exp(neg_h - shift) * weights, axis=1)

    head = np.concatenate(([0.0], np.cumsum(panels)[:-1]))
    tail = np.cumsum(panels[::-1])[::-1]

    h_nodes = (w * th + np.cos(th) - 1.0) / d
    h_2pi = TWO_PI * w / d
    with np.errstate(divide="ignore"):
        log_bracket = np.logaddexp(h_2pi + np.log(tail), np.log(head))

    # log(Delta * Phi)
    log_un = h_nodes + shift + log_bracket
    top = float(log_un.max())
    un = np.exp(log_un - top)
    mass = float(trapezoid_periodic(un, grid))
    phi = un / mass
    log_delta = top + math.log(mass)

    if not np.all(phi > 0.0) or not np.all(np.isfinite(phi)):
        raise ArithmeticError(f"Non positive equilibrium for d={d}, w={w}")

    # C = -(e^{H(2 pi)} - 1) / Delta
    if h_2pi == 0.0:
        c_const = 0.0
    else:
        c_const = -math.copysign(math.exp(_log_abs_expm1(h_2pi) - log_delta), h_2pi)

    ux = float(trapezoid_periodic(phi * np.cos(th), grid))
    uy = float(trapezoid_periodic(phi * np.sin(th), grid))
    c1_tilde = math.hypot(ux, uy)
    if c1_tilde < 1e-12:
        raise DegenerateFluxError(f"Order parameter {c1_tilde:.3e} too small to define psi (d={d}, w={w})")

    psi = math.atan2(uy, ux)
    lam = float(trapezoid_periodic(np.sin(th) * np.sin(th - psi) * phi, grid)) / (d * c1_tilde)

    phi.setflags(write=False)
    return GvmProfile(d=d, w=w, grid=grid, phi=phi, c1_tilde=c1_tilde, psi=psi, lam=lam, c_const=c_const)


def gvm_parity_pair(d: float, w: float, grid: Optional[AngularGrid] = None, tol: float = 1e-10) \
        -> Tuple[GvmProfile, GvmProfile]:
    """
    Solve at +w and -w and verify Phi_{-W}(theta) = Phi_W(-theta).

    :return: (profile at +w, profile at -w)
    :raises ParityError: if the identity fails by more than tol
    """
    plus = solve_gvm(d, w, grid)
    minus = solve_gvm(d, -w, plus.grid)
    dev = float(np.max(np.abs(minus.phi - plus.grid.mirror(plus.phi))))
    if dev > tol:
        raise ParityError(f"Phi_(-W)(theta) != Phi_W(-theta), deviation {dev:.3e} (d={d}, w={w})")
    return plus, minus


def omega_direction(psi: float, omega: Tuple[float, float]) -> Tuple[float, float]:
    """
    Force direction whose equilibrium has its flux along Omega, i.e. Omega rotated by -psi.

    :param psi: angle between force direction and flux direction
    :param omega: unit vector Omega
    :return: unit vector omega_Omega
    """
    ox, oy = float(omega[0]), float(omega[1])
    if abs(math.hypot(ox, oy) - 1.0) > 1e-12:
        raise ValueError(f"Omega must be a unit vector, got |Omega| = {math.hypot(ox, oy)}")
    c, s = math.cos(psi), math.sin(psi)
    return c * ox + s * oy, -s * ox + c * oy


def flux_direction(profile: GvmProfile, force_angle: float) -> float:
    """
    Angle of int Phi_W(v) v dv when the equilibrium is built on the force direction at `force_angle`.
    """
    th = profile.grid.nodes
    jx = trapezoid_periodic(profile.phi * np.cos(th + force_angle), profile.grid)
    jy = trapezoid_periodic(profile.phi * np.sin(th + force_angle), profile.grid)
    return math.atan2(jy, jx)
