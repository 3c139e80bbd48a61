import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from sohr_py.angular_kernel import (AngularGrid, central_diff_matrices, periodic_grid, spectral_derivative,
                                    spectral_diff_matrices, trapezoid_periodic)
from sohr_py.gvm import GvmProfile, solve_gvm
from sohr_py.vmf import DEFAULT_N, check_noise, vmf_profile

"""
Generalized collision invariants X_W: zero mean periodic solutions of

    -d X'' + (sin theta - W) X' = sin(theta - psi(W))

and the first order profiles of the expansion in small W.
"""

logger = logging.getLogger(__name__)

COMPAT_TOL = 1e-8


class Scheme(str, Enum):
    """
    Discretization of the periodic ODE
    """
    SPECTRAL = "spectral"
    CENTRAL = "central"


class SolvabilityError(ArithmeticError):
    """
    Raised when the right hand side is not orthogonal to the adjoint kernel.
    """


@dataclass(frozen=True)
class GciProfile:
    d: float
    w: float
    grid: AngularGrid
    x: np.ndarray = field(repr=False)
    psi_used: float
    residual_norm: float
    compat_residual: float
    multiplier: float
    scheme: Scheme = Scheme.SPECTRAL
    literal: bool = False


@dataclass(frozen=True)
class PerturbationProfiles:
    d: float
    grid: AngularGrid
    phi0: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    phi1: np.ndarray = field(repr=False)
    x1: np.ndarray = field(repr=False)
    beta: float
    c1: float
    c_slope: float
    residual_phi1: float
    residual_x1: float

    @property
    def psi_slope(self) -> float:
        """
        d psi / dW at W = 0.
        """
        return self.beta / self.c1


@dataclass(frozen=True)
class ParityReport:
    d: float
    w: float
    deviation: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.deviation < self.tol


# ======================================================================================================================
# Linear algebra
# ======================================================================================================================

def _operators(grid: AngularGrid, scheme: Scheme):
    if scheme == Scheme.SPECTRAL:
        return spectral_diff_matrices(grid)
    return central_diff_matrices(grid)


def _diag_times(values: np.ndarray, mat, scheme: Scheme):
    if scheme == Scheme.SPECTRAL:
        return values[:, None] * mat
    return sp.diags(values) @ mat


class _BorderedSystem:
    """
    The operator A with a rank one kernel made regular by appending the zero mean row and a multiplier column of
    ones. The factorization gives both the solution and the discrete adjoint kernel.
    """
    def __init__(self, a, scheme: Scheme):
        self.scheme = scheme
        self.a = a
        n = a.shape[0]
        self.n = n
        try:
            if scheme == Scheme.SPECTRAL:
                m = np.zeros((n + 1, n + 1))
                m[:n, :n] = a
                m[:n, n] = 1.0
                m[n, :n] = 1.0
                self._lu = sla.lu_factor(m, check_finite=True)
            else:
                ones = sp.csr_matrix(np.ones((n, 1)))
                m = sp.bmat([[a, ones], [ones.T, None]], format="csc")
                self._lu = spla.splu(m)
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as e:
            raise ArithmeticError(f"Singular collision invariant system: {e}") from e

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> Tuple[np.ndarray, float]:
        b = np.append(rhs, 0.0)
        if self.scheme == Scheme.SPECTRAL:
            sol = sla.lu_solve(self._lu, b, trans=1 if transpose else 0)
        else:
            sol = self._lu.solve(b, trans="T" if transpose else "N")
        if not np.all(np.isfinite(sol)):
            raise ArithmeticError("Singular collision invariant system (non finite solution)")
        return sol[:self.n], float(sol[self.n])

    def adjoint_kernel(self) -> np.ndarray:
        """
        l with A^T l = 0 and sum(l) = 1.
        """
        b = np.zeros(self.n + 1)
        b[self.n] = 1.0
        if self.scheme == Scheme.SPECTRAL:
            sol = sla.lu_solve(self._lu, b, trans=1)
        else:
            sol = self._lu.solve(b, trans="T")
        return sol[:self.n]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.a @ x).ravel()


def _project(rhs: np.ndarray, kernel: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Remove the component of rhs along the adjoint kernel.
    """
    coef = float(kernel @ rhs) / float(kernel @ kernel)
    return rhs - coef * kernel, abs(coef) * float(np.linalg.norm(kernel))


# ======================================================================================================================
# Collision invariants
# ======================================================================================================================

def gci_operator(d: float, w: float, grid: AngularGrid, scheme: Scheme = Scheme.SPECTRAL, literal: bool = False):
    """
    Discrete -a X'' + (sin theta - W) X' with a = d (or a = 1 for the literal form).
    """
    d1, d2 = _operators(grid, scheme)
    diffusion = 1.0 if literal else d
    return -diffusion * d2 + _diag_times(np.sin(grid.nodes) - w, d1, scheme)


def solve_gci(gvm: GvmProfile,
              scheme: Union[Scheme, str] = Scheme.SPECTRAL,
              literal: bool = False,
              tol: float = 1e-7) -> GciProfile:
    """
    Zero mean periodic solution of -d X'' + (sin theta - W) X' = sin(theta - psi(W)).

    :param gvm: equilibrium providing W, d, psi and the adjoint kernel
    :param scheme: spectral collocation (default) or second order central differences
    :param literal: solve -X'' + (sin theta - W) X' = sin(theta - psi) instead
    :param tol: bound on the sup norm of the discrete residual
    :return: the collision invariant
    :raises SolvabilityError: if int Phi sin(theta - psi) is larger than 1e-8
    """
    scheme = Scheme(scheme)
    grid = gvm.grid
    th = grid.nodes
    rhs = np.sin(th - gvm.psi)

    a = gci_operator(gvm.d, gvm.w, grid, scheme, literal)
    system = _BorderedSystem(a, scheme)
    kernel = system.adjoint_kernel()

    # The literal form has the equilibrium at unit diffusivity as adjoint kernel, so it is only solvable with this
    # psi at W = 0 or d = 1
    density = kernel / trapezoid_periodic(kernel, grid) if literal else gvm.phi
    compat = float(abs(trapezoid_periodic(density * rhs, grid)))
    if compat > COMPAT_TOL:
        raise SolvabilityError(f"Right hand side not orthogonal to the adjoint kernel: {compat:.3e} "
                               f"(d={gvm.d}, w={gvm.w}, literal={literal})")

    rhs_p, _ = _project(rhs, kernel)
    x, mult = system.solve(rhs_p)

    residual = float(np.max(np.abs(system.apply(x) - rhs_p)))
    if residual > tol:
        raise ArithmeticError(f"Collision invariant residual {residual:.3e} above tolerance {tol:.1e} "
                              f"(d={gvm.d}, w={gvm.w}, scheme={scheme.value})")

    x.setflags(write=False)
    return GciProfile(d=gvm.d, w=gvm.w, grid=grid, x=x, psi_used=gvm.psi, residual_norm=residual,
                      compat_residual=compat, multiplier=mult, scheme=scheme, literal=literal)


def gci_parity_check(d: float, w: float, grid: Optional[AngularGrid] = None, tol: float = 1e-8,
                     scheme: Union[Scheme, str] = Scheme.SPECTRAL) -> ParityReport:
    """
    Report sup |X_{-W}(theta) + X_W(-theta)|.
    """
    grid = periodic_grid(DEFAULT_N) if grid is None else grid
    plus = solve_gci(solve_gvm(d, w, grid), scheme=scheme)
    minus = solve_gci(solve_gvm(d, -w, grid), scheme=scheme)
    dev = float(np.max(np.abs(minus.x + grid.mirror(plus.x))))
    report = ParityReport(d=d, w=w, deviation=dev, tol=tol)
    if not report.passed:
        logger.warning(f"GCI parity deviation {dev:.3e} at d={d}, w={w}")
    return report


# ======================================================================================================================
# First order profiles in W
# ======================================================================================================================

def solve_perturbations(d: float, grid: Optional[AngularGrid] = None) -> PerturbationProfiles:
    """
    First order terms of Phi_W = Phi_0 + W Phi_1 and X_W = X_0 + W X_1,

        d Phi_1'' + (sin theta Phi_1)' = Phi_0'
        d X_1'' - sin theta X_1' = -X_0' + (beta / c1) cos theta,   beta = int Phi_1 sin theta

    both with zero mean. The second right hand side follows from expanding psi(W) = (beta / c1) W in the
    collision invariant equation.

    :param d: diffusivity
    :param grid: angular grid, defaults to n = 512
    :return: the profiles
    """
    d = check_noise(d)
    grid = periodic_grid(DEFAULT_N) if grid is None else grid
    th = grid.nodes
    sin = np.sin(th)
    d1, d2 = spectral_diff_matrices(grid)

    phi0 = np.array(vmf_profile(d, grid).values)
    x0 = np.array(solve_gci(solve_gvm(d, 0.0, grid)).x)
    c1 = float(trapezoid_periodic(phi0 * np.cos(th), grid))

    # Phi_1, left kernel of the operator are the constants, the right hand side has zero mean
    op_phi = d * d2 + d1 * sin[None, :]
    rhs_phi = spectral_derivative(phi0)
    phi_system = _BorderedSystem(op_phi, Scheme.SPECTRAL)
    phi1, _ = phi_system.solve(rhs_phi)
    residual_phi1 = float(np.max(np.abs(phi_system.apply(phi1) - rhs_phi)))

    beta = float(trapezoid_periodic(phi1 * sin, grid))

    # X_1, adjoint kernel Phi_0
    op_x = d * d2 - sin[:, None] * d1
    rhs_x = -spectral_derivative(x0) + (beta / c1) * np.cos(th)
    compat = float(abs(trapezoid_periodic(phi0 * rhs_x, grid)))
    if compat > COMPAT_TOL:
        raise SolvabilityError(f"First order invariant not solvable: {compat:.3e} (d={d})")
    x_system = _BorderedSystem(op_x, Scheme.SPECTRAL)
    rhs_xp, _ = _project(rhs_x, x_system.adjoint_kernel())
    x1, _ = x_system.solve(rhs_xp)
    residual_x1 = float(np.max(np.abs(x_system.apply(x1) - rhs_x)))

    # Phi_1' - ((W - sin) Phi)'s first order part is the constant dC/dW at 0
    c_slope = float(np.mean(spectral_derivative(phi1) + (sin * phi1 - phi0) / d))

    for arr in (phi0, x0, phi1, x1):
        arr.setflags(write=False)
    return PerturbationProfiles(d=d, grid=grid, phi0=phi0, x0=x0, phi1=phi1, x1=x1, beta=beta, c1=c1,
                                c_slope=c_slope, residual_phi1=residual_phi1, residual_x1=residual_x1)


def zero_mean(values: np.ndarray, grid: AngularGrid) -> float:
    return float(abs(trapezoid_periodic(values, grid)))


def convergence_order(errors, sizes) -> float:
    """
    Least squares slope of log(error) against log(1/n).
    """
    slope = np.polyfit(np.log(1.0 / np.asarray(sizes, dtype=float)), np.log(np.asarray(errors)), 1)[0]
    return float(slope)
