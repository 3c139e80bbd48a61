"""
Finite volume solvers for the macroscopic models on periodic 1D / 2D grids. The direction Omega = (cos phi, sin phi)
is stored as an angle per cell. Densities are advanced with conservative local Lax-Friedrichs fluxes, phi with the
matching non conservative form; the two axes are treated by first order dimensional splitting.

Models
    soh      rho_t + div(c1 rho Omega) = 0,  phi_t + c2 (Omega.grad) phi + (d / rho) (Omega_perp.grad) rho = 0
    sohr_s   soh plus (rho Y)_t + div(c1 rho Y Omega) = 0 and the rotation source phi_t = ... + Y
    reduced  soh with pressure c5 and the order zeta corrections carrying c3, c4, c6
    sohr_l   per W bin transport with c1_tilde(W) and the moment weighted direction equation
"""

import logging
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from sohr_py.coefficients import CoefficientTable, SmallZetaCoefficients, WDensity, moment_fields
from sohr_py.utils import angle_diff, read_csv, wrap_angle, write_csv

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.45
VACUUM_FRACTION = 1e-10


class HydroModel(str, Enum):
    SOH = "soh"
    SOHR_S = "sohr_s"
    SOHR_L = "sohr_l"
    REDUCED = "reduced"


class CflError(ArithmeticError):
    """
    Raised when the time step violates the CFL bound.
    """


class VacuumError(ArithmeticError):
    """
    Raised when a cell density is not positive.
    """


class PositivityError(ArithmeticError):
    """
    Raised when m1 is not positive in an occupied cell.
    """


@dataclass(frozen=True)
class HydroGrid:
    nx: int
    ny: int = 1
    lx: float = 2.0 * math.pi
    ly: float = 2.0 * math.pi

    def __post_init__(self):
        if self.nx < 3 or self.ny < 1 or (self.ny != 1 and self.ny < 3):
            raise ValueError(f"Grid needs nx ≥ 3 and ny = 1 or ny ≥ 3, got {self.nx}x{self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError(f"Domain lengths must be positive, got {self.lx}, {self.ly}")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def is_1d(self) -> bool:
        return self.ny == 1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.nx, self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def inverse_spacing(self) -> float:
        """
        1 / dx + 1 / dy, the y term only in 2D.
        """
        return 1.0 / self.dx + (0.0 if self.is_1d else 1.0 / self.dy)


@dataclass(frozen=True)
class HydroStateS:
    grid: HydroGrid
    rho: np.ndarray = field(repr=False)
    rho_y: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    c1: float
    c2: float
    d: float
    time: float = 0.0

    @property
    def y(self) -> np.ndarray:
        return self.rho_y / self.rho


@dataclass(frozen=True)
class HydroStateL:
    grid: HydroGrid
    rho_w: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    table: CoefficientTable = field(repr=False)
    time: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return np.sum(self.rho_w, axis=0) * self.table.dw

    @property
    def rho_y(self) -> np.ndarray:
        return np.tensordot(self.table.w_grid, self.rho_w, axes=(0, 0)) * self.table.dw


HydroState = Union[HydroStateS, HydroStateL]


# ======================================================================================================================
# Eigenvalues
# ======================================================================================================================

def soh_eigenvalues(c1: float, c2: float, d: float, theta: float) -> Tuple[float, float]:
    """
    gamma_pm = ((c1 + c2) cos theta pm sqrt((c2 - c1)^2 cos^2 theta + 4 d sin^2 theta)) / 2

    :return: (gamma_minus, gamma_plus)
    """
    if d <= 0:
        raise ValueError(f"d must be positive, got {d}")
    c, s = math.cos(theta), math.sin(theta)
    rad = math.sqrt((c2 - c1) ** 2 * c * c + 4.0 * d * s * s)
    return 0.5 * ((c1 + c2) * c - rad), 0.5 * ((c1 + c2) * c + rad)


def soh_linear_speeds(c1: float, c2: float, d: float, theta: float, rho0: float = 1.0) -> Tuple[float, float]:
    """
    Characteristic speeds of the soh model linearized about (rho0, Omega0) for waves along a direction at angle
    theta from Omega0. The pressure term enters with the product c1 d.

    :return: (slow, fast)
    """
    if d <= 0 or rho0 <= 0:
        raise ValueError(f"d and rho0 must be positive, got {d}, {rho0}")
    c, s = math.cos(theta), math.sin(theta)
    jac = np.array([[c1 * c, -c1 * rho0 * s],
                    [-(d / rho0) * s, c2 * c]])
    ev = np.sort(np.real(np.linalg.eigvals(jac)))
    return float(ev[0]), float(ev[1])


# ======================================================================================================================
# Stencils
# ======================================================================================================================

def _axis_components(phi: np.ndarray, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Components of Omega and Omega_perp = (-sin phi, cos phi) along the sweep axis.
    """
    if axis == 0:
        return np.cos(phi), -np.sin(phi)
    return np.sin(phi), np.cos(phi)


def _rusanov(q: np.ndarray, f: np.ndarray, a: np.ndarray, dt: float, h: float, axis: int) -> np.ndarray:
    f_face = 0.5 * (f + np.roll(f, -1, axis)) - 0.5 * np.maximum(a, np.roll(a, -1, axis)) * (np.roll(q, -1, axis) - q)
    return q - dt / h * (f_face - np.roll(f_face, 1, axis))


def _central(q: np.ndarray, h: float, axis: int) -> np.ndarray:
    return (np.roll(q, -1, axis) - np.roll(q, 1, axis)) / (2.0 * h)


def _phi_increment(phi: np.ndarray, u: np.ndarray, a: np.ndarray, src: np.ndarray, dt: float, h: float,
                   axis: int) -> np.ndarray:
    dp = angle_diff(np.roll(phi, -1, axis), phi)
    dm = angle_diff(phi, np.roll(phi, 1, axis))
    return -dt * (u * (dp + dm) / (2.0 * h) - a * (dp - dm) / (2.0 * h) + src)


def _sweeps(grid: HydroGrid):
    yield 0, grid.dx
    if not grid.is_1d:
        yield 1, grid.dy


def check_cfl(dt: float, speed: float, grid: HydroGrid):
    """
    :raises CflError: if dt * speed * (1 / dx + 1 / dy) > 0.45
    """
    if dt <= 0:
        raise CflError(f"dt must be positive, got {dt}")
    number = dt * speed * grid.inverse_spacing()
    if number > CFL_LIMIT:
        raise CflError(f"CFL number {number:.3f} exceeds {CFL_LIMIT} (dt={dt}, speed={speed:.4g}, "
                       f"dx={grid.dx:.4g}, dy={grid.dy:.4g})")


def max_stable_dt(speed: float, grid: HydroGrid, cfl: float = 0.4) -> float:
    return cfl / (speed * grid.inverse_spacing())


def _vacuum(rho: np.ndarray) -> np.ndarray:
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise VacuumError(f"Non positive density in {int(np.count_nonzero(~(rho > 0)))} cells")
    return rho < VACUUM_FRACTION * float(np.mean(rho))


# ======================================================================================================================
# soh, sohr_s, reduced
# ======================================================================================================================

def _sweep_scalar(rho, rho_y, phi, frozen, dt, h, axis, c1, c2, pressure, zeta=0.0, c34=0.0, c6=0.0):
    e, ep = _axis_components(phi, axis)
    s = math.sqrt(abs(c1 * pressure))

    a_rho = np.abs(c1 * e) + s * np.abs(ep)
    rho_n = _rusanov(rho, c1 * rho * e, a_rho, dt, h, axis)
    rho_y_n = _rusanov(rho_y, c1 * rho_y * e, a_rho, dt, h, axis)

    with np.errstate(divide="ignore", invalid="ignore"):
        u = c2 * e
        src = pressure / rho * ep * _central(rho, h, axis)
        if zeta != 0.0:
            u = u + zeta * (rho_y / rho) * c34 * ep
            src = src + zeta * c6 / rho * e * _central(rho_y, h, axis)
    a_phi = np.abs(u) + s * np.abs(ep)
    phi_n = np.where(frozen, phi, phi + _phi_increment(phi, u, a_phi, src, dt, h, axis))
    return rho_n, rho_y_n, phi_n


def _step_scalar(state: HydroStateS, dt: float, c2: float, pressure: float, rotation: bool, speed: float,
                 zeta: float = 0.0, c34: float = 0.0, c6: float = 0.0) -> HydroStateS:
    check_cfl(dt, speed, state.grid)
    frozen = _vacuum(state.rho)
    rho, rho_y, phi = state.rho, state.rho_y, state.phi
    for axis, h in _sweeps(state.grid):
        rho, rho_y, phi = _sweep_scalar(rho, rho_y, phi, frozen, dt, h, axis, state.c1, c2, pressure, zeta, c34, c6)

    if rotation:
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.where(frozen, phi, phi + dt * rho_y / rho)
    _vacuum(rho)
    return replace(state, rho=rho, rho_y=rho_y, phi=wrap_angle(phi), time=state.time + dt)


def step_sohr_s(state: HydroStateS, dt: float, model: Union[HydroModel, str] = HydroModel.SOHR_S) -> HydroStateS:
    """
    One step of the sohr_s model (or of soh, which ignores the rotation source).

    :param state: current state
    :param dt: time step
    :param model: sohr_s or soh
    :return: the new state
    :raises CflError: if dt * max(|c1|, |c2|, sqrt(d)) * (1 / dx + 1 / dy) > 0.45
    :raises VacuumError: if a cell density is not positive
    """
    model = HydroModel(model)
    if model not in (HydroModel.SOH, HydroModel.SOHR_S):
        raise ValueError(f"step_sohr_s does not handle model {model.value}")
    speed = max(abs(state.c1), abs(state.c2), math.sqrt(state.d))
    return _step_scalar(state, dt, state.c2, state.d, model == HydroModel.SOHR_S, speed)


def step_reduced(state: HydroStateS, zeta: float, coeffs: SmallZetaCoefficients, dt: float) -> HydroStateS:
    """
    One step of the small zeta model: soh with pressure c5 plus the order zeta terms
    zeta Y (c3 + c4) (Omega_perp.grad) phi and (zeta c6 / rho) (Omega.grad)(rho Y). At zeta = 0 this is the soh
    update with d replaced by c5.
    """
    if zeta < 0:
        raise ValueError(f"zeta must be non negative, got {zeta}")
    c34 = coeffs.c3 + coeffs.c4
    with np.errstate(divide="ignore", invalid="ignore"):
        y_max = float(np.max(np.abs(state.rho_y / state.rho)))
    speed = max(abs(state.c1), abs(coeffs.c2) + zeta * y_max * abs(c34), math.sqrt(abs(coeffs.c5)))
    return _step_scalar(state, dt, coeffs.c2, coeffs.c5, False, speed, zeta, c34, coeffs.c6)


# ======================================================================================================================
# sohr_l
# ======================================================================================================================

def _l_moments(table: CoefficientTable, rho_w: np.ndarray, frozen: np.ndarray):
    m = moment_fields(table, rho_w)
    bad = (m[0] <= 0) & ~frozen
    if np.any(bad):
        raise PositivityError(f"m1 ≤ 0 in {int(np.count_nonzero(bad))} occupied cells (min {float(m[0].min()):.3e})")
    m5c = np.tensordot(table.a[:, 4] * table.c1_tilde, rho_w, axes=(0, 0)) * table.dw
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(frozen, 0.0, np.sqrt(np.maximum(m5c, 0.0) / m[0]))
    return m, s


def l_wave_speed(state: HydroStateL) -> float:
    """
    max(c1_tilde, |m2 / m1| + |m3 / m1| + |m4 / m1| + sqrt(m5[c1_tilde rho_W] / m1)) over the occupied cells.
    """
    frozen = _vacuum(state.rho)
    m, s = _l_moments(state.table, state.rho_w, frozen)
    with np.errstate(divide="ignore", invalid="ignore"):
        conv = (np.abs(m[1]) + np.abs(m[2]) + np.abs(m[3])) / m[0] + s
    conv = np.where(frozen, 0.0, conv)
    return max(float(np.max(np.abs(state.table.c1_tilde))), float(np.max(conv)))


def step_sohr_l(state: HydroStateL, dt: float) -> HydroStateL:
    """
    One step of the sohr_l model. Every W bin is transported with c1_tilde(W) Omega; the direction follows

        m1 phi_t + m2 (Omega.grad) phi + (m3 + m4) (Omega_perp.grad) phi + (Omega_perp.grad) m5 + (Omega.grad) m6 = 0

    with the moments recomputed from the table before each sweep.

    :raises CflError: on a too large step
    :raises VacuumError: on non positive cells or negative bins
    :raises PositivityError: if m1 ≤ 0 in an occupied cell
    """
    table = state.table
    if state.rho_w.shape[0] != table.n_w:
        raise ValueError(f"Density has {state.rho_w.shape[0]} W bins, table has {table.n_w}")
    if np.any(state.rho_w < 0):
        raise VacuumError("Negative W bin density")
    check_cfl(dt, l_wave_speed(state), state.grid)

    frozen = _vacuum(state.rho)
    c1t = table.c1_tilde[:, None, None]
    rho_w, phi = state.rho_w, state.phi
    for axis, h in _sweeps(state.grid):
        m, s = _l_moments(table, rho_w, frozen)
        e, ep = _axis_components(phi, axis)

        bin_axis = axis + 1
        a_bins = np.abs(c1t * e[None]) + (s * np.abs(ep))[None]
        rho_w_n = _rusanov(rho_w, c1t * rho_w * e[None], a_bins, dt, h, bin_axis)

        with np.errstate(divide="ignore", invalid="ignore"):
            u = (m[1] * e + (m[2] + m[3]) * ep) / m[0]
            src = (ep * _central(m[4], h, axis) + e * _central(m[5], h, axis)) / m[0]
        u = np.where(frozen, 0.0, u)
        src = np.where(frozen, 0.0, src)
        a_phi = np.abs(u) + s * np.abs(ep)
        phi = np.where(frozen, phi, phi + _phi_increment(phi, u, a_phi, src, dt, h, axis))
        rho_w = rho_w_n

    if np.any(rho_w < 0):
        raise VacuumError("Negative W bin density after the step")
    _vacuum(np.sum(rho_w, axis=0))
    return replace(state, rho_w=rho_w, phi=wrap_angle(phi), time=state.time + dt)


# ======================================================================================================================
# Construction, driving and measurement
# ======================================================================================================================

def state_s(grid: HydroGrid, rho, phi, c1: float, c2: float, d: float, y=0.0) -> HydroStateS:
    """
    Build a state from scalars or arrays broadcastable to the grid.
    """
    rho = np.array(np.broadcast_to(rho, grid.shape), dtype=float)
    phi = wrap_angle(np.array(np.broadcast_to(phi, grid.shape), dtype=float))
    rho_y = rho * np.broadcast_to(y, grid.shape)
    if d <= 0:
        raise ValueError(f"d must be positive, got {d}")
    _vacuum(rho)
    return HydroStateS(grid=grid, rho=rho, rho_y=np.array(rho_y, dtype=float), phi=phi, c1=c1, c2=c2, d=d)


def state_l(grid: HydroGrid, rho_w: Union[WDensity, np.ndarray], phi, table: CoefficientTable) -> HydroStateL:
    """
    Build a state from a W density (uniform in space) or a field of shape (n_w, nx, ny).
    """
    if isinstance(rho_w, WDensity):
        table.check_density(rho_w)
        field_w = np.array(np.broadcast_to(rho_w.values[:, None, None], (table.n_w,) + grid.shape))
    else:
        field_w = np.array(rho_w, dtype=float).reshape((table.n_w,) + grid.shape)
    if np.any(field_w < 0):
        raise ValueError("W densities must be non negative")
    phi = wrap_angle(np.array(np.broadcast_to(phi, grid.shape), dtype=float))
    state = HydroStateL(grid=grid, rho_w=field_w, phi=phi, table=table)
    _vacuum(state.rho)
    return state


def total_mass(state: HydroState) -> float:
    return float(np.sum(state.rho) * state.grid.cell_area)


def bin_masses_field(state: HydroStateL) -> np.ndarray:
    """
    Total mass per W bin.
    """
    return np.sum(state.rho_w, axis=(1, 2)) * state.grid.cell_area


def run_hydro(state: HydroState, stepper: Callable[[HydroState, float], HydroState], dt: float, t_end: float,
              callback: Optional[Callable[[HydroState], None]] = None, every: int = 0,
              should_continue: Optional[Callable[[], bool]] = None) -> HydroState:
    """
    Advance with a fixed step until t_end, the last step is shortened to land on t_end.
    """
    n_steps = int(math.ceil((t_end - state.time) / dt - 1e-9))
    quarter = max(n_steps // 4, 1)
    for i in range(n_steps):
        if should_continue is not None and not should_continue():
            logger.info(f"Hydro run interrupted at t={state.time:.4g}")
            break
        state = stepper(state, min(dt, t_end - state.time))
        if callback is not None and every > 0 and (i + 1) % every == 0:
            callback(state)
        if (i + 1) % quarter == 0:
            logger.debug(f"Hydro step {i + 1} of {n_steps}, t={state.time:.4g}")
    return state


def fourier_coefficient(values: np.ndarray, mode: int) -> complex:
    """
    Complex amplitude of e^{2 pi i mode x / L} of a 1D periodic signal.
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.shape[0]
    return complex(np.sum(values * np.exp(-2j * math.pi * mode * np.arange(n) / n)) / n)


def phase_speed(before: complex, after: complex, wavenumber: float, elapsed: float) -> float:
    """
    Speed of a travelling mode from the phase change of its Fourier amplitude, |phase change| < pi assumed.
    """
    return -float(np.angle(after / before)) / (wavenumber * elapsed)


def oscillation_frequency(times: np.ndarray, signal: np.ndarray) -> float:
    """
    Angular frequency from the spacing of the zero crossings of a standing wave amplitude.
    """
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    idx = np.nonzero(np.signbit(signal[:-1]) != np.signbit(signal[1:]))[0]
    if idx.shape[0] < 2:
        raise ValueError("Need at least two zero crossings to measure a frequency")
    t0, t1, s0, s1 = times[idx], times[idx + 1], signal[idx], signal[idx + 1]
    crossings = t0 - s0 * (t1 - t0) / (s1 - s0)
    return math.pi / float(np.mean(np.diff(crossings)))


def y_centroid(state: HydroState, background: float = 0.0) -> float:
    """
    Periodic centroid along x of rho Y - background.
    """
    prof = np.sum(state.rho_y, axis=1) - background
    grid = state.grid
    x, _ = grid.centers()
    ang = 2.0 * math.pi * x[:, 0] / grid.lx
    z = np.sum(prof * np.exp(1j * ang))
    return float(np.mod(np.angle(z), 2.0 * math.pi) * grid.lx / (2.0 * math.pi))


SNAPSHOT_COLUMNS = ["x", "y", "rho", "rho_y", "phi"]


def write_snapshot(path: str, state: HydroState, params: Optional[dict] = None):
    """
    Cell centers with rho, rho Y and phi, one row per cell in x major order.
    """
    x, y = state.grid.centers()
    data = np.column_stack([x.ravel(), y.ravel(), state.rho.ravel(), state.rho_y.ravel(), state.phi.ravel()])
    header = {"nx": state.grid.nx, "ny": state.grid.ny, "lx": state.grid.lx, "ly": state.grid.ly,
              "time": state.time}
    header.update(params or {})
    write_csv(path, SNAPSHOT_COLUMNS, data, header)


def write_snapshot_binary(path: str, state: HydroState, params: Optional[dict] = None) -> Tuple[str, str]:
    """
    2D snapshot as raw little endian float64 (rho, rho Y, phi planes, each nx * ny in x major order) with a CSV
    sidecar holding the header line and the plane names.

    :return: paths of the binary file and of the sidecar
    """
    planes = np.stack([state.rho, state.rho_y, state.phi]).astype("<f8")
    bin_path = path + ".bin"
    planes.tofile(bin_path)
    header = {"nx": state.grid.nx, "ny": state.grid.ny, "lx": state.grid.lx, "ly": state.grid.ly,
              "time": state.time, "dtype": "<f8", "file": os.path.basename(bin_path)}
    header.update(params or {})
    side_path = path + ".csv"
    write_csv(side_path, ["rho", "rho_y", "phi"], np.zeros((0, 3)), header)
    return bin_path, side_path


def read_snapshot_binary(path: str) -> Tuple[Dict[str, str], np.ndarray]:
    """
    Read a snapshot written by write_snapshot_binary, `path` without extension.

    :return: header parameters, planes of shape (3, nx, ny)
    """
    params, _, _ = read_csv(path + ".csv")
    nx, ny = int(params["nx"]), int(params["ny"])
    planes = np.fromfile(path + ".bin", dtype="<f8")
    if planes.shape[0] != 3 * nx * ny:
        raise ValueError(f"{path}.bin holds {planes.shape[0]} values, expected {3 * nx * ny}")
    return params, planes.reshape(3, nx, ny)
