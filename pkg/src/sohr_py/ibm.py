import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from sohr_py.angular_kernel import AngularGrid, TWO_PI, bin_masses
from sohr_py.coefficients import CoefficientTable
from sohr_py.utils import read_csv, wrap_angle, write_csv

"""
Individual based model: N self propelled particles in a periodic square box, each with its own intrinsic angular
velocity w_k, aligning with the local mean heading of the particles within distance R.

    d theta_k = nu sin(target_k - theta_k) dt + w_k dt + sqrt(2 D) dB_k,    dX_k = c V_k dt

target_k is the direction of the neighbor flux J_k (law S), or that direction rotated by -psi(w_k / nu) (law L).
"""

logger = logging.getLogger(__name__)

STABILITY_LIMIT = 0.05
ZERO_FLUX_TOL = 1e-12
DEFAULT_CHUNK = 4096


class ForceLaw(str, Enum):
    S = "S"
    L = "L"


class IbmParams(BaseModel):
    """
    Physical parameters of the particle system
    """
    nu: float = Field(1.0,
                      gt=0,
                      description="Alignment rate 1/time")
    diff: float = Field(0.2,
                        ge=0,
                        description="Angular diffusivity D in rad^2/time")
    speed: float = Field(1.0,
                         ge=0,
                         description="Self propulsion speed c")
    radius: float = Field(1.0,
                          gt=0,
                          description="Interaction radius R")
    box: float = Field(10.0,
                       gt=0,
                       description="Side L of the periodic square box")
    dt: float = Field(0.02,
                      gt=0,
                      description="Time step")
    zero_flux_tol: float = Field(ZERO_FLUX_TOL,
                                 ge=0,
                                 description="Alignment is switched off when |J_k| < tol * count_k / N")

    model_config = ConfigDict(
        populate_by_name=True,
        frozen=True
    )

    @model_validator(mode="after")
    def check_alignment_step(self):
        if self.dt * self.nu > STABILITY_LIMIT:
            raise ValueError(f"dt * nu = {self.dt * self.nu} exceeds the stability guard {STABILITY_LIMIT}")
        return self

    @property
    def d(self) -> float:
        """
        Dimensionless diffusivity D / nu.
        """
        return self.diff / self.nu


@dataclass(frozen=True)
class ParticleSystem:
    pos: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    params: IbmParams
    law: ForceLaw = ForceLaw.S
    psi: Optional[np.ndarray] = field(default=None, repr=False)
    seed: int = 0
    step_count: int = 0

    @property
    def n(self) -> int:
        return int(self.theta.shape[0])

    @property
    def time(self) -> float:
        return self.step_count * self.params.dt

    def headings(self) -> np.ndarray:
        return np.column_stack((np.cos(self.theta), np.sin(self.theta)))


@dataclass(frozen=True)
class Observables:
    time: float
    flux: Tuple[float, float]
    order: float
    mean_direction: float
    w_edges: Optional[np.ndarray] = field(default=None, repr=False)
    w_counts: Optional[np.ndarray] = field(default=None, repr=False)
    histograms: Optional[np.ndarray] = field(default=None, repr=False)
    density: Optional[np.ndarray] = field(default=None, repr=False)
    flux_field: Optional[np.ndarray] = field(default=None, repr=False)


def make_system(pos: np.ndarray, theta: np.ndarray, w: np.ndarray, params: IbmParams,
                law: ForceLaw = ForceLaw.S, psi_table: Optional[CoefficientTable] = None,
                seed: int = 0, step_count: int = 0) -> ParticleSystem:
    """
    Validate and freeze a particle system.

    :param pos: positions, shape (n, 2), wrapped into the box
    :param theta: headings, wrapped to [0, 2 pi)
    :param w: intrinsic angular velocities, never modified afterwards
    :param params: physical parameters
    :param law: S aligns with the flux direction, L with the flux direction rotated by -psi(w / nu)
    :param psi_table: coefficient table at d = D / nu, required for law L
    :param seed: key of the counter based noise
    :param step_count: steps already taken
    :return: the system
    :raises ValueError: on shape mismatches, stability guard violations, missing or mismatching psi table
    """
    law = ForceLaw(law)
    pos = np.array(pos, dtype=float).reshape(-1, 2)
    theta = np.array(theta, dtype=float).ravel()
    w = np.array(w, dtype=float).ravel()
    n = theta.shape[0]
    if pos.shape[0] != n or w.shape[0] != n:
        raise ValueError(f"Inconsistent particle arrays: pos {pos.shape}, theta {theta.shape}, w {w.shape}")
    if n == 0:
        raise ValueError("Particle system is empty")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(theta)) and np.all(np.isfinite(w))):
        raise ValueError("Particle arrays must be finite")

    w_abs = float(np.max(np.abs(w)))
    if params.dt * w_abs > STABILITY_LIMIT:
        raise ValueError(f"dt * max|w| = {params.dt * w_abs} exceeds the stability guard {STABILITY_LIMIT}")

    psi = None
    if law == ForceLaw.L:
        if psi_table is None:
            raise ValueError("Force law L requires a psi table")
        if not math.isclose(psi_table.d, params.d, rel_tol=1e-9):
            raise ValueError(f"psi table belongs to d={psi_table.d}, particles have D / nu = {params.d}")
        if psi_table.zeta != 1.0:
            raise ValueError(f"psi table must be built with zeta=1, got {psi_table.zeta}")
        psi = np.asarray(psi_table.psi_at(w / params.nu), dtype=float).reshape(n)
        psi.setflags(write=False)

    pos = np.mod(pos, params.box)
    pos[pos >= params.box] = 0.0
    w.setflags(write=False)
    return ParticleSystem(pos=pos, theta=wrap_angle(theta), w=w, params=params, law=law, psi=psi, seed=int(seed),
                          step_count=int(step_count))


def random_system(n: int, params: IbmParams, w: np.ndarray, law: ForceLaw = ForceLaw.S,
                  psi_table: Optional[CoefficientTable] = None, seed: int = 0,
                  aligned: bool = False) -> ParticleSystem:
    """
    Uniform positions, uniform (or all zero) headings.
    """
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, params.box, size=(n, 2))
    theta = np.zeros(n) if aligned else rng.uniform(0.0, TWO_PI, size=n)
    return make_system(pos, theta, np.broadcast_to(w, (n,)), params, law, psi_table, seed)


# ======================================================================================================================
# Neighbor flux
# ======================================================================================================================

def _min_image(delta: np.ndarray, box: float) -> np.ndarray:
    return delta - box * np.round(delta / box)


def _flux_brute_chunk(pos: np.ndarray, heads: np.ndarray, rows: np.ndarray, box: float, radius: float):
    dx = _min_image(pos[None, :, 0] - pos[rows, None, 0], box)
    dy = _min_image(pos[None, :, 1] - pos[rows, None, 1], box)
    mask = (dx * dx + dy * dy) <= radius * radius
    return mask @ heads[:, 0], mask @ heads[:, 1], mask.sum(axis=1)


@dataclass(frozen=True)
class _CellList:
    m: int
    order: np.ndarray
    starts: np.ndarray
    counts: np.ndarray
    cx: np.ndarray
    cy: np.ndarray


def _build_cells(pos: np.ndarray, box: float, m: int) -> _CellList:
    cx = np.minimum((pos[:, 0] / box * m).astype(np.int64), m - 1)
    cy = np.minimum((pos[:, 1] / box * m).astype(np.int64), m - 1)
    cell = cx * m + cy
    order = np.argsort(cell, kind="stable")
    counts = np.bincount(cell, minlength=m * m)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return _CellList(m=m, order=order, starts=starts, counts=counts, cx=cx, cy=cy)


def _flux_grid_chunk(pos: np.ndarray, heads: np.ndarray, rows: np.ndarray, box: float, radius: float,
                     cells: _CellList):
    n_rows = rows.shape[0]
    local = np.arange(n_rows)
    jx = np.zeros(n_rows)
    jy = np.zeros(n_rows)
    cnt = np.zeros(n_rows, dtype=np.int64)
    m = cells.m

    for ox in (-1, 0, 1):
        for oy in (-1, 0, 1):
            nb = ((cells.cx[rows] + ox) % m) * m + (cells.cy[rows] + oy) % m
            per = cells.counts[nb]
            total = int(per.sum())
            if total == 0:
                continue

            # Candidate pairs (row, j) for all particles j of the neighbor cell
            owner = np.repeat(local, per)
            within = np.arange(total) - np.repeat(np.cumsum(per) - per, per)
            cand = cells.order[np.repeat(cells.starts[nb], per) + within]

            dx = _min_image(pos[cand, 0] - pos[rows[owner], 0], box)
            dy = _min_image(pos[cand, 1] - pos[rows[owner], 1], box)
            hit = (dx * dx + dy * dy) <= radius * radius
            owner, cand = owner[hit], cand[hit]

            jx += np.bincount(owner, weights=heads[cand, 0], minlength=n_rows)
            jy += np.bincount(owner, weights=heads[cand, 1], minlength=n_rows)
            cnt += np.bincount(owner, minlength=n_rows)
    return jx, jy, cnt


def neighbor_flux_all(pos: np.ndarray, theta: np.ndarray, box: float, radius: float, method: str = "grid",
                      pool: Optional[Executor] = None, chunk: int = DEFAULT_CHUNK) \
        -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    J_k = (1 / N) sum_{j, |X_j - X_k| ≤ R} V_j for every particle, particle k included, min image metric.

    :param pos: positions (n, 2) in [0, L)^2
    :param theta: headings
    :param box: side L
    :param radius: R
    :param method: "grid" (cell list, falls back to brute force for less than 3 cells per side) or "brute"
    :param pool: executor for particle chunks, serial if None
    :param chunk: particles per chunk
    :return: (Jx, Jy, neighbor count)
    """
    n = theta.shape[0]
    heads = np.column_stack((np.cos(theta), np.sin(theta)))

    if method == "grid" and radius >= box * math.sqrt(2.0) / 2.0:
        # Every pair is within R under the min image metric
        total = heads.sum(axis=0) / n
        return np.full(n, total[0]), np.full(n, total[1]), np.full(n, n, dtype=np.int64)

    m = int(math.floor(box / radius))
    if method == "grid" and m >= 3:
        cells = _build_cells(pos, box, m)

        def work(rows):
            return _flux_grid_chunk(pos, heads, rows, box, radius, cells)
    elif method in ("grid", "brute"):
        chunk = min(chunk, max(1, 2 ** 24 // max(n, 1)))

        def work(rows):
            return _flux_brute_chunk(pos, heads, rows, box, radius)
    else:
        raise ValueError(f"Unknown neighbor search method {method}")

    blocks = [np.arange(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    parts = list(pool.map(work, blocks)) if pool is not None else [work(b) for b in blocks]
    jx = np.concatenate([p[0] for p in parts]) / n
    jy = np.concatenate([p[1] for p in parts]) / n
    cnt = np.concatenate([p[2] for p in parts]).astype(np.int64)
    return jx, jy, cnt


def neighbor_flux(system: ParticleSystem, k: int) -> Tuple[float, float]:
    """
    J_k of a single particle.
    """
    if not 0 <= k < system.n:
        raise IndexError(f"Particle index {k} out of range for {system.n} particles")
    p = system.params
    delta = _min_image(system.pos - system.pos[k], p.box)
    mask = np.hypot(delta[:, 0], delta[:, 1]) <= p.radius
    return (float(np.sum(np.cos(system.theta[mask])) / system.n),
            float(np.sum(np.sin(system.theta[mask])) / system.n))


# ======================================================================================================================
# Time stepping
# ======================================================================================================================

def gaussian_noise(seed: int, step: int, n: int) -> np.ndarray:
    """
    Standard normal increments for `step`. Particle k always uses the raw outputs 2k and 2k + 1 of the Philox stream
    keyed by the seed with the step in the counter, so its noise does not depend on N or on the chunking.
    """
    bitgen = np.random.Philox(key=int(seed), counter=np.array([0, 0, int(step), 0], dtype=np.uint64))
    raw = bitgen.random_raw(2 * n)
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


def step(system: ParticleSystem, pool: Optional[Executor] = None, method: str = "grid") -> ParticleSystem:
    """
    One Euler-Maruyama step. Phase one computes every J_k from the current snapshot, phase two writes the new
    headings and advances the positions along them.

    :param system: current state
    :param pool: optional executor for the neighbor flux
    :param method: neighbor search, see neighbor_flux_all
    :return: the new state, w and psi are shared
    """
    p = system.params
    n = system.n
    jx, jy, cnt = neighbor_flux_all(system.pos, system.theta, p.box, p.radius, method=method, pool=pool)

    norm = np.hypot(jx, jy)
    aligned = norm >= p.zero_flux_tol * cnt / n
    target = np.arctan2(jy, jx)
    if system.law == ForceLaw.L:
        target = target - system.psi
    align = np.where(aligned, p.nu * np.sin(target - system.theta), 0.0)

    noise = math.sqrt(2.0 * p.diff * p.dt) * gaussian_noise(system.seed, system.step_count, n) \
        if p.diff > 0 else 0.0
    theta = wrap_angle(system.theta + p.dt * (align + system.w) + noise)

    pos = system.pos + p.speed * p.dt * np.column_stack((np.cos(theta), np.sin(theta)))
    pos = np.mod(pos, p.box)
    pos[pos >= p.box] = 0.0
    return replace(system, pos=pos, theta=theta, step_count=system.step_count + 1)


def run(system: ParticleSystem, n_steps: int, pool: Optional[Executor] = None,
        callback: Optional[Callable[[ParticleSystem], None]] = None, every: int = 0,
        should_continue: Optional[Callable[[], bool]] = None) -> ParticleSystem:
    """
    Advance n_steps, calling callback every `every` steps (and after the last one).
    """
    quarter = max(n_steps // 4, 1)
    for i in range(n_steps):
        if should_continue is not None and not should_continue():
            logger.info(f"IBM run interrupted after {i} of {n_steps} steps")
            break
        system = step(system, pool)
        if callback is not None and every > 0 and (i + 1) % every == 0:
            callback(system)
        if (i + 1) % quarter == 0:
            logger.debug(f"IBM step {i + 1} of {n_steps}")
    return system


# ======================================================================================================================
# Observables
# ======================================================================================================================

def observables(system: ParticleSystem, w_bins: Optional[np.ndarray] = None,
                space_grid: Optional[Tuple[int, int]] = None, n_angle_bins: int = 64) -> Observables:
    """
    Global flux, order parameter, mean direction, angular histograms per W bin and coarse fields.

    :param system: state
    :param w_bins: edges of the W bins, increasing
    :param space_grid: (nx, ny) cells for the density and flux fields
    :param n_angle_bins: angular bins of the histograms on [0, 2 pi)
    :return: the observables
    """
    n = system.n
    if n == 0:
        raise ValueError("Observables of an empty system")
    jx = float(np.sum(np.cos(system.theta)) / n)
    jy = float(np.sum(np.sin(system.theta)) / n)
    order = min(math.hypot(jx, jy), 1.0)
    mean_dir = wrap_angle(math.atan2(jy, jx))

    w_counts = hists = density = flux_field = None
    edges = None
    if w_bins is not None:
        edges = np.asarray(w_bins, dtype=float)
        if edges.ndim != 1 or edges.shape[0] < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("W bin edges must be strictly increasing with at least two entries")
        a_edges = np.linspace(0.0, TWO_PI, n_angle_bins + 1)
        hists, _, _ = np.histogram2d(system.w, system.theta, bins=(edges, a_edges))
        hists = hists.astype(np.int64)
        w_counts = hists.sum(axis=1)

    if space_grid is not None:
        nx, ny = int(space_grid[0]), int(space_grid[1])
        if nx < 1 or ny < 1:
            raise ValueError(f"Space grid must have positive dimensions, got {space_grid}")
        box = system.params.box
        area = (box / nx) * (box / ny)
        s_edges = (np.linspace(0.0, box, nx + 1), np.linspace(0.0, box, ny + 1))
        counts, _, _ = np.histogram2d(system.pos[:, 0], system.pos[:, 1], bins=s_edges)
        fx, _, _ = np.histogram2d(system.pos[:, 0], system.pos[:, 1], bins=s_edges, weights=np.cos(system.theta))
        fy, _, _ = np.histogram2d(system.pos[:, 0], system.pos[:, 1], bins=s_edges, weights=np.sin(system.theta))
        density = counts / area
        flux_field = np.stack((fx / area, fy / area))

    return Observables(time=system.time, flux=(jx, jy), order=order, mean_direction=mean_dir, w_edges=edges,
                       w_counts=w_counts, histograms=hists, density=density, flux_field=flux_field)


def relative_histogram(system: ParticleSystem, frame: float, n_bins: int = 64) -> np.ndarray:
    """
    Fraction of particles per angular bin of theta - frame.
    """
    rel = wrap_angle(system.theta - frame)
    counts, _ = np.histogram(rel, bins=np.linspace(0.0, TWO_PI, n_bins + 1))
    return counts / system.n


def equilibrium_distance(system: ParticleSystem, profile: np.ndarray, grid: AngularGrid, psi: float = 0.0,
                         n_bins: int = 64) -> float:
    """
    L1 distance between the heading histogram in the frame (mean direction - psi) and the bin masses of the
    equilibrium profile.
    """
    obs = observables(system)
    hist = relative_histogram(system, obs.mean_direction - psi, n_bins)
    return histogram_distance(hist, profile, grid)


def histogram_distance(hist: np.ndarray, profile: np.ndarray, grid: AngularGrid) -> float:
    """
    L1 distance between bin fractions (possibly averaged over snapshots) and the bin masses of a profile.
    """
    return float(np.sum(np.abs(hist - bin_masses(profile, grid, hist.shape[0]))))


# ======================================================================================================================
# Checkpoints
# ======================================================================================================================

CHECKPOINT_COLUMNS = ["x", "y", "theta", "w"]
OBSERVABLE_COLUMNS = ["time", "jx", "jy", "order", "mean_direction"]


def checkpoint_params(system: ParticleSystem) -> dict:
    params = system.params.model_dump()
    params.update({"n": system.n, "law": system.law.value, "seed": system.seed, "step": system.step_count})
    return params


def write_checkpoint(path: str, system: ParticleSystem):
    data = np.column_stack((system.pos, system.theta, system.w))
    write_csv(path, CHECKPOINT_COLUMNS, data, checkpoint_params(system))


def read_checkpoint(path: str, psi_table: Optional[CoefficientTable] = None) -> ParticleSystem:
    """
    Restore a system written by write_checkpoint. Law L needs the psi table again.
    """
    params, columns, data = read_csv(path)
    if columns != CHECKPOINT_COLUMNS:
        raise ValueError(f"{path} is not a particle checkpoint, columns {columns}")
    ibm_params = IbmParams(**{k: float(params[k]) for k in IbmParams.model_fields if k in params})
    return make_system(data[:, 0:2], data[:, 2], data[:, 3], ibm_params, ForceLaw(params["law"]), psi_table,
                       seed=int(params["seed"]), step_count=int(params["step"]))


def observable_row(obs: Observables) -> List[float]:
    return [obs.time, obs.flux[0], obs.flux[1], obs.order, obs.mean_direction]
