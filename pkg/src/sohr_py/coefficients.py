import logging
import math
import traceback
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from sohr_py.angular_kernel import OverflowGuardError, TWO_PI, periodic_grid, trapezoid_periodic
from sohr_py.datatransfer import TableNodeArg, TableNodeResult
from sohr_py.gci import GciProfile, PerturbationProfiles, Scheme, solve_gci
from sohr_py.gvm import EXPONENT_GUARD, GvmProfile, solve_gvm
from sohr_py.utils import read_csv, write_csv
from sohr_py.vmf import DEFAULT_N, check_noise

"""
Hydrodynamic coefficients a1 ... a6 of the SOHR-L model, their tabulation over a symmetric W grid, the moments
m_k[rho_W] = int a_k(W) rho_W dW and the first order coefficients of the small zeta expansion.
"""

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["w", "a1", "a2", "a3", "a4", "a5", "a6", "c1_tilde", "psi", "lambda"]
EVEN_COLUMNS = ("a1", "a2", "a5", "c1_tilde", "lambda")
ODD_COLUMNS = ("a3", "a4", "a6", "psi")

NodeRunner = Callable[[List[TableNodeArg]], List[TableNodeResult]]


@dataclass(frozen=True)
class AVector:
    w: float
    d: float
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float
    a6: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3, self.a4, self.a5, self.a6])


def compute_avector(gvm: GvmProfile, gci: GciProfile) -> AVector:
    """
    The six coefficients by quadrature, including the C(W) corrections of a2 and a3.

    :param gvm: equilibrium at (d, w)
    :param gci: collision invariant at the same (d, w) and grid
    :return: the coefficients
    :raises ArithmeticError: if lambda vanishes
    """
    if gvm.grid.n != gci.grid.n or gvm.d != gci.d or gvm.w != gci.w:
        raise ValueError(f"Equilibrium (d={gvm.d}, w={gvm.w}, n={gvm.grid.n}) and collision invariant "
                         f"(d={gci.d}, w={gci.w}, n={gci.grid.n}) do not match")
    if abs(gvm.lam) < 1e-12:
        raise ArithmeticError(f"Degenerate normalization lambda={gvm.lam:.3e} (d={gvm.d}, w={gvm.w})")

    grid = gvm.grid
    th = grid.nodes
    d, w, lam, c = gvm.d, gvm.w, gvm.lam, gvm.c_const
    phi_x = gvm.phi * gci.x
    drift = np.sin(th) - w
    sin_p = np.sin(th - gvm.psi)
    cos_p = np.cos(th - gvm.psi)

    def q(values):
        return float(trapezoid_periodic(values, grid))

    a1 = q(drift * phi_x) / (lam * d)
    a2 = q(drift * cos_p * phi_x) / (lam * d) - c / lam * q(cos_p * gci.x)
    a3 = q(drift * sin_p * phi_x) / (lam * d) - c / lam * q(sin_p * gci.x)
    a4 = -gvm.c1_tilde * q(phi_x)
    a5 = q(sin_p * phi_x)
    a6 = q((cos_p - gvm.c1_tilde) * phi_x)
    return AVector(w=w, d=d, a1=a1, a2=a2, a3=a3, a4=a4, a5=a5, a6=a6)


# ======================================================================================================================
# W grid and densities
# ======================================================================================================================

def w_midpoints(w_max: float, n_w: int) -> Tuple[np.ndarray, float]:
    """
    Midpoints of n_w equal cells on [-w_max, w_max], exactly antisymmetric.
    """
    if n_w < 2 or n_w % 2 != 0:
        raise ValueError(f"n_w must be even and ≥ 2, got {n_w}")
    if w_max <= 0:
        raise ValueError(f"w_max must be positive, got {w_max}")
    dw = 2.0 * w_max / n_w
    w = (np.arange(n_w) + 0.5) * dw - w_max
    return 0.5 * (w - w[::-1]), dw


@dataclass(frozen=True)
class WDensity:
    values: np.ndarray = field(repr=False)
    w_grid: np.ndarray = field(repr=False)
    dw: float

    def __post_init__(self):
        if self.values.shape[0] != self.w_grid.shape[0]:
            raise ValueError(f"Density has {self.values.shape[0]} bins, grid has {self.w_grid.shape[0]}")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("W density must be finite and non negative")

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.dw)

    @property
    def momentum(self) -> float:
        """
        rho Y = int W rho_W dW
        """
        return float(np.sum(self.w_grid * self.values) * self.dw)

    def is_even(self, tol: float = 1e-12) -> bool:
        """
        Structural check, bin j mirrors bin n_w - 1 - j.
        """
        scale = max(float(np.max(np.abs(self.values))), 1e-300)
        return bool(np.max(np.abs(self.values - self.values[::-1])) <= tol * scale)

    def scaled(self, alpha: float) -> "WDensity":
        return WDensity(values=alpha * self.values, w_grid=self.w_grid, dw=self.dw)


def gaussian_density(w_grid: np.ndarray, dw: float, sigma: float = 1.0, mass: float = 1.0,
                     shift: float = 0.0) -> WDensity:
    """
    Gaussian in W with the requested total mass under the midpoint rule. shift = 0 gives an exactly even density.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    raw = np.exp(-0.5 * ((w_grid - shift) / sigma) ** 2)
    if shift == 0.0:
        raw = 0.5 * (raw + raw[::-1])
    values = mass * raw / (np.sum(raw) * dw)
    return WDensity(values=values, w_grid=w_grid, dw=dw)


def point_density(w_grid: np.ndarray, dw: float, index: int, mass: float = 1.0) -> WDensity:
    """
    All mass in a single bin.
    """
    values = np.zeros_like(w_grid)
    values[index] = mass / dw
    return WDensity(values=values, w_grid=w_grid, dw=dw)


# ======================================================================================================================
# Table
# ======================================================================================================================

@dataclass(frozen=True)
class CoefficientTable:
    d: float
    w_max: float
    zeta: float
    w_grid: np.ndarray = field(repr=False)
    dw: float
    a: np.ndarray = field(repr=False)
    c1_tilde: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    c_const: Optional[np.ndarray] = field(default=None, repr=False)
    phi: Optional[np.ndarray] = field(default=None, repr=False)
    x: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_w(self) -> int:
        return int(self.w_grid.shape[0])

    def column(self, name: str) -> np.ndarray:
        """
        Column by its CSV name.
        """
        if name == "w":
            return self.w_grid
        if name in ("a1", "a2", "a3", "a4", "a5", "a6"):
            return self.a[:, int(name[1]) - 1]
        if name == "c1_tilde":
            return self.c1_tilde
        if name == "psi":
            return self.psi
        if name in ("lambda", "lam"):
            return self.lam
        if name == "c_const" and self.c_const is not None:
            return self.c_const
        raise KeyError(f"Unknown table column {name}")

    def interp(self, name: str, w: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """
        Linear interpolation of a column in W.

        :raises ValueError: for W outside the node range
        """
        w_arr = np.asarray(w, dtype=float)
        lo, hi = self.w_grid[0], self.w_grid[-1]
        if np.any(w_arr < lo) or np.any(w_arr > hi):
            raise ValueError(f"W outside of the tabulated range [{lo}, {hi}]")
        res = np.interp(w_arr, self.w_grid, self.column(name))
        return float(res) if np.ndim(res) == 0 else res

    def psi_at(self, w: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        return self.interp("psi", w)

    def check_density(self, rho: WDensity):
        if rho.w_grid.shape != self.w_grid.shape or not np.array_equal(rho.w_grid, self.w_grid):
            raise ValueError("W density is not defined on the table's w grid")

    def parity_deviation(self) -> Dict[str, float]:
        """
        Max deviation from the W -> -W symmetry per column.
        """
        out = {}
        for name in EVEN_COLUMNS:
            col = self.column(name)
            out[name] = float(np.max(np.abs(col - col[::-1])))
        for name in ODD_COLUMNS:
            col = self.column(name)
            out[name] = float(np.max(np.abs(col + col[::-1])))
        return out

    def parity_passed(self, tol: float = 1e-8) -> bool:
        return all(v <= tol for v in self.parity_deviation().values())

    def positivity_passed(self) -> bool:
        """
        a1 > 0 and a5 > 0 on every node.
        """
        return bool(np.all(self.a[:, 0] > 0) and np.all(self.a[:, 4] > 0))

    def header_params(self) -> Dict[str, object]:
        return {"d": self.d, "w_max": self.w_max, "n_w": self.n_w, "zeta": self.zeta}

    def to_csv(self, path: str, extra: Optional[Dict[str, object]] = None):
        """
        Write the table, header `w,a1,a2,a3,a4,a5,a6,c1_tilde,psi,lambda`.
        """
        data = np.column_stack([self.column(c) for c in TABLE_COLUMNS])
        params = self.header_params()
        if extra:
            params.update(extra)
        write_csv(path, TABLE_COLUMNS, data, params)

    @classmethod
    def from_csv(cls, path: str) -> "CoefficientTable":
        params, columns, data = read_csv(path)
        if columns != TABLE_COLUMNS:
            raise ValueError(f"{path} is not a coefficient table, columns {columns}")
        w_max = float(params["w_max"])
        n_w = data.shape[0]
        return cls(d=float(params["d"]), w_max=w_max, zeta=float(params.get("zeta", 1.0)),
                   w_grid=data[:, 0].copy(), dw=2.0 * w_max / n_w, a=data[:, 1:7].copy(),
                   c1_tilde=data[:, 7].copy(), psi=data[:, 8].copy(), lam=data[:, 9].copy())


def compute_node(arg: TableNodeArg) -> TableNodeResult:
    """
    Solve equilibrium and collision invariant at one node. Raises on failure, callers wrap the error.
    """
    grid = periodic_grid(arg.n_theta)
    gvm = solve_gvm(arg.d, arg.zeta * arg.w, grid)
    gci = solve_gci(gvm, scheme=arg.scheme)
    av = compute_avector(gvm, gci)
    return TableNodeResult(key=arg.key, w=arg.w, a=av.as_array().tolist(), c1_tilde=gvm.c1_tilde, psi=gvm.psi,
                           lam=gvm.lam, c_const=gvm.c_const,
                           phi=gvm.phi.tolist() if arg.keep_profiles else None,
                           x=gci.x.tolist() if arg.keep_profiles else None)


def safe_compute_node(arg: TableNodeArg) -> TableNodeResult:
    """
    compute_node returning the traceback instead of raising.
    """
    try:
        return compute_node(arg)
    except Exception:
        return TableNodeResult(key=arg.key, w=arg.w, error=traceback.format_exc())


def run_nodes_sequential(args: List[TableNodeArg]) -> List[TableNodeResult]:
    return [safe_compute_node(a) for a in args]


def table_args(d: float, w_max: float, n_w: int, n_theta: int = DEFAULT_N, zeta: float = 1.0,
               scheme: Union[Scheme, str] = Scheme.SPECTRAL, keep_profiles: bool = False) -> List[TableNodeArg]:
    """
    One argument per w node, validated against the exponent guard.
    """
    d = check_noise(d)
    w_grid, _ = w_midpoints(w_max, n_w)
    if zeta * w_max * TWO_PI / d > EXPONENT_GUARD:
        raise OverflowGuardError(f"w_max={w_max} (zeta={zeta}) exceeds the overflow guard |w| 2 pi / d ≤ "
                                 f"{EXPONENT_GUARD:.0f} at d={d}")
    return [TableNodeArg(key=i, d=d, w=float(w), zeta=zeta, n_theta=n_theta, scheme=Scheme(scheme).value,
                         keep_profiles=keep_profiles) for i, w in enumerate(w_grid)]


def assemble_table(d: float, w_max: float, n_w: int, zeta: float, results: List[TableNodeResult]) -> CoefficientTable:
    """
    Assemble node results in key order.

    :raises RuntimeError: if a node failed, annotated with (d, w)
    """
    w_grid, dw = w_midpoints(w_max, n_w)
    ordered = sorted(results, key=lambda r: r.key)
    if [r.key for r in ordered] != list(range(n_w)):
        raise RuntimeError(f"Incomplete table for d={d}: got {len(ordered)} of {n_w} nodes")

    for r in ordered:
        if r.error is not None:
            raise RuntimeError(f"Table node failed (d={d}, w={r.w}):\n{r.error}")

    keep = all(r.phi is not None for r in ordered)
    return CoefficientTable(
        d=d, w_max=w_max, zeta=zeta, w_grid=w_grid, dw=dw,
        a=np.array([r.a for r in ordered]),
        c1_tilde=np.array([r.c1_tilde for r in ordered]),
        psi=np.array([r.psi for r in ordered]),
        lam=np.array([r.lam for r in ordered]),
        c_const=np.array([r.c_const for r in ordered]),
        phi=np.array([r.phi for r in ordered]) if keep else None,
        x=np.array([r.x for r in ordered]) if keep else None)


def build_table(d: float, w_max: float = 10.0, n_w: int = 64, n_theta: int = DEFAULT_N, zeta: float = 1.0,
                scheme: Union[Scheme, str] = Scheme.SPECTRAL, keep_profiles: bool = False,
                runner: Optional[NodeRunner] = None) -> CoefficientTable:
    """
    Tabulate a1 ... a6, c1_tilde, psi, lambda on the midpoints of [-w_max, w_max].

    :param d: diffusivity
    :param w_max: half width of the W range
    :param n_w: number of nodes, even
    :param n_theta: angular resolution of each node
    :param zeta: nodes hold a_k(zeta w)
    :param scheme: collision invariant discretization
    :param keep_profiles: cache Phi_W and X_W per node
    :param runner: executes the node computations, sequential in process by default
    :return: the table
    """
    args = table_args(d, w_max, n_w, n_theta, zeta, scheme, keep_profiles)
    runner = run_nodes_sequential if runner is None else runner
    return assemble_table(float(d), float(w_max), n_w, float(zeta), runner(args))


# ======================================================================================================================
# Moments
# ======================================================================================================================

def moments(table: CoefficientTable, rho: WDensity) -> np.ndarray:
    """
    m_k = int a_k(W) rho_W dW by the midpoint rule.

    :return: array (m1, ..., m6)
    """
    table.check_density(rho)
    return table.a.T @ rho.values * table.dw


def moment_fields(table: CoefficientTable, rho_w: np.ndarray) -> np.ndarray:
    """
    Moments of a field of W densities of shape (n_w, ...), returns shape (6, ...).
    """
    if rho_w.shape[0] != table.n_w:
        raise ValueError(f"Field has {rho_w.shape[0]} W bins, table has {table.n_w}")
    return np.tensordot(table.a.T, rho_w, axes=(1, 0)) * table.dw


def weighted_moment(table: CoefficientTable, k: int, weights: np.ndarray) -> np.ndarray:
    """
    m_k of an arbitrary (possibly complex) density given per node, shape (n_w, ...).
    """
    return np.tensordot(table.a[:, k - 1], weights, axes=(0, 0)) * table.dw


def large_w_slopes(table: CoefficientTable, w_min: float = 5.0) -> Dict[str, float]:
    """
    Least squares slopes of a2 and a4 against W over the nodes with W ≥ w_min. Reported only.
    """
    mask = table.w_grid >= w_min
    if np.count_nonzero(mask) < 2:
        raise ValueError(f"Less than two nodes above w_min={w_min}")
    w = table.w_grid[mask]
    return {"a2": float(np.polyfit(w, table.a[mask, 1], 1)[0]),
            "a4": float(np.polyfit(w, table.a[mask, 3], 1)[0])}


def node_doubling_error(coarse: CoefficientTable, fine: CoefficientTable) -> float:
    """
    Max deviation of the coarse table's linear interpolant from the fine table on the fine nodes inside the coarse
    node range, relative to the largest coefficient.
    """
    inside = (fine.w_grid >= coarse.w_grid[0]) & (fine.w_grid <= coarse.w_grid[-1])
    w = fine.w_grid[inside]
    err = 0.0
    for k in range(6):
        approx = np.interp(w, coarse.w_grid, coarse.a[:, k])
        err = max(err, float(np.max(np.abs(approx - fine.a[inside, k]))))
    return err / float(np.max(np.abs(fine.a)))


# ======================================================================================================================
# Small zeta expansion
# ======================================================================================================================

@dataclass(frozen=True)
class SmallZetaCoefficients:
    d: float
    lam0: float
    a1_0: float
    a2_0: float
    a5_0: float
    a3_1: float
    a4_1: float
    a6_1: float

    @property
    def c2(self) -> float:
        return self.a2_0 / self.a1_0

    @property
    def c3(self) -> float:
        return self.a3_1 / self.a1_0

    @property
    def c4(self) -> float:
        return self.a4_1 / self.a1_0

    @property
    def c5(self) -> float:
        return self.a5_0 / self.a1_0

    @property
    def c6(self) -> float:
        return self.a6_1 / self.a1_0

    def as_tuple(self) -> Tuple[float, float, float, float, float, float]:
        """
        (a3_1, a4_1, a6_1, c3, c4, c6)
        """
        return self.a3_1, self.a4_1, self.a6_1, self.c3, self.c4, self.c6


def small_zeta_coeffs(d: float, pert: PerturbationProfiles) -> SmallZetaCoefficients:
    """
    Zeroth order a1, a2, a5 and first order slopes a3^1, a4^1, a6^1 of a_k(zeta W) in zeta W.

    The slopes are the first order terms of the coefficient integrals with Phi = Phi0 + W Phi1, X = X0 + W X1,
    psi = (beta / c1) W and C = C'(0) W; terms odd in theta drop out.

    :param d: diffusivity
    :param pert: first order profiles at the same d
    :return: the coefficients, c_k = a_k^1 / a1(0)
    """
    d = check_noise(d)
    if not math.isclose(pert.d, d):
        raise ValueError(f"Perturbation profiles belong to d={pert.d}, not {d}")

    grid = pert.grid
    th = grid.nodes
    s, c = np.sin(th), np.cos(th)
    phi0, x0, phi1, x1 = pert.phi0, pert.x0, pert.phi1, pert.x1
    c1 = pert.c1
    slope = pert.psi_slope
    mixed = phi0 * x1 + phi1 * x0

    def q(values):
        return float(trapezoid_periodic(values, grid))

    lam0 = q(phi0 * s ** 2) / (d * c1)
    a1_0 = q(phi0 * x0 * s) / (d * lam0)
    a2_0 = q(phi0 * x0 * c * s) / (d * lam0)
    a5_0 = d * lam0 * a1_0

    a3_1 = (q(s ** 2 * mixed - s * phi0 * x0 - slope * s * c * phi0 * x0) / (d * lam0)
            - pert.c_slope / lam0 * q(s * x0))
    a4_1 = -c1 * q(mixed)
    a6_1 = q((c - c1) * mixed) + slope * q(s * phi0 * x0)
    return SmallZetaCoefficients(d=d, lam0=lam0, a1_0=a1_0, a2_0=a2_0, a5_0=a5_0, a3_1=a3_1, a4_1=a4_1, a6_1=a6_1)
