import cmath
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from sohr_py.coefficients import CoefficientTable, WDensity, gaussian_density, moments
from sohr_py.utils import write_rows

"""
Plane wave analysis of the sohr_l model linearized about a homogeneous state (rho0_W, Omega0). With theta the angle
between the wave vector and Omega0, a frequency mu is admissible when

    D(mu) = -mu m1 + m2 xi cos - (m3 + m4) xi sin - m5[B] xi^2 sin^2 + m6[B] xi^2 cos sin = 0,
    B(W) = c1_tilde(W) rho0_W / (-mu + c1_tilde(W) xi cos)

All W integrals use the midpoint rule of the coefficient table, so D is rational in mu with poles at the distinct
values c1_tilde(w_j) xi cos theta.
"""

logger = logging.getLogger(__name__)

MULLER_MAX_ITER = 100
MULLER_TOL = 1e-12
ACCEPT_TOL = 1e-9
DEDUP_TOL = 1e-8
RESONANCE_EPS = 1e-12
STABILITY_TOL = 1e-7


class ResonanceError(ArithmeticError):
    """
    Raised when D is evaluated on (or next to) one of its real poles.
    """


@dataclass(frozen=True)
class DispersionProblem:
    table: CoefficientTable = field(repr=False)
    rho0: WDensity = field(repr=False)
    xi: float
    theta_wave: float

    def __post_init__(self):
        self.table.check_density(self.rho0)
        if self.rho0.mass <= 0:
            raise ValueError(f"rho0 must have positive mass, got {self.rho0.mass}")
        if self.m[0] <= 0:
            raise ValueError(f"m1[rho0] must be positive, got {self.m[0]}")

    @cached_property
    def m(self) -> np.ndarray:
        return moments(self.table, self.rho0)

    @cached_property
    def poles(self) -> np.ndarray:
        """
        c1_tilde(w_j) xi cos theta per node.
        """
        return self.table.c1_tilde * self.xi * math.cos(self.theta_wave)

    @cached_property
    def weights(self) -> np.ndarray:
        """
        c1_tilde rho0 dW per node.
        """
        return self.table.c1_tilde * self.rho0.values * self.table.dw

    def m5_c1(self) -> float:
        """
        m5[c1_tilde rho0]
        """
        return float(np.sum(self.table.a[:, 4] * self.weights))

    def mu_scale(self) -> float:
        m = self.m
        s, c = math.sin(self.theta_wave), math.cos(self.theta_wave)
        parts = [abs(m[1] * self.xi * c) / m[0],
                 abs((m[2] + m[3]) * self.xi * s) / m[0],
                 math.sqrt(abs(self.m5_c1()) / m[0]) * abs(self.xi * s),
                 float(np.max(np.abs(self.poles)))]
        return max(max(parts), 1e-300)

    def residual_scale(self) -> float:
        return self.m[0] * self.mu_scale()


@dataclass(frozen=True)
class DispersionRoot:
    mu: complex
    residual: float
    resonant: bool
    method: str

    @property
    def flags(self) -> str:
        return ";".join(f for f in ("resonant" if self.resonant else "", self.method) if f)


@dataclass(frozen=True)
class StabilityReport:
    d: float
    rows: List[Tuple[float, float, complex, float, str]] = field(repr=False)
    max_imag: float
    tol: float = STABILITY_TOL

    @property
    def passed(self) -> bool:
        return self.max_imag < self.tol

    def to_csv(self, path: str, params: Optional[dict] = None):
        header = {"d": self.d, "max_imag": self.max_imag, "passed": self.passed}
        header.update(params or {})
        write_rows(path, ["xi", "theta", "root_re", "root_im", "residual", "flags"],
                   [[xi, th, mu.real, mu.imag, res, flags] for xi, th, mu, res, flags in self.rows], header)


# ======================================================================================================================
# Evaluation
# ======================================================================================================================

def dispersion_eval(p: DispersionProblem, mu: complex) -> complex:
    """
    Left hand side of the dispersion relation.

    :param p: problem
    :param mu: complex frequency
    :return: D(mu)
    :raises ResonanceError: for real mu closer than 1e-12 (relative) to a pole, only when sin theta != 0
    """
    m = p.m
    s, c = math.sin(p.theta_wave), math.cos(p.theta_wave)
    mu = complex(mu)
    val = -mu * m[0] + m[1] * p.xi * c - (m[2] + m[3]) * p.xi * s

    if s != 0.0 and p.xi != 0.0:
        den = p.poles - mu
        if abs(mu.imag) <= RESONANCE_EPS * p.mu_scale():
            gap = float(np.min(np.abs(den)))
            if gap < RESONANCE_EPS * p.mu_scale():
                raise ResonanceError(f"mu={mu} hits a pole of the dispersion relation (gap {gap:.3e}, "
                                     f"xi={p.xi}, theta={p.theta_wave})")
        bracket = p.weights / den
        m5b = complex(np.sum(p.table.a[:, 4] * bracket))
        m6b = complex(np.sum(p.table.a[:, 5] * bracket))
        val += -m5b * p.xi ** 2 * s * s + m6b * p.xi ** 2 * c * s
    return val


def _real_eval(p: DispersionProblem) -> Callable[[float], float]:
    def fn(x: float) -> float:
        return dispersion_eval(p, x).real
    return fn


def pole_clusters(p: DispersionProblem, rel_tol: float = 1e-10) -> np.ndarray:
    """
    Sorted poles grouped into clusters of values closer than rel_tol * scale.

    :return: array of shape (clusters, 2) holding the smallest and largest pole of each cluster
    """
    q = np.sort(p.poles)
    tol = rel_tol * p.mu_scale()
    breaks = np.nonzero(np.diff(q) > tol)[0]
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [q.shape[0] - 1]))
    return np.column_stack((q[starts], q[ends]))


def muller(fn: Callable[[complex], complex], guesses: Tuple[complex, complex, complex],
           max_iter: int = MULLER_MAX_ITER, tol: float = MULLER_TOL) -> Optional[complex]:
    """
    Muller iteration from three guesses, the step takes the larger of the two denominators.

    :return: the root estimate or None without convergence
    """
    x0, x1, x2 = (complex(g) for g in guesses)
    f0, f1, f2 = fn(x0), fn(x1), fn(x2)
    for _ in range(max_iter):
        h1, h2 = x1 - x0, x2 - x1
        if h1 == 0 or h2 == 0:
            return None
        d1, d2 = (f1 - f0) / h1, (f2 - f1) / h2
        a = (d2 - d1) / (h2 + h1)
        b = a * h2 + d2
        disc = cmath.sqrt(b * b - 4.0 * f2 * a)
        den = b + disc if abs(b + disc) >= abs(b - disc) else b - disc
        if den == 0:
            return None
        step = -2.0 * f2 / den
        x0, x1, x2 = x1, x2, x2 + step
        f0, f1, f2 = f1, f2, fn(x2)
        if abs(step) <= tol * max(1.0, abs(x2)) or abs(f2) == 0.0:
            return x2
    return None


# ======================================================================================================================
# Roots
# ======================================================================================================================

def _bracket_roots(fn: Callable[[float], float], lo: float, hi: float, n_scan: int = 32) -> List[float]:
    xs = np.linspace(lo, hi, n_scan + 1)
    vals = [fn(x) for x in xs]
    out = []
    for i in range(n_scan):
        if vals[i] == 0.0:
            out.append(float(xs[i]))
        elif np.sign(vals[i]) != np.sign(vals[i + 1]):
            out.append(brentq(fn, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15, maxiter=200))
    return out


def _outer_root(fn: Callable[[float], float], edge: float, direction: float, span: float) -> List[float]:
    near = edge + direction * 1e-9 * span
    f_near = fn(near)
    far = near
    for k in range(64):
        far = edge + direction * span * 2.0 ** k
        if np.sign(fn(far)) != np.sign(f_near):
            lo, hi = sorted((near, far))
            return [brentq(fn, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)]
    return []


def _real_roots(p: DispersionProblem, clusters: np.ndarray) -> List[float]:
    fn = _real_eval(p)
    scale = p.mu_scale()
    roots = []

    # Inside the pole range, one search per gap between neighboring clusters
    for left, right in zip(clusters[:-1, 1], clusters[1:, 0]):
        delta = 1e-9 * (right - left)
        lo, hi = left + delta, right - delta
        try:
            if np.sign(fn(lo)) != np.sign(fn(hi)):
                roots.append(brentq(fn, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200))
            else:
                roots.extend(_bracket_roots(fn, lo, hi))
        except ResonanceError:
            logger.debug(f"Skipped pole gap [{left}, {right}]")

    roots.extend(_outer_root(fn, float(clusters[0, 0]), -1.0, scale))
    roots.extend(_outer_root(fn, float(clusters[-1, 1]), 1.0, scale))
    return roots


def _seeds(p: DispersionProblem) -> List[complex]:
    m = p.m
    s, c = math.sin(p.theta_wave), math.cos(p.theta_wave)
    scale = p.mu_scale()
    convective = m[1] * p.xi * c / m[0]
    acoustic = math.sqrt(abs(p.m5_c1()) / m[0]) * abs(p.xi * s)
    base = [convective, convective + acoustic, convective - acoustic]
    seeds = list(base)
    for b in base:
        for im in (0.25, 1.0):
            seeds.extend([b + 1j * im * scale, b - 1j * im * scale])
    return seeds


def _dedupe(roots: List[DispersionRoot], scale: float) -> List[DispersionRoot]:
    out: List[DispersionRoot] = []
    for r in sorted(roots, key=lambda r: (r.mu.real, r.mu.imag)):
        if any(abs(r.mu - o.mu) <= DEDUP_TOL * max(1.0, scale) for o in out):
            continue
        out.append(r)
    return out


def find_roots_detailed(p: DispersionProblem) -> List[DispersionRoot]:
    """
    All roots found by the real axis search and by Muller iterations from the closed form seeds.

    :param p: problem
    :return: roots sorted by real then imaginary part, with residual and resonance flag
    """
    m = p.m
    s, c = math.sin(p.theta_wave), math.cos(p.theta_wave)
    res_scale = p.residual_scale()

    if s == 0.0 or p.xi == 0.0:
        mu0 = complex(m[1] * p.xi * c / m[0])
        return [DispersionRoot(mu=mu0, residual=abs(dispersion_eval(p, mu0)), resonant=False, method="linear")]

    clusters = pole_clusters(p)
    scale = p.mu_scale()
    q_lo, q_hi = float(clusters[0, 0]), float(clusters[-1, 1])

    def classify(mu: complex, method: str) -> Optional[DispersionRoot]:
        try:
            res = abs(dispersion_eval(p, mu))
        except ResonanceError:
            return None
        if res >= ACCEPT_TOL * res_scale:
            return None
        near_real = abs(mu.imag) <= ACCEPT_TOL * scale
        if near_real:
            mu = complex(mu.real, 0.0)
        resonant = near_real and q_lo <= mu.real <= q_hi
        return DispersionRoot(mu=mu, residual=res, resonant=resonant, method=method)

    found = []
    for x in _real_roots(p, clusters):
        r = classify(complex(x), "bracket")
        if r is not None:
            found.append(r)

    def safe_eval(mu: complex) -> complex:
        try:
            return dispersion_eval(p, mu)
        except ResonanceError:
            return complex(math.inf)

    for seed in _seeds(p):
        h = 0.05 * scale
        guess = muller(safe_eval, (seed - h, seed + h, seed + 1j * h))
        if guess is None or not cmath.isfinite(guess):
            logger.debug(f"Muller did not converge from {seed} (xi={p.xi}, theta={p.theta_wave})")
            continue
        r = classify(guess, "muller")
        if r is not None:
            found.append(r)
    return _dedupe(found, scale)


def find_roots(p: DispersionProblem) -> List[complex]:
    return [r.mu for r in find_roots_detailed(p)]


# ======================================================================================================================
# Scans and reports
# ======================================================================================================================

def closed_form_roots(p: DispersionProblem) -> Dict[str, complex]:
    """
    theta = 0: mu = (m2 / m1) xi. theta = pi / 2 and even rho0: mu = pm sqrt(m5[c1_tilde rho0] / m1) |xi|.
    """
    m = p.m
    acoustic = math.sqrt(abs(p.m5_c1()) / m[0]) * abs(p.xi)
    return {"convective": complex(m[1] / m[0] * p.xi), "acoustic_plus": complex(acoustic),
            "acoustic_minus": complex(-acoustic)}


def stability_scan(table: CoefficientTable, rho0: WDensity, xi_grid: Sequence[float],
                   theta_grid: Sequence[float], tol: float = STABILITY_TOL) -> StabilityReport:
    """
    Largest |Im mu| over the non resonant roots of every (xi, theta) pair.

    :raises ValueError: if rho0 is not even
    """
    if not rho0.is_even(1e-12):
        raise ValueError("stability_scan requires an even rho0")
    rows = []
    max_imag = 0.0
    for xi in xi_grid:
        for theta in theta_grid:
            p = DispersionProblem(table=table, rho0=rho0, xi=float(xi), theta_wave=float(theta))
            for r in find_roots_detailed(p):
                rows.append((float(xi), float(theta), r.mu, r.residual, r.flags))
                if not r.resonant:
                    max_imag = max(max_imag, abs(r.mu.imag))
    logger.info(f"Stability scan at d={table.d}: {len(rows)} roots, max |Im mu| = {max_imag:.3e}")
    return StabilityReport(d=table.d, rows=rows, max_imag=max_imag, tol=tol)


def imaginary_identity_gap(p: DispersionProblem, probes: Sequence[complex]) -> float:
    """
    A root with Im mu != 0 would need m1 = -xi^2 sin^2 m5[c1_tilde rho0 / |c1_tilde xi cos - mu|^2]. Returns the
    smallest value of m1 + xi^2 sin^2 m5[...] over the probe points, positive when the identity fails everywhere.
    """
    s = math.sin(p.theta_wave)
    gap = math.inf
    for mu in probes:
        mu = complex(mu)
        if mu.imag == 0.0:
            raise ValueError(f"Probe points need a non zero imaginary part, got {mu}")
        dens = p.weights / np.abs(p.poles - mu) ** 2
        rhs = -(p.xi * s) ** 2 * float(np.sum(p.table.a[:, 4] * dens))
        gap = min(gap, float(p.m[0] - rhs))
    return gap


def non_resonant_roots(p: DispersionProblem) -> List[complex]:
    return [r.mu for r in find_roots_detailed(p) if not r.resonant]


def refinement_shift(coarse: CoefficientTable, fine: CoefficientTable, xi: float, theta: float,
                     sigma: float = 1.0) -> float:
    """
    Max change of the non resonant roots between two W resolutions, for the Gaussian rho0 of width sigma.
    """
    roots = []
    for table in (coarse, fine):
        rho0 = gaussian_density(table.w_grid, table.dw, sigma)
        roots.append(sorted(non_resonant_roots(DispersionProblem(table, rho0, xi, theta)),
                            key=lambda z: (z.real, z.imag)))
    if len(roots[0]) != len(roots[1]):
        raise ArithmeticError(f"Root count changes under refinement: {len(roots[0])} vs {len(roots[1])}")
    return max((abs(a - b) for a, b in zip(*roots)), default=0.0)


def galilean_report(table: CoefficientTable, rho0: WDensity) -> Dict[str, float]:
    """
    Convective slope m2 / m1 of the theta = 0 root next to the mean transport speed of the density.
    """
    m = moments(table, rho0)
    mean_speed = float(np.sum(table.c1_tilde * rho0.values) / np.sum(rho0.values))
    return {"convective_slope": float(m[1] / m[0]), "density_slope": mean_speed}
