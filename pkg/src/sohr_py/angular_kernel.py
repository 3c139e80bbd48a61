import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

"""
Periodic angular grids, quadrature and the small set of modified Bessel functions used throughout the package.
Every profile in the package lives on an AngularGrid.
"""

TWO_PI = 2.0 * math.pi

# Largest argument for which e^{x} stays representable with some headroom
BESSEL_X_MAX = 700.0
BESSEL_SERIES_SWITCH = 15.0
BESSEL_QUAD_NODES = 1024


class OverflowGuardError(ArithmeticError):
    """
    Raised when an exponent would leave the representable range of float64.
    """


@dataclass(frozen=True)
class AngularGrid:
    n: int
    nodes: np.ndarray = field(repr=False)
    weight: float

    @property
    def spacing(self) -> float:
        return self.weight

    def mirror_index(self) -> np.ndarray:
        """
        Index map j -> (n - j) mod n, i.e. theta -> -theta on the grid.
        """
        return (-np.arange(self.n)) % self.n

    def mirror(self, values: np.ndarray) -> np.ndarray:
        """
        Samples of f(-theta) given samples of f(theta).
        """
        return np.asarray(values)[..., self.mirror_index()]

    def edges(self) -> np.ndarray:
        """
        Nodes plus the closing node 2 pi, i.e. the n panel boundaries of the circle.
        """
        return np.append(self.nodes, TWO_PI)


def periodic_grid(n: int) -> AngularGrid:
    """
    Build the uniform periodic grid theta_j = 2 pi j / n.

    :param n: number of nodes, even and at least 8
    :return: the grid
    :raises ValueError: if n is odd or too small
    """
    if int(n) != n or n < 8 or n % 2 != 0:
        raise ValueError(f"n must be even and ≥ 8, got {n}")

    n = int(n)
    nodes = TWO_PI * np.arange(n) / n
    nodes.setflags(write=False)
    return AngularGrid(n=n, nodes=nodes, weight=TWO_PI / n)


def trapezoid_periodic(samples: np.ndarray, grid: AngularGrid) -> float:
    """
    Periodic trapezoid rule, spectrally accurate for smooth periodic integrands.

    :param samples: samples on the grid, the last axis is integrated
    :param grid: the grid the samples live on
    :return: weight * sum(samples)
    """
    samples = np.asarray(samples)
    if samples.shape[-1] != grid.n:
        raise ValueError(f"Sample length {samples.shape[-1]} does not match grid size {grid.n}")
    return grid.weight * np.sum(samples, axis=-1)


def bin_masses(samples: np.ndarray, grid: AngularGrid, n_bins: int) -> np.ndarray:
    """
    Integrate a periodic density over n_bins equal angular bins starting at 0. The bin edges need to fall on grid
    nodes, so n_bins must divide n.

    :param samples: density samples on the grid
    :param grid: the grid
    :param n_bins: number of bins
    :return: array of bin masses
    """
    if grid.n % n_bins != 0:
        raise ValueError(f"n_bins={n_bins} must divide the grid size {grid.n}")

    per_bin = grid.n // n_bins
    s = np.asarray(samples, dtype=float)
    # Composite trapezoid inside each bin, the closing node is the first node of the next bin
    body = s.reshape(n_bins, per_bin)
    closing = np.roll(s[::per_bin], -1)
    return grid.weight * (body.sum(axis=1) - 0.5 * body[:, 0] + 0.5 * closing)


# ======================================================================================================================
# Differentiation
# ======================================================================================================================

def spectral_derivative(samples: np.ndarray, order: int = 1) -> np.ndarray:
    """
    Fourier differentiation of periodic samples on [0, 2 pi). The Nyquist mode is dropped for odd orders.

    :param samples: samples along the last axis
    :param order: derivative order
    :return: samples of the derivative
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[-1]
    k = np.fft.rfftfreq(n, d=1.0 / n)
    factor = (1j * k) ** order
    if order % 2 == 1:
        factor[-1] = 0.0
    return np.fft.irfft(np.fft.rfft(samples, axis=-1) * factor, n=n, axis=-1)


def spectral_diff_matrices(grid: AngularGrid) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dense Fourier collocation matrices for the first and second derivative on an even periodic grid.

    :param grid: the grid
    :return: (D1, D2)
    """
    n = grid.n
    h = grid.weight
    j = np.arange(n)
    diff = j[:, None] - j[None, :]
    sign = np.where(diff % 2 == 0, 1.0, -1.0)
    off = diff != 0

    half = np.where(off, diff * h / 2.0, 1.0)
    d1 = np.where(off, 0.5 * sign / np.tan(half), 0.0)
    d2 = np.where(off, -0.5 * sign / np.sin(half) ** 2, -math.pi ** 2 / (3.0 * h ** 2) - 1.0 / 6.0)
    return d1, d2


def central_diff_matrices(grid: AngularGrid) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """
    Second order central difference matrices with periodic wrap.

    :param grid: the grid
    :return: (D1, D2) as sparse matrices
    """
    n = grid.n
    h = grid.weight
    d1 = sp.diags([-1.0, 1.0, -1.0, 1.0], [-1, 1, n - 1, -(n - 1)], shape=(n, n)) / (2.0 * h)
    d2 = sp.diags([1.0, -2.0, 1.0, 1.0, 1.0], [-1, 0, 1, n - 1, -(n - 1)], shape=(n, n)) / h ** 2
    return d1.tocsr(), d2.tocsr()


# ======================================================================================================================
# Panel quadrature for non periodic cumulative integrals
# ======================================================================================================================

def panel_nodes(edges: np.ndarray, order: int = 12) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre nodes and weights on each panel [edges[i], edges[i+1]].

    :param edges: monotone panel boundaries
    :param order: nodes per panel
    :return: (nodes, weights) each of shape (len(edges) - 1, order)
    """
    x, w = leggauss(order)
    edges = np.asarray(edges, dtype=float)
    a = edges[:-1, None]
    half = 0.5 * (edges[1:, None] - a)
    return a + half * (x + 1.0), half * w


def panel_integrals(fn: Callable[[np.ndarray], np.ndarray], edges: np.ndarray, order: int = 12) -> np.ndarray:
    """
    Integral of fn over each panel.
    """
    nodes, weights = panel_nodes(edges, order)
    return np.sum(fn(nodes) * weights, axis=1)


def cumulative_integral(fn: Callable[[np.ndarray], np.ndarray],
                        points: np.ndarray,
                        n_panels: int = 256,
                        order: int = 12) -> np.ndarray:
    """
    Integral of fn from 0 to each point, for points in [0, 2 pi]. Uses a fixed panel partition of the circle plus one
    partial panel per point, so the accuracy does not depend on how the points are spread.

    :param fn: vectorized integrand
    :param points: upper limits
    :param n_panels: panels of the fixed partition
    :param order: Gauss-Legendre order per panel
    :return: array of integrals with the shape of points
    """
    pts = np.asarray(points, dtype=float)
    flat = pts.ravel()
    if flat.size and (flat.min() < 0.0 or flat.max() > TWO_PI * (1 + 1e-15)):
        raise ValueError("points must lie in [0, 2 pi]")

    edges = np.linspace(0.0, TWO_PI, n_panels + 1)
    at_edges = np.concatenate(([0.0], np.cumsum(panel_integrals(fn, edges, order))))

    idx = np.minimum((flat / (TWO_PI / n_panels)).astype(int), n_panels - 1)
    starts = edges[idx]

    x, w = leggauss(order)
    half = 0.5 * (flat - starts)
    nodes = starts[:, None] + half[:, None] * (x + 1.0)
    partial = np.sum(fn(nodes) * w, axis=1) * half
    return (at_edges[idx] + partial).reshape(pts.shape)


# ======================================================================================================================
# Modified Bessel functions of the first kind
# ======================================================================================================================

def _bessel_series(k: int, x: float) -> float:
    term = (0.5 * x) ** k / math.factorial(k)
    total = term
    q = 0.25 * x * x
    m = 0
    while term > 1e-17 * total and m < 500:
        m += 1
        term *= q / (m * (m + k))
        total += term
    return total


def _bessel_quadrature(k: int, x: float, n: int = BESSEL_QUAD_NODES) -> float:
    theta = TWO_PI * np.arange(n) / n
    return float(np.mean(np.exp(x * np.cos(theta)) * np.cos(k * theta)))


def bessel_i(k: int, x: float) -> float:
    """
    Modified Bessel function I_k(x) for k in {0, 1, 2}. Power series up to x = 15, periodic quadrature of the
    integral representation (1/pi) int_0^pi e^{x cos t} cos(kt) dt above.

    :param k: order, 0, 1 or 2
    :param x: argument, 0 <= x <= 700
    :return: I_k(x)
    :raises OverflowGuardError: for x above the representable range
    """
    if k not in (0, 1, 2):
        raise ValueError(f"Only orders 0, 1, 2 are supported, got {k}")
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x > BESSEL_X_MAX:
        raise OverflowGuardError(f"bessel_i argument {x} exceeds the supported range [0, {BESSEL_X_MAX}]")

    if x <= BESSEL_SERIES_SWITCH:
        return _bessel_series(k, float(x))
    return _bessel_quadrature(k, float(x))
