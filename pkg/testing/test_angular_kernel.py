import math
import unittest

import numpy as np
from scipy.special import iv

from sohr_py.angular_kernel import (OverflowGuardError, TWO_PI, bessel_i, bin_masses, central_diff_matrices,
                                    cumulative_integral, periodic_grid, spectral_derivative, spectral_diff_matrices,
                                    trapezoid_periodic)


def smooth_samples(n: int) -> np.ndarray:
    """
    e^{cos} sampled on the n point grid.
    """
    return np.exp(np.cos(periodic_grid(n).nodes))


class TestGrid(unittest.TestCase):

    def test_nodes(self):
        grid = periodic_grid(16)
        self.assertEqual(grid.n, 16)
        self.assertAlmostEqual(grid.nodes[0], 0.0)
        self.assertAlmostEqual(grid.nodes[4], math.pi / 2)
        self.assertAlmostEqual(grid.spacing, TWO_PI / 16)

    def test_rejects_odd_and_small(self):
        with self.assertRaises(ValueError):
            periodic_grid(15)
        with self.assertRaises(ValueError):
            periodic_grid(6)

    def test_mirror(self):
        grid = periodic_grid(32)
        mirrored = grid.mirror(np.sin(grid.nodes))
        self.assertTrue(np.allclose(mirrored, -np.sin(grid.nodes), atol=1e-14))
        self.assertEqual(grid.mirror_index()[0], 0)

    def test_edges(self):
        grid = periodic_grid(8)
        self.assertEqual(grid.edges().shape[0], 9)
        self.assertAlmostEqual(grid.edges()[-1], TWO_PI)


class TestQuadrature(unittest.TestCase):

    # ==================================================================================================================
    # Periodic trapezoid and bins
    # ==================================================================================================================

    def test_trapezoid_bessel(self):
        grid = periodic_grid(64)
        self.assertAlmostEqual(trapezoid_periodic(smooth_samples(64), grid), TWO_PI * iv(0, 1.0), places=13)

    def test_trapezoid_shape_mismatch(self):
        with self.assertRaises(ValueError):
            trapezoid_periodic(np.ones(10), periodic_grid(8))

    def test_bin_masses_sum(self):
        grid = periodic_grid(128)
        masses = bin_masses(smooth_samples(128), grid, 16)
        self.assertEqual(masses.shape, (16,))
        self.assertAlmostEqual(float(masses.sum()), TWO_PI * iv(0, 1.0), places=12)

    def test_bin_masses_uniform(self):
        grid = periodic_grid(64)
        masses = bin_masses(np.full(64, 1.0 / TWO_PI), grid, 8)
        self.assertTrue(np.allclose(masses, 1.0 / 8.0))

    def test_bin_masses_requires_divisor(self):
        with self.assertRaises(ValueError):
            bin_masses(np.ones(64), periodic_grid(64), 10)

    def test_cumulative_integral(self):
        pts = np.array([0.0, 0.3, math.pi, 5.0, TWO_PI])
        res = cumulative_integral(np.cos, pts)
        self.assertTrue(np.allclose(res, np.sin(pts), atol=1e-13))

    def test_cumulative_integral_range(self):
        with self.assertRaises(ValueError):
            cumulative_integral(np.cos, np.array([-0.1]))


class TestDifferentiation(unittest.TestCase):

    def test_spectral_derivative(self):
        grid = periodic_grid(64)
        f = smooth_samples(64)
        self.assertTrue(np.allclose(spectral_derivative(f), -np.sin(grid.nodes) * f, atol=1e-11))

    def test_spectral_matrices_match_fft(self):
        grid = periodic_grid(32)
        f = smooth_samples(32)
        d1, d2 = spectral_diff_matrices(grid)
        self.assertTrue(np.allclose(d1 @ f, spectral_derivative(f), atol=1e-10))
        self.assertTrue(np.allclose(d2 @ f, spectral_derivative(f, 2), atol=1e-9))

    def test_central_second_order(self):
        errors = []
        for n in (64, 128):
            grid = periodic_grid(n)
            d1, _ = central_diff_matrices(grid)
            errors.append(np.max(np.abs(d1 @ np.sin(grid.nodes) - np.cos(grid.nodes))))
        self.assertAlmostEqual(errors[0] / errors[1], 4.0, delta=0.1)


class TestBessel(unittest.TestCase):

    def test_against_scipy(self):
        for k in (0, 1, 2):
            for x in (0.0, 0.05, 1.0, 5.0, 14.9, 15.1, 20.0, 100.0):
                ref = iv(k, x)
                self.assertLess(abs(bessel_i(k, x) - ref), 1e-12 * max(ref, 1.0), msg=f"k={k}, x={x}")

    def test_guards(self):
        with self.assertRaises(OverflowGuardError):
            bessel_i(0, 701.0)
        with self.assertRaises(ValueError):
            bessel_i(3, 1.0)
        with self.assertRaises(ValueError):
            bessel_i(0, -1.0)


if __name__ == '__main__':
    unittest.main()
