import math
import unittest

import numpy as np
from scipy.special import iv

from sohr_py.angular_kernel import OverflowGuardError, TWO_PI, periodic_grid, trapezoid_periodic
from sohr_py.gvm import (check_overflow_guard, flux_direction, gvm_parity_pair, omega_direction, solve_gvm)
from sohr_py.vmf import c1


def grid_256():
    return periodic_grid(256)


class TestEquilibrium(unittest.TestCase):

    # ==================================================================================================================
    # W = 0 reduces to von Mises
    # ==================================================================================================================

    def test_w0_closed_form(self):
        grid = periodic_grid(512)
        for d in (0.2, 1.0, 5.0):
            prof = solve_gvm(d, 0.0, grid)
            ref = np.exp(np.cos(grid.nodes) / d) / (TWO_PI * iv(0, 1.0 / d))
            self.assertLess(float(np.max(np.abs(prof.phi - ref))), 1e-10)
            self.assertAlmostEqual(prof.psi, 0.0, places=14)
            self.assertAlmostEqual(prof.c_const, 0.0, places=14)
            self.assertAlmostEqual(prof.c1_tilde, c1(d, grid), places=12)
            self.assertAlmostEqual(prof.lam, 1.0, places=10)

    # ==================================================================================================================
    # General W
    # ==================================================================================================================

    def test_mass_positivity_residual(self):
        grid = grid_256()
        for d, w in ((0.2, 1.0), (1.0, 5.0), (5.0, -3.0), (0.5, 20.0)):
            prof = solve_gvm(d, w, grid)
            self.assertAlmostEqual(trapezoid_periodic(prof.phi, grid), 1.0, places=13)
            self.assertTrue(np.all(prof.phi > 0))
            self.assertLess(prof.residual(), 1e-7)
            self.assertLess(prof.compat_residual(), 1e-12)

    def test_psi_sign_and_magnitude(self):
        prof = solve_gvm(0.2, 1.0)
        self.assertGreater(prof.psi, 0.5)
        self.assertLess(prof.psi, 1.5)
        self.assertLess(solve_gvm(0.2, -1.0).psi, 0.0)

    def test_order_parameter_decreases_with_w(self):
        values = [solve_gvm(1.0, w, grid_256()).c1_tilde for w in (0.0, 1.0, 5.0, 20.0)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_large_w_nearly_uniform(self):
        prof = solve_gvm(1.0, 20.0, grid_256())
        self.assertLess(float(np.max(np.abs(prof.phi - 1.0 / TWO_PI))), 0.02)

    def test_parity_pair(self):
        plus, minus = gvm_parity_pair(1.0, 2.5, grid_256())
        self.assertAlmostEqual(plus.psi, -minus.psi, places=12)
        self.assertAlmostEqual(plus.c_const, -minus.c_const, places=12)
        self.assertAlmostEqual(plus.c1_tilde, minus.c1_tilde, places=12)

    def test_bin_masses(self):
        prof = solve_gvm(1.0, 1.0, grid_256())
        self.assertAlmostEqual(float(prof.bin_masses(64).sum()), 1.0, places=12)


class TestGuards(unittest.TestCase):

    def test_overflow_guard(self):
        check_overflow_guard(0.2, 22.0)
        with self.assertRaises(OverflowGuardError):
            check_overflow_guard(0.2, 23.0)
        with self.assertRaises(OverflowGuardError):
            solve_gvm(0.05, 10.0)

    def test_noise_range(self):
        with self.assertRaises(ValueError):
            solve_gvm(0.01, 0.0)


class TestDirections(unittest.TestCase):

    def test_flux_of_rotated_force(self):
        prof = solve_gvm(1.0, 2.0, grid_256())
        target = 0.7
        ox, oy = omega_direction(prof.psi, (math.cos(target), math.sin(target)))
        self.assertAlmostEqual(flux_direction(prof, math.atan2(oy, ox)), target, places=12)

    def test_requires_unit_vector(self):
        with self.assertRaises(ValueError):
            omega_direction(0.1, (1.0, 1.0))


if __name__ == '__main__':
    unittest.main()
