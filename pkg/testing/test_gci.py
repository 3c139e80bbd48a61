import unittest

import numpy as np

from sohr_py.angular_kernel import periodic_grid, trapezoid_periodic
from sohr_py.gci import (Scheme, SolvabilityError, convergence_order, gci_parity_check, solve_gci,
                         solve_perturbations, zero_mean)
from sohr_py.gvm import solve_gvm
from sohr_py.vmf import g_profile


def gci_at(d: float, w: float, n: int = 256, scheme: Scheme = Scheme.SPECTRAL, literal: bool = False):
    """
    Equilibrium and collision invariant at one (d, w).
    """
    gvm = solve_gvm(d, w, periodic_grid(n))
    return gvm, solve_gci(gvm, scheme=scheme, literal=literal)


class TestCollisionInvariant(unittest.TestCase):

    # ==================================================================================================================
    # W = 0
    # ==================================================================================================================

    def test_w0_equals_g_over_d(self):
        for d in (0.2, 1.0, 5.0):
            gvm, gci = gci_at(d, 0.0, n=512)
            self.assertLess(float(np.max(np.abs(gci.x - g_profile(d, gvm.grid) / d))), 1e-7)

    def test_w0_odd(self):
        gvm, gci = gci_at(1.0, 0.0)
        self.assertLess(float(np.max(np.abs(gci.x + gvm.grid.mirror(gci.x)))), 1e-10)

    # ==================================================================================================================
    # General W
    # ==================================================================================================================

    def test_zero_mean_and_residual(self):
        for d, w in ((0.2, 1.0), (1.0, 5.0), (5.0, -2.0)):
            gvm, gci = gci_at(d, w)
            self.assertLess(zero_mean(gci.x, gvm.grid), 1e-10)
            self.assertLess(gci.residual_norm, 1e-7)
            self.assertLess(gci.compat_residual, 1e-8)
            self.assertEqual(gci.psi_used, gvm.psi)

    def test_parity(self):
        for w in (0.5, 2.0):
            report = gci_parity_check(1.0, w, periodic_grid(256))
            self.assertTrue(report.passed, msg=f"deviation {report.deviation}")

    def test_central_scheme_second_order(self):
        fine = gci_at(1.0, 1.0, n=1024)[1].x
        sizes = [128, 256, 512]
        errors = [float(np.max(np.abs(gci_at(1.0, 1.0, n=m, scheme=Scheme.CENTRAL)[1].x - fine[::1024 // m])))
                  for m in sizes]
        self.assertGreater(convergence_order(errors, sizes), 1.8)
        self.assertLess(errors[-1], 1e-3)

    def test_scheme_from_string(self):
        _, gci = gci_at(1.0, 1.0, n=64, scheme="central")
        self.assertEqual(gci.scheme, Scheme.CENTRAL)

    # ==================================================================================================================
    # Literal form
    # ==================================================================================================================

    def test_literal_solvable_at_unit_d(self):
        _, gci = gci_at(1.0, 2.0, literal=True)
        self.assertTrue(gci.literal)

    def test_literal_matches_default_at_unit_d(self):
        _, default = gci_at(1.0, 2.0)
        _, literal = gci_at(1.0, 2.0, literal=True)
        self.assertTrue(np.allclose(default.x, literal.x, atol=1e-10))

    def test_literal_rejected_elsewhere(self):
        with self.assertRaises(SolvabilityError):
            gci_at(0.2, 1.0, literal=True)


class TestPerturbations(unittest.TestCase):

    def test_first_order_profiles(self):
        pert = solve_perturbations(1.0, periodic_grid(256))
        grid = pert.grid
        self.assertLess(pert.residual_phi1, 1e-9)
        self.assertLess(pert.residual_x1, 1e-9)
        self.assertLess(zero_mean(pert.phi1, grid), 1e-10)
        self.assertLess(zero_mean(pert.x1, grid), 1e-10)

    def test_first_order_matches_difference_quotient(self):
        grid = periodic_grid(256)
        pert = solve_perturbations(1.0, grid)
        w = 1e-4
        gvm = solve_gvm(1.0, w, grid)
        quotient = (gvm.phi - pert.phi0) / w
        self.assertLess(float(np.max(np.abs(quotient - pert.phi1))), 1e-3)
        self.assertAlmostEqual(gvm.psi / w, pert.psi_slope, delta=1e-3)
        self.assertAlmostEqual(gvm.c_const / w, pert.c_slope, delta=1e-3)

        x_w = solve_gci(gvm).x
        self.assertLess(float(np.max(np.abs((x_w - pert.x0) / w - pert.x1))), 1e-3)

    def test_beta_definition(self):
        pert = solve_perturbations(0.5, periodic_grid(128))
        self.assertAlmostEqual(pert.beta, float(trapezoid_periodic(pert.phi1 * np.sin(pert.grid.nodes), pert.grid)))


if __name__ == '__main__':
    unittest.main()
