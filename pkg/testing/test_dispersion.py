import math
import os
import tempfile
import unittest

import numpy as np

import sohr_py.dispersion as disp
from sohr_py.coefficients import build_table, gaussian_density, point_density


def problem(table, xi: float = 1.0, theta: float = math.pi / 4, shift: float = 0.0) -> disp.DispersionProblem:
    return disp.DispersionProblem(table=table, rho0=gaussian_density(table.w_grid, table.dw, shift=shift),
                                  xi=xi, theta_wave=theta)


class TestDispersion(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.table = build_table(1.0, 3.0, 12, n_theta=128)

    # ==================================================================================================================
    # Closed forms
    # ==================================================================================================================

    def test_along_direction(self):
        p = problem(self.table, xi=2.0, theta=0.0)
        roots = disp.find_roots_detailed(p)
        self.assertEqual(len(roots), 1)
        self.assertEqual(roots[0].method, "linear")
        self.assertAlmostEqual(roots[0].mu.real, disp.closed_form_roots(p)["convective"].real, places=12)
        self.assertLess(roots[0].residual, 1e-12)

    def test_transverse_acoustic(self):
        p = problem(self.table, xi=1.5, theta=math.pi / 2)
        closed = disp.closed_form_roots(p)
        roots = disp.find_roots(p)
        for key in ("acoustic_plus", "acoustic_minus"):
            target = closed[key]
            self.assertTrue(any(abs(r - target) < 1e-6 * abs(target) for r in roots), msg=f"{key} {target} {roots}")

    def test_roots_satisfy_relation(self):
        p = problem(self.table)
        for r in disp.find_roots_detailed(p):
            self.assertLess(r.residual, disp.ACCEPT_TOL * p.residual_scale())
            self.assertIn(r.method, ("bracket", "muller"))

    def test_resonance(self):
        p = problem(self.table, theta=0.3)
        with self.assertRaises(disp.ResonanceError):
            disp.dispersion_eval(p, float(p.poles[0]))
        # off the real axis the pole is harmless
        self.assertTrue(np.isfinite(abs(disp.dispersion_eval(p, complex(p.poles[0], 0.1)))))

    # ==================================================================================================================
    # Poles
    # ==================================================================================================================

    def test_even_nodes_share_poles(self):
        p = problem(self.table, theta=0.3)
        clusters = disp.pole_clusters(p, rel_tol=1e-6)
        self.assertEqual(clusters.shape, (6, 2))
        self.assertTrue(np.all(np.diff(clusters[:, 0]) > 0))

    def test_identity_gap_positive(self):
        p = problem(self.table)
        probes = [complex(x, y) for x in np.linspace(-1.0, 1.0, 5) for y in (0.01, 0.3, 2.0)]
        self.assertGreater(disp.imaginary_identity_gap(p, probes), 0.0)
        with self.assertRaises(ValueError):
            disp.imaginary_identity_gap(p, [0.5])

    # ==================================================================================================================
    # Scans
    # ==================================================================================================================

    def test_stability_scan(self):
        rho0 = gaussian_density(self.table.w_grid, self.table.dw)
        report = disp.stability_scan(self.table, rho0, [0.5, 1.0], [0.0, math.pi / 6, math.pi / 2])
        self.assertTrue(report.passed, msg=f"max |Im mu| = {report.max_imag}")
        self.assertGreater(len(report.rows), 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "scan.csv")
            report.to_csv(path, {"seed": 0})
            with open(path) as f:
                self.assertIn("passed=True", f.readline())
                self.assertEqual(f.readline().strip(), "xi,theta,root_re,root_im,residual,flags")

    def test_scan_rejects_odd_density(self):
        rho0 = gaussian_density(self.table.w_grid, self.table.dw, shift=0.5)
        with self.assertRaises(ValueError):
            disp.stability_scan(self.table, rho0, [1.0], [0.5])

    def test_refinement(self):
        fine = build_table(1.0, 3.0, 24, n_theta=128)
        self.assertLess(disp.refinement_shift(self.table, fine, 1.0, math.pi / 2), 0.05)

    def test_galilean_report(self):
        rho0 = point_density(self.table.w_grid, self.table.dw, 3)
        report = disp.galilean_report(self.table, rho0)
        self.assertAlmostEqual(report["density_slope"], self.table.c1_tilde[3], places=12)
        self.assertAlmostEqual(report["convective_slope"], self.table.a[3, 1] / self.table.a[3, 0], places=12)


class TestMuller(unittest.TestCase):

    def test_complex_pair(self):
        root = disp.muller(lambda z: z * z + 1.0, (0.5 + 0.5j, 0.9j, 0.1 + 1.1j))
        self.assertIsNotNone(root)
        self.assertLess(abs(root * root + 1.0), 1e-10)

    def test_real_cubic(self):
        root = disp.muller(lambda z: z ** 3 - 2.0, (1.0, 1.2, 1.4))
        self.assertAlmostEqual(root.real, 2.0 ** (1.0 / 3.0), places=10)
        self.assertAlmostEqual(root.imag, 0.0, places=10)

    def test_degenerate_guesses(self):
        self.assertIsNone(disp.muller(lambda z: z - 1.0, (0.0, 0.0, 1.0)))


if __name__ == '__main__':
    unittest.main()
