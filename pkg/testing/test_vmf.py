import math
import unittest

import numpy as np
from scipy.special import iv

from sohr_py.angular_kernel import TWO_PI, periodic_grid, trapezoid_periodic
from sohr_py.vmf import (c1, c1_bessel, c2, c2_cos, c2_g, c2_theta, c5, c5_bessel, check_noise, g_profile,
                         g_residual, g_values, sample_vmf, vmf_profile)

D_VALUES = (0.2, 1.0, 5.0)


class TestVmf(unittest.TestCase):

    def test_noise_range(self):
        self.assertEqual(check_noise(1), 1.0)
        for d in (0.0, 0.01, 25.0, math.nan):
            with self.assertRaises(ValueError):
                check_noise(d)

    def test_profile_normalized(self):
        grid = periodic_grid(256)
        for d in D_VALUES:
            prof = vmf_profile(d, grid)
            self.assertAlmostEqual(trapezoid_periodic(prof.values, grid), 1.0, places=13)
            self.assertAlmostEqual(prof.z_d / (TWO_PI * iv(0, 1.0 / d)), 1.0, places=10)

    def test_c1(self):
        for d in D_VALUES:
            ref = iv(1, 1.0 / d) / iv(0, 1.0 / d)
            self.assertAlmostEqual(c1(d), ref, places=12)
            self.assertAlmostEqual(c1_bessel(d), ref, places=12)

    def test_c1_monotone(self):
        values = [c1(d) for d in (0.1, 0.5, 1.0, 2.0, 10.0)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))
        self.assertTrue(all(0.0 < v < 1.0 for v in values))

    def test_c5_is_d(self):
        for d in D_VALUES:
            self.assertAlmostEqual(c5(d), d, places=10)
            self.assertAlmostEqual(c5_bessel(d), d, places=10)


class TestCollisionInvariantG(unittest.TestCase):

    def test_g_odd_and_periodic(self):
        grid = periodic_grid(128)
        g = g_profile(1.0, grid)
        self.assertTrue(np.allclose(grid.mirror(g), -g, atol=1e-12))
        self.assertAlmostEqual(float(g_values(1.0, np.array([TWO_PI]))[0]), 0.0, places=12)
        self.assertAlmostEqual(float(g_values(1.0, np.array([math.pi]))[0]), 0.0, places=12)

    def test_g_solves_ode(self):
        for d in D_VALUES:
            self.assertLess(g_residual(d), 1e-8)

    def test_c2_formulations_agree(self):
        for d in D_VALUES:
            ref = c2_g(d)
            self.assertAlmostEqual(c2_theta(d), ref, delta=1e-9 * max(1.0, abs(ref)))
            self.assertAlmostEqual(c2_cos(d), ref, delta=1e-7 * max(1.0, abs(ref)))
            self.assertEqual(c2(d), ref)


class TestSampling(unittest.TestCase):

    def test_sample_mean(self):
        rng = np.random.default_rng(3)
        samples = sample_vmf(0.5, 200000, rng, mean=1.0)
        self.assertTrue(np.all((samples >= 0) & (samples < TWO_PI)))
        self.assertAlmostEqual(float(np.mean(np.cos(samples - 1.0))), c1(0.5), delta=5e-3)


if __name__ == '__main__':
    unittest.main()
