import math
import os
import tempfile
import unittest
from concurrent.futures import ThreadPoolExecutor

import numpy as np

import sohr_py.ibm as ibm
from sohr_py.angular_kernel import periodic_grid
from sohr_py.coefficients import build_table
from sohr_py.utils import hash_np
from sohr_py.vmf import vmf_profile


def params(**kwargs) -> ibm.IbmParams:
    base = dict(nu=1.0, diff=0.2, speed=1.0, radius=1.0, box=10.0, dt=0.02)
    base.update(kwargs)
    return ibm.IbmParams(**base)


def scattered(n: int = 400, seed: int = 7, **kwargs) -> ibm.ParticleSystem:
    """
    Uniformly scattered particles with zero intrinsic rotation.
    """
    return ibm.random_system(n, params(**kwargs), np.zeros(n), seed=seed)


class TestNoise(unittest.TestCase):

    def test_independent_of_n(self):
        long = ibm.gaussian_noise(11, 3, 1000)
        short = ibm.gaussian_noise(11, 3, 10)
        self.assertTrue(np.array_equal(long[:10], short))

    def test_step_and_seed_change_stream(self):
        base = ibm.gaussian_noise(11, 3, 100)
        self.assertFalse(np.array_equal(base, ibm.gaussian_noise(11, 4, 100)))
        self.assertFalse(np.array_equal(base, ibm.gaussian_noise(12, 3, 100)))

    def test_moments(self):
        z = ibm.gaussian_noise(1, 0, 200000)
        self.assertTrue(np.all(np.isfinite(z)))
        self.assertAlmostEqual(float(np.mean(z)), 0.0, delta=0.01)
        self.assertAlmostEqual(float(np.var(z)), 1.0, delta=0.02)


class TestParams(unittest.TestCase):

    def test_alignment_step_guard(self):
        with self.assertRaises(ValueError):
            params(dt=0.1)

    def test_rotation_step_guard(self):
        with self.assertRaises(ValueError):
            ibm.random_system(10, params(), np.full(10, 3.0))

    def test_inconsistent_arrays(self):
        with self.assertRaises(ValueError):
            ibm.make_system(np.zeros((3, 2)), np.zeros(3), np.zeros(2), params())
        with self.assertRaises(ValueError):
            ibm.make_system(np.zeros((0, 2)), np.zeros(0), np.zeros(0), params())

    def test_law_l_requires_table(self):
        with self.assertRaises(ValueError):
            ibm.random_system(10, params(), np.zeros(10), law=ibm.ForceLaw.L)

    def test_law_l_table_mismatch(self):
        table = build_table(1.0, 2.0, 8, n_theta=128)
        with self.assertRaises(ValueError):
            ibm.random_system(10, params(), np.zeros(10), law="L", psi_table=table)

    def test_law_l_psi_lookup(self):
        table = build_table(0.2, 2.0, 8, n_theta=128)
        w = np.linspace(-1.0, 1.0, 10)
        system = ibm.random_system(10, params(), w, law="L", psi_table=table)
        self.assertTrue(np.allclose(system.psi, table.psi_at(w)))
        self.assertFalse(system.w.flags.writeable)

    def test_wrapping(self):
        system = ibm.make_system(np.array([[-1.0, 12.0]]), np.array([-0.5]), np.zeros(1), params())
        self.assertTrue(np.allclose(system.pos, [[9.0, 2.0]]))
        self.assertAlmostEqual(system.theta[0], 2 * math.pi - 0.5)


class TestNeighborFlux(unittest.TestCase):

    # ==================================================================================================================
    # Grid against brute force
    # ==================================================================================================================

    def test_grid_matches_brute(self):
        system = scattered(600)
        for radius in (1.0, 0.7, 2.4):
            grid = ibm.neighbor_flux_all(system.pos, system.theta, 10.0, radius, method="grid")
            brute = ibm.neighbor_flux_all(system.pos, system.theta, 10.0, radius, method="brute")
            self.assertLess(float(np.max(np.abs(grid[0] - brute[0]))), 1e-12)
            self.assertLess(float(np.max(np.abs(grid[1] - brute[1]))), 1e-12)
            self.assertTrue(np.array_equal(grid[2], brute[2]))

    def test_global_shortcut(self):
        system = scattered(200)
        glob = ibm.neighbor_flux_all(system.pos, system.theta, 10.0, 8.0, method="grid")
        brute = ibm.neighbor_flux_all(system.pos, system.theta, 10.0, 8.0, method="brute")
        self.assertTrue(np.allclose(glob[0], brute[0], atol=1e-12))
        self.assertTrue(np.all(glob[2] == 200))

    def test_single_particle_flux(self):
        system = scattered(300)
        jx, jy, _ = ibm.neighbor_flux_all(system.pos, system.theta, 10.0, 1.0)
        for k in (0, 17, 299):
            fx, fy = ibm.neighbor_flux(system, k)
            self.assertAlmostEqual(fx, jx[k], places=12)
            self.assertAlmostEqual(fy, jy[k], places=12)
        with self.assertRaises(IndexError):
            ibm.neighbor_flux(system, 300)

    def test_pool_matches_serial(self):
        system = scattered(500)
        serial = ibm.neighbor_flux_all(system.pos, system.theta, 10.0, 1.0, chunk=64)
        with ThreadPoolExecutor(4) as pool:
            pooled = ibm.neighbor_flux_all(system.pos, system.theta, 10.0, 1.0, pool=pool, chunk=64)
        for a, b in zip(serial, pooled):
            self.assertTrue(np.array_equal(a, b))

    def test_unknown_method(self):
        system = scattered(10)
        with self.assertRaises(ValueError):
            ibm.neighbor_flux_all(system.pos, system.theta, 10.0, 1.0, method="tree")


class TestStepping(unittest.TestCase):

    def test_zero_flux_disables_alignment(self):
        pos = np.array([[1.0, 1.0], [1.0, 1.0]])
        system = ibm.make_system(pos, np.array([0.0, math.pi]), np.zeros(2), params(diff=0.0))
        after = ibm.step(system)
        self.assertAlmostEqual(after.theta[0], 0.0, places=14)
        self.assertAlmostEqual(after.theta[1], math.pi, places=14)
        self.assertEqual(after.step_count, 1)

    def test_alignment_pulls_toward_flux(self):
        pos = np.array([[1.0, 1.0], [1.2, 1.0], [1.0, 1.2]])
        system = ibm.make_system(pos, np.array([0.3, 0.0, 0.0]), np.zeros(3), params(diff=0.0))
        after = ibm.step(system)
        self.assertLess(after.theta[0], 0.3)

    def test_free_rotation(self):
        system = ibm.make_system(np.array([[1.0, 1.0]]), np.array([0.0]), np.array([2.0]),
                                 params(diff=0.0, nu=1.0, radius=0.5))
        # a lone particle aligns with itself, only w turns it
        after = ibm.run(system, 10)
        self.assertAlmostEqual(after.theta[0], 10 * 0.02 * 2.0, places=10)

    def test_deterministic(self):
        first = ibm.run(scattered(300), 20)
        second = ibm.run(scattered(300), 20)
        self.assertEqual(hash_np(first.pos, first.theta), hash_np(second.pos, second.theta))
        with ThreadPoolExecutor(4) as pool:
            pooled = ibm.run(scattered(300), 20, pool=pool)
        self.assertEqual(hash_np(first.pos, first.theta), hash_np(pooled.pos, pooled.theta))

    def test_callback_and_interrupt(self):
        seen = []
        ibm.run(scattered(50), 20, callback=lambda s: seen.append(s.step_count), every=5)
        self.assertEqual(seen, [5, 10, 15, 20])

        calls = iter(range(100))
        stopped = ibm.run(scattered(50), 20, should_continue=lambda: next(calls) < 3)
        self.assertEqual(stopped.step_count, 3)


class TestObservables(unittest.TestCase):

    def test_aligned_system(self):
        n = 200
        system = ibm.random_system(n, params(), np.linspace(-1.0, 1.0, n), aligned=True)
        obs = ibm.observables(system, w_bins=np.linspace(-1.0, 1.0, 5), space_grid=(4, 5))
        self.assertAlmostEqual(obs.order, 1.0, places=12)
        self.assertAlmostEqual(obs.mean_direction, 0.0, places=12)
        self.assertEqual(int(obs.w_counts.sum()), n)
        self.assertEqual(obs.histograms.shape, (4, 64))
        self.assertEqual(obs.density.shape, (4, 5))
        self.assertAlmostEqual(float(obs.density.sum()) * 2.5 * 2.0, n, places=9)
        self.assertEqual(obs.flux_field.shape, (2, 4, 5))

    def test_bad_bins(self):
        with self.assertRaises(ValueError):
            ibm.observables(scattered(10), w_bins=np.array([1.0, 0.0]))
        with self.assertRaises(ValueError):
            ibm.observables(scattered(10), space_grid=(0, 3))

    def test_relative_histogram(self):
        system = ibm.random_system(100, params(), np.zeros(100), aligned=True)
        hist = ibm.relative_histogram(system, 0.0, 16)
        self.assertAlmostEqual(float(hist.sum()), 1.0)
        self.assertAlmostEqual(float(hist[0]), 1.0)
        self.assertEqual(len(ibm.observable_row(ibm.observables(system))), len(ibm.OBSERVABLE_COLUMNS))

    def test_relaxes_to_von_mises(self):
        # global coupling, W = 0, D / nu = 0.2
        p = params(radius=10.0, box=10.0)
        system = ibm.run(ibm.random_system(4000, p, np.zeros(4000), seed=5, aligned=True), 1000)
        grid = periodic_grid(128)
        dist = ibm.equilibrium_distance(system, vmf_profile(p.d, grid).values, grid, n_bins=32)
        self.assertLess(dist, 0.15)


class TestCheckpoint(unittest.TestCase):

    def test_round_trip(self):
        system = ibm.run(scattered(100, seed=3), 7)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "ckpt.csv")
            ibm.write_checkpoint(path, system)
            back = ibm.read_checkpoint(path)
        self.assertEqual(back.step_count, 7)
        self.assertEqual(back.seed, 3)
        self.assertEqual(back.params, system.params)
        self.assertTrue(np.array_equal(back.pos, system.pos))
        self.assertTrue(np.array_equal(back.theta, system.theta))

        # resuming reproduces the uninterrupted run
        straight = ibm.run(system, 5)
        resumed = ibm.run(back, 5)
        self.assertEqual(hash_np(straight.theta), hash_np(resumed.theta))

    def test_rejects_foreign_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "other.csv")
            with open(path, "w") as f:
                f.write("# sohr-py 0.1.0 n=1\na,b\n1,2\n")
            with self.assertRaises(ValueError):
                ibm.read_checkpoint(path)


if __name__ == '__main__':
    unittest.main()
