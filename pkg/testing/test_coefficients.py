import math
import os
import tempfile
import unittest

import numpy as np

import sohr_py.coefficients as coef
from sohr_py.angular_kernel import OverflowGuardError, periodic_grid
from sohr_py.datatransfer import TableNodeArg, TableNodeResult
from sohr_py.gci import solve_gci, solve_perturbations
from sohr_py.gvm import solve_gvm
from sohr_py.vmf import c1, c2

N_THETA = 128


def small_table(d: float = 1.0, w_max: float = 2.0, n_w: int = 8, zeta: float = 1.0,
                keep_profiles: bool = False) -> coef.CoefficientTable:
    """
    A coarse table that builds in well under a second.
    """
    return coef.build_table(d, w_max, n_w, n_theta=N_THETA, zeta=zeta, keep_profiles=keep_profiles)


def node(d: float, w: float, zeta: float = 1.0) -> TableNodeResult:
    return coef.compute_node(TableNodeArg(key=0, d=d, w=w, zeta=zeta, n_theta=N_THETA, keep_profiles=False))


class TestAVector(unittest.TestCase):

    def test_w0_identities(self):
        grid = periodic_grid(N_THETA)
        for d in (0.2, 1.0, 5.0):
            gvm = solve_gvm(d, 0.0, grid)
            av = coef.compute_avector(gvm, solve_gci(gvm))
            self.assertAlmostEqual(av.a5, d * gvm.lam * av.a1, delta=1e-9)
            self.assertAlmostEqual(av.a2 / av.a1, c2(d, grid), delta=1e-8 * abs(c2(d, grid)))
            self.assertAlmostEqual(av.a4, 0.0, delta=1e-10)
            self.assertAlmostEqual(av.a3, 0.0, delta=1e-10)
            self.assertAlmostEqual(av.a6, 0.0, delta=1e-10)

    def test_mismatch_rejected(self):
        grid = periodic_grid(N_THETA)
        with self.assertRaises(ValueError):
            coef.compute_avector(solve_gvm(1.0, 1.0, grid), solve_gci(solve_gvm(1.0, 2.0, grid)))

    def test_parity(self):
        plus, minus = node(1.0, 2.0), node(1.0, -2.0)
        for k in (0, 1, 4):
            self.assertAlmostEqual(plus.a[k], minus.a[k], delta=1e-8)
        for k in (2, 3, 5):
            self.assertAlmostEqual(plus.a[k], -minus.a[k], delta=1e-8)


class TestWGrid(unittest.TestCase):

    def test_midpoints(self):
        w, dw = coef.w_midpoints(10.0, 64)
        self.assertEqual(w.shape, (64,))
        self.assertAlmostEqual(dw, 20.0 / 64)
        self.assertTrue(np.array_equal(w, -w[::-1]))
        self.assertAlmostEqual(w[0], -10.0 + dw / 2)

    def test_midpoints_reject(self):
        with self.assertRaises(ValueError):
            coef.w_midpoints(10.0, 7)
        with self.assertRaises(ValueError):
            coef.w_midpoints(-1.0, 8)

    def test_gaussian_density(self):
        w, dw = coef.w_midpoints(10.0, 64)
        rho = coef.gaussian_density(w, dw, sigma=1.0, mass=2.0)
        self.assertAlmostEqual(rho.mass, 2.0, places=12)
        self.assertTrue(rho.is_even())
        self.assertAlmostEqual(rho.momentum, 0.0, places=12)
        shifted = coef.gaussian_density(w, dw, sigma=1.0, shift=1.0)
        self.assertFalse(shifted.is_even())
        self.assertAlmostEqual(shifted.momentum, 1.0, places=6)

    def test_negative_density_rejected(self):
        w, dw = coef.w_midpoints(1.0, 4)
        with self.assertRaises(ValueError):
            coef.WDensity(values=np.array([1.0, -1.0, 0.0, 0.0]), w_grid=w, dw=dw)


class TestTable(unittest.TestCase):

    # ==================================================================================================================
    # Construction
    # ==================================================================================================================

    def test_build(self):
        table = small_table()
        self.assertEqual(table.n_w, 8)
        self.assertEqual(table.a.shape, (8, 6))
        self.assertTrue(table.parity_passed())
        self.assertTrue(table.positivity_passed())
        self.assertIsNone(table.phi)

    def test_keep_profiles(self):
        table = small_table(keep_profiles=True)
        self.assertEqual(table.phi.shape, (8, N_THETA))
        self.assertEqual(table.x.shape, (8, N_THETA))

    def test_zeta_scaling(self):
        scaled = small_table(zeta=0.5)
        plain = coef.build_table(1.0, 1.0, 8, n_theta=N_THETA)
        self.assertTrue(np.allclose(scaled.a, plain.a, atol=1e-12))
        self.assertTrue(np.allclose(scaled.w_grid, 2.0 * plain.w_grid))

    def test_overflow_guard(self):
        with self.assertRaises(OverflowGuardError):
            coef.table_args(0.2, 1e6, 8)

    def test_failed_node(self):
        args = coef.table_args(1.0, 2.0, 4, n_theta=N_THETA)
        results = coef.run_nodes_sequential(args)
        results[2] = TableNodeResult(key=2, w=args[2].w, error="Traceback: boom")
        with self.assertRaises(RuntimeError) as ctx:
            coef.assemble_table(1.0, 2.0, 4, 1.0, results)
        self.assertIn("d=1.0", str(ctx.exception))

    def test_incomplete(self):
        args = coef.table_args(1.0, 2.0, 4, n_theta=N_THETA)
        with self.assertRaises(RuntimeError):
            coef.assemble_table(1.0, 2.0, 4, 1.0, coef.run_nodes_sequential(args[:3]))

    def test_w0_limits(self):
        table = small_table(w_max=0.5, n_w=2)
        # nodes at +-0.25, c1_tilde is even and close to c1
        self.assertAlmostEqual(table.c1_tilde[0], table.c1_tilde[1], places=12)
        self.assertLess(table.c1_tilde[0], c1(1.0))

    # ==================================================================================================================
    # Access
    # ==================================================================================================================

    def test_interp(self):
        table = small_table()
        self.assertAlmostEqual(table.interp("a1", table.w_grid[3]), table.a[3, 0])
        mid = 0.5 * (table.w_grid[3] + table.w_grid[4])
        self.assertAlmostEqual(table.psi_at(mid), 0.5 * (table.psi[3] + table.psi[4]))
        with self.assertRaises(ValueError):
            table.interp("a1", 5.0)
        with self.assertRaises(KeyError):
            table.column("a7")

    def test_csv_round_trip(self):
        table = small_table()
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "table.csv")
            table.to_csv(path, extra={"seed": 0})
            with open(path) as f:
                self.assertTrue(f.readline().startswith("# sohr-py"))
                self.assertEqual(f.readline().strip(), ",".join(coef.TABLE_COLUMNS))
            back = coef.CoefficientTable.from_csv(path)
        self.assertEqual(back.d, table.d)
        self.assertAlmostEqual(back.dw, table.dw)
        for name in coef.TABLE_COLUMNS:
            self.assertTrue(np.array_equal(back.column(name), table.column(name)), msg=name)

    # ==================================================================================================================
    # Moments
    # ==================================================================================================================

    def test_point_density_moments(self):
        table = small_table()
        rho = coef.point_density(table.w_grid, table.dw, 5, mass=3.0)
        self.assertTrue(np.allclose(coef.moments(table, rho), 3.0 * table.a[5]))

    def test_moment_fields(self):
        table = small_table()
        rho = coef.gaussian_density(table.w_grid, table.dw)
        field = np.repeat(rho.values[:, None], 3, axis=1)
        m = coef.moment_fields(table, field)
        self.assertEqual(m.shape, (6, 3))
        self.assertTrue(np.allclose(m[:, 1], coef.moments(table, rho)))
        self.assertAlmostEqual(float(coef.weighted_moment(table, 5, rho.values)), coef.moments(table, rho)[4])

    def test_even_density_kills_odd_moments(self):
        table = small_table()
        m = coef.moments(table, coef.gaussian_density(table.w_grid, table.dw))
        for k in (2, 3, 5):
            self.assertAlmostEqual(m[k], 0.0, delta=1e-10)

    def test_density_grid_mismatch(self):
        table = small_table()
        w, dw = coef.w_midpoints(3.0, 8)
        with self.assertRaises(ValueError):
            coef.moments(table, coef.gaussian_density(w, dw))

    def test_node_doubling(self):
        coarse = small_table(n_w=8)
        fine = small_table(n_w=16)
        self.assertLess(coef.node_doubling_error(coarse, fine), 0.1)

    def test_large_w_slopes(self):
        slopes = coef.large_w_slopes(small_table(w_max=8.0, n_w=8), w_min=3.0)
        self.assertEqual(set(slopes), {"a2", "a4"})
        self.assertTrue(all(math.isfinite(v) for v in slopes.values()))


class TestSmallZeta(unittest.TestCase):

    def test_zeroth_order_matches_node(self):
        d = 1.0
        small = coef.small_zeta_coeffs(d, solve_perturbations(d, periodic_grid(N_THETA)))
        zero = node(d, 0.0)
        self.assertAlmostEqual(small.a1_0, zero.a[0], delta=1e-10)
        self.assertAlmostEqual(small.a2_0, zero.a[1], delta=1e-10)
        self.assertAlmostEqual(small.a5_0, zero.a[4], delta=1e-10)
        self.assertAlmostEqual(small.lam0, 1.0, delta=1e-10)
        self.assertAlmostEqual(small.c5, d, delta=1e-9)

    def test_first_order_slopes(self):
        d = 1.0
        small = coef.small_zeta_coeffs(d, solve_perturbations(d, periodic_grid(N_THETA)))
        w = 1e-3
        a = node(d, w).a
        for k, slope in ((2, small.a3_1), (3, small.a4_1), (5, small.a6_1)):
            self.assertAlmostEqual(a[k] / w, slope, delta=1e-4 * max(1.0, abs(slope)), msg=f"a{k + 1}")

    def test_quadratic_remainder(self):
        d = 1.0
        small = coef.small_zeta_coeffs(d, solve_perturbations(d, periodic_grid(N_THETA)))
        err = [abs(node(d, 1.0, zeta=z).a[0] - small.a1_0) for z in (0.1, 0.05)]
        self.assertAlmostEqual(err[0] / err[1], 4.0, delta=0.8)

    def test_mismatched_d(self):
        with self.assertRaises(ValueError):
            coef.small_zeta_coeffs(0.5, solve_perturbations(1.0, periodic_grid(N_THETA)))


if __name__ == '__main__':
    unittest.main()
