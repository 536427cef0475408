import math
import unittest

import numpy as np

from scripts.ambient_metric import make_euclidean, make_schwarzschild
from scripts.harmonics import evaluate, project, project_out
from scripts.reduction import (
    FAR_OUTLYING,
    LS_CSV_HEADER,
    ON_CENTER,
    OUTLYING,
    SolverConfig,
    classify_regime,
    leading_order_u,
    parameter_derivatives,
    residual_orders,
    seed_scale,
    solve,
    tilde_rescaling,
    uniqueness_basin,
    unknown_bands,
)
from scripts.utils import ConvergenceError, InvalidParameterError


def centered_radius(lam: float) -> float:
    """坐标半径 r, 满足 r(1 + 1/r)² = λ (m = 2)"""
    b = lam - 2.0
    return 0.5 * (b + math.sqrt(b * b - 4.0))


class TestRegimes(unittest.TestCase):
    def test_classify(self):
        self.assertEqual(classify_regime([0.5, 0.0, 0.0]), ON_CENTER)
        self.assertEqual(classify_regime([0.0, 1.5, 0.0]), OUTLYING)
        self.assertEqual(classify_regime([0.0, 0.0, 3.0]), FAR_OUTLYING)

    def test_excluded_annulus(self):
        with self.assertRaises(InvalidParameterError):
            classify_regime([1.05, 0.0, 0.0])
        self.assertEqual(classify_regime([1.05, 0.0, 0.0], delta=0.01), OUTLYING)

    def test_unknown_bands(self):
        self.assertEqual(unknown_bands(4), [0, 2, 3, 4])


class TestSolverConfig(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(InvalidParameterError):
            SolverConfig(delta=0.6)
        with self.assertRaises(InvalidParameterError):
            SolverConfig(lmax=4)
        with self.assertRaises(InvalidParameterError):
            SolverConfig(damping=0.5, min_step=0.75)
        with self.assertRaises(InvalidParameterError):
            SolverConfig(regime="inner")

    def test_u_band(self):
        self.assertEqual(SolverConfig(lmax=16).u_band, 12)


class TestLeadingOrder(unittest.TestCase):
    def test_on_center(self):
        xi = np.array([0.5, 0.0, 0.0])
        u0 = leading_order_u(xi, 100.0, lmax=12)
        self.assertAlmostEqual(u0.mean(), -2.0, places=12)
        # Λ₂ 分量 4|ξ|²/2 · P₂, 在 -ξ̂ 处 P₂ = 1
        value = evaluate(project(u0, 2), np.array([[-1.0, 0.0, 0.0]]))[0]
        self.assertAlmostEqual(float(value), 0.5, places=12)
        self.assertLess(project(u0, 1).max_abs(), 1e-12)

    def test_outlying_constant(self):
        u0 = leading_order_u([0.0, 0.0, 4.0], 100.0, lmax=12, family=make_schwarzschild())
        self.assertAlmostEqual(u0.mean(), -0.5, places=12)

    def test_mass_scaling(self):
        fam = make_schwarzschild(4.0)
        self.assertEqual(seed_scale(fam), 2.0)
        u0 = leading_order_u([0.3, 0.0, 0.0], 100.0, lmax=8, family=fam)
        self.assertAlmostEqual(u0.mean(), -4.0, places=12)

    def test_euclidean_seed_vanishes(self):
        u0 = leading_order_u([0.3, 0.0, 0.0], 100.0, lmax=8, family=make_euclidean())
        self.assertEqual(u0.max_abs(), 0.0)

    def test_regime_mismatch(self):
        with self.assertRaises(InvalidParameterError):
            leading_order_u([1.5, 0.0, 0.0], 100.0, regime=FAR_OUTLYING, lmax=8)
        with self.assertRaises(InvalidParameterError):
            leading_order_u([0.5, 0.0, 0.0], 100.0, regime=OUTLYING, lmax=8)


class TestSolve(unittest.TestCase):
    def test_euclidean_round_sphere(self):
        state = solve([0.2, 0.0, 0.0], 50.0, make_euclidean(), SolverConfig(lmax=12))
        self.assertEqual(state.iterations, 0)
        self.assertEqual(state.kappa, 0.0)
        self.assertEqual(state.u.max_abs(), 0.0)

    def test_centered_schwarzschild_exact(self):
        lam = 100.0
        cfg = SolverConfig(lmax=12, tol_area=1e-12)
        state = solve([0.0, 0.0, 0.0], lam, make_schwarzschild(), cfg)
        # 中心坐标球面上 κ = 4λ^-3 精确成立
        self.assertAlmostEqual(state.kappa * lam**3, 4.0, delta=1e-5)
        self.assertAlmostEqual(state.u.mean(), centered_radius(lam) - lam, delta=1e-7)
        self.assertLess(project_out(state.u, 0).max_abs(), 1e-10)
        self.assertLessEqual(state.residual_perp, cfg.tol_res)
        self.assertLessEqual(state.area_error, cfg.tol_area)

    def test_outlying_converges(self):
        cfg = SolverConfig(lmax=12)
        state = solve([1.5, 0.0, 0.0], 200.0, make_schwarzschild(), cfg)
        self.assertEqual(state.regime, OUTLYING)
        self.assertLessEqual(state.residual_perp, cfg.tol_res)
        self.assertAlmostEqual(state.u.mean(), -2.0 / 1.5, delta=0.05)
        self.assertEqual(len(state.csv_row()), len(LS_CSV_HEADER))
        data = state.to_dict(with_coefficients=False)
        self.assertNotIn("u_coeffs", data)
        self.assertEqual(data["regime"], OUTLYING)

        tilde = tilde_rescaling(state, make_schwarzschild())
        self.assertLess(abs(tilde["u_tilde_mean"]), 0.05)

    def test_tilde_rescaling_rejects_on_center(self):
        state = solve([0.0, 0.0, 0.0], 50.0, make_schwarzschild(), SolverConfig(lmax=10))
        with self.assertRaises(InvalidParameterError):
            tilde_rescaling(state, make_schwarzschild())

    def test_lambda_floor(self):
        with self.assertRaises(InvalidParameterError):
            solve([0.0, 0.0, 0.0], 2.0, make_schwarzschild(), SolverConfig(lmax=10))

    def test_iteration_cap(self):
        cfg = SolverConfig(lmax=10, max_iterations=1, tol_res=1e-300, tol_area=1e-300)
        with self.assertRaises(ConvergenceError) as ctx:
            solve([0.0, 0.0, 0.0], 50.0, make_schwarzschild(), cfg)
        self.assertEqual(len(ctx.exception.trace), 2)
        self.assertEqual(ctx.exception.estimate, ctx.exception.trace[-1])


class TestResidualOrders(unittest.TestCase):
    def test_euclidean_scan(self):
        result = residual_orders([0.3, 0.0, 0.0], [50.0, 100.0], make_euclidean(), SolverConfig(lmax=10), workers=1)
        self.assertEqual(result["regime"], ON_CENTER)
        self.assertEqual([row["lambda"] for row in result["rows"]], [50.0, 100.0])
        self.assertTrue(all(row["kappa"] == 0.0 for row in result["rows"]))
        self.assertTrue(all(row["residual_l1"] < 1e-12 for row in result["rows"]))


class TestLocalDiagnostics(unittest.TestCase):
    def test_uniqueness_basin_euclidean(self):
        result = uniqueness_basin([0.3, 0.0, 0.0], 50.0, make_euclidean(), SolverConfig(lmax=10), radius=0.1, trials=2, seed=1)
        self.assertEqual(len(result["distances"]), 2)
        self.assertLess(result["max_distance"], 1e-6)

    def test_parameter_derivatives_euclidean(self):
        result = parameter_derivatives([0.3, 0.0, 0.0], 50.0, make_euclidean(), SolverConfig(lmax=10))
        self.assertEqual(result["xi_derivative"], 0.0)
        self.assertEqual(result["lambda_derivative"], 0.0)


if __name__ == "__main__":
    unittest.main()
