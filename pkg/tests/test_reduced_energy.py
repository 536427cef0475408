import math
import unittest
from unittest.mock import patch

import numpy as np

from scripts.ambient_metric import PulseSpec, make_bump_metric_g3, make_euclidean, make_pulse_metric, make_schwarzschild
from scripts.reduced_energy import (
    BOUNDARY_ESCAPE,
    CONVERGED,
    DEGENERATE_FLAT,
    EXPANSION,
    FAR_EXPANSION,
    FOLIATION_CSV_HEADER,
    LEAF_OK,
    LEAF_VIOLATION,
    STALLED,
    CriticalPointFinder,
    FoliationLeaf,
    G1,
    G1_HESSIAN_AT_ORIGIN,
    G1_outlying,
    G1_outlying_radial_derivative,
    G1_radial_derivative,
    G_direct,
    G_expansion,
    G_far_outlying,
    ReducedEval,
    build_foliation,
    cmc_reduced_area,
    dogleg_step,
    eigenvector_following_step,
    expansion_gap,
    far_outlying_radial_lower_bound,
    find_critical_point,
    foliation_summary,
    F_lambda,
    g4_critical_t,
    g4_profile_prediction,
    monotonicity_scan,
    pulse_radial_predictor,
    radial_derivative,
    slow_divergence_energy,
    transversality_margin,
)
from scripts.reduction import ON_CENTER, SolverConfig
from scripts.surface_geometry import GraphSurface
from scripts.utils import DomainError, InvalidParameterError, UnsupportedCaseError

E1 = np.array([1.0, 0.0, 0.0])


def outlying_closed(a: float) -> float:
    return (
        -32.0 * math.pi / (a * a - 1.0)
        - 48.0 * math.pi / a * math.log((a + 1.0) / (a - 1.0))
        - 128.0 * math.pi * math.log(1.0 - a**-2)
    )


class TestClosedForms(unittest.TestCase):
    def test_g1_origin(self):
        self.assertEqual(G1(np.zeros(3)), 0.0)
        self.assertAlmostEqual(G1(1e-3 * E1), 128.0 * math.pi * 1e-6, delta=1e-10)

    def test_g1_small_branch_matches_closed(self):
        a = 0.0099
        closed = (
            64.0 * math.pi
            + 32.0 * math.pi / (1.0 - a * a)
            - 48.0 * math.pi / a * math.log((1.0 + a) / (1.0 - a))
            - 128.0 * math.pi * math.log(1.0 - a * a)
        )
        self.assertAlmostEqual(G1(a * E1), closed, delta=1e-8 * closed)

    def test_g1_hessian_at_origin(self):
        h = 1e-3
        second = (G1(h * E1) + G1(-h * E1) - 2.0 * G1(np.zeros(3))) / h**2
        self.assertAlmostEqual(second, G1_HESSIAN_AT_ORIGIN, delta=1e-4 * G1_HESSIAN_AT_ORIGIN)

    def test_g1_blows_up(self):
        self.assertGreater(G1(0.999 * E1), 1e4)
        with self.assertRaises(DomainError):
            G1(E1)

    def test_g1_derivative(self):
        h = 1e-6
        for a in (0.005, 0.5, 0.8):
            fd = (G1((a + h) * E1) - G1((a - h) * E1)) / (2.0 * h)
            self.assertAlmostEqual(G1_radial_derivative(a), fd, delta=1e-6 * abs(fd))

    def test_outlying_series_matches_closed(self):
        for a in (2.0, 3.0, 6.0):
            self.assertAlmostEqual(G1_outlying(a * E1), outlying_closed(a), delta=1e-9 * abs(outlying_closed(a)))

    def test_outlying_tail(self):
        a = 10.0
        leading = -128.0 * math.pi / 15.0 * a**-6
        self.assertAlmostEqual(G1_outlying(a * E1) - leading, -96.0 * math.pi / 7.0 * a**-8, delta=a**-8)

    def test_outlying_derivative(self):
        h = 1e-6
        for a in (1.5, 2.5):
            fd = (G1_outlying((a + h) * E1) - G1_outlying((a - h) * E1)) / (2.0 * h)
            self.assertAlmostEqual(G1_outlying_radial_derivative(a), fd, delta=1e-5 * abs(fd))
        with self.assertRaises(DomainError):
            G1_outlying(0.5 * E1)

    def test_far_outlying_lower_bound(self):
        a = 10.0
        value = a * G1_outlying_radial_derivative(a)
        self.assertAlmostEqual(value, far_outlying_radial_lower_bound(a * E1), delta=3e-2 * value)


class TestExpansions(unittest.TestCase):
    def test_schwarzschild_is_closed_form(self):
        fam = make_schwarzschild()
        ev = G_expansion(0.5 * E1, 1000.0, fam)
        self.assertEqual(ev.method, EXPANSION)
        self.assertEqual(ev.curvature_term, 0.0)
        self.assertEqual(ev.value, G1(0.5 * E1))

    def test_mass_scaling(self):
        ev = G_expansion(0.5 * E1, 1000.0, make_schwarzschild(4.0))
        self.assertAlmostEqual(ev.value, 4.0 * G1(0.5 * E1), places=9)
        self.assertEqual(G_expansion(0.5 * E1, 1000.0, make_euclidean()).value, 0.0)

    def test_far_outlying(self):
        fam = make_schwarzschild()
        ev = G_far_outlying(5.0 * E1, 1000.0, fam)
        self.assertEqual(ev.method, FAR_EXPANSION)
        self.assertAlmostEqual(ev.value, -128.0 * math.pi / 15.0 * 5.0**-6, places=14)
        self.assertAlmostEqual(ev.comparison, ev.value, delta=0.1 * abs(ev.value))
        with self.assertRaises(InvalidParameterError):
            G_far_outlying(1.5 * E1, 1000.0, fam)

    def test_radial_derivative(self):
        fam = make_schwarzschild()
        self.assertAlmostEqual(radial_derivative(1000.0, fam, 0.5 * E1), G1_radial_derivative(0.5), places=10)
        with self.assertRaises(InvalidParameterError):
            radial_derivative(1000.0, fam, np.zeros(3))
        with self.assertRaises(InvalidParameterError):
            radial_derivative(1000.0, fam, 0.5 * E1, method="secant")

    def test_monotonicity_scan(self):
        fam = make_schwarzschild()
        scan = monotonicity_scan(1000.0, fam, [0.2, 0.5, 0.8, 1.5, 3.0], method=EXPANSION)
        self.assertEqual(scan["violations"], [])
        self.assertEqual(scan["sign_changes"], [])
        self.assertEqual([row["radius"] for row in scan["rows"]], [0.2, 0.5, 0.8, 1.5, 3.0])

    def test_g4_critical_point(self):
        roots = g4_critical_t(1)
        self.assertTrue(roots)
        self.assertTrue(all(4.0 < t < 6.0 for t in roots))
        self.assertTrue(any(5.0 < t < 7.0 for t in roots))

    def test_g4_profile_matches_far_outlying(self):
        fam = make_pulse_metric(PulseSpec.g4())
        j = 2
        lam = 10.0**j
        for t in (4.8, 5.0, 5.4):
            predicted = g4_profile_prediction(t, j)
            value = G_far_outlying(t * lam * E1, lam, fam).value
            self.assertAlmostEqual(value, predicted, delta=1e-3 * abs(predicted))

    def test_pulse_radial_predictor(self):
        self.assertEqual(pulse_radial_predictor(make_schwarzschild(), 3.5 * E1, 1000.0), 0.0)
        fam = make_pulse_metric(PulseSpec.g2(1.0))
        lam, a, h = 1000.0, 3.5, 1e-3
        plus = G_expansion((a + h) * E1, lam, fam).curvature_term
        minus = G_expansion((a - h) * E1, lam, fam).curvature_term
        expected = a * (plus - minus) / (2.0 * h)
        self.assertNotEqual(expected, 0.0)
        self.assertAlmostEqual(pulse_radial_predictor(fam, a * E1, lam), expected, delta=1e-3 * abs(expected))


class TestDirectEvaluation(unittest.TestCase):
    def test_centered_energy(self):
        lam = 50.0
        surf = GraphSurface.coordinate_sphere(make_schwarzschild(), np.zeros(3), lam, 12)
        expected = 64.0 * math.pi * lam * (2.0 * lam + 1.0) / (lam + 1.0) ** 2
        self.assertAlmostEqual(F_lambda(surf, ON_CENTER), expected, delta=1e-8 * expected)

    def test_expansion_gap_euclidean(self):
        gap = expansion_gap([0.3, 0.0, 0.0], 50.0, make_euclidean(), SolverConfig(lmax=10))
        self.assertEqual(gap["regime"], ON_CENTER)
        self.assertEqual(gap["expansion"], 0.0)
        self.assertAlmostEqual(gap["scaled_gap"], 0.0, delta=1e-8)

    def test_direct_vanishes_at_origin(self):
        cfg = SolverConfig(lmax=12, tol_area=1e-12)
        ev = G_direct(np.zeros(3), 100.0, make_schwarzschild(), cfg)
        self.assertEqual(ev.regime, ON_CENTER)
        self.assertAlmostEqual(ev.value, 0.0, delta=1e-5)
        self.assertIsNotNone(ev.state)
        self.assertIn("kappa", ev.to_dict())


class TestTrustRegion(unittest.TestCase):
    def test_zero_gradient(self):
        self.assertEqual(dogleg_step(np.zeros(3), np.eye(3), 1.0).tolist(), [0.0, 0.0, 0.0])

    def test_newton_step_inside(self):
        p = dogleg_step(np.array([1.0, 0.0, 0.0]), 2.0 * np.eye(3), 10.0)
        self.assertTrue(np.allclose(p, [-0.5, 0.0, 0.0]))

    def test_steepest_descent_when_short(self):
        p = dogleg_step(np.array([1.0, 0.0, 0.0]), 2.0 * np.eye(3), 0.1)
        self.assertTrue(np.allclose(p, [-0.1, 0.0, 0.0]))

    def test_indefinite(self):
        p = dogleg_step(np.array([0.0, 2.0]), np.diag([1.0, -1.0]), 0.5)
        self.assertTrue(np.allclose(p, [0.0, -0.5]))

    def test_dogleg_on_boundary(self):
        p = dogleg_step(np.array([1.0, 1.0]), np.diag([1.0, 10.0]), 0.5)
        self.assertAlmostEqual(float(np.linalg.norm(p)), 0.5, places=12)
        self.assertTrue(np.all(p < 0.0))

    def test_eigenvector_following(self):
        p = eigenvector_following_step(np.array([1.0, 1.0]), np.diag([-1.0, 2.0]), 10.0, index=1)
        self.assertTrue(np.allclose(p, [1.0, -0.5]))
        short = eigenvector_following_step(np.array([1.0, 1.0]), np.diag([-1.0, 2.0]), 0.1, index=1)
        self.assertAlmostEqual(float(np.linalg.norm(short)), 0.1, places=12)


def quadratic_model(center, constant=None):
    """G = |ξ - center|², 或 constant 给定时返回不变的值与单位梯度"""
    center = np.asarray(center, dtype=float)

    def evaluate(xi, lam, seed, derivatives=True):
        xi = np.asarray(xi, dtype=float)
        if constant is not None:
            value, gradient, hessian = constant, E1, np.eye(3)
        else:
            d = xi - center
            value, gradient, hessian = float(d @ d), 2.0 * d, 2.0 * np.eye(3)
        return ReducedEval(
            xi=[float(v) for v in xi], lam=lam, regime=ON_CENTER, value=value, method=EXPANSION,
            gradient=[float(v) for v in gradient], hessian=hessian.tolist(),
        )

    return evaluate


class TestCriticalPoints(unittest.TestCase):
    def test_euclidean_is_flat(self):
        found = find_critical_point(100.0, make_euclidean(), 0.3 * E1, SolverConfig(lmax=10))
        self.assertEqual(found.status, DEGENERATE_FLAT)
        self.assertEqual(found.xi, [0.3, 0.0, 0.0])

    def test_schwarzschild_centers(self):
        found = find_critical_point(200.0, make_schwarzschild(), 0.3 * E1, SolverConfig(lmax=10), xi_tol=1e-4)
        self.assertEqual(found.status, CONVERGED)
        self.assertLess(float(np.linalg.norm(found.xi)), 0.05)
        self.assertGreater(min(found.hessian_eigenvalues), 0.0)

    def test_quadratic_model_converges(self):
        finder = CriticalPointFinder(make_euclidean(), SolverConfig())
        with patch.object(CriticalPointFinder, "_evaluate", side_effect=quadratic_model([0.2, -0.1, 0.0])):
            found = finder.find(100.0, 0.5 * E1)
        self.assertEqual(found.status, CONVERGED)
        self.assertTrue(np.allclose(found.xi, [0.2, -0.1, 0.0], atol=1e-10))

    def test_boundary_escape(self):
        # 极小点 0.95 e1 落在排除环内
        finder = CriticalPointFinder(make_euclidean(), SolverConfig())
        with patch.object(CriticalPointFinder, "_evaluate", side_effect=quadratic_model(0.95 * E1)):
            found = finder.find(100.0, 0.5 * E1)
        self.assertEqual(found.status, BOUNDARY_ESCAPE)
        self.assertLess(found.xi[0], 0.9)

    def test_noise_floor_is_not_convergence(self):
        # 值不变而梯度不为零: 信赖域收缩到底也不能报告收敛
        finder = CriticalPointFinder(make_euclidean(), SolverConfig())
        with patch.object(CriticalPointFinder, "_evaluate", side_effect=quadratic_model(np.zeros(3), constant=1.0)):
            found = finder.find(100.0, 0.3 * E1)
        self.assertEqual(found.status, STALLED)
        self.assertEqual(found.gradient_norm, 1.0)
        self.assertEqual(found.xi, [0.3, 0.0, 0.0])
        self.assertEqual(found.to_dict()["gradient_norm"], 1.0)

    def test_rejects_annulus_start(self):
        with self.assertRaises(InvalidParameterError):
            CriticalPointFinder(make_euclidean(), SolverConfig()).find(100.0, 0.95 * E1)


class TestFoliation(unittest.TestCase):
    def test_schwarzschild_leaves(self):
        fam = make_schwarzschild()
        cfg = SolverConfig(lmax=10)
        leaves = build_foliation([100.0, 120.0], fam, cfg)
        self.assertEqual([leaf.lam for leaf in leaves], [100.0, 120.0])
        summary = foliation_summary(leaves)
        self.assertTrue(summary["kappa_decreasing"])
        self.assertGreater(summary["min_margin"], 0.5)
        self.assertGreater(summary["min_hessian_eig"], 0.0)
        self.assertEqual(summary["violations"], [])

    def test_transversality_at_center(self):
        fam = make_schwarzschild()
        leaf = G_direct(np.zeros(3), 100.0, fam, SolverConfig(lmax=10), derivatives=True)
        margin, xi_prime = transversality_margin(leaf, fam, SolverConfig(lmax=10))
        self.assertGreater(margin, 0.5)
        self.assertLess(float(np.linalg.norm(xi_prime)) * 100.0, 0.1)

    def test_euclidean_declines(self):
        with self.assertRaises(UnsupportedCaseError):
            build_foliation([100.0, 120.0], make_euclidean(), SolverConfig(lmax=10))


class TestFoliationSummary(unittest.TestCase):
    def leaf(self, lam, kappa, margin, status=LEAF_OK):
        return FoliationLeaf(
            lam=lam, xi=[0.0, 0.0, 0.0], state=None, kappa=kappa, hawking_mass=1.9,
            margin=margin, hessian_min_eig=10.0, status=status,
        )

    def test_summary(self):
        leaves = [self.leaf(100.0, 4e-6, 0.5), self.leaf(200.0, 5e-7, 0.3)]
        summary = foliation_summary(leaves)
        self.assertTrue(summary["kappa_decreasing"])
        self.assertEqual(summary["min_margin"], 0.3)
        self.assertEqual(summary["violations"], [])
        self.assertEqual(len(leaves[0].csv_row()), len(FOLIATION_CSV_HEADER))

    def test_violation(self):
        leaves = [self.leaf(100.0, 4e-6, 0.5), self.leaf(200.0, 5e-6, -0.1, LEAF_VIOLATION)]
        summary = foliation_summary(leaves)
        self.assertFalse(summary["kappa_decreasing"])
        self.assertEqual(summary["violations"], [200.0])

    def test_hessian_eigenvalues(self):
        ev = ReducedEval(xi=[0.0] * 3, lam=100.0, regime=ON_CENTER, value=0.0, method=EXPANSION, hessian=np.diag([3.0, 1.0, 2.0]).tolist())
        self.assertTrue(np.allclose(ev.hessian_eigenvalues, [1.0, 2.0, 3.0]))


class TestCmcAndSlowDivergence(unittest.TestCase):
    def test_cmc_area_schwarzschild(self):
        area, predictor = cmc_reduced_area(3.0 * E1, 1000.0, make_schwarzschild())
        self.assertAlmostEqual(area - 4.0 * math.pi * 1e6, -8.0 * math.pi / 35.0 * 3.0**-6, delta=1e-8)
        self.assertAlmostEqual(predictor, 48.0 * math.pi / 35.0 * 3.0**-6, places=14)
        with self.assertRaises(InvalidParameterError):
            cmc_reduced_area(1.5 * E1, 1000.0, make_schwarzschild())

    def test_slow_divergence(self):
        result = slow_divergence_energy(make_schwarzschild(), 1e4, 100.0)
        self.assertLess(abs(result["difference"]), 0.1 * 8.0 * math.pi / 100.0**2)
        with self.assertRaises(InvalidParameterError):
            slow_divergence_energy(make_schwarzschild(), 100.0, 200.0)
        with self.assertRaises(UnsupportedCaseError):
            slow_divergence_energy(make_bump_metric_g3(1.0, 5e-4), 1e4, 100.0)


if __name__ == "__main__":
    unittest.main()
