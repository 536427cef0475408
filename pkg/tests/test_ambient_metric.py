import math
import unittest
from unittest.mock import patch

import numpy as np

from scripts.ambient_metric import (
    BUMP_G3,
    PULSE,
    PulseSpec,
    bump_chi,
    curvature_jet,
    decay_exponents,
    family_from_dict,
    integrate_R,
    integrate_R_radial_derivative,
    laplacian_R,
    make_bump_metric_g3,
    make_euclidean,
    make_general_conformal,
    make_pulse_metric,
    make_schwarzschild,
    monte_carlo_integral,
    radial_growth,
    radial_scalar_curvature,
    reference_schwarzschild,
    scalar_curvature,
)
from scripts.config import Config
from scripts.harmonics import random_directions
from scripts.utils import DomainError, InvalidParameterError, gauss_legendre


def schwarzschild_profile(rho):
    return 1.0 + 1.0 / rho, -1.0 / rho**2, 2.0 / rho**3, -6.0 / rho**4


class TestSchwarzschild(unittest.TestCase):
    def setUp(self):
        self.fam = make_schwarzschild()

    def test_ricci_on_axis(self):
        jet = curvature_jet(self.fam, np.array([[2.0, 0.0, 0.0]]))
        ric = jet.ricci[0]
        self.assertAlmostEqual(ric[0, 0], -2.0 / 9.0, places=13)
        self.assertAlmostEqual(ric[1, 1], 1.0 / 9.0, places=13)
        self.assertAlmostEqual(ric[2, 2], 1.0 / 9.0, places=13)
        self.assertAlmostEqual(ric[0, 1], 0.0, places=14)

    def test_scalar_flat(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(2.0, 50.0, size=(50, 3))
        self.assertLess(float(np.max(np.abs(scalar_curvature(self.fam, x)))), 1e-12)
        self.assertTrue(self.fam.scalar_flat)
        self.assertLess(float(np.max(np.abs(laplacian_R(self.fam, x)))), 1e-8)

    def test_inner_cutoff(self):
        with self.assertRaises(DomainError):
            scalar_curvature(self.fam, np.array([[1.0, 0.0, 0.0]]))

    def test_mass_scaling(self):
        fam = make_schwarzschild(4.0)
        self.assertEqual(fam.scale, 2.0)
        self.assertEqual(fam.cutoff, 3.0)
        self.assertEqual(reference_schwarzschild(fam).mass, 4.0)
        with self.assertRaises(InvalidParameterError):
            make_schwarzschild(0.0)

    def test_integral_vanishes(self):
        result = integrate_R(self.fam, np.array([3000.0, 0.0, 0.0]), 1000.0)
        self.assertEqual(result.value, 0.0)

    def test_exact_decay(self):
        exponents = decay_exponents(self.fam, [10.0, 100.0, 1000.0])
        self.assertIsNone(exponents["sigma"])

    def test_radial_growth_vanishes(self):
        x = np.array([[3.0, 0.0, 0.0], [0.0, 6.0, 8.0], [30.0, 40.0, 0.0], [0.0, 0.0, 100.0]])
        self.assertLess(float(np.max(np.abs(radial_growth(self.fam, x)))), 1e-10)


class TestEuclidean(unittest.TestCase):
    def test_flat(self):
        fam = make_euclidean()
        jet = curvature_jet(fam, np.array([[0.3, 0.2, 0.1]]))
        self.assertTrue(np.allclose(jet.ricci, 0.0))
        self.assertEqual(fam.mass, 0.0)
        self.assertEqual(reference_schwarzschild(fam).mass, 2.0)


class TestPulse(unittest.TestCase):
    def setUp(self):
        self.spec = PulseSpec.g2(5.0)
        self.fam = make_pulse_metric(self.spec)

    def test_profile_sign_and_support(self):
        S, _ = self.spec.profile_jet(np.array([3.5, 5.0, 35.0, 2.0]))
        self.assertLess(S[0], 0.0)
        self.assertEqual(S[1], 0.0)
        self.assertLess(S[2], 0.0)
        self.assertEqual(S[3], 0.0)
        # 第 k 带幅度按 10^-4k 缩放
        self.assertAlmostEqual(S[2] / S[0], 1e-4, places=12)

    def test_scalar_curvature_matches_profile(self):
        s = np.array([3.2, 3.5, 3.9, 35.0])
        x = s[:, None] * np.array([0.0, 0.6, 0.8])
        direct = scalar_curvature(self.fam, x)
        radial = radial_scalar_curvature(self.fam, s)
        self.assertTrue(np.allclose(direct, radial, rtol=1e-10, atol=0.0))
        self.assertTrue(np.all(direct > 0.0))

    def test_potential_derivative(self):
        s = np.array([3.5])
        h = 1e-5
        psi_plus = self.spec.potential_jet(s + h)[0]
        psi_minus = self.spec.potential_jet(s - h)[0]
        d1 = self.spec.potential_jet(s)[1]
        self.assertAlmostEqual(float((psi_plus - psi_minus)[0] / (2 * h)), float(d1[0]), places=6)

    def test_validation(self):
        with self.assertRaises(InvalidParameterError):
            PulseSpec(amplitude=-1.0)
        with self.assertRaises(InvalidParameterError):
            PulseSpec(amplitude=1.0, exponent=3.0)
        with self.assertRaises(InvalidParameterError):
            PulseSpec(amplitude=1.0, support=(3.0, 40.0))
        with self.assertRaises(InvalidParameterError):
            make_pulse_metric(PulseSpec.g2(1e9))

    def test_quadrature_nodes_follow_config(self):
        with patch.object(Config, "PSI_NODES", 16):
            coarse = PulseSpec.g2(5.0)
        self.assertEqual(coarse.nodes, 16)
        self.assertEqual(self.spec.nodes, Config.PSI_NODES)
        s = np.array([3.5])
        self.assertAlmostEqual(float(coarse.potential_jet(s)[0][0]), float(self.spec.potential_jet(s)[0][0]), delta=1e-3)

    def test_g4_slope(self):
        spec = PulseSpec.g4()
        value, deriv = spec.chi_jet(np.array([5.0]))
        self.assertAlmostEqual(float(value[0]), math.exp(-1.0), places=14)
        self.assertAlmostEqual(float(deriv[0]), 1.0, places=12)

    def test_integral_matches_monte_carlo(self):
        center = np.array([3500.0, 0.0, 0.0])
        exact = integrate_R(self.fam, center, 1000.0).value
        mc, err = monte_carlo_integral(self.fam, center, 1000.0, samples=200_000, seed=5)
        self.assertGreater(exact, 0.0)
        self.assertLess(abs(exact - mc), 5.0 * err + 1e-12)

    def test_moment_matches_monte_carlo(self):
        center = np.array([3500.0, 0.0, 0.0])
        xi = np.array([3.5, 0.0, 0.0])
        exact = integrate_R(self.fam, center, 1000.0, moment=xi).value
        mc, err = monte_carlo_integral(self.fam, center, 1000.0, samples=200_000, seed=6, moment=xi)
        self.assertLess(abs(exact - mc), 5.0 * err + 1e-12)

    def test_radial_derivative(self):
        h = 1.0
        plus = integrate_R(self.fam, np.array([3200.0 + h, 0.0, 0.0]), 1000.0).value
        minus = integrate_R(self.fam, np.array([3200.0 - h, 0.0, 0.0]), 1000.0).value
        derivative = integrate_R_radial_derivative(self.fam, np.array([3200.0, 0.0, 0.0]), 1000.0)
        self.assertNotEqual(derivative, 0.0)
        self.assertAlmostEqual(derivative, (plus - minus) / (2 * h), delta=1e-4 * abs(derivative))

    def test_exterior_requires_room(self):
        with self.assertRaises(DomainError):
            integrate_R(self.fam, np.array([999.0, 0.0, 0.0]), 1000.0, exterior=True)
        with self.assertRaises(DomainError):
            integrate_R(self.fam, np.array([500.0, 0.0, 0.0]), 1000.0)

    def test_exterior_of_centered_ball(self):
        # 球心在原点, 外部积分等于所有 s > λ 的频带壳层之和
        lam = 50.0
        result = integrate_R(self.fam, np.zeros(3), lam, exterior=True)
        total = 0.0
        for k in range(1, 8):
            s, w = gauss_legendre(64, 3.0 * 10**k, 4.0 * 10**k)
            if s[0] < lam:
                continue
            total += float(np.sum(w * radial_scalar_curvature(self.fam, s) * 4 * math.pi * s**2))
        self.assertAlmostEqual(result.value, total, delta=1e-6 * abs(total))


class TestBumpMetric(unittest.TestCase):
    def test_bump_profile(self):
        self.assertAlmostEqual(float(bump_chi(np.zeros(3))), math.exp(-1.0), places=15)
        self.assertEqual(float(bump_chi(np.array([1.0, 0.0, 0.0]))), 0.0)

    def test_construction(self):
        fam = make_bump_metric_g3(1.0, 5e-4)
        self.assertEqual(fam.variant, BUMP_G3)
        self.assertFalse(fam.is_radial)
        self.assertFalse(fam.scalar_flat)
        with self.assertRaises(InvalidParameterError):
            make_bump_metric_g3(-1.0)

    def test_decay_along_z(self):
        fam = make_bump_metric_g3(1.0, 5e-4)
        exponents = decay_exponents(fam, [100.0, 1000.0, 10000.0], directions=np.array([[0.0, 0.0, 1.0]]))
        self.assertAlmostEqual(exponents["sigma"], 2.0, delta=0.05)

    def test_radial_growth_sampled(self):
        fam = make_bump_metric_g3(1.0, 5e-4)
        radii = np.geomspace(50.0, 5000.0, 200)[:, None]
        sample_points = np.vstack([radii * random_directions(200, 7), radii * np.array([1.0, 0.0, 0.0])])
        self.assertLessEqual(float(np.max(radial_growth(fam, sample_points))), 1e-8)


class TestGeneralConformal(unittest.TestCase):
    def test_reproduces_schwarzschild(self):
        fam = make_general_conformal(schwarzschild_profile)
        x = np.array([[2.0, 0.0, 0.0], [0.0, 3.0, 4.0], [10.0, -20.0, 5.0]])
        self.assertTrue(np.allclose(curvature_jet(fam, x).ricci, curvature_jet(make_schwarzschild(), x).ricci, rtol=1e-12, atol=1e-16))
        self.assertLess(float(np.max(np.abs(scalar_curvature(fam, x)))), 1e-12)

    def test_rejects_nonpositive_factor(self):
        with self.assertRaises(InvalidParameterError):
            make_general_conformal(lambda rho: (1.0 - 10.0 / rho, 10.0 / rho**2, -20.0 / rho**3, 60.0 / rho**4))


class TestFamilyFromDict(unittest.TestCase):
    def test_variants(self):
        self.assertEqual(family_from_dict({"variant": "euclidean"}).mass, 0.0)
        self.assertEqual(family_from_dict({"variant": "schwarzschild", "mass": 3.0}).mass, 3.0)
        fam = family_from_dict({"variant": "pulse", "shape": "g1", "amplitude": 2.0})
        self.assertEqual(fam.variant, PULSE)
        self.assertEqual(fam.pulse.support, (9.0 / 8.0, 11.0 / 8.0))

    def test_errors(self):
        with self.assertRaises(InvalidParameterError):
            family_from_dict({"variant": "kerr"})
        with self.assertRaises(InvalidParameterError):
            family_from_dict({"mass": 2.0})
        with self.assertRaises(InvalidParameterError):
            family_from_dict({"variant": "pulse", "shape": "g7"})


if __name__ == "__main__":
    unittest.main()
