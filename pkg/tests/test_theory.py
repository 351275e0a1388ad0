import unittest

import numpy as np

from constants import Stream
from paramvec import RngStream
from synthdata import ClientDataset
from theory import (CONVERGENT, DIVERGENT, ConvexSpec, check_lower_bound, empirical_sensitivity,
                    geometric_recurrence, iterate_recurrence, monte_carlo_divergence, noise_cumulation_slope,
                    sensitivity_bound, variance_lower_bound)


class TestRecurrence(unittest.TestCase):

    def test_closed_form_matches_iteration(self):
        for a, b, t in ((0.81, 0.01, 6), (1.5, 2.0, 10), (0.0, 1.0, 3), (-0.5, 1.0, 7)):
            self.assertAlmostEqual(geometric_recurrence(a, b, t), iterate_recurrence(a, b, t), places=10)

    def test_unit_rate_rejected(self):
        with self.assertRaises(ValueError):
            geometric_recurrence(1.0, 1.0, 3)


class TestVarianceBound(unittest.TestCase):

    def setUp(self):
        self.spec = ConvexSpec(mu=1.0, beta=1.0, eta=0.1, sigma=1.0, K=1, steps=50)

    def test_reference_values(self):
        self.assertAlmostEqual(variance_lower_bound(self.spec, 0), 0.01, places=15)
        self.assertAlmostEqual(variance_lower_bound(self.spec, 5), 0.037767, delta=1e-5)

    def test_bound_is_the_recurrence(self):
        for t in range(10):
            self.assertAlmostEqual(variance_lower_bound(self.spec, t),
                                   iterate_recurrence(self.spec.rate_base, 0.01, t + 1), places=12)

    def test_regimes(self):
        self.assertEqual(self.spec.regime, CONVERGENT)
        self.assertAlmostEqual(self.spec.rate_base, 0.81)
        self.assertAlmostEqual(self.spec.plateau, 0.01 / 0.19)
        self.assertLess(variance_lower_bound(self.spec, 20), self.spec.plateau)
        steep = ConvexSpec(mu=1.0, beta=1.0, eta=3.0, sigma=1.0, K=1, steps=5)
        self.assertEqual(steep.regime, DIVERGENT)
        self.assertEqual(steep.rate_base, 4.0)
        self.assertGreater(variance_lower_bound(steep, 4), variance_lower_bound(steep, 3))

    def test_degenerate_spec(self):
        with self.assertRaises(ValueError):
            variance_lower_bound(ConvexSpec(mu=1.0, beta=1.0, eta=2.0, sigma=1.0, K=1, steps=5), 1)
        with self.assertRaises(ValueError):
            ConvexSpec(mu=2.0, beta=1.0, eta=0.1, sigma=1.0, K=1, steps=5)
        with self.assertRaises(ValueError):
            ConvexSpec(mu=1.0, beta=1.0, eta=0.1, sigma=1.0, K=0, steps=5)


class TestMonteCarlo(unittest.TestCase):

    def test_lower_bound_holds(self):
        spec = ConvexSpec(mu=1.0, beta=1.0, eta=0.1, sigma=1.0, K=1, steps=50)
        estimates = monte_carlo_divergence(spec, 2000, RngStream(0, Stream.MONTE_CARLO))
        self.assertEqual([e.t for e in estimates], list(range(1, 51)))
        checks = check_lower_bound(spec, estimates)
        self.assertTrue(all(c.passed for c in checks), [c for c in checks if not c.passed])
        first = estimates[0]
        self.assertLessEqual(abs(first.estimate - 0.01), first.half_width)

    def test_no_noise_no_divergence(self):
        spec = ConvexSpec(mu=1.0, beta=1.0, eta=0.1, sigma=0.0, K=1, steps=10, dim=3)
        estimates = monte_carlo_divergence(spec, 100, RngStream(0, Stream.MONTE_CARLO))
        self.assertTrue(all(e.estimate == 0.0 and e.half_width == 0.0 for e in estimates))
        self.assertTrue(all(c.passed for c in check_lower_bound(spec, estimates)))

    def test_needs_enough_trials(self):
        spec = ConvexSpec(mu=1.0, beta=1.0, eta=0.1, sigma=1.0, K=1, steps=5)
        with self.assertRaises(ValueError):
            monte_carlo_divergence(spec, 99, RngStream(0, 1))

    def test_noise_cumulation_grows_as_square_root(self):
        fit = noise_cumulation_slope(1.0, [4, 16, 64, 256], 2000, RngStream(1, Stream.MONTE_CARLO))
        self.assertLess(abs(fit.slope - 0.5), 0.05)
        self.assertEqual(fit.horizons, (4, 16, 64, 256))


class TestSensitivity(unittest.TestCase):

    def test_enumeration_within_bound(self):
        rng = RngStream(2, Stream.MONTE_CARLO).generator
        data = ClientDataset(0, rng.normal(0.0, 3.0, size=(4, 2)), np.zeros(4))
        pool = ClientDataset(0, rng.normal(0.0, 3.0, size=(8, 2)), np.zeros(8))
        worst = empirical_sensitivity(data, pool, eta=0.1, c=1.0, steps=10)
        self.assertEqual(len(worst), 11)
        self.assertEqual(worst[0], 0.0)
        for t, deviation in enumerate(worst):
            self.assertLessEqual(deviation, sensitivity_bound(t, 0.1, 1.0) + 1e-12)
        self.assertGreater(worst[-1], 0.0)

    def test_bound_formula(self):
        self.assertAlmostEqual(sensitivity_bound(5, 0.1, 2.0), 2.0)


if __name__ == '__main__':
    unittest.main()
