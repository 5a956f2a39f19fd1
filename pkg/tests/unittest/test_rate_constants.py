import unittest

from ppisvrg.theory import \
    PPlusBoundInputs, bound_curve, check_bound, default_pp_step, pplus_bound, rate_constants


class TestRateConstants(unittest.TestCase):

    def test_certified_quadratic(self):
        """Test alpha and beta for gamma = lambda = 1, eta = 0.1, m = 50."""
        constants = rate_constants(1.0, 1.0, 0.1, 50)
        self.assertAlmostEqual(constants.alpha, 0.5, places=12)
        self.assertAlmostEqual(constants.beta, 0.125, places=12)
        self.assertTrue(constants.valid)

    def test_short_epochs_do_not_contract(self):
        self.assertFalse(rate_constants(1.0, 1.0, 0.1, 5).valid)

    def test_bound_curve_starts_at_initial_gap(self):
        curve = bound_curve(rate_constants(1.0, 1.0, 0.1, 50), 2.0, 1.0, 3)
        self.assertEqual(curve[0], 2.0)
        # alpha = 0.5: 0.5 * 2 + 0.125 * (1 - 0.5) / 0.5
        self.assertAlmostEqual(curve[1], 1.125, places=12)
        self.assertEqual(len(curve), 4)

    def test_curve_without_contraction_is_undefined(self):
        with self.assertRaises(ValueError):
            bound_curve(rate_constants(1.0, 1.0, 0.1, 5), 1.0, 0.0, 3)

    def test_check_bound_allows_tolerance(self):
        check = check_bound([1.0, 0.55], [1.0, 0.5], max_violations=1, tolerance=0.2)
        self.assertTrue(check.satisfied)
        check = check_bound([1.0, 0.6], [1.0, 0.5])
        self.assertFalse(check.satisfied)
        self.assertEqual(check.violations, [1])


class TestEpochDoublingBound(unittest.TestCase):

    def test_default_step(self):
        self.assertAlmostEqual(default_pp_step(2.0), 0.05, places=15)

    def test_bound_halves_without_statistical_error(self):
        inputs = PPlusBoundInputs(sigma_ppi_sq=0.0, epsilon_bias=0.0, diameter_D=1.0,
                                  eta=0.1, T=100)
        one = pplus_bound(inputs, 1.0, 1.0, 1)
        two = pplus_bound(inputs, 1.0, 1.0, 2)
        self.assertLess(two, one)
        self.assertGreater(two, 0.0)


if __name__ == '__main__':
    unittest.main()
