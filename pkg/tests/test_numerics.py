import unittest

import numpy as np
import scipy.integrate
import scipy.linalg

from diaopt import model, numerics


class TestBuildGrid(unittest.TestCase):

    def test_default_spacings(self):
        grid = numerics.build_grid(55, 65)
        self.assertAlmostEqual(0.1, grid.dw)
        self.assertAlmostEqual(0.1, grid.di)
        self.assertAlmostEqual(1 / 24, grid.dt)
        self.assertAlmostEqual(1 / 24, grid.dt_post)

    def test_axes_start_at_zero(self):
        grid = numerics.build_grid(55, 65)
        self.assertEqual(0.0, grid.w[0])
        self.assertEqual(0.0, grid.i[0])
        self.assertEqual(30.0, grid.w[-1])
        self.assertEqual(6.0, grid.i[-1])

    def test_time_axes_meet_at_retirement(self):
        grid = numerics.build_grid(55, 65)
        self.assertEqual(0.0, grid.t[0])
        self.assertAlmostEqual(10.0, grid.t[-1])
        self.assertAlmostEqual(10.0, grid.t_post[0])
        self.assertAlmostEqual(65.0, grid.t_post[-1])
        self.assertAlmostEqual(10.0, grid.tau)

    def test_shape(self):
        grid = numerics.build_grid(55, 65, w_nodes=11, i_nodes=5)
        self.assertEqual((11, 5), grid.shape)

    def test_ages_add_start_age(self):
        grid = numerics.build_grid(55, 65)
        self.assertAlmostEqual(62.0, grid.ages(7.0))

    def test_grids_with_same_nodes_match(self):
        grid = numerics.build_grid(55, 65)
        other = numerics.build_grid(60, 65)
        self.assertTrue(grid.matches(other))

    def test_grids_with_different_nodes_do_not_match(self):
        grid = numerics.build_grid(55, 65)
        other = numerics.build_grid(55, 65, w_max=20)
        self.assertFalse(grid.matches(other))

    def test_too_few_nodes_raise(self):
        with self.assertRaises(ValueError):
            numerics.build_grid(55, 65, w_nodes=2)

    def test_non_positive_extent_raises(self):
        with self.assertRaises(ValueError):
            numerics.build_grid(55, 65, i_max=0.0)

    def test_retirement_before_start_raises(self):
        with self.assertRaises(ValueError):
            numerics.build_grid(65, 65)

    def test_terminal_before_retirement_raises(self):
        with self.assertRaises(ValueError):
            numerics.build_grid(55, 65, terminal_age=60)


class TestTridiagonalSystem(unittest.TestCase):

    def setUp(self):
        size = 5
        self.system = numerics.TridiagonalSystem(
            sub=np.full(size, -1.0),
            diag=np.full(size, 4.0),
            sup=np.full(size, -2.0),
            rhs=np.arange(size, dtype=float),
        )

    def test_instantiate_class(self):
        pass

    def test_different_shapes_raise(self):
        with self.assertRaises(ValueError):
            numerics.TridiagonalSystem(
                sub=np.ones(3),
                diag=np.ones(4),
                sup=np.ones(4),
                rhs=np.ones(4),
            )

    def test_is_diagonally_dominant(self):
        self.assertTrue(self.system.is_diagonally_dominant())
        self.assertTrue(self.system.is_diagonally_dominant(margin=0.5))
        self.assertFalse(self.system.is_diagonally_dominant(margin=1.5))

    def test_matvec_equals_dense_product(self):
        x = np.linspace(1, 2, 5)
        np.testing.assert_allclose(
            self.system.to_dense() @ x, self.system.matvec(x)
        )

    def test_dense_form_ignores_outer_entries(self):
        dense = self.system.to_dense()
        self.assertEqual((5, 5), dense.shape)
        self.assertEqual(-1.0, dense[1, 0])
        self.assertEqual(-2.0, dense[3, 4])
        self.assertEqual(0.0, dense[0, 4])

    def test_residual_of_solution_vanishes(self):
        solution = numerics.thomas_solve(self.system)
        self.assertLess(self.system.residual(solution), 1e-12)

    def test_batched_system_has_no_dense_form(self):
        system = numerics.TridiagonalSystem(
            sub=np.ones((3, 2)),
            diag=np.ones((3, 2)),
            sup=np.ones((3, 2)),
            rhs=np.ones((3, 2)),
        )
        with self.assertRaises(ValueError):
            system.to_dense()


class TestThomasSolve(unittest.TestCase):

    def test_identity(self):
        rhs = np.array([1.0, -2.0, 3.0])
        system = numerics.TridiagonalSystem(
            sub=np.zeros(3), diag=np.ones(3), sup=np.zeros(3), rhs=rhs
        )
        np.testing.assert_array_equal(rhs, numerics.thomas_solve(system))

    def test_scaled_identity(self):
        system = numerics.TridiagonalSystem(
            sub=np.zeros(4),
            diag=np.full(4, 2.0),
            sup=np.zeros(4),
            rhs=np.ones(4),
        )
        np.testing.assert_allclose(
            np.full(4, 0.5), numerics.thomas_solve(system)
        )

    def test_random_system_matches_dense_solve(self):
        rng = np.random.default_rng(42)
        size = 50
        sub, sup = rng.random(size), rng.random(size)
        diag = 4.0 + rng.random(size)
        rhs = rng.standard_normal(size)
        system = numerics.TridiagonalSystem(
            sub=sub, diag=diag, sup=sup, rhs=rhs
        )
        expected = np.linalg.solve(system.to_dense(), rhs)
        np.testing.assert_allclose(
            expected, numerics.thomas_solve(system), rtol=0, atol=1e-10
        )

    def test_random_system_matches_banded_solve(self):
        rng = np.random.default_rng(7)
        size = 50
        sub, sup = -rng.random(size), -rng.random(size)
        diag = 2.5 + rng.random(size)
        rhs = rng.standard_normal(size)
        system = numerics.TridiagonalSystem(
            sub=sub, diag=diag, sup=sup, rhs=rhs
        )
        banded = np.zeros((3, size))
        banded[0, 1:] = sup[:-1]
        banded[1] = diag
        banded[2, :-1] = sub[1:]
        expected = scipy.linalg.solve_banded((1, 1), banded, rhs)
        np.testing.assert_allclose(
            expected, numerics.thomas_solve(system), rtol=0, atol=1e-10
        )

    def test_batched_systems_solved_independently(self):
        rng = np.random.default_rng(3)
        shape = (20, 4)
        system = numerics.TridiagonalSystem(
            sub=rng.random(shape),
            diag=3.0 + rng.random(shape),
            sup=rng.random(shape),
            rhs=rng.standard_normal(shape),
        )
        solution = numerics.thomas_solve(system)
        for column in range(shape[1]):
            single = numerics.TridiagonalSystem(
                sub=system.sub[:, column],
                diag=system.diag[:, column],
                sup=system.sup[:, column],
                rhs=system.rhs[:, column],
            )
            np.testing.assert_allclose(
                np.linalg.solve(single.to_dense(), single.rhs),
                solution[:, column],
                rtol=0,
                atol=1e-10,
            )

    def test_zero_pivot_raises(self):
        system = numerics.TridiagonalSystem(
            sub=np.zeros(3),
            diag=np.array([1.0, 0.0, 1.0]),
            sup=np.zeros(3),
            rhs=np.ones(3),
        )
        with self.assertRaises(numerics.NumericalError):
            numerics.thomas_solve(system)


class TestUpwindCoefficients(unittest.TestCase):

    def test_positive_drift_uses_forward_difference(self):
        lower, centre, upper = numerics.upwind_coefficients(2.0, 0.5, 0.1)
        self.assertAlmostEqual(50.0, lower)
        self.assertAlmostEqual(70.0, upper)
        self.assertAlmostEqual(-120.0, centre)

    def test_negative_drift_uses_backward_difference(self):
        lower, centre, upper = numerics.upwind_coefficients(-2.0, 0.5, 0.1)
        self.assertAlmostEqual(70.0, lower)
        self.assertAlmostEqual(50.0, upper)
        self.assertAlmostEqual(-120.0, centre)

    def test_off_diagonals_are_non_negative(self):
        drift = np.linspace(-3, 3, 13)
        lower, centre, upper = numerics.upwind_coefficients(
            drift, np.zeros_like(drift), 0.1
        )
        self.assertTrue(np.all(lower >= 0))
        self.assertTrue(np.all(upper >= 0))
        np.testing.assert_allclose(-(lower + upper), centre)

    def test_operator_is_exact_for_linear_functions(self):
        dw = 0.1
        w = np.arange(5) * dw
        values = 3.0 * w + 1.0
        lower, centre, upper = numerics.upwind_coefficients(1.5, 0.7, dw)
        applied = (
            lower * values[:-2] + centre * values[1:-1] + upper * values[2:]
        )
        np.testing.assert_allclose(np.full(3, 4.5), applied)


class TestCflSubsteps(unittest.TestCase):

    def test_substep_respects_limit(self):
        dt, dw = 1 / 24, 0.1
        substeps = numerics.cfl_substeps(dt, dw, 0.16, 30.0, 3.4, 0.2)
        limit = 0.9 * dw**2 / (0.0256 * 900 + dw * 3.4 + dw**2 * 0.2)
        self.assertLessEqual(dt / substeps, limit)
        self.assertGreater(dt / (substeps - 1), limit)

    def test_small_step_needs_one_substep(self):
        substeps = numerics.cfl_substeps(1e-8, 0.1, 0.16, 30.0, 3.4)
        self.assertEqual(1, substeps)

    def test_substeps_pass_stability_check(self):
        dt, dw, sigma = 1 / 24, 0.1, 0.16
        w = np.arange(0.0, 30.0 + dw / 2, dw)
        drift = 0.08 * w + 1.0
        substeps = numerics.cfl_substeps(
            dt, dw, sigma, w[-1], drift_max=drift.max(), discount_max=0.5
        )
        _, centre, _ = numerics.upwind_coefficients(
            drift, 0.5 * (sigma * w) ** 2, dw
        )
        numerics.check_cfl(centre, 0.5, dt / substeps)

    def test_check_cfl_with_large_step_raises(self):
        _, centre, _ = numerics.upwind_coefficients(1.0, 1.0, 0.1)
        with self.assertRaises(numerics.NumericalError):
            numerics.check_cfl(np.atleast_1d(centre), 0.0, 1.0)


class TestWealthDerivatives(unittest.TestCase):

    def test_quadratic_is_differentiated_exactly(self):
        dw = 0.5
        w = np.arange(7) * dw
        values = np.column_stack([w**2, 2 * w**2 - w])
        first, second = numerics.wealth_derivatives(values, dw)
        np.testing.assert_allclose(
            np.column_stack([2 * w, 4 * w - 1]), first, atol=1e-12
        )
        curvature = np.column_stack([np.full(7, 2.0), np.full(7, 4.0)])
        np.testing.assert_allclose(curvature, second, atol=1e-10)


class TestOptimalAlpha(unittest.TestCase):

    def setUp(self):
        self.market = model.MarketModel()
        self.w = np.linspace(0, 10, 11)

    def test_power_utility_gives_merton_fraction(self):
        wealth = self.w.reshape(-1, 1)
        with np.errstate(divide="ignore"):
            jw = wealth**-3.0
            jww = -3.0 * wealth**-4.0
        jw[0], jww[0] = 1.0, -1.0
        alpha = numerics.optimal_alpha(self.market, jw, jww, self.w)
        np.testing.assert_allclose(
            self.market.merton_fraction(3), alpha[1:, 0]
        )

    def test_linear_surface_is_fully_invested(self):
        jw = np.ones((11, 2))
        jww = np.zeros((11, 2))
        alpha = numerics.optimal_alpha(self.market, jw, jww, self.w)
        np.testing.assert_array_equal(np.ones((11, 2)), alpha)

    def test_share_is_clamped(self):
        jw = np.ones((11, 1))
        jww = np.full((11, 1), -1e-6)
        alpha = numerics.optimal_alpha(self.market, jw, jww, self.w)
        self.assertTrue(np.all(alpha <= 1.0))
        self.assertTrue(np.all(alpha >= 0.0))

    def test_zero_wealth_row_copies_neighbour(self):
        jw = np.ones((11, 1))
        jww = -np.linspace(1, 2, 11).reshape(-1, 1)
        alpha = numerics.optimal_alpha(self.market, jw, jww, self.w)
        self.assertEqual(alpha[1, 0], alpha[0, 0])


class TestAsymptoticCoefficients(unittest.TestCase):

    def test_value_with_unit_coefficients(self):
        preferences = model.Preferences()
        coefficients = numerics.AsymptoticCoefficients(
            t=np.array([0.0, 1.0]), h=np.ones(2), k=np.ones(2), w_m=30.0
        )
        wealth, income, pension = 25.0, 0.5, 1.0
        slope = preferences.marginal_utility(wealth)
        expected = preferences.utility(wealth) + (income + pension) * slope
        self.assertAlmostEqual(
            expected,
            coefficients.value(1, wealth, income, pension, preferences),
        )

    def test_delta(self):
        coefficients = numerics.AsymptoticCoefficients(
            t=np.zeros(1), h=np.ones(1), k=np.ones(1), w_m=20.0
        )
        self.assertAlmostEqual(0.1, coefficients.delta(1.0, 1.0))

    def test_shift_without_income_coefficient(self):
        coefficients = numerics.AsymptoticCoefficients(
            t=np.zeros(1), h=np.array([2.0]), k=np.array([3.0]), w_m=20.0
        )
        self.assertAlmostEqual(1.5, coefficients.shift(0, 4.0, 1.0))

    def test_shift_with_income_coefficient(self):
        coefficients = numerics.AsymptoticCoefficients(
            t=np.zeros(1),
            h=np.array([2.0]),
            k=np.array([3.0]),
            w_m=20.0,
            k_income=np.array([1.0]),
        )
        shift = coefficients.shift(0, np.array([0.0, 4.0]), 1.0)
        np.testing.assert_allclose([1.5, 3.5], shift)

    def test_shifted_value_at_terminal_time(self):
        preferences = model.Preferences()
        coefficients = numerics.AsymptoticCoefficients(
            t=np.zeros(1),
            h=np.ones(1),
            k=np.ones(1),
            w_m=30.0,
            k_income=np.zeros(1),
        )
        wealth = np.array([5.0, 30.0])
        np.testing.assert_allclose(
            preferences.utility(wealth + 1.0),
            coefficients.shifted_value(0, wealth, 2.0, 1.0, preferences),
        )

    def test_shifted_value_is_negative_where_expansion_is_not(self):
        preferences = model.Preferences()
        coefficients = numerics.AsymptoticCoefficients(
            t=np.zeros(1),
            h=np.ones(1),
            k=np.array([1e5]),
            w_m=30.0,
            k_income=np.array([1e5]),
        )
        expansion = coefficients.value(0, 30.0, 6.0, 1.0, preferences)
        shifted = coefficients.shifted_value(0, 30.0, 6.0, 1.0, preferences)
        self.assertGreater(expansion, 0.0)
        self.assertLess(shifted, 0.0)


class TestIntegrateHk(unittest.TestCase):

    def setUp(self):
        self.preferences = model.Preferences()
        self.market = model.MarketModel()
        self.mortality = model.MortalityModel()

    def test_terminal_values_are_one(self):
        coefficients = numerics.integrate_hk(
            self.preferences, self.market, self.mortality, 65, 55, 1 / 24
        )
        self.assertEqual(1.0, coefficients.h[-1])
        self.assertEqual(1.0, coefficients.k[-1])
        self.assertEqual(0.0, coefficients.k_income[-1])
        self.assertAlmostEqual(55.0, coefficients.t[-1])

    def test_coefficients_are_positive(self):
        coefficients = numerics.integrate_hk(
            self.preferences, self.market, self.mortality, 65, 55, 1 / 24
        )
        self.assertTrue(np.all(coefficients.h > 0))
        self.assertTrue(np.all(coefficients.k > 0))
        self.assertTrue(np.all(coefficients.k_income[:-1] > 0))

    def test_closed_form_without_drift_and_mortality(self):
        market = model.MarketModel(mu=0.0, sigma=1e-8, r=0.0, rho=0.0)
        mortality = model.MortalityModel(m=1e4)
        horizon = 5.0
        coefficients = numerics.integrate_hk(
            self.preferences, market, mortality, 65, horizon, 0.01
        )
        remaining = 1.0 + horizon - coefficients.t
        np.testing.assert_allclose(remaining**3, coefficients.h, rtol=1e-6)
        np.testing.assert_allclose(remaining**4, coefficients.k, rtol=1e-6)
        np.testing.assert_allclose(
            (remaining - 1.0) * remaining**3,
            coefficients.k_income,
            rtol=1e-6,
            atol=1e-9,
        )

    def test_shift_without_drift_and_mortality(self):
        market = model.MarketModel(mu=0.0, sigma=1e-8, r=0.0, rho=0.0)
        mortality = model.MortalityModel(m=1e4)
        coefficients = numerics.integrate_hk(
            self.preferences, market, mortality, 65, 5.0, 0.01
        )
        income = np.array([0.0, 2.0])
        np.testing.assert_allclose(
            1.0 * 6.0 + income * 5.0,
            coefficients.shift(0, income, 1.0),
            rtol=1e-6,
        )

    def test_income_shift_is_bounded_by_remaining_lifetime(self):
        coefficients = numerics.integrate_hk(
            self.preferences, self.market, self.mortality, 65, 55, 1 / 24
        )
        shift = coefficients.shift(0, 1.0, 0.0)
        self.assertGreater(shift, 0.0)
        self.assertLess(shift, 120 - 65)

    def test_matches_adaptive_integration(self):
        horizon = 30.0
        coefficients = numerics.integrate_hk(
            self.preferences, self.market, self.mortality, 65, horizon, 1 / 24
        )

        def rhs(s, y):
            return numerics.hk_derivatives(
                s,
                y[0],
                y[1],
                self.preferences,
                self.market,
                self.mortality,
                65,
            )

        reference = scipy.integrate.solve_ivp(
            rhs,
            (horizon, 0.0),
            [1.0, 1.0],
            method="DOP853",
            rtol=1e-11,
            atol=1e-12,
        )
        np.testing.assert_allclose(
            reference.y[:, -1],
            [coefficients.h[0], coefficients.k[0]],
            rtol=1e-6,
        )

    def test_fourth_order_convergence(self):
        def start_values(dt):
            coefficients = numerics.integrate_hk(
                self.preferences, self.market, self.mortality, 65, 30.0, dt
            )
            return np.array([coefficients.h[0], coefficients.k[0]])

        reference = start_values(1 / 128)
        coarse = np.abs(start_values(0.5) - reference)
        fine = np.abs(start_values(0.25) - reference)
        order = np.log2(coarse / fine)
        self.assertTrue(np.all(order > 3.5))

    def test_non_positive_horizon_raises(self):
        with self.assertRaises(ValueError):
            numerics.integrate_hk(
                self.preferences, self.market, self.mortality, 65, 0.0, 0.1
            )

    def test_hk_derivatives_reject_non_positive_coefficients(self):
        with self.assertRaises(numerics.NumericalError):
            numerics.hk_derivatives(
                0.0,
                0.0,
                1.0,
                self.preferences,
                self.market,
                self.mortality,
                65,
            )


if __name__ == "__main__":
    unittest.main()
