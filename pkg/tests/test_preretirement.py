import unittest

import numpy as np

from diaopt import model, numerics, policy, postretirement, preretirement


def coarse_grid(**kwargs):
    settings = dict(
        w_max=30.0, w_nodes=61, i_max=6.0, i_nodes=7, steps_per_year=4
    )
    settings.update(kwargs)
    return numerics.build_grid(60, 65, **settings)


def solve_surface(grid, mortality, market, preferences, dynamic=False):
    return postretirement.PostRetirementSolver(
        grid,
        mortality,
        market,
        preferences,
        dynamic=dynamic,
        snapshot_interval=5.0,
    ).solve()


def solve_regions(
    grid=None, market=None, preferences=None, Q=1.0, dynamic=False
):
    if grid is None:
        grid = coarse_grid()
    if market is None:
        market = model.MarketModel()
    if preferences is None:
        preferences = model.Preferences()
    mortality = model.MortalityModel()
    surface = solve_surface(
        grid, mortality, market, preferences, dynamic=dynamic
    )
    return preretirement.PreRetirementSolver(
        grid,
        mortality,
        market,
        preferences,
        model.DIAContract(Q=Q, tau=5.0, x=60.0),
        surface,
        dynamic=dynamic,
        snapshot_interval=0.25,
    ).solve()


def income_first_sweep(j1, ratio):
    """Solve the one-sided relation for J[k, q] from J[k, q-1], J[k-1, q]."""
    values = j1.copy()
    for q in range(1, j1.shape[1]):
        for k in range(1, j1.shape[0]):
            difference = values[k, q - 1] - ratio * values[k - 1, q]
            values[k, q] = difference / (1.0 - ratio)
    return values


def node_grid(grid):
    return np.meshgrid(grid.w, grid.i, indexing="ij")


class TestPreSolveSlice(unittest.TestCase):

    def setUp(self):
        w = np.linspace(0, 4, 5)
        i = np.linspace(0, 1, 3)
        j1 = np.zeros((5, 3))
        j2 = np.tile((w - 2.5)[:, np.newaxis], (1, 3))
        j2[0] = -np.inf
        self.slice = preretirement.PreSolveSlice(
            age=62.0, w=w, i=i, j1=j1, j2=j2, a_tilde=10.0
        )

    def test_instantiate_class(self):
        pass

    def test_annuitize_defaults_to_comparison(self):
        column = np.array([False, False, False, True, True])
        expected = np.tile(column[:, np.newaxis], (1, 3))
        np.testing.assert_array_equal(expected, self.slice.annuitize)

    def test_alpha_defaults_to_one(self):
        np.testing.assert_array_equal(np.ones((5, 3)), self.slice.alpha)

    def test_values_are_maximum(self):
        np.testing.assert_array_equal(
            np.maximum(self.slice.j1, self.slice.j2), self.slice.values
        )

    def test_annuitization_indicator_uses_nearest_node(self):
        self.assertTrue(self.slice.annuitization_indicator(3.2, 0.4))
        self.assertFalse(self.slice.annuitization_indicator(1.9, 0.4))
        self.assertFalse(self.slice.annuitization_indicator(0.0, 1.0))

    def test_region_fraction(self):
        self.assertAlmostEqual(0.4, self.slice.region_fraction())
        self.assertAlmostEqual(0.25, self.slice.region_fraction(w_limit=3.0))


class TestPurchaseAlternative(unittest.TestCase):

    def setUp(self):
        self.grid = coarse_grid()
        self.solver = preretirement.PreRetirementSolver(
            self.grid,
            model.MortalityModel(),
            model.MarketModel(),
            model.Preferences(),
            model.DIAContract(x=60, tau=5),
            None,
        )

    def test_values_constant_on_characteristics_are_reproduced(self):
        a_tilde = 12.0
        wealth, income = node_grid(self.grid)
        j1 = wealth + a_tilde * income
        j2 = self.solver.purchase_alternative(j1, a_tilde)
        np.testing.assert_allclose(j1[1:, :-1], j2[1:, :-1])

    def test_no_purchase_at_zero_wealth_or_largest_income(self):
        j1 = np.tile(self.grid.w[:, np.newaxis], (1, self.grid.i.size))
        j2 = self.solver.purchase_alternative(j1, 10.0)
        self.assertTrue(np.all(np.isneginf(j2[0])))
        self.assertTrue(np.all(np.isneginf(j2[:, -1])))

    def test_alternative_lies_within_neighbour_values(self):
        rng = np.random.default_rng(5)
        j1 = np.cumsum(rng.random(self.grid.shape), axis=0)
        j2 = self.solver.purchase_alternative(j1, 10.0)
        finite = np.isfinite(j2)
        self.assertTrue(np.all(j2[finite] >= j1.min()))
        self.assertTrue(np.all(j2[finite] <= j1.max()))

    def test_income_only_value_is_bought_with_wealth(self):
        # worthless wealth and valuable income: buying everything is optimal
        wealth, income = node_grid(self.grid)
        j1 = income - 1e-3 * wealth
        j2 = self.solver.purchase_alternative(j1, 10.0)
        self.assertTrue(np.all(j2[1:, :-1] > j1[1:, :-1]))

    def test_curved_values_constant_on_characteristics_are_reproduced(self):
        a_tilde = 5.0
        preferences = model.Preferences()
        wealth, income = node_grid(self.grid)
        j1 = preferences.utility(wealth + a_tilde * income + 50.0)
        j2 = self.solver.purchase_alternative(j1, a_tilde)
        np.testing.assert_allclose(j1[1:, :-1], j2[1:, :-1], rtol=0.01)

    def test_perturbations_do_not_grow(self):
        a_tilde = 5.0
        self.assertAlmostEqual(10.0, a_tilde * self.grid.di / self.grid.dw)
        wealth, income = node_grid(self.grid)
        j1 = model.Preferences().utility(wealth + a_tilde * income + 50.0)
        size = 1e-8
        noise = size * np.random.default_rng(3).uniform(-1, 1, j1.shape)
        base = self.solver.purchase_alternative(j1, a_tilde)
        disturbed = self.solver.purchase_alternative(j1 + noise, a_tilde)
        finite = np.isfinite(base)
        change = np.abs(disturbed - base)[finite]
        self.assertLessEqual(np.max(change), size * (1 + 1e-6))

    def test_income_first_sweep_amplifies_perturbations(self):
        ratio = 10.0
        wealth, income = node_grid(self.grid)
        j1 = model.Preferences().utility(wealth + 5.0 * income + 50.0)
        size = 1e-8
        disturbed = j1.copy()
        disturbed[0, 1] += size
        change = np.abs(
            income_first_sweep(disturbed, ratio)
            - income_first_sweep(j1, ratio)
        )
        self.assertGreater(np.max(change[:, 1]), 100 * size)


class TestPreRetirementSolver(unittest.TestCase):

    def setUp(self):
        self.grid = coarse_grid()
        self.mortality = model.MortalityModel()
        self.market = model.MarketModel()
        self.preferences = model.Preferences()
        self.contract = model.DIAContract(Q=1.0, tau=5.0, x=60.0)
        self.surface = solve_surface(
            self.grid, self.mortality, self.market, self.preferences
        )
        self.solver = preretirement.PreRetirementSolver(
            self.grid,
            self.mortality,
            self.market,
            self.preferences,
            self.contract,
            self.surface,
            snapshot_interval=1.0,
        )
        self.solution = self.solver.solve()

    def test_instantiate_class(self):
        pass

    def test_seed_is_retirement_surface(self):
        np.testing.assert_array_equal(
            self.surface.retirement_values, self.solution.seed.values
        )
        self.assertAlmostEqual(65.0, self.solution.retirement_age)

    def test_seed_has_no_purchase_option(self):
        self.assertTrue(np.all(np.isneginf(self.solution.seed.j2)))
        self.assertFalse(np.any(self.solution.seed.annuitize))

    def test_slices_span_start_to_final_step(self):
        ages = self.solution.ages
        self.assertAlmostEqual(60.0, ages[0])
        self.assertAlmostEqual(65.0 - self.grid.dt, ages[-1])
        self.assertTrue(np.all(np.diff(ages) > 0))

    def test_values_are_maximum_of_alternatives(self):
        for item in self.solution.slices:
            np.testing.assert_array_equal(
                np.maximum(item.j1, item.j2), item.values
            )
            np.testing.assert_array_equal(item.j2 >= item.j1, item.annuitize)

    def test_zero_wealth_never_annuitizes(self):
        for item in self.solution.slices:
            self.assertFalse(np.any(item.annuitize[0]))
            self.assertFalse(item.annuitization_indicator(0.0, 2.0))

    def test_largest_income_never_annuitizes(self):
        for item in self.solution.slices:
            self.assertFalse(np.any(item.annuitize[:, -1]))

    def test_values_are_finite_and_increase_in_wealth(self):
        for item in self.solution.slices:
            self.assertTrue(np.all(np.isfinite(item.j1)))
            self.assertTrue(np.all(np.diff(item.values, axis=0) > 0))

    def test_slice_prices_follow_contract(self):
        item = self.solution.slice_at(62)
        expected = self.contract.price(
            self.mortality, self.market, item.age - 60.0
        )
        self.assertAlmostEqual(expected, item.a_tilde)

    def test_slice_at_nearest_age(self):
        self.assertAlmostEqual(62.0, self.solution.slice_at(62.1).age)

    def test_slice_outside_span_raises(self):
        with self.assertRaises(ValueError):
            self.solution.slice_at(59.0)
        with self.assertRaises(ValueError):
            self.solution.slice_at(66.0)

    def test_value_at_node(self):
        item = self.solution.slice_at(61)
        self.assertAlmostEqual(
            item.values[20, 2],
            self.solution.value(61, self.grid.w[20], self.grid.i[2]),
        )

    def test_region_fraction_lies_in_unit_interval(self):
        for item in self.solution.slices:
            self.assertGreaterEqual(item.region_fraction(), 0.0)
            self.assertLessEqual(item.region_fraction(), 1.0)

    def test_fixed_allocation_is_fully_invested(self):
        self.assertFalse(self.solution.dynamic)
        for item in self.solution.slices:
            np.testing.assert_array_equal(
                np.ones(self.grid.shape), item.alpha
            )


class TestPreRetirementSolverDynamic(unittest.TestCase):

    def setUp(self):
        self.grid = coarse_grid()
        self.market = model.MarketModel()
        self.preferences = model.Preferences()
        mortality = model.MortalityModel()
        surface = solve_surface(
            self.grid, mortality, self.market, self.preferences
        )
        self.solution = preretirement.PreRetirementSolver(
            self.grid,
            mortality,
            self.market,
            self.preferences,
            model.DIAContract(Q=1.0, tau=5.0, x=60.0),
            surface,
            dynamic=True,
            snapshot_interval=1.0,
        ).solve()

    def test_solution_is_dynamic(self):
        self.assertTrue(self.solution.dynamic)

    def test_share_lies_in_unit_interval(self):
        for item in self.solution.slices:
            self.assertTrue(np.all(item.alpha >= 0))
            self.assertTrue(np.all(item.alpha <= 1))

    def test_top_row_holds_merton_fraction(self):
        fraction = self.market.merton_fraction(self.preferences.gamma)
        for item in self.solution.slices:
            np.testing.assert_allclose(fraction, item.alpha[-1])


class TestAnnuitizationRegion(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.grid = coarse_grid()
        cls.solution = solve_regions()

    def frontier(self, age, solution=None):
        if solution is None:
            solution = self.solution
        return policy.extract_frontier(solution, age)

    def test_region_expands_towards_retirement(self):
        final = policy.PolicyFrontier()
        final.from_slice(self.solution.slices[-1])
        tolerance = self.grid.dw
        later = self.frontier(63)
        self.assertTrue(later.contains(self.frontier(62), tolerance))
        self.assertTrue(final.contains(later, tolerance))

    def test_higher_drift_shrinks_region(self):
        risky = solve_regions(market=model.MarketModel(mu=0.10))
        for age in (62, 63):
            other = self.frontier(age, risky)
            contained = self.frontier(age).contains(
                other, tolerance=self.grid.dw
            )
            self.assertTrue(contained)

    def test_higher_risk_aversion_widens_region(self):
        averse = solve_regions(preferences=model.Preferences(gamma=3.5))
        contained = self.frontier(61, averse).contains(
            self.frontier(61), tolerance=self.grid.dw
        )
        self.assertTrue(contained)

    def test_region_does_not_follow_largest_wealth(self):
        wide = solve_regions(grid=coarse_grid(w_max=45.0, w_nodes=91))
        limit = 20.0
        self.assertAlmostEqual(
            self.solution.slice_at(62).region_fraction(w_limit=limit),
            wide.slice_at(62).region_fraction(w_limit=limit),
            delta=0.05,
        )
        narrow, broad = self.frontier(62), self.frontier(62, wide)
        both = (narrow.boundary < limit) & (broad.boundary < limit)
        np.testing.assert_allclose(
            narrow.boundary[both], broad.boundary[both], atol=2 * self.grid.dw
        )


class TestDynamicRegion(unittest.TestCase):

    def test_no_early_purchase_with_full_refund(self):
        solution = solve_regions(dynamic=True)
        self.assertLessEqual(solution.slice_at(64).region_fraction(), 0.02)


class TestGridRefinement(unittest.TestCase):

    def test_frontier_moves_less_than_one_coarse_cell(self):
        coarse = coarse_grid()
        fine = coarse_grid(w_nodes=121, i_nodes=13, steps_per_year=8)
        first = policy.extract_frontier(solve_regions(grid=coarse), 62)
        second = policy.extract_frontier(solve_regions(grid=fine), 62)
        shared = np.isin(
            np.round(second.income, 9), np.round(first.income, 9)
        )
        refined = second.boundary[shared]
        both = ~np.isnan(first.boundary) & ~np.isnan(refined)
        np.testing.assert_allclose(
            first.boundary[both], refined[both], atol=coarse.dw
        )


class TestPreRetirementSolverInputs(unittest.TestCase):

    def setUp(self):
        self.grid = coarse_grid()
        self.mortality = model.MortalityModel()
        self.preferences = model.Preferences()
        self.contract = model.DIAContract(Q=1.0, tau=5.0, x=60.0)

    def solver(self, market, surface, contract=None):
        return preretirement.PreRetirementSolver(
            self.grid,
            self.mortality,
            market,
            self.preferences,
            contract or self.contract,
            surface,
        )

    def test_zero_savings_rate_raises(self):
        market = model.MarketModel(nu=0.0)
        surface = solve_surface(
            self.grid, self.mortality, market, self.preferences
        )
        with self.assertRaises(ValueError):
            self.solver(market, surface).solve()

    def test_seed_on_other_grid_raises(self):
        market = model.MarketModel()
        other = coarse_grid(w_max=20.0, w_nodes=41)
        surface = solve_surface(
            other, self.mortality, market, self.preferences
        )
        with self.assertRaises(ValueError):
            self.solver(market, surface).solve()

    def test_contract_for_other_ages_raises(self):
        market = model.MarketModel()
        surface = solve_surface(
            self.grid, self.mortality, market, self.preferences
        )
        contract = model.DIAContract(x=55.0, tau=10.0)
        with self.assertRaises(ValueError):
            self.solver(market, surface, contract).solve()


if __name__ == "__main__":
    unittest.main()
