"""
Forward Monte Carlo simulation of purchase and consumption policies.

The simulator follows the wealth of many investors from a start state to
their death, applying a purchase strategy before retirement and a
consumption rule after it, and reports the expected discounted utility they
realise. Evaluated with the solved policy it should reproduce the value
function of the solvers; evaluated with simpler strategies it measures what
the optimal policy gains.


Dynamics
========

Wealth follows Euler-Maruyama steps of

.. math::

    dW = (\\hat\\mu W + \\nu)\\,dt + \\hat\\sigma W\\,dB

before and

.. math::

    dW = (\\hat\\mu W + I + \\pi - c)\\,dt + \\hat\\sigma W\\,dB

after retirement, floored at zero. Each lifetime is drawn once per path
from the survival function. Dying before retirement leaves an estate of
:math:`W + K_t I + \\nu`, dying afterwards one of :math:`W + \\pi`; its
discounted utility is credited at the time of death. Consumption utility is
credited while alive, survivors to the terminal age receive
:math:`U(W + \\pi)`.


Strategies
==========

``optimal``
    Project onto the annuitization frontier of the nearest solved slice,
    consume and invest as the post-retirement surface says.

``never-annuitize``
    Never buy DIAs, hold everything in the risky asset before retirement.

``lump-sum``
    Spend all liquid wealth on DIAs at the start, bounded by the largest
    income of the grid.

After retirement all strategies consume according to the solved surface,
unless a fixed consumption rate is configured.


Reproducibility
===============

Paths are simulated in blocks. Each block draws from its own generator,
seeded from the root seed and the block number, and the block results are
combined in block order. Results therefore depend on the seed but not on the
number of workers. Half of each block uses the negated normal increments
and mirrored uniforms of the other half (antithetic variates).


Module documentation
====================

"""

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from diaopt.numerics import NumericalError
from diaopt.policy import PolicyFrontier

logger = logging.getLogger(__name__)


class Strategy(enum.Enum):
    """Purchase strategies before retirement."""

    OPTIMAL = "optimal"
    NEVER_ANNUITIZE = "never-annuitize"
    LUMP_SUM = "lump-sum"


@dataclass(frozen=True)
class SimConfig:
    """
    Settings of a simulation run.

    Attributes
    ----------
    age : :class:`float`
        Age at the start of the simulation

    wealth : :class:`float`
        Liquid wealth at the start, non-negative

    income : :class:`float`
        DIA income held at the start, non-negative

    paths : :class:`int`
        Number of paths, rounded up to an even number

    seed : :class:`int`
        Root seed

    dt_sim : :class:`float` or None
        Time step, by default half the grid time step (or 1/48 without a
        grid)

    block_size : :class:`int`
        Paths per block, rounded up to an even number

    workers : :class:`int`
        Number of threads simulating blocks

    consumption : :class:`float` or None
        Fixed consumption rate after retirement instead of the solved one

    """

    age: float
    wealth: float
    income: float = 0.0
    paths: int = 100000
    seed: int = 0
    dt_sim: float = None
    block_size: int = 4096
    workers: int = 1
    consumption: float = None

    def __post_init__(self):
        if int(self.paths) != self.paths or self.paths < 1:
            raise ValueError("simulation.paths must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("simulation.seed must be a non-negative integer")
        if self.dt_sim is not None and not self.dt_sim > 0:
            raise ValueError("simulation time step must be positive")
        if int(self.block_size) != self.block_size or self.block_size < 2:
            raise ValueError("simulation.block_size must be at least 2")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ValueError("simulation.workers must be a positive integer")
        if self.wealth < 0 or self.income < 0:
            raise ValueError("start wealth and income must not be negative")
        if self.consumption is not None and not self.consumption > 0:
            raise ValueError("fixed consumption must be positive")

    @property
    def simulated_paths(self):
        """Number of paths actually simulated (even)."""
        return 2 * math.ceil(self.paths / 2)

    @property
    def block_paths(self):
        """Paths per block (even)."""
        return 2 * math.ceil(self.block_size / 2)


@dataclass
class SimResult:
    """
    Outcome of a simulation run.

    Attributes
    ----------
    strategy : :class:`str`
        Name of the strategy

    mean_utility : :class:`float`
        Estimated expected discounted utility

    ci_halfwidth : :class:`float`
        Half-width of the 95% confidence interval

    paths : :class:`int`
        Number of simulated paths

    seed : :class:`int`
        Root seed

    purchase_activity : :class:`pandas.Series`
        Per integer age, the share of living investors buying DIAs at least
        once during that year

    retirement_wealth : :class:`float`
        Mean liquid wealth at retirement of those alive

    retirement_income : :class:`float`
        Mean DIA income at retirement of those alive

    survival_to_retirement : :class:`float`
        Share of paths alive at retirement

    """

    strategy: str
    mean_utility: float
    ci_halfwidth: float
    paths: int
    seed: int
    purchase_activity: pd.Series = field(default_factory=pd.Series)
    retirement_wealth: float = float("nan")
    retirement_income: float = float("nan")
    survival_to_retirement: float = float("nan")

    def to_dict(self):
        """Summary row as written by the command line interface."""
        return {
            "strategy": self.strategy,
            "mean_utility": self.mean_utility,
            "ci95": self.ci_halfwidth,
            "paths": self.paths,
            "seed": self.seed,
        }


@dataclass
class _BlockResult:
    utilities: np.ndarray
    purchases: np.ndarray
    alive: np.ndarray
    retirement_wealth: np.ndarray
    retirement_income: np.ndarray


class Simulator:
    """
    Monte Carlo engine for the lifecycle of a DIA investor.

    Attributes
    ----------
    mortality : :class:`diaopt.model.MortalityModel`
        Mortality law

    market : :class:`diaopt.model.MarketModel`
        Market assumptions

    preferences : :class:`diaopt.model.Preferences`
        Preferences

    contract : :class:`diaopt.model.DIAContract`
        DIA contract

    surface : :class:`diaopt.postretirement.ValueSurface` or None
        Solved post-retirement surface, needed unless a fixed consumption
        rate is simulated

    solution : :class:`diaopt.preretirement.PreRetirementSolution` or None
        Solved pre-retirement problem, needed for the optimal strategy

    terminal_age : :class:`float`
        Age at which the simulation ends


    Examples
    --------
    Compare the optimal strategy with never buying a DIA:

    .. code-block::

        simulator = Simulator(mortality, market, preferences, contract,
                              surface=surface, solution=solution)
        config = SimConfig(age=55, wealth=10.0, paths=100000)
        simulator.compare_strategies(config, [Strategy.OPTIMAL,
                                              Strategy.NEVER_ANNUITIZE])

    """

    def __init__(
        self,
        mortality,
        market,
        preferences,
        contract,
        surface=None,
        solution=None,
        terminal_age=None,
    ):
        self.mortality = mortality
        self.market = market
        self.preferences = preferences
        self.contract = contract
        self.surface = surface
        self.solution = solution
        if terminal_age is None:
            terminal_age = (
                surface.grid.terminal_age if surface is not None else 120.0
            )
        self.terminal_age = terminal_age
        self._frontiers = {}
        self._alpha_lookups = {}

    def simulate(self, config, strategy=Strategy.OPTIMAL):
        """
        Estimate the expected discounted utility of a strategy.

        Parameters
        ----------
        config : :class:`SimConfig`
            Start state and simulation settings

        strategy : :class:`Strategy` or :class:`str`
            Purchase strategy before retirement

        Returns
        -------
        result : :class:`SimResult`
            Estimate with confidence interval and path summaries

        Raises
        ------
        ValueError
            Raised if the start state or time step does not fit the solved
            surfaces, or a required surface is missing

        NumericalError
            Raised if the accumulated utility is not finite

        """
        strategy = Strategy(strategy)
        dt = self._check(config, strategy)
        if strategy is Strategy.OPTIMAL:
            self._prepare_frontiers()
        total = config.simulated_paths
        size = config.block_paths
        blocks = [
            (number, min(size, total - number * size))
            for number in range(math.ceil(total / size))
        ]
        logger.info(
            "Simulating %d paths of strategy '%s' in %d block(s)",
            total,
            strategy.value,
            len(blocks),
        )

        def run(block):
            return self._simulate_block(config, strategy, dt, *block)

        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(run, blocks))
        return self._summarise(config, strategy, results)

    def compare_strategies(self, config, strategies):
        """
        Simulate several strategies with common random numbers.

        Parameters
        ----------
        config : :class:`SimConfig`
            Start state and simulation settings, shared by all strategies

        strategies : :class:`list`
            Strategies, as :class:`Strategy` members or their names

        Returns
        -------
        report : :class:`pandas.DataFrame`
            One row per strategy, in the given order, with the columns
            ``strategy``, ``mean_utility``, ``ci95``, ``paths`` and
            ``seed``

        """
        rows = [
            self.simulate(config, strategy).to_dict()
            for strategy in strategies
        ]
        columns = ["strategy", "mean_utility", "ci95", "paths", "seed"]
        return pd.DataFrame(rows, columns=columns)

    def _check(self, config, strategy):
        if not self.contract.x - 1e-9 <= config.age < self.terminal_age:
            raise ValueError(
                f"start age must lie in [{self.contract.x}, "
                f"{self.terminal_age})"
            )
        before_retirement = config.age < self.contract.retirement_age - 1e-9
        needs_solution = strategy is Strategy.OPTIMAL and before_retirement
        if needs_solution and self.solution is None:
            raise ValueError(
                "optimal strategy needs a pre-retirement solution"
            )
        if config.consumption is None and self.surface is None:
            raise ValueError(
                "simulation needs a post-retirement surface or "
                "a fixed consumption rate"
            )
        if self.surface is None:
            return config.dt_sim if config.dt_sim is not None else 1.0 / 48
        grid = self.surface.grid
        if self.solution is not None:
            seed = self.solution.seed
            same_wealth = np.allclose(seed.w, grid.w)
            if not (same_wealth and np.allclose(seed.i, grid.i)):
                raise ValueError("pre- and post-retirement surfaces differ")
        if self.terminal_age > grid.terminal_age + 1e-9:
            raise ValueError("terminal age beyond the solved surface")
        if config.income > grid.i[-1] + 1e-12:
            raise ValueError("start income beyond the income grid")
        step = min(grid.dt, grid.dt_post)
        if config.dt_sim is None:
            return step / 2
        if config.dt_sim > step + 1e-12:
            raise ValueError("simulation step exceeds the grid step")
        return config.dt_sim

    def _prepare_frontiers(self):
        if self.solution is None:
            return
        for index, slice_ in enumerate(self.solution.slices):
            if index not in self._frontiers:
                frontier = PolicyFrontier()
                frontier.from_slice(slice_)
                self._frontiers[index] = frontier
                if self.solution.dynamic:
                    self._alpha_lookups[index] = RegularGridInterpolator(
                        (slice_.w, slice_.i),
                        slice_.alpha,
                        method="linear",
                        bounds_error=True,
                    )

    def _simulate_block(self, config, strategy, dt, number, size):
        market = self.market
        preferences = self.preferences
        retirement = self.contract.retirement_age
        pairs = size // 2
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(number,))
        )
        uniforms = rng.random(pairs)
        uniforms = np.concatenate([1.0 - uniforms, uniforms])
        uniforms = np.clip(uniforms, np.finfo(float).tiny, 1.0)
        lifetimes = self.mortality.sample_lifetime(config.age, uniforms)
        death = config.age + lifetimes
        wealth = np.full(size, float(config.wealth))
        income = np.full(size, float(config.income))
        utility = np.zeros(size)

        def discount(age):
            return np.exp(-market.rho * (age - config.age))

        def normals():
            draws = rng.standard_normal(pairs)
            return np.concatenate([draws, -draws])

        pre_span = max(0.0, retirement - config.age)
        pre_steps = math.ceil(pre_span / dt - 1e-9) if pre_span > 0 else 0
        first_year = math.floor(config.age)
        years = max(1, math.ceil(retirement) - first_year)
        purchases = np.zeros(years, dtype=int)
        alive_counts = np.zeros(years, dtype=int)
        bought = np.zeros(size, dtype=bool)
        seen = np.zeros(size, dtype=bool)
        year = None
        for step in range(pre_steps):
            step_dt = pre_span / pre_steps
            age = config.age + step * step_dt
            current_year = min(
                int(math.floor(age + 1e-9)) - first_year, years - 1
            )
            if current_year != year:
                if year is not None:
                    purchases[year] += int(np.sum(bought))
                    alive_counts[year] += int(np.sum(seen))
                bought[:] = False
                seen[:] = False
                year = current_year
            alive = death > age
            seen |= alive
            wanted = self._purchase(strategy, step, age, wealth, income)
            purchase = np.where(alive, wanted, 0.0)
            if np.any(purchase > 0):
                cost = self._price(age) * purchase
                wealth = np.maximum(wealth - cost, 0.0)
                income = income + purchase
                bought |= purchase > 0
            alpha = self._pre_alpha(strategy, age, wealth, income)
            dying = alive & (death <= age + step_dt)
            if np.any(dying):
                refund = self.contract.refund(
                    self.mortality, market, death[dying] - self.contract.x
                )
                estate = wealth[dying] + refund * income[dying] + market.nu
                bequest = preferences.utility(estate)
                utility[dying] += discount(death[dying]) * bequest
            drift = market.portfolio_drift(alpha) * wealth + market.nu
            shock = market.portfolio_volatility(alpha) * wealth * normals()
            growth = drift * step_dt + shock * math.sqrt(step_dt)
            surviving = alive & ~dying
            wealth = np.where(
                surviving, np.maximum(wealth + growth, 0.0), wealth
            )
        if year is not None:
            purchases[year] += int(np.sum(bought))
            alive_counts[year] += int(np.sum(seen))

        retired = death > max(retirement, config.age)
        retirement_wealth = np.where(retired, wealth, np.nan)
        retirement_income = np.where(retired, income, np.nan)

        start = max(retirement, config.age)
        post_span = self.terminal_age - start
        post_steps = math.ceil(post_span / dt - 1e-9)
        step_dt = post_span / post_steps
        for step in range(post_steps):
            age = start + step * step_dt
            alive = death > age
            if not np.any(alive):
                break
            consumption = self._consumption(config, age, wealth, income)
            consumption = np.minimum(
                consumption, wealth / step_dt + income + market.pi
            )
            alpha = self._post_alpha(age, wealth, income)
            dying = alive & (death <= age + step_dt)
            span = np.where(dying, death - age, step_dt)
            felicity = preferences.utility(consumption[alive])
            utility[alive] += discount(age) * span[alive] * felicity
            if np.any(dying):
                bequest = preferences.utility(wealth[dying] + market.pi)
                utility[dying] += discount(death[dying]) * bequest
            drift = (
                market.portfolio_drift(alpha) * wealth
                + income
                + market.pi
                - consumption
            )
            shock = market.portfolio_volatility(alpha) * wealth * normals()
            growth = drift * step_dt + shock * math.sqrt(step_dt)
            surviving = alive & ~dying
            wealth = np.where(
                surviving, np.maximum(wealth + growth, 0.0), wealth
            )
        survivors = death > self.terminal_age
        bequest = preferences.utility(wealth[survivors] + market.pi)
        utility[survivors] += discount(self.terminal_age) * bequest
        if not np.all(np.isfinite(utility)):
            raise NumericalError(
                f"non-finite utility in simulation block {number}"
            )
        logger.debug("Block %d with %d paths done", number, size)
        return _BlockResult(
            utilities=utility,
            purchases=purchases,
            alive=alive_counts,
            retirement_wealth=retirement_wealth,
            retirement_income=retirement_income,
        )

    def _price(self, age):
        t = age - self.contract.x
        return float(self.contract.price(self.mortality, self.market, t))

    def _income_limit(self):
        if self.solution is not None:
            return self.solution.seed.i[-1]
        if self.surface is not None:
            return self.surface.grid.i[-1]
        return np.inf

    def _purchase(self, strategy, step, age, wealth, income):
        if strategy is Strategy.NEVER_ANNUITIZE:
            return np.zeros_like(wealth)
        if strategy is Strategy.LUMP_SUM:
            if step > 0:
                return np.zeros_like(wealth)
            affordable = wealth / self._price(age)
            room = self._income_limit() - income
            return np.clip(np.minimum(affordable, room), 0.0, None)
        index = self.solution.slice_index(age)
        purchase, _, _ = self._frontiers[index].project(wealth, income)
        return purchase

    def _pre_alpha(self, strategy, age, wealth, income):
        optimal = strategy is Strategy.OPTIMAL and self.solution is not None
        if not (optimal and self.solution.dynamic):
            return 1.0
        index = self.solution.slice_index(age)
        slice_ = self.solution.slices[index]
        points = np.stack(
            [
                np.clip(wealth, 0.0, slice_.w[-1]),
                np.clip(income, 0.0, slice_.i[-1]),
            ],
            axis=-1,
        )
        alpha = self._alpha_lookups[index](points)
        return np.where(wealth > slice_.w[-1], self._merton(), alpha)

    def _consumption(self, config, age, wealth, income):
        if config.consumption is not None:
            return np.full_like(wealth, config.consumption)
        grid = self.surface.grid
        w_max = grid.w[-1]
        consumption = self.surface.consumption_policy(
            age, np.clip(wealth, 0.0, w_max), np.clip(income, 0.0, grid.i[-1])
        )
        return np.where(
            wealth > w_max, consumption * wealth / w_max, consumption
        )

    def _post_alpha(self, age, wealth, income):
        if self.surface is None or not self.surface.dynamic:
            return 1.0
        grid = self.surface.grid
        alpha = self.surface.allocation_policy(
            age,
            np.clip(wealth, 0.0, grid.w[-1]),
            np.clip(income, 0.0, grid.i[-1]),
        )
        return np.where(wealth > grid.w[-1], self._merton(), alpha)

    def _merton(self):
        fraction = self.market.merton_fraction(self.preferences.gamma)
        return float(np.clip(fraction, 0.0, 1.0))

    def _summarise(self, config, strategy, results):
        utilities = np.concatenate([item.utilities for item in results])
        halves = []
        for item in results:
            half = item.utilities.size // 2
            halves.append(
                0.5 * (item.utilities[:half] + item.utilities[half:])
            )
        pair_means = np.concatenate(halves)
        if pair_means.size >= 2:
            spread = np.std(pair_means, ddof=1) / math.sqrt(pair_means.size)
        else:
            spread = np.std(utilities, ddof=1) / math.sqrt(utilities.size)
        purchases = np.sum([item.purchases for item in results], axis=0)
        alive = np.sum([item.alive for item in results], axis=0)
        first_year = math.floor(config.age)
        ages = pd.Index(first_year + np.arange(purchases.size), name="age")
        with np.errstate(invalid="ignore", divide="ignore"):
            activity = pd.Series(
                np.where(alive > 0, purchases / np.maximum(alive, 1), np.nan),
                index=ages,
                name="purchase_fraction",
            )
        retirement_wealth = np.concatenate(
            [item.retirement_wealth for item in results]
        )
        retirement_income = np.concatenate(
            [item.retirement_income for item in results]
        )
        survivors = ~np.isnan(retirement_wealth)
        if np.any(survivors):
            mean_wealth = float(np.mean(retirement_wealth[survivors]))
            mean_income = float(np.mean(retirement_income[survivors]))
        else:
            mean_wealth = mean_income = float("nan")
        result = SimResult(
            strategy=strategy.value,
            mean_utility=float(np.mean(utilities)),
            ci_halfwidth=float(1.96 * spread),
            paths=int(utilities.size),
            seed=int(config.seed),
            purchase_activity=activity,
            retirement_wealth=mean_wealth,
            retirement_income=mean_income,
            survival_to_retirement=float(np.mean(survivors)),
        )
        logger.info(
            "Strategy '%s': mean utility %.6g +/- %.2g",
            result.strategy,
            result.mean_utility,
            result.ci_halfwidth,
        )
        return result
