"""
Value function of a retired investor.

After retirement no further DIAs can be bought. The investor receives the
pension :math:`\\pi` plus the DIA income :math:`I` bought earlier, consumes at
the rate :math:`c` and invests the share :math:`\\alpha` of the liquid wealth
:math:`w` in the risky asset. The value function :math:`J(t, w, I)` solves

.. math::

    J_t + (\\hat\\mu w + I + \\pi - c^*) J_w
        + \\tfrac{1}{2}(\\hat\\sigma w)^2 J_{ww}
        + \\lambda U(w + \\pi) + U(c^*) - (\\rho + \\lambda) J = 0

with :math:`U'(c^*) = J_w`, the terminal condition :math:`J = U(w + \\pi)`
at the terminal age and the balance equation at :math:`w = 0` (diffusion and
portfolio drift vanish there). At the largest wealth the value function
keeps the shape of the asymptotic expansion of :mod:`diaopt.numerics`,
:math:`J \\propto U(w + S)`: the two outermost nodes are tied by
:math:`J_N / J_{N-1} = U(w_N + S) / U(w_{N-1} + S)`, while the level of
both follows from the equation at the interior nodes.


Allocation modes
================

With a fixed allocation everything is held in the risky asset (:math:`\\alpha
= 1`, :math:`\\hat\\mu = \\mu`, :math:`\\hat\\sigma = \\sigma`).
In dynamic mode the risky share solves the first-order condition, clamped to
[0, 1], and equals the Merton fraction at the largest wealth.


Scheme
======

Backward implicit time steps with upwinded wealth derivatives. Consumption
and risky share are taken from the surface of the previous (later) step,
which keeps every step a set of independent tridiagonal systems, one per
income node. After each step the surface has to be increasing in wealth and
income and concave in wealth; otherwise :class:`NumericalError` is raised.

The surface is kept at snapshot ages spaced by a configurable interval, the
retirement age and the terminal age always included.


Module documentation
====================

"""

import logging

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from diaopt.numerics import (
    NumericalError,
    TridiagonalSystem,
    integrate_hk,
    optimal_alpha,
    shape_ratio,
    thomas_solve,
    upwind_coefficients,
    wealth_derivatives,
)

logger = logging.getLogger(__name__)

#: Relative slack of the concavity check
CONCAVITY_TOLERANCE = 0.05


class ValueSurface:
    """
    Solved post-retirement value function and controls.

    Arrays are indexed ``[snapshot, wealth node, income node]`` with the
    snapshots in ascending age.

    Attributes
    ----------
    grid : :class:`diaopt.numerics.Grid`
        Grid the surface was solved on

    ages : :class:`numpy.ndarray`
        Ages of the stored snapshots, ascending

    values : :class:`numpy.ndarray`
        Value function :math:`J`

    consumption : :class:`numpy.ndarray`
        Optimal consumption :math:`c^*`

    alpha : :class:`numpy.ndarray` or None
        Optimal risky share :math:`\\alpha^*`, None for a fixed allocation

    asymptotics : :class:`diaopt.numerics.AsymptoticCoefficients`
        Large-wealth coefficients used at the outermost wealth node

    """

    def __init__(
        self,
        grid=None,
        ages=None,
        values=None,
        consumption=None,
        alpha=None,
        asymptotics=None,
    ):
        self.grid = grid
        self.ages = ages
        self.values = values
        self.consumption = consumption
        self.alpha = alpha
        self.asymptotics = asymptotics
        self._interpolators = {}

    @property
    def dynamic(self):
        """Whether the risky share was optimised."""
        return self.alpha is not None

    @property
    def retirement_values(self):
        """Value function at the retirement age."""
        return self.values[0]

    def slice_index(self, age):
        """
        Index of the snapshot nearest to ``age``.

        Parameters
        ----------
        age : :class:`float`
            Age within the solved span

        Returns
        -------
        index : :class:`int`
            Snapshot index

        Raises
        ------
        ValueError
            Raised for ages outside the solved span

        """
        slack = 1e-9
        if not (self.ages[0] - slack <= age <= self.ages[-1] + slack):
            raise ValueError(
                f"age {age} outside the solved span "
                f"[{self.ages[0]}, {self.ages[-1]}]"
            )
        return int(np.argmin(np.abs(self.ages - age)))

    def value(self, age, wealth, income):
        """
        Bilinearly interpolated value function.

        Parameters
        ----------
        age : :class:`float`
            Age, mapped to the nearest snapshot

        wealth, income : :class:`float` or :class:`numpy.ndarray`
            State(s) inside the grid

        Returns
        -------
        value : :class:`float` or :class:`numpy.ndarray`
            Value(s) of :math:`J`

        Raises
        ------
        ValueError
            Raised for states outside the grid

        """
        return self._lookup("values", age, wealth, income)

    def consumption_policy(self, age, wealth, income):
        """
        Optimal consumption at a state.

        Parameters
        ----------
        age : :class:`float`
            Age, mapped to the nearest snapshot

        wealth, income : :class:`float` or :class:`numpy.ndarray`
            State(s) inside the grid

        Returns
        -------
        consumption : :class:`float` or :class:`numpy.ndarray`
            Bilinearly interpolated :math:`c^*`

        Raises
        ------
        ValueError
            Raised for states outside the grid

        """
        return self._lookup("consumption", age, wealth, income)

    def allocation_policy(self, age, wealth, income):
        """
        Optimal risky share at a state, 1 for a fixed allocation.

        Parameters
        ----------
        age : :class:`float`
            Age, mapped to the nearest snapshot

        wealth, income : :class:`float` or :class:`numpy.ndarray`
            State(s) inside the grid

        Returns
        -------
        alpha : :class:`float` or :class:`numpy.ndarray`
            Bilinearly interpolated :math:`\\alpha^*`

        """
        if not self.dynamic:
            self.slice_index(age)
            return np.ones_like(np.asarray(wealth, dtype=float))[()]
        return self._lookup("alpha", age, wealth, income)

    def to_dataframe(self, age):
        """
        Snapshot nearest to ``age`` as a long table.

        Parameters
        ----------
        age : :class:`float`
            Age, mapped to the nearest snapshot

        Returns
        -------
        table : :class:`pandas.DataFrame`
            Columns ``age``, ``I``, ``w``, ``value``, ``consumption`` and
            ``alpha``, ordered by income, then wealth

        """
        index = self.slice_index(age)
        income, wealth = np.meshgrid(self.grid.i, self.grid.w, indexing="ij")
        alpha = (
            self.alpha[index]
            if self.dynamic
            else np.ones_like(self.values[index])
        )
        return pd.DataFrame(
            {
                "age": self.ages[index],
                "I": income.ravel(),
                "w": wealth.ravel(),
                "value": self.values[index].T.ravel(),
                "consumption": self.consumption[index].T.ravel(),
                "alpha": alpha.T.ravel(),
            }
        )

    def _lookup(self, name, age, wealth, income):
        index = self.slice_index(age)
        key = (name, index)
        if key not in self._interpolators:
            self._interpolators[key] = RegularGridInterpolator(
                (self.grid.w, self.grid.i),
                getattr(self, name)[index],
                method="linear",
                bounds_error=True,
            )
        wealth, income = np.broadcast_arrays(
            np.asarray(wealth, dtype=float), np.asarray(income, dtype=float)
        )
        points = np.stack([wealth, income], axis=-1)
        return self._interpolators[key](points)[()]


class PostRetirementSolver:
    """
    Backward solver for the post-retirement value function.

    Attributes
    ----------
    grid : :class:`diaopt.numerics.Grid`
        Grid, its post-retirement time axis is used

    mortality : :class:`diaopt.model.MortalityModel`
        Mortality law

    market : :class:`diaopt.model.MarketModel`
        Market assumptions

    preferences : :class:`diaopt.model.Preferences`
        Preferences

    dynamic : :class:`bool`
        Whether to optimise the risky share

    snapshot_interval : :class:`float`
        Years between two stored snapshots


    Examples
    --------
    Solve on the default grid with a fixed allocation:

    .. code-block::

        grid = build_grid(55, 65)
        solver = PostRetirementSolver(grid, MortalityModel(), MarketModel(),
                                      Preferences())
        surface = solver.solve()
        surface.consumption_policy(70, 10.0, 1.0)

    """

    def __init__(
        self,
        grid,
        mortality,
        market,
        preferences,
        dynamic=False,
        snapshot_interval=0.25,
    ):
        self.grid = grid
        self.mortality = mortality
        self.market = market
        self.preferences = preferences
        self.dynamic = dynamic
        self.snapshot_interval = snapshot_interval

    @property
    def boundary_alpha(self):
        """Risky share at the largest wealth."""
        if not self.dynamic:
            return 1.0
        fraction = self.market.merton_fraction(self.preferences.gamma)
        return float(np.clip(fraction, 0.0, 1.0))

    def solve(self):
        """
        Step the value function back from the terminal to the retirement age.

        Returns
        -------
        surface : :class:`ValueSurface`
            Value function and controls at the snapshot ages

        Raises
        ------
        NumericalError
            Raised if an assembled system is not diagonally dominant or the
            surface loses monotonicity or concavity

        """
        grid = self.grid
        wealth = grid.w[:, np.newaxis]
        pension = self.market.pi
        times = grid.t_post
        steps = times.size - 1
        dt = grid.dt_post
        coefficients = integrate_hk(
            self.preferences,
            self.market,
            self.mortality,
            x=grid.retirement_age,
            horizon=grid.terminal_age - grid.retirement_age,
            dt=dt,
            w_m=grid.w[-1],
            alpha=self.boundary_alpha,
        )
        stride = max(1, int(round(self.snapshot_interval / dt)))
        logger.info(
            "Solving post-retirement problem over %d steps (%s)",
            steps,
            "dynamic" if self.dynamic else "fixed",
        )

        bequest = self.preferences.utility(wealth + pension)
        values = np.repeat(bequest, grid.i.size, axis=1)
        consumption, alpha = self._policy(values)
        snapshots = [(grid.ages(times[-1]), values, consumption, alpha)]
        for index in range(steps - 1, -1, -1):
            age = grid.ages(times[index])
            shift = coefficients.shift(index, grid.i, pension)
            values = self._step(
                values, consumption, alpha, age, dt, shift, bequest
            )
            self._check(values, age)
            consumption, alpha = self._policy(values)
            if (steps - index) % stride == 0 or index == 0:
                snapshots.append((age, values, consumption, alpha))
            if (steps - index) % max(1, int(round(1 / dt))) == 0:
                logger.debug("Reached age %.4g", age)
        snapshots.reverse()
        logger.info(
            "Post-retirement problem solved, %d snapshots stored",
            len(snapshots),
        )
        return ValueSurface(
            grid=grid,
            ages=np.array([item[0] for item in snapshots]),
            values=np.array([item[1] for item in snapshots]),
            consumption=np.array([item[2] for item in snapshots]),
            alpha=(
                np.array([item[3] for item in snapshots])
                if self.dynamic
                else None
            ),
            asymptotics=coefficients,
        )

    def _policy(self, values):
        jw, jww = wealth_derivatives(values, self.grid.dw)
        if np.any(~(jw > 0)):
            raise NumericalError("value function is not increasing in wealth")
        consumption = self.preferences.inverse_marginal_utility(jw)
        consumption[0] = np.minimum(
            consumption[0], self.grid.i + self.market.pi
        )
        if self.dynamic:
            alpha = optimal_alpha(self.market, jw, jww, self.grid.w)
            alpha[-1] = self.boundary_alpha
        else:
            alpha = np.ones_like(values)
        return consumption, alpha

    def _step(self, values, consumption, alpha, age, dt, shift, bequest):
        grid = self.grid
        wealth = grid.w[:, np.newaxis]
        income = grid.i[np.newaxis, :]
        drift = (
            self.market.portfolio_drift(alpha) * wealth
            + income
            + self.market.pi
            - consumption
        )
        volatility = self.market.portfolio_volatility(alpha) * wealth
        diffusion = 0.5 * volatility**2
        lower, centre, upper = upwind_coefficients(drift, diffusion, grid.dw)
        hazard = self.mortality.hazard(age)
        sub = -lower
        diag = 1.0 / dt + self.market.rho + hazard - centre
        sup = -upper
        rhs = (
            values / dt
            + hazard * bequest
            + self.preferences.utility(consumption)
        )
        sub[-1] = -shape_ratio(
            grid.w[-1], grid.w[-2], shift, self.preferences.gamma
        )
        diag[-1], sup[-1], rhs[-1] = 1.0, 0.0, 0.0
        system = TridiagonalSystem(sub=sub, diag=diag, sup=sup, rhs=rhs)
        if not system.is_diagonally_dominant():
            raise NumericalError(
                f"implicit system not diagonally dominant at age {age}"
            )
        return thomas_solve(system)

    def _check(self, values, age):
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"non-finite value function at age {age}")
        forward = np.diff(values, axis=0)
        if np.any(forward <= 0):
            raise NumericalError(
                f"value function not increasing in wealth at age {age}"
            )
        if np.any(np.diff(values, axis=1) < -1e-10 * np.abs(values[:, 1:])):
            raise NumericalError(
                f"value function decreasing in income at age {age}"
            )
        second = forward[1:-1] - forward[:-2]
        slack = CONCAVITY_TOLERANCE * (forward[1:-1] + forward[:-2])
        if np.any(second > slack):
            raise NumericalError(
                f"value function not concave in wealth at age {age}"
            )
