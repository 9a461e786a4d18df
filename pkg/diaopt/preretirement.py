"""
Value function and annuitization region before retirement.

Before retirement the investor saves at the rate :math:`\\nu`, consumes
nothing from the account and may at any time buy DIA income :math:`I` at the
price :math:`\\tilde a` per unit. Upon death the estate receives the liquid
wealth, the refund :math:`K_t I` and the current savings. At every state
either it is optimal not to buy, and

.. math::

    J_t + (\\hat\\mu w + \\nu) J_w + \\tfrac{1}{2}(\\hat\\sigma w)^2 J_{ww}
        + \\lambda U(w + K_t I + \\nu) - (\\rho + \\lambda) J = 0

holds, or buying is optimal and :math:`J_I = \\tilde a J_w`: the value is
constant along the characteristic lines of slope :math:`-\\tilde a` in the
:math:`(I, w)` plane.


Scheme
======

Each backward time step

#. advances the no-purchase equation explicitly, split into sub-steps
   obeying the CFL rule of :func:`diaopt.numerics.cfl_substeps`, giving
   :math:`J^{(1)}`;

#. computes the purchase alternative :math:`J^{(2)}` by sweeping the
   characteristic relation through the grid, towards lower income and
   higher wealth;

#. keeps :math:`J = \\max(J^{(1)}, J^{(2)})` and flags the nodes where
   :math:`J^{(2)} \\ge J^{(1)}` as annuitizing.

Zero wealth is never annuitizing, and no purchase is possible at the largest
income.

At the largest wealth the value function keeps the shifted form
:math:`J \\approx h(t)\,U(w + S(t, I))` of the post-retirement expansion
(see :mod:`diaopt.numerics`), continued backwards with

.. math::

    h' = [(\\gamma-1)\\hat\\mu + \\rho + \\lambda
          + \\tfrac{1}{2}\\gamma(1-\\gamma)\\hat\\sigma^2] h - \\lambda

    S' = (\\hat\\mu - \\gamma\\hat\\sigma^2 + \\lambda/h) S - \\nu
         - \\lambda (K_t I + \\nu)/h

from their values at the retirement age. :math:`S` grows by roughly the
savings still to come, so the outermost nodes see future savings and DIA
income as wealth and the annuitization region does not depend on the
largest wealth of the grid. As after retirement, only the ratio of the two
outermost nodes is imposed.

The seed at the retirement age is the post-retirement value function; it
carries no purchase option. The decision taken in the last pre-retirement
step is therefore the one reported for the retirement age.


Module documentation
====================

"""

import logging

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from diaopt.numerics import (
    NumericalError,
    cfl_substeps,
    check_cfl,
    optimal_alpha,
    shape_ratio,
    upwind_coefficients,
    wealth_derivatives,
)

logger = logging.getLogger(__name__)


class PreSolveSlice:
    """
    Pre-retirement solution at one age.

    Arrays are indexed ``[wealth node, income node]``.

    Attributes
    ----------
    age : :class:`float`
        Age of the slice

    w : :class:`numpy.ndarray`
        Wealth nodes

    i : :class:`numpy.ndarray`
        Income nodes

    j1 : :class:`numpy.ndarray`
        Value without a purchase

    j2 : :class:`numpy.ndarray`
        Value of the purchase alternative, ``-inf`` where no purchase is
        possible

    annuitize : :class:`numpy.ndarray`
        Whether buying is optimal, i.e. ``j2 >= j1``

    alpha : :class:`numpy.ndarray`
        Risky share used for ``j1``

    a_tilde : :class:`float`
        DIA price per unit of income at this age

    """

    def __init__(
        self,
        age=None,
        w=None,
        i=None,
        j1=None,
        j2=None,
        annuitize=None,
        alpha=None,
        a_tilde=None,
    ):
        self.age = age
        self.w = w
        self.i = i
        self.j1 = j1
        self.j2 = j2
        self.annuitize = annuitize
        self.alpha = alpha
        if annuitize is None and j1 is not None and j2 is not None:
            self.annuitize = j2 >= j1
        if alpha is None and j1 is not None:
            self.alpha = np.ones_like(j1)
        self.a_tilde = a_tilde

    @property
    def values(self):
        """Value function :math:`\\max(J^{(1)}, J^{(2)})`."""
        return np.maximum(self.j1, self.j2)

    def annuitization_indicator(self, wealth, income):
        """
        Whether buying DIA income is optimal at the nearest node.

        Parameters
        ----------
        wealth : :class:`float`
            Liquid wealth

        income : :class:`float`
            DIA income

        Returns
        -------
        annuitize : :class:`bool`
            Flag of the nearest grid node

        """
        k = int(np.argmin(np.abs(self.w - wealth)))
        q = int(np.argmin(np.abs(self.i - income)))
        return bool(self.annuitize[k, q])

    def region_fraction(self, w_limit=None):
        """
        Share of the grid nodes in the annuitization region.

        Parameters
        ----------
        w_limit : :class:`float`
            Only count nodes with a wealth up to this value

        Returns
        -------
        fraction : :class:`float`
            Share in [0, 1]

        """
        region = self.annuitize
        if w_limit is not None:
            region = region[self.w <= w_limit]
        return float(np.mean(region))


class PreRetirementSolution:
    """
    Stored pre-retirement slices.

    Attributes
    ----------
    seed : :class:`PreSolveSlice`
        Post-retirement value function at the retirement age

    slices : :class:`list`
        Decision slices in ascending age, the start age and the final step
        always included

    dynamic : :class:`bool`
        Whether the risky share was optimised

    """

    def __init__(self, seed=None, slices=None, dynamic=False):
        self.seed = seed
        self.slices = slices or []
        self.dynamic = dynamic
        self._interpolators = {}

    @property
    def ages(self):
        """Ages of the decision slices."""
        return np.array([item.age for item in self.slices])

    @property
    def start_age(self):
        """Earliest solved age."""
        return self.slices[0].age

    @property
    def retirement_age(self):
        """Age of the seed."""
        return self.seed.age

    def slice_index(self, age):
        """
        Index of the decision slice nearest to ``age``.

        Parameters
        ----------
        age : :class:`float`
            Age between the start and the retirement age

        Returns
        -------
        index : :class:`int`
            Index into :attr:`slices`

        Raises
        ------
        ValueError
            Raised for ages outside the solved span

        """
        slack = 1e-9
        if not (self.start_age - slack <= age <= self.retirement_age + slack):
            raise ValueError(
                f"age {age} outside the solved span "
                f"[{self.start_age}, {self.retirement_age}]"
            )
        return int(np.argmin(np.abs(self.ages - age)))

    def slice_at(self, age):
        """
        Decision slice nearest to ``age``.

        Parameters
        ----------
        age : :class:`float`
            Age between the start and the retirement age

        Returns
        -------
        slice : :class:`PreSolveSlice`
            Nearest slice

        """
        return self.slices[self.slice_index(age)]

    def value(self, age, wealth, income):
        """
        Bilinearly interpolated value function at the nearest slice.

        Parameters
        ----------
        age : :class:`float`
            Age between the start and the retirement age

        wealth, income : :class:`float` or :class:`numpy.ndarray`
            State(s) inside the grid

        Returns
        -------
        value : :class:`float` or :class:`numpy.ndarray`
            Value(s) of :math:`J`

        Raises
        ------
        ValueError
            Raised for ages or states outside the solved domain

        """
        index = self.slice_index(age)
        if index not in self._interpolators:
            item = self.slices[index]
            self._interpolators[index] = RegularGridInterpolator(
                (item.w, item.i),
                item.values,
                method="linear",
                bounds_error=True,
            )
        wealth, income = np.broadcast_arrays(
            np.asarray(wealth, dtype=float), np.asarray(income, dtype=float)
        )
        points = np.stack([wealth, income], axis=-1)
        return self._interpolators[index](points)[()]


class PreRetirementSolver:
    """
    Backward solver for the pre-retirement variational problem.

    Attributes
    ----------
    grid : :class:`diaopt.numerics.Grid`
        Grid, its pre-retirement time axis is used

    mortality : :class:`diaopt.model.MortalityModel`
        Mortality law

    market : :class:`diaopt.model.MarketModel`
        Market assumptions, with a positive savings rate

    preferences : :class:`diaopt.model.Preferences`
        Preferences

    contract : :class:`diaopt.model.DIAContract`
        DIA contract, bought from the grid's start age

    surface : :class:`diaopt.postretirement.ValueSurface`
        Solved post-retirement value function on the same state grid

    dynamic : :class:`bool`
        Whether to optimise the risky share

    snapshot_interval : :class:`float`
        Years between two stored slices


    Examples
    --------
    .. code-block::

        surface = PostRetirementSolver(grid, mortality, market,
                                       preferences).solve()
        solver = PreRetirementSolver(grid, mortality, market, preferences,
                                     contract, surface)
        solution = solver.solve()
        solution.slice_at(62).region_fraction()

    """

    def __init__(
        self,
        grid,
        mortality,
        market,
        preferences,
        contract,
        surface,
        dynamic=False,
        snapshot_interval=0.25,
    ):
        self.grid = grid
        self.mortality = mortality
        self.market = market
        self.preferences = preferences
        self.contract = contract
        self.surface = surface
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
        Step back from the retirement to the start age.

        Returns
        -------
        solution : :class:`PreRetirementSolution`
            Seed and decision slices

        Raises
        ------
        ValueError
            Raised if the savings rate is not positive or the seed, the
            contract and the grid do not fit together

        NumericalError
            Raised if an explicit step violates the CFL condition or the
            value function becomes non-finite

        """
        self._check_inputs()
        grid = self.grid
        times = grid.t
        steps = times.size - 1
        dt = grid.dt
        drift_max = (
            max(abs(self.market.mu), abs(self.market.r)) * grid.w[-1]
            + self.market.nu
        )
        hazard = self.mortality.hazard(grid.retirement_age)
        substeps = cfl_substeps(
            dt,
            grid.dw,
            self.market.sigma,
            grid.w[-1],
            drift_max=drift_max,
            discount_max=abs(self.market.rho) + hazard,
        )
        stride = max(1, int(round(self.snapshot_interval / dt)))
        logger.info(
            "Solving pre-retirement problem, %d steps of %d sub-steps (%s)",
            steps,
            substeps,
            "dynamic" if self.dynamic else "fixed",
        )

        values = np.array(self.surface.retirement_values, dtype=float)
        asymptotics = self.surface.asymptotics
        boundary = (
            float(asymptotics.h[0]),
            asymptotics.shift(0, grid.i, self.market.pi),
        )
        seed = PreSolveSlice(
            age=grid.retirement_age,
            w=grid.w,
            i=grid.i,
            j1=values.copy(),
            j2=np.full_like(values, -np.inf),
            a_tilde=self._price(times[-1]),
        )
        slices = []
        for index in range(steps - 1, -1, -1):
            j1, alpha, boundary = self._diffuse(
                values, boundary, times[index + 1], dt / substeps, substeps
            )
            a_tilde = self._price(times[index])
            j2 = self.purchase_alternative(j1, a_tilde)
            annuitize = j2 >= j1
            values = np.where(annuitize, j2, j1)
            age = grid.ages(times[index])
            if index % stride == 0 or index == steps - 1:
                snapshot = PreSolveSlice(
                    age=age,
                    w=grid.w,
                    i=grid.i,
                    j1=j1,
                    j2=j2,
                    annuitize=annuitize,
                    alpha=alpha,
                    a_tilde=a_tilde,
                )
                slices.append(snapshot)
                logger.debug(
                    "Age %.4g: %.1f%% of nodes annuitizing",
                    age,
                    100 * np.mean(annuitize),
                )
        slices.reverse()
        logger.info(
            "Pre-retirement problem solved, %d slices stored", len(slices)
        )
        return PreRetirementSolution(
            seed=seed, slices=slices, dynamic=self.dynamic
        )

    def purchase_alternative(self, j1, a_tilde):
        """
        Value of buying DIA income along the characteristic lines.

        Solves the one-sided discretisation of :math:`J_I = \\tilde a J_w`,

        .. math::

            J^{(2)}_{k,q} = \\frac{J_{k,q+1} + r J_{k-1,q}}{1 + r},
            \\qquad r = \\tilde a \\frac{\\Delta I}{\\Delta w},

        where :math:`J = \\max(J^{(1)}, J^{(2)})` at the neighbours. Both
        neighbours lie one level earlier on the anti-diagonals
        ``k + (n_I - 1 - q)``, which are processed in turn, each in one
        vectorised operation.

        Parameters
        ----------
        j1 : :class:`numpy.ndarray`
            Value without a purchase

        a_tilde : :class:`float`
            DIA price per unit of income

        Returns
        -------
        j2 : :class:`numpy.ndarray`
            Purchase alternative, ``-inf`` at zero wealth and at the
            largest income

        """
        w_nodes, i_nodes = j1.shape
        ratio = a_tilde * self.grid.di / self.grid.dw
        combined = j1.copy()
        j2 = np.full_like(j1, -np.inf)
        for level in range(2, w_nodes + i_nodes - 1):
            k = np.arange(
                max(1, level - i_nodes + 1), min(w_nodes - 1, level - 1) + 1
            )
            if k.size == 0:
                continue
            q = i_nodes - 1 - (level - k)
            upstream = combined[k, q + 1] + ratio * combined[k - 1, q]
            candidate = upstream / (1.0 + ratio)
            j2[k, q] = candidate
            combined[k, q] = np.maximum(j1[k, q], candidate)
        return j2

    def _diffuse(self, values, boundary, start, dt, substeps):
        grid = self.grid
        wealth = grid.w[:, np.newaxis]
        income = grid.i[np.newaxis, :]
        market = self.market
        alpha = np.ones_like(values)
        for substep in range(substeps):
            time = start - substep * dt
            hazard = self.mortality.hazard(grid.ages(time))
            refund = self.contract.refund(self.mortality, market, time)
            discount = market.rho + hazard
            if self.dynamic:
                jw, jww = wealth_derivatives(values, grid.dw)
                alpha = optimal_alpha(market, jw, jww, grid.w)
                alpha[-1] = self.boundary_alpha
            drift = market.portfolio_drift(alpha) * wealth + market.nu
            volatility = market.portfolio_volatility(alpha) * wealth
            diffusion = 0.5 * volatility**2
            lower, centre, upper = upwind_coefficients(
                drift, diffusion, grid.dw
            )
            check_cfl(centre[:-1], discount, dt)
            source = hazard * self.preferences.utility(
                wealth + refund * income + market.nu
            )
            operator = centre * values
            operator[1:] += lower[1:] * values[:-1]
            operator[:-1] += upper[:-1] * values[1:]
            updated = values + dt * (operator + source - discount * values)
            boundary = self._advance_boundary(boundary, hazard, refund, dt)
            updated[-1] = updated[-2] * shape_ratio(
                grid.w[-1], grid.w[-2], boundary[1], self.preferences.gamma
            )
            values = updated
        if not np.all(np.isfinite(values)):
            raise NumericalError(
                f"non-finite value function at age {grid.ages(start)}"
            )
        return values, alpha, boundary

    def _advance_boundary(self, boundary, hazard, refund, dt):
        h, shift = boundary
        market = self.market
        gamma = self.preferences.gamma
        mu = market.portfolio_drift(self.boundary_alpha)
        sigma = market.portfolio_volatility(self.boundary_alpha)
        rate = (
            (gamma - 1.0) * mu
            + market.rho
            + hazard
            + 0.5 * gamma * (1.0 - gamma) * sigma**2
        )
        dh = rate * h - hazard
        dshift = (
            (mu - gamma * sigma**2 + hazard / h) * shift
            - market.nu
            - hazard * (refund * self.grid.i + market.nu) / h
        )
        h = h - dt * dh
        if not h > 0:
            raise NumericalError("asymptotic coefficients must stay positive")
        return h, shift - dt * dshift

    def _price(self, time):
        return float(self.contract.price(self.mortality, self.market, time))

    def _check_inputs(self):
        if not self.market.nu > 0:
            raise ValueError("market.nu must be positive before retirement")
        if self.surface.asymptotics is None:
            raise ValueError(
                "seed surface carries no asymptotic coefficients"
            )
        if not self.grid.matches(self.surface.grid):
            raise ValueError("seed surface was solved on a different grid")
        offsets = (
            self.contract.x - self.grid.start_age,
            self.contract.retirement_age - self.grid.retirement_age,
        )
        if max(abs(item) for item in offsets) > 1e-9:
            raise ValueError("contract ages do not match the grid")
