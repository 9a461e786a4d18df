"""
Purchase policies derived from the solved pre-retirement problem.

The annuitization region at a given age lies above a frontier
:math:`w^*(I)` in the :math:`(I, w)` plane. An investor in the region buys
DIA income, moving along the characteristic line of slope
:math:`-\\tilde a` (each unit of income costs :math:`\\tilde a` of liquid
wealth) until the frontier is reached. Below the frontier nothing is done,
as DIAs cannot be sold.


Use cases
=========

Extract the frontier at age 62 and ask what somebody with a liquid wealth
of 12 and no DIA income should do:

.. code-block::

    frontier = extract_frontier(solution, 62)
    recommendation = frontier.recommend(wealth=12.0, income=0.0)
    recommendation.purchase

The alpha heat map of a slice, as a table:

.. code-block::

    table = allocation_table(solution.slice_at(62))


Module documentation
====================

"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class PolicyFrontier:
    """
    Annuitization frontier at one age.

    Attributes
    ----------
    age : :class:`float`
        Age of the frontier

    income : :class:`numpy.ndarray`
        Income nodes, equally spaced and ascending

    boundary : :class:`numpy.ndarray`
        Smallest annuitizing wealth :math:`w^*(I)` per income node

        NaN marks income levels where buying is never optimal.

    a_tilde : :class:`float`
        DIA price per unit of income at this age


    Examples
    --------
    A frontier can be created directly or taken from a solved slice:

    .. code-block::

        frontier = PolicyFrontier()
        frontier.from_slice(solution.slice_at(62))

    """

    def __init__(self, age=None, income=None, boundary=None, a_tilde=None):
        self.age = age
        self.income = income
        self.boundary = boundary
        self.a_tilde = a_tilde

    def from_slice(self, slice_):
        """
        Extract the frontier of a pre-retirement slice.

        Per income node the frontier is the smallest annuitizing wealth
        node, refined linearly by the sign change of :math:`J^{(2)} -
        J^{(1)}` between it and the node below.

        Parameters
        ----------
        slice_ : :class:`diaopt.preretirement.PreSolveSlice`
            Solved slice

        """
        self.age = slice_.age
        self.income = np.asarray(slice_.i, dtype=float)
        self.a_tilde = slice_.a_tilde
        boundary = np.full(self.income.size, np.nan)
        with np.errstate(invalid="ignore"):
            gap = slice_.j2 - slice_.j1
        for column in range(self.income.size):
            nodes = np.flatnonzero(slice_.annuitize[:, column])
            if nodes.size == 0:
                continue
            node = nodes[0]
            boundary[column] = slice_.w[node]
            if node == 0:
                continue
            below, above = gap[node - 1, column], gap[node, column]
            if np.isfinite(below) and np.isfinite(above) and above > below:
                step = slice_.w[node] - slice_.w[node - 1]
                fraction = -below / (above - below)
                boundary[column] = slice_.w[node - 1] + step * fraction
        self.boundary = boundary

    def boundary_at(self, income):
        """
        Frontier interpolated linearly between income nodes.

        Parameters
        ----------
        income : :class:`float` or :class:`numpy.ndarray`
            Income level(s) within the grid

        Returns
        -------
        boundary : :class:`float` or :class:`numpy.ndarray`
            :math:`w^*(I)`, NaN where an adjacent node has no frontier

        """
        income = np.asarray(income, dtype=float)
        spacing = self.income[1] - self.income[0]
        position = (income - self.income[0]) / spacing
        lower = np.clip(
            np.floor(position + 1e-9).astype(int), 0, self.income.size - 1
        )
        upper = np.clip(lower + 1, 0, self.income.size - 1)
        weight = np.clip(position - lower, 0.0, 1.0)
        weight = np.where(weight < 1e-9, 0.0, weight)
        low_value = self.boundary[lower]
        high_value = np.where(weight > 0, self.boundary[upper], 0.0)
        result = (1.0 - weight) * low_value + weight * high_value
        outside = (income < self.income[0] - 1e-9) | (
            income > self.income[-1] + 1e-9
        )
        result = np.where(outside, np.nan, result)
        return result[()]

    def is_annuitizing(self, wealth, income):
        """
        Whether states lie in the annuitization region.

        Parameters
        ----------
        wealth, income : :class:`float` or :class:`numpy.ndarray`
            States

        Returns
        -------
        inside : :class:`bool` or :class:`numpy.ndarray`
            True where the wealth is at least :math:`w^*(I)`

        """
        boundary = self.boundary_at(income)
        with np.errstate(invalid="ignore"):
            inside = np.asarray(wealth) >= boundary
        return inside[()] if np.ndim(inside) == 0 else inside

    def contains(self, other, tolerance=1e-12):
        """
        Whether this annuitization region includes that of ``other``.

        Parameters
        ----------
        other : :class:`PolicyFrontier`
            Frontier on the same income nodes

        tolerance : :class:`float`
            Slack on the wealth axis

        Returns
        -------
        contains : :class:`bool`
            True if wherever ``other`` annuitizes, this frontier does so
            at a wealth at most as high

        """
        defined = ~np.isnan(other.boundary)
        mine = self.boundary[defined]
        if np.any(np.isnan(mine)):
            return False
        return bool(np.all(mine <= other.boundary[defined] + tolerance))

    def project(self, wealth, income):
        """
        Move states along the characteristic lines onto the frontier.

        Finds the smallest :math:`s \\ge 0` where the line
        :math:`(I + s, w - \\tilde a s)` meets the piecewise-linear
        frontier. States outside the region are left alone. A purchase
        stops at the last income node with a frontier, at the largest
        income and when the liquid wealth is used up; the latter two are
        flagged as clipped.

        Parameters
        ----------
        wealth, income : :class:`float` or :class:`numpy.ndarray`
            States

        Returns
        -------
        purchase : :class:`numpy.ndarray`
            Income bought, non-negative

        wealth_after : :class:`numpy.ndarray`
            Liquid wealth after paying for the purchase

        clipped : :class:`numpy.ndarray`
            Whether the purchase was cut short

        """
        wealth, income = np.broadcast_arrays(
            np.asarray(wealth, dtype=float), np.asarray(income, dtype=float)
        )
        shape = wealth.shape
        wealth, income = wealth.ravel(), income.ravel()
        purchase = np.zeros_like(wealth)
        active = np.asarray(self.is_annuitizing(wealth, income)).ravel()
        nodes, boundary, price = self.income, self.boundary, self.a_tilde
        spacing = nodes[1] - nodes[0]
        for segment in range(nodes.size - 1):
            involved = active & (income < nodes[segment + 1] - 1e-12)
            if not np.any(involved):
                continue
            start = np.maximum(nodes[segment] - income, 0.0)
            low, high = boundary[segment], boundary[segment + 1]
            if np.isnan(low) or np.isnan(high):
                purchase[involved] = start[involved]
                active &= ~involved
                continue
            slope = (high - low) / spacing
            offset = wealth - low - slope * (income - nodes[segment])
            end = nodes[segment + 1] - income
            crossing = involved & (offset - (price + slope) * end <= 0)
            denominator = price + slope
            with np.errstate(divide="ignore", invalid="ignore"):
                root = np.where(denominator > 0, offset / denominator, start)
            purchase[crossing] = np.clip(
                root[crossing], start[crossing], end[crossing]
            )
            purchase[involved & ~crossing] = end[involved & ~crossing]
            active &= ~crossing
        with np.errstate(invalid="ignore"):
            surplus = wealth - price * purchase - boundary[-1]
            clipped = active & ~(surplus <= 1e-12)
        overdrawn = wealth - price * purchase < 0
        purchase = np.where(overdrawn, wealth / price, purchase)
        clipped |= overdrawn
        if np.any(clipped):
            logger.warning(
                "%d purchase(s) clipped at age %.4g",
                int(np.sum(clipped)),
                self.age,
            )
        wealth_after = np.maximum(wealth - price * purchase, 0.0)
        return (
            purchase.reshape(shape),
            wealth_after.reshape(shape),
            clipped.reshape(shape),
        )

    def recommend(self, wealth, income):
        """
        Recommend how much DIA income to buy now.

        Parameters
        ----------
        wealth : :class:`float`
            Liquid wealth, non-negative

        income : :class:`float`
            DIA income already held, non-negative

        Returns
        -------
        recommendation : :class:`Recommendation`
            Purchase and state after the trade

        Raises
        ------
        ValueError
            Raised for negative or off-grid states, and if the purchase
            would leave the income grid or exhaust the liquid wealth before
            reaching the frontier


        Examples
        --------
        With a flat frontier at 5 and a price of 10, a wealth of 8 buys 0.3
        units of income and ends at a wealth of 5:

        .. code-block::

            frontier = PolicyFrontier(age=60, income=np.linspace(0, 1, 11),
                                      boundary=np.full(11, 5.0), a_tilde=10)
            frontier.recommend(wealth=8.0, income=0.0).purchase  # 0.3

        """
        if wealth < 0 or income < 0:
            raise ValueError("wealth and income must not be negative")
        if income > self.income[-1] + 1e-12:
            raise ValueError("income lies beyond the largest grid income")
        purchase, wealth_after, clipped = self.project(wealth, income)
        if clipped:
            raise ValueError(
                "purchase leaves the grid before reaching the frontier"
            )
        return Recommendation(
            age=float(self.age),
            income=float(income),
            wealth=float(wealth),
            a_tilde=float(self.a_tilde),
            purchase=float(purchase),
            income_after=float(income + purchase),
            wealth_after=float(wealth_after),
        )

    def to_dataframe(self):
        """
        Frontier as a table with the columns ``age``, ``I``, ``w_star``
        and ``a_tilde``.

        Returns
        -------
        table : :class:`pandas.DataFrame`
            One row per income node

        """
        return pd.DataFrame(
            {
                "age": self.age,
                "I": self.income,
                "w_star": self.boundary,
                "a_tilde": self.a_tilde,
            }
        )


@dataclass(frozen=True)
class Recommendation:
    """
    Purchase recommended for one state.

    Attributes
    ----------
    age : :class:`float`
        Age of the frontier used

    income, wealth : :class:`float`
        State before the trade

    a_tilde : :class:`float`
        DIA price per unit of income

    purchase : :class:`float`
        DIA income to buy

    income_after, wealth_after : :class:`float`
        State after the trade

    """

    age: float
    income: float
    wealth: float
    a_tilde: float
    purchase: float
    income_after: float
    wealth_after: float

    def to_dict(self):
        """Fields as a dictionary, in declaration order."""
        return asdict(self)


def extract_frontier(solution, age):
    """
    Annuitization frontier at the solved slice nearest to ``age``.

    Parameters
    ----------
    solution : :class:`diaopt.preretirement.PreRetirementSolution`
        Solved pre-retirement problem

    age : :class:`float`
        Age between the start and the retirement age

    Returns
    -------
    frontier : :class:`PolicyFrontier`
        The frontier

    Raises
    ------
    ValueError
        Raised for ages outside the solved span

    """
    frontier = PolicyFrontier()
    frontier.from_slice(solution.slice_at(age))
    return frontier


def allocation_table(slice_):
    """
    Risky share and purchase decision per node of a slice.

    Parameters
    ----------
    slice_ : :class:`diaopt.preretirement.PreSolveSlice`
        Solved slice

    Returns
    -------
    table : :class:`pandas.DataFrame`
        Columns ``age``, ``I``, ``w``, ``alpha`` and ``annuitize`` (0 or 1),
        ordered by income, then wealth

    """
    income, wealth = np.meshgrid(slice_.i, slice_.w, indexing="ij")
    return pd.DataFrame(
        {
            "age": slice_.age,
            "I": income.ravel(),
            "w": wealth.ravel(),
            "alpha": slice_.alpha.T.ravel(),
            "annuitize": slice_.annuitize.T.ravel().astype(int),
        }
    )
