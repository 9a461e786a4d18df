"""
Numerical building blocks shared by the solvers.

The value function of the investor lives on a uniform grid in liquid wealth
``w`` and DIA income ``I``, stepped in time. This module provides that grid,
the upwind finite-difference coefficients of the wealth operator, a batched
tridiagonal (Thomas) solver for the implicit post-retirement scheme, the
stability rule for the explicit pre-retirement scheme, and the two
coefficient functions :math:`h(t)` and :math:`k(t)` of the asymptotic
expansion used at the maximum-wealth boundary.


Upwinding
=========

For a drift :math:`b` and a diffusion coefficient :math:`D`, the operator
:math:`b J_w + D J_{ww}` is discretised as

.. math::

    \\ell_k J_{k-1} + c_k J_k + u_k J_{k+1}

with a forward difference for :math:`b > 0` and a backward difference
otherwise. All of :math:`\\ell_k` and :math:`u_k` are non-negative and
:math:`c_k = -(\\ell_k + u_k)`, hence implicit steps assemble to an M-matrix
and explicit steps are monotone under the CFL rule.


Asymptotic boundary
===================

For wealth :math:`w` much larger than the income :math:`I + \\pi`, the
post-retirement value function behaves like

.. math::

    J \\approx h(t)\\,U(w) + k(t)\\,(I + \\pi)\\,U'(w),

which equals :math:`w_m^{1-\\gamma}[h U(W) + \\delta k U'(W)]` with
:math:`W = w/w_m` and :math:`\\delta = (I+\\pi)/w_m`. The coefficients
solve two ordinary differential equations backwards from :math:`h(T) =
k(T) = 1`, integrated by :func:`integrate_hk`.

The correction term grows with the remaining lifetime and outgrows the
leading term long before retirement (it even turns :math:`J` positive for
large :math:`I`). The solvers therefore use the expansion summed into a
shifted utility,

.. math::

    J \\approx h(t)\\,U\\bigl(w + S(t, I)\\bigr), \\qquad
    S = \\frac{\\pi k + I k_I}{h},

which agrees with the expansion to first order, equals the terminal
condition :math:`U(w + \\pi)` exactly and stays negative for
:math:`\\gamma > 1`. The third coefficient :math:`k_I` solves the equation
of :math:`k` with the forcing :math:`-h` only and :math:`k_I(T) = 0`, so
that :math:`k - k_I` is the part of :math:`k` due to the pension in the
estate. :math:`S` is the wealth-equivalent of all future income.


Module documentation
====================

"""

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class NumericalError(Exception):
    """
    Raised when a numerical scheme fails or produces inadmissible values.

    Typical causes are zero pivots, violated stability conditions and value
    functions that lost monotonicity or concavity, usually a sign of
    parameters far outside the tested range or of a grid that is too coarse.
    """


@dataclass(frozen=True, eq=False)
class Grid:
    """
    Uniform grid in time, liquid wealth and DIA income.

    Times are measured in years since the start age. The pre-retirement
    time axis runs from 0 to the deferral ``tau``, the post-retirement axis
    from ``tau`` to the terminal age.

    Attributes
    ----------
    start_age : :class:`float`
        Age at which the DIA can first be bought

    retirement_age : :class:`float`
        Age at which DIA income starts

    terminal_age : :class:`float`
        Age at which everybody is assumed dead

    w : :class:`numpy.ndarray`
        Wealth nodes, starting at zero

    i : :class:`numpy.ndarray`
        DIA income nodes, starting at zero

    t : :class:`numpy.ndarray`
        Pre-retirement times

    t_post : :class:`numpy.ndarray`
        Post-retirement times

    """

    start_age: float
    retirement_age: float
    terminal_age: float
    w: np.ndarray
    i: np.ndarray
    t: np.ndarray
    t_post: np.ndarray

    @property
    def dw(self):
        """Wealth spacing."""
        return self.w[1] - self.w[0]

    @property
    def di(self):
        """Income spacing."""
        return self.i[1] - self.i[0]

    @property
    def dt(self):
        """Pre-retirement time step."""
        return self.t[1] - self.t[0]

    @property
    def dt_post(self):
        """Post-retirement time step."""
        return self.t_post[1] - self.t_post[0]

    @property
    def tau(self):
        """Deferral period in years."""
        return self.retirement_age - self.start_age

    @property
    def shape(self):
        """Number of wealth and income nodes."""
        return self.w.size, self.i.size

    def ages(self, times):
        """
        Convert times since the start age into ages.

        Parameters
        ----------
        times : :class:`float` or :class:`numpy.ndarray`
            Years since the start age

        Returns
        -------
        ages : :class:`float` or :class:`numpy.ndarray`
            Ages in years

        """
        return self.start_age + times

    def matches(self, other):
        """
        Check whether two grids share their wealth and income nodes.

        Parameters
        ----------
        other : :class:`Grid`
            Grid to compare with

        Returns
        -------
        matches : :class:`bool`
            Whether both state grids are identical

        """
        return (
            self.w.shape == other.w.shape
            and self.i.shape == other.i.shape
            and np.allclose(self.w, other.w, rtol=0, atol=1e-12)
            and np.allclose(self.i, other.i, rtol=0, atol=1e-12)
        )


def build_grid(
    start_age,
    retirement_age,
    w_max=30.0,
    w_nodes=301,
    i_max=6.0,
    i_nodes=61,
    steps_per_year=24,
    terminal_age=120.0,
):
    """
    Create a uniform grid.

    Parameters
    ----------
    start_age : :class:`float`
        Age at which the pre-retirement solve ends

    retirement_age : :class:`float`
        Age separating pre- and post-retirement

    w_max : :class:`float`
        Largest wealth, in multiples of the pension rate

    w_nodes : :class:`int`
        Number of wealth nodes, at least 3

    i_max : :class:`float`
        Largest DIA income

    i_nodes : :class:`int`
        Number of income nodes, at least 3

    steps_per_year : :class:`int`
        Number of time steps per year, in both phases

    terminal_age : :class:`float`
        Age at which the post-retirement solve starts

    Returns
    -------
    grid : :class:`Grid`
        The grid

    Raises
    ------
    ValueError
        Raised for non-positive extents, too few nodes or unordered ages


    Examples
    --------
    The default grid has a spacing of 0.1 in both wealth and income:

    .. code-block::

        grid = build_grid(55, 65)
        grid.dw, grid.di, grid.dt  # 0.1, 0.1, 1/24

    """
    if not w_max > 0:
        raise ValueError("grid.w_max must be positive")
    if not i_max > 0:
        raise ValueError("grid.i_max must be positive")
    if int(w_nodes) != w_nodes or w_nodes < 3:
        raise ValueError("grid.w_nodes must be an integer of at least 3")
    if int(i_nodes) != i_nodes or i_nodes < 3:
        raise ValueError("grid.i_nodes must be an integer of at least 3")
    if not steps_per_year > 0:
        raise ValueError("grid.steps_per_year must be positive")
    if not retirement_age > start_age:
        raise ValueError("retirement age must exceed the start age")
    if not terminal_age > retirement_age:
        raise ValueError("terminal age must exceed the retirement age")
    tau = retirement_age - start_age
    horizon = terminal_age - start_age
    pre_steps = max(1, int(round(tau * steps_per_year)))
    post_steps = max(
        1, int(round((terminal_age - retirement_age) * steps_per_year))
    )
    grid = Grid(
        start_age=float(start_age),
        retirement_age=float(retirement_age),
        terminal_age=float(terminal_age),
        w=np.linspace(0.0, w_max, int(w_nodes)),
        i=np.linspace(0.0, i_max, int(i_nodes)),
        t=np.linspace(0.0, tau, pre_steps + 1),
        t_post=np.linspace(tau, horizon, post_steps + 1),
    )
    logger.debug(
        "Grid with %d x %d nodes, %d + %d time steps",
        w_nodes,
        i_nodes,
        pre_steps,
        post_steps,
    )
    return grid


@dataclass(frozen=True, eq=False)
class TridiagonalSystem:
    """
    Tridiagonal linear system, optionally batched over trailing axes.

    Row ``j`` reads ``sub[j] x[j-1] + diag[j] x[j] + sup[j] x[j+1] =
    rhs[j]``. The entries ``sub[0]`` and ``sup[-1]`` are ignored. All four
    arrays share their shape; the first axis runs along the system, any
    further axes enumerate independent systems.

    Attributes
    ----------
    sub : :class:`numpy.ndarray`
        Sub-diagonal

    diag : :class:`numpy.ndarray`
        Main diagonal

    sup : :class:`numpy.ndarray`
        Super-diagonal

    rhs : :class:`numpy.ndarray`
        Right-hand side

    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        shapes = {
            np.shape(item)
            for item in (self.sub, self.diag, self.sup, self.rhs)
        }
        if len(shapes) != 1:
            raise ValueError("tridiagonal arrays must share their shape")
        if np.shape(self.diag)[0] < 1:
            raise ValueError("tridiagonal system must not be empty")

    def is_diagonally_dominant(self, margin=0.0):
        """
        Check (strict) diagonal dominance of every row.

        Parameters
        ----------
        margin : :class:`float`
            Amount by which the diagonal has to exceed the off-diagonals

        Returns
        -------
        dominant : :class:`bool`
            Whether ``|diag| >= |sub| + |sup| + margin`` holds everywhere

        """
        sub = np.abs(np.asarray(self.sub, dtype=float)).copy()
        sup = np.abs(np.asarray(self.sup, dtype=float)).copy()
        sub[0] = 0.0
        sup[-1] = 0.0
        return bool(np.all(np.abs(self.diag) >= sub + sup + margin))

    def matvec(self, x):
        """
        Multiply the matrix by ``x``.

        Parameters
        ----------
        x : :class:`numpy.ndarray`
            Vector(s) with the shape of :attr:`rhs`

        Returns
        -------
        product : :class:`numpy.ndarray`
            Matrix-vector product(s)

        """
        x = np.asarray(x, dtype=float)
        product = np.asarray(self.diag, dtype=float) * x
        product[1:] += np.asarray(self.sub, dtype=float)[1:] * x[:-1]
        product[:-1] += np.asarray(self.sup, dtype=float)[:-1] * x[1:]
        return product

    def residual(self, x):
        """Maximum norm of ``A x - rhs``."""
        return float(np.max(np.abs(self.matvec(x) - self.rhs)))

    def to_dense(self):
        """
        Dense matrix of an unbatched system.

        Returns
        -------
        matrix : :class:`numpy.ndarray`
            Square matrix

        Raises
        ------
        ValueError
            Raised for batched systems

        """
        if np.ndim(self.diag) != 1:
            raise ValueError("only unbatched systems have a dense form")
        return (
            np.diag(self.diag)
            + np.diag(self.sub[1:], -1)
            + np.diag(self.sup[:-1], 1)
        )


def thomas_solve(system):
    """
    Solve a tridiagonal system by the Thomas algorithm.

    Batched systems are solved simultaneously, the elimination running along
    the first axis.

    Parameters
    ----------
    system : :class:`TridiagonalSystem`
        System to solve

    Returns
    -------
    solution : :class:`numpy.ndarray`
        Solution with the shape of the right-hand side

    Raises
    ------
    NumericalError
        Raised if a pivot vanishes

    """
    sub = np.asarray(system.sub, dtype=float)
    diag = np.asarray(system.diag, dtype=float)
    sup = np.asarray(system.sup, dtype=float)
    rhs = np.asarray(system.rhs, dtype=float)
    size = diag.shape[0]
    factor = np.empty_like(diag)
    forward = np.empty_like(rhs)
    pivot = diag[0]
    _check_pivot(pivot, 0)
    factor[0] = sup[0] / pivot
    forward[0] = rhs[0] / pivot
    for row in range(1, size):
        pivot = diag[row] - sub[row] * factor[row - 1]
        _check_pivot(pivot, row)
        factor[row] = sup[row] / pivot
        forward[row] = (rhs[row] - sub[row] * forward[row - 1]) / pivot
    solution = np.empty_like(forward)
    solution[-1] = forward[-1]
    for row in range(size - 2, -1, -1):
        solution[row] = forward[row] - factor[row] * solution[row + 1]
    return solution


def _check_pivot(pivot, row):
    if np.any(pivot == 0) or not np.all(np.isfinite(pivot)):
        raise NumericalError(f"zero pivot in row {row} of tridiagonal solve")


def upwind_coefficients(drift, diffusion, dw):
    """
    Upwind stencil of the operator ``drift * J_w + diffusion * J_ww``.

    Parameters
    ----------
    drift : :class:`numpy.ndarray`
        Drift per node

    diffusion : :class:`numpy.ndarray`
        Diffusion coefficient per node, non-negative, for a diffusion term
        of :math:`\\frac{1}{2}(\\hat\\sigma w)^2` pass exactly that value

    dw : :class:`float`
        Wealth spacing

    Returns
    -------
    lower, centre, upper : :class:`tuple`
        Weights of the nodes ``k-1``, ``k`` and ``k+1``

        ``lower`` and ``upper`` are non-negative, ``centre`` is their
        negative sum.

    """
    drift = np.asarray(drift, dtype=float)
    diffusion = np.asarray(diffusion, dtype=float)
    lower = diffusion / dw**2 - np.minimum(drift, 0.0) / dw
    upper = diffusion / dw**2 + np.maximum(drift, 0.0) / dw
    centre = -(lower + upper)
    return lower, centre, upper


def cfl_substeps(dt, dw, sigma, w_max, drift_max, discount_max=0.0):
    """
    Number of explicit sub-steps needed to advance by ``dt`` stably.

    The sub-step obeys

    .. math::

        \\Delta t_{\\mathrm{sub}} \\le 0.9\\,\\frac{\\Delta w^2}
            {\\sigma^2 w_{\\max}^2 + \\Delta w\\,|b|_{\\max}
            + \\Delta w^2 (\\rho + \\lambda)_{\\max}}

    Parameters
    ----------
    dt : :class:`float`
        Time step to cover

    dw : :class:`float`
        Wealth spacing

    sigma : :class:`float`
        Largest portfolio volatility

    w_max : :class:`float`
        Largest wealth

    drift_max : :class:`float`
        Largest absolute drift on the grid

    discount_max : :class:`float`
        Largest effective discount rate

    Returns
    -------
    substeps : :class:`int`
        Number of equal sub-steps

    """
    denominator = (
        sigma**2 * w_max**2 + dw * abs(drift_max) + dw**2 * abs(discount_max)
    )
    if denominator == 0:
        return 1
    limit = 0.9 * dw**2 / denominator
    return max(1, int(math.ceil(dt / limit)))


def check_cfl(centre, discount, dt):
    """
    Verify that an explicit step keeps all weights non-negative.

    Parameters
    ----------
    centre : :class:`numpy.ndarray`
        Centre weights from :func:`upwind_coefficients`

    discount : :class:`float` or :class:`numpy.ndarray`
        Effective discount rate

    dt : :class:`float`
        Explicit time step

    Raises
    ------
    NumericalError
        Raised if the step violates the stability condition

    """
    if np.any(1.0 + dt * (centre - discount) < 0):
        raise NumericalError("explicit step violates the CFL condition")


def wealth_derivatives(values, dw):
    """
    First and second wealth derivatives of a surface.

    Central differences in the interior, second-order one-sided ones for the
    first derivative at the edges; the second derivative at an edge repeats
    its neighbour.

    Parameters
    ----------
    values : :class:`numpy.ndarray`
        Values with wealth along the first axis

    dw : :class:`float`
        Wealth spacing

    Returns
    -------
    first, second : :class:`tuple`
        Arrays with the shape of ``values``

    """
    first = np.gradient(values, dw, axis=0, edge_order=2)
    second = np.empty_like(values)
    second[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / dw**2
    second[0] = second[1]
    second[-1] = second[-2]
    return first, second


def optimal_alpha(market, jw, jww, w):
    """
    Optimal risky share, clamped to [0, 1].

    Solves the first-order condition
    :math:`\\alpha^* = -\\frac{J_w}{J_{ww}} \\frac{\\mu - r}{w \\sigma^2}`.
    Where the surface is locally linear or convex in wealth, the share is 1.
    The row at zero wealth takes the value of its neighbour.

    Parameters
    ----------
    market : :class:`diaopt.model.MarketModel`
        Market assumptions

    jw, jww : :class:`numpy.ndarray`
        Wealth derivatives, wealth along the first axis

    w : :class:`numpy.ndarray`
        Wealth nodes

    Returns
    -------
    alpha : :class:`numpy.ndarray`
        Risky shares

    """
    wealth = np.asarray(w, dtype=float).reshape((-1,) + (1,) * (jw.ndim - 1))
    alpha = np.ones_like(jw)
    concave = jww < -1e-14 * np.abs(jw)
    concave[0] = False
    with np.errstate(divide="ignore", invalid="ignore"):
        unconstrained = (
            -jw / jww * (market.mu - market.r) / (wealth * market.sigma**2)
        )
    alpha[concave] = unconstrained[concave]
    alpha = np.clip(alpha, 0.0, 1.0)
    alpha[0] = alpha[1]
    return alpha


@dataclass(frozen=True, eq=False)
class AsymptoticCoefficients:
    """
    Coefficients of the large-wealth expansion of the value function.

    Attributes
    ----------
    t : :class:`numpy.ndarray`
        Years since retirement, ascending, ending at the terminal time

    h : :class:`numpy.ndarray`
        Coefficient of the leading term, one value per time

    k : :class:`numpy.ndarray`
        Coefficient of the first-order correction, one value per time

    w_m : :class:`float`
        Scaling wealth, usually the largest wealth of the grid

    alpha : :class:`float`
        Risky share assumed at large wealth

    k_income : :class:`numpy.ndarray` or None
        Coefficient of the DIA income in the correction, zero at the
        terminal time; None counts as zero

    """

    t: np.ndarray
    h: np.ndarray
    k: np.ndarray
    w_m: float
    alpha: float = 1.0
    k_income: np.ndarray = None

    def delta(self, income, pension):
        """Expansion parameter :math:`(I + \\pi)/w_m`."""
        return (np.asarray(income) + pension) / self.w_m

    def shift(self, index, income, pension):
        """
        Wealth-equivalent of future income at one of the coefficient times.

        Parameters
        ----------
        index : :class:`int`
            Index into :attr:`t`

        income : :class:`float` or :class:`numpy.ndarray`
            DIA income

        pension : :class:`float`
            Pension rate

        Returns
        -------
        shift : :class:`float` or :class:`numpy.ndarray`
            :math:`S = (\\pi k + I k_I)/h`

        """
        k_income = 0.0 if self.k_income is None else self.k_income[index]
        income = np.asarray(income, dtype=float)
        return (pension * self.k[index] + income * k_income) / self.h[index]

    def shifted_value(self, index, wealth, income, pension, preferences):
        """
        Asymptotic value function summed into a shifted utility.

        Parameters
        ----------
        index : :class:`int`
            Index into :attr:`t`

        wealth : :class:`float` or :class:`numpy.ndarray`
            Liquid wealth

        income : :class:`float` or :class:`numpy.ndarray`
            DIA income

        pension : :class:`float`
            Pension rate

        preferences : :class:`diaopt.model.Preferences`
            Preferences

        Returns
        -------
        value : :class:`float` or :class:`numpy.ndarray`
            :math:`h\\,U(w + S)`

        """
        return self.h[index] * preferences.utility(
            np.asarray(wealth, dtype=float)
            + self.shift(index, income, pension)
        )

    def value(self, index, wealth, income, pension, preferences):
        """
        Asymptotic value function at one of the coefficient times.

        Parameters
        ----------
        index : :class:`int`
            Index into :attr:`t`

        wealth : :class:`float` or :class:`numpy.ndarray`
            Liquid wealth

        income : :class:`float` or :class:`numpy.ndarray`
            DIA income

        pension : :class:`float`
            Pension rate

        preferences : :class:`diaopt.model.Preferences`
            Preferences

        Returns
        -------
        value : :class:`float` or :class:`numpy.ndarray`
            :math:`w_m^{1-\\gamma}[h U(W) + \\delta k U'(W)]`

        """
        scaled = np.asarray(wealth, dtype=float) / self.w_m
        return self.w_m ** (1.0 - preferences.gamma) * (
            self.h[index] * preferences.utility(scaled)
            + self.delta(income, pension) * self.k[index]
            * preferences.marginal_utility(scaled)
        )


def shape_ratio(w_outer, w_inner, shift, gamma):
    """
    Ratio of the asymptotic value function at two wealth levels.

    For :math:`J \\propto U(w + S)` with CRRA utility the ratio does not
    depend on the factor in front.

    Parameters
    ----------
    w_outer, w_inner : :class:`float`
        Wealth of the outermost and the next node

    shift : :class:`float` or :class:`numpy.ndarray`
        Wealth-equivalent :math:`S` of future income, per income node

    gamma : :class:`float`
        Relative risk aversion

    Returns
    -------
    ratio : :class:`float` or :class:`numpy.ndarray`
        :math:`J(w_{outer}) / J(w_{inner})`, below one for
        :math:`\\gamma > 1`

    """
    shift = np.asarray(shift, dtype=float)
    return ((w_outer + shift) / (w_inner + shift)) ** (1.0 - gamma)


def hk_derivatives(s, h, k, preferences, market, mortality, x, alpha=1.0):
    """
    Right-hand sides of the two coefficient equations.

    .. math::

        h' = [(\\gamma-1)\\hat\\mu + \\rho + \\lambda
              + \\tfrac{1}{2}\\gamma(1-\\gamma)\\hat\\sigma^2] h
              - \\gamma h^{(\\gamma-1)/\\gamma} - \\lambda

        k' = [\\gamma\\hat\\mu - \\gamma h^{-1/\\gamma} + \\rho + \\lambda
              - \\tfrac{1}{2}\\hat\\sigma^2\\gamma(1+\\gamma)] k
              - \\lambda - h

    with the hazard :math:`\\lambda` evaluated at age ``x + s``.

    Parameters
    ----------
    s : :class:`float`
        Years since age ``x``

    h, k : :class:`float`
        Current coefficients, both positive

    preferences : :class:`diaopt.model.Preferences`
        Preferences

    market : :class:`diaopt.model.MarketModel`
        Market assumptions

    mortality : :class:`diaopt.model.MortalityModel`
        Mortality law

    x : :class:`float`
        Age at ``s = 0``

    alpha : :class:`float`
        Risky share

    Returns
    -------
    dh, dk : :class:`tuple`
        Time derivatives

    """
    if not (h > 0 and k > 0):
        raise NumericalError("asymptotic coefficients must stay positive")
    gamma = preferences.gamma
    mu = market.portfolio_drift(alpha)
    sigma = market.portfolio_volatility(alpha)
    hazard = mortality.hazard(x + s)
    rate = (
        (gamma - 1.0) * mu
        + market.rho
        + hazard
        + 0.5 * gamma * (1.0 - gamma) * sigma**2
    )
    dh = rate * h - gamma * h ** ((gamma - 1.0) / gamma) - hazard
    dk = _correction_rate(h, gamma, mu, sigma, market.rho, hazard) * k
    return dh, dk - hazard - h


def _correction_rate(h, gamma, mu, sigma, rho, hazard):
    return (
        gamma * mu
        - gamma * h ** (-1.0 / gamma)
        + rho
        + hazard
        - 0.5 * sigma**2 * gamma * (1.0 + gamma)
    )


def k_income_derivative(
    s, h, k_income, preferences, market, mortality, x, alpha=1.0
):
    """
    Right-hand side of the income coefficient equation.

    The income coefficient follows the equation of :math:`k` without the
    bequest forcing, :math:`k_I' = [\\ldots] k_I - h`, since DIA income
    stops at death while the pension is refunded to the estate.

    Parameters
    ----------
    s : :class:`float`
        Years since age ``x``

    h : :class:`float`
        Current coefficient :math:`h`, positive

    k_income : :class:`float`
        Current income coefficient

    preferences : :class:`diaopt.model.Preferences`
        Preferences

    market : :class:`diaopt.model.MarketModel`
        Market assumptions

    mortality : :class:`diaopt.model.MortalityModel`
        Mortality law

    x : :class:`float`
        Age at ``s = 0``

    alpha : :class:`float`
        Risky share

    Returns
    -------
    derivative : :class:`float`
        Time derivative of :math:`k_I`

    """
    if not h > 0:
        raise NumericalError("asymptotic coefficients must stay positive")
    rate = _correction_rate(
        h,
        preferences.gamma,
        market.portfolio_drift(alpha),
        market.portfolio_volatility(alpha),
        market.rho,
        mortality.hazard(x + s),
    )
    return rate * k_income - h


def integrate_hk(
    preferences, market, mortality, x, horizon, dt, w_m=30.0, alpha=1.0
):
    """
    Integrate the asymptotic coefficients backwards in time.

    Classical fourth-order Runge-Kutta steps run from the terminal time,
    where :math:`h = k = 1` and :math:`k_I = 0`, down to the retirement age.

    Parameters
    ----------
    preferences : :class:`diaopt.model.Preferences`
        Preferences

    market : :class:`diaopt.model.MarketModel`
        Market assumptions

    mortality : :class:`diaopt.model.MortalityModel`
        Mortality law

    x : :class:`float`
        Age at retirement

    horizon : :class:`float`
        Years from retirement to the terminal age, positive

    dt : :class:`float`
        Nominal step, adjusted to divide ``horizon`` evenly

    w_m : :class:`float`
        Scaling wealth stored with the coefficients

    alpha : :class:`float`
        Risky share at large wealth

    Returns
    -------
    coefficients : :class:`AsymptoticCoefficients`
        Coefficients on an ascending time axis

    Raises
    ------
    ValueError
        Raised for a non-positive horizon or step

    NumericalError
        Raised if a coefficient becomes non-positive

    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not dt > 0:
        raise ValueError("time step must be positive")
    steps = max(1, int(round(horizon / dt)))
    times = np.linspace(0.0, horizon, steps + 1)
    step = horizon / steps
    states = np.empty((steps + 1, 3))
    states[-1] = [1.0, 1.0, 0.0]

    def rhs(s, y):
        dh, dk = hk_derivatives(
            s, y[0], y[1], preferences, market, mortality, x, alpha
        )
        dk_income = k_income_derivative(
            s, y[0], y[2], preferences, market, mortality, x, alpha
        )
        return np.array([dh, dk, dk_income])

    state = states[-1].copy()
    for index in range(steps, 0, -1):
        s = times[index]
        k1 = rhs(s, state)
        k2 = rhs(s - step / 2, state - step / 2 * k1)
        k3 = rhs(s - step / 2, state - step / 2 * k2)
        k4 = rhs(s - step, state - step * k3)
        state = state - step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (
            not np.all(np.isfinite(state))
            or np.any(state[:2] <= 0)
            or state[2] < 0
        ):
            raise NumericalError(
                f"asymptotic coefficients non-positive at age {x + s - step}"
            )
        states[index - 1] = state
    logger.debug(
        "Asymptotic coefficients at age %s: h=%g, k=%g, k_income=%g",
        x,
        *states[0],
    )
    return AsymptoticCoefficients(
        t=times,
        h=states[:, 0],
        k=states[:, 1],
        w_m=w_m,
        alpha=alpha,
        k_income=states[:, 2],
    )
