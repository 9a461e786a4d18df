"""
Actuarial and preference building blocks.

All quantities the solvers need that have a closed form live here: the
mortality law, survival probabilities, annuity factors, the price and refund
schedule of a deferred income annuity (DIA), and the utility function of the
investor.


Types
=====

* :class:`MortalityModel`

  Gompertz-Makeham law of mortality with an accidental hazard ``lambda0``,
  a modal age ``m`` and a dispersion ``b``.

* :class:`MarketModel`

  Capital market assumptions (risky drift and volatility, risk-free rate),
  the subjective discount rate and the two exogenous cash flows: savings
  before and pension income after retirement.

* :class:`DIAContract`

  A deferred income annuity bought at age ``x`` that starts paying
  ``tau`` years later. The refund weight ``Q`` blends a no-refund contract
  (``Q=0``, full mortality credits) with a fully refundable one (``Q=1``).

* :class:`Preferences`

  Constant relative risk aversion (CRRA) utility.


Units
=====

Wealth and income are measured in multiples of the pension rate, so with
the default ``pi = 1`` a wealth of 20 means twenty years of pension. Ages
and times are continuous and measured in years; nothing is rounded to
integer ages.


Module documentation
====================

"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.optimize

logger = logging.getLogger(__name__)

#: Survival level beyond which annuity integrands are truncated
SURVIVAL_CUTOFF = 1e-12


@dataclass(frozen=True)
class MortalityModel:
    """
    Gompertz-Makeham law of mortality.

    The instantaneous force of mortality at age :math:`x` is

    .. math::

        \\lambda(x) = \\lambda_0 + \\frac{1}{b} e^{(x-m)/b}

    Attributes
    ----------
    lambda0 : :class:`float`
        Accidental hazard rate (per year), non-negative

    m : :class:`float`
        Modal age of death (years)

        Strictly speaking, this is the mode only for ``lambda0 = 0``.

    b : :class:`float`
        Dispersion coefficient (years), positive


    Examples
    --------
    The baseline model and the probability that a 55-year-old reaches 65:

    .. code-block::

        mortality = MortalityModel()
        mortality.survival(55, 10)

    """

    lambda0: float = 0.0
    m: float = 89.335
    b: float = 9.5

    def __post_init__(self):
        for name in ("lambda0", "m", "b"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"mortality.{name} must be finite")
        if self.b <= 0:
            raise ValueError("mortality.b must be positive")
        if self.lambda0 < 0:
            raise ValueError("mortality.lambda0 must not be negative")

    def hazard(self, age):
        """
        Instantaneous force of mortality.

        Parameters
        ----------
        age : :class:`float` or :class:`numpy.ndarray`
            Age(s) in years

        Returns
        -------
        hazard : :class:`float` or :class:`numpy.ndarray`
            Hazard rate(s) per year

        """
        return self.lambda0 + np.exp((age - self.m) / self.b) / self.b

    def survival(self, x, t):
        """
        Probability that somebody aged ``x`` survives ``t`` more years.

        Uses the closed form

        .. math::

            {}_tp_x = \\exp\\left(-\\lambda_0 t
                + (1 - e^{t/b}) e^{(x-m)/b}\\right)

        which equals :math:`\\exp(-\\int_0^t \\lambda(x+s)\\,ds)`. The
        Gompertz term is evaluated in log space, so that a modal age far
        beyond ``x + t`` does not turn :math:`e^{t/b} e^{(x-m)/b}` into
        ``inf * 0``.

        Parameters
        ----------
        x : :class:`float`
            Current age

        t : :class:`float` or :class:`numpy.ndarray`
            Survival period(s) in years, non-negative

        Returns
        -------
        probability : :class:`float` or :class:`numpy.ndarray`
            Survival probability in (0, 1]

        Raises
        ------
        ValueError
            Raised if any ``t`` is negative

        """
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("survival period must not be negative")
        scaled = t / self.b
        # log(exp(t/b) - 1) = t/b + log(1 - exp(-t/b)), -inf at t = 0
        with np.errstate(divide="ignore", over="ignore"):
            log_growth = scaled + np.log(-np.expm1(-scaled))
            gompertz = np.exp(log_growth + (x - self.m) / self.b)
        result = np.exp(-self.lambda0 * t - gompertz)
        return result[()] if result.ndim == 0 else result

    def survival_horizon(self, x, threshold=SURVIVAL_CUTOFF):
        """
        Period after which survival has dropped below ``threshold``.

        Both the pure Gompertz part and the accidental part bound survival
        from above, so the smaller of their two closed-form horizons is a
        point where survival is at most ``threshold``.

        Parameters
        ----------
        x : :class:`float`
            Current age

        threshold : :class:`float`
            Survival probability to fall below

        Returns
        -------
        horizon : :class:`float`
            Years from age ``x``

        """
        log_threshold = math.log(threshold)
        horizon = float(self._gompertz_lifetime(x, -log_threshold))
        if self.lambda0 > 0:
            horizon = min(horizon, -log_threshold / self.lambda0)
        return horizon

    def expected_lifetime(self, x):
        """
        Expected remaining lifetime of somebody aged ``x``.

        Parameters
        ----------
        x : :class:`float`
            Current age

        Returns
        -------
        lifetime : :class:`float`
            Expected remaining years of life

        """
        return _integrate_decaying(
            lambda s: self.survival(x, s), self.survival_horizon(x)
        )

    def sample_lifetime(self, x, uniforms):
        """
        Remaining lifetimes by inverse transform of the survival function.

        Solves :math:`{}_Tp_x = u` for each uniform variate ``u``. For
        ``lambda0 = 0`` the solution is closed form; otherwise it serves
        as the starting point of Newton iterations, which converge
        monotonically because the log-survival is concave in ``T``.

        Parameters
        ----------
        x : :class:`float`
            Current age

        uniforms : :class:`numpy.ndarray`
            Variates in (0, 1]

        Returns
        -------
        lifetimes : :class:`numpy.ndarray`
            Remaining lifetimes in years

        """
        uniforms = np.asarray(uniforms, dtype=float)
        if np.any(~(uniforms > 0)) or np.any(uniforms > 1):
            raise ValueError("uniform variates must lie in (0, 1]")
        minus_log_u = -np.log(uniforms)
        lifetimes = self._gompertz_lifetime(x, minus_log_u)
        if self.lambda0 == 0:
            return lifetimes
        # both factors of the survival function bound the lifetime from above
        lifetimes = np.minimum(lifetimes, minus_log_u / self.lambda0)
        offset = math.exp(min((x - self.m) / self.b, 700.0))

        def residual(t):
            return (
                self.lambda0 * t
                + (np.exp(t / self.b) - 1.0) * offset
                - minus_log_u
            )

        def slope(t):
            return self.lambda0 + np.exp(t / self.b) * offset / self.b

        return scipy.optimize.newton(
            residual, lifetimes, fprime=slope, tol=1e-12, maxiter=100
        )

    def _gompertz_lifetime(self, x, minus_log_survival):
        # solves (exp(t/b) - 1) exp((x-m)/b) = -log(p) without overflow
        z = (self.m - x) / self.b
        with np.errstate(divide="ignore"):
            log_target = np.log(minus_log_survival)
        return self.b * (z + np.logaddexp(-z, log_target))


@dataclass(frozen=True)
class MarketModel:
    """
    Capital market assumptions and exogenous cash flows.

    Attributes
    ----------
    mu : :class:`float`
        Drift of the risky asset (per year)

    sigma : :class:`float`
        Volatility of the risky asset (per square-root year), positive

    r : :class:`float`
        Risk-free rate (per year)

    rho : :class:`float`
        Subjective discount rate (per year)

    nu : :class:`float`
        Savings rate before retirement (per year), non-negative

    pi : :class:`float`
        Exogenous pension rate after retirement (per year), positive

    """

    mu: float = 0.08
    sigma: float = 0.16
    r: float = 0.0325
    rho: float = 0.0325
    nu: float = 1.0
    pi: float = 1.0

    def __post_init__(self):
        for name in ("mu", "sigma", "r", "rho", "nu", "pi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"market.{name} must be finite")
        if self.sigma <= 0:
            raise ValueError("market.sigma must be positive")
        if self.nu < 0:
            raise ValueError("market.nu must not be negative")
        if self.pi <= 0:
            raise ValueError("market.pi must be positive")

    def portfolio_drift(self, alpha):
        """
        Drift of a portfolio holding the fraction ``alpha`` in risky assets.

        Parameters
        ----------
        alpha : :class:`float` or :class:`numpy.ndarray`
            Fraction(s) invested in the risky asset

        Returns
        -------
        drift : :class:`float` or :class:`numpy.ndarray`
            :math:`\\alpha\\mu + (1-\\alpha) r`

        """
        return alpha * self.mu + (1.0 - alpha) * self.r

    def portfolio_volatility(self, alpha):
        """
        Volatility of a portfolio holding ``alpha`` in risky assets.

        Parameters
        ----------
        alpha : :class:`float` or :class:`numpy.ndarray`
            Fraction(s) invested in the risky asset

        Returns
        -------
        volatility : :class:`float` or :class:`numpy.ndarray`
            :math:`\\alpha\\sigma`

        """
        return alpha * self.sigma

    def merton_fraction(self, gamma):
        """
        Unconstrained Merton fraction :math:`(\\mu-r)/(\\gamma\\sigma^2)`.

        Parameters
        ----------
        gamma : :class:`float`
            Relative risk aversion

        Returns
        -------
        fraction : :class:`float`
            Optimal risky share without income and without constraints

        """
        return (self.mu - self.r) / (gamma * self.sigma**2)


@dataclass(frozen=True)
class Preferences:
    """
    CRRA preferences :math:`U(c) = c^{1-\\gamma}/(1-\\gamma)`.

    Attributes
    ----------
    gamma : :class:`float`
        Relative risk aversion, positive and different from one

        Logarithmic utility (``gamma = 1``) is outside the domain of this
        package.

    """

    gamma: float = 3.0

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma <= 0:
            raise ValueError("preferences.gamma must be positive")
        if self.gamma == 1:
            raise ValueError(
                "preferences.gamma = 1 (logarithmic utility) is not supported"
            )

    def utility(self, c):
        """
        Utility of consumption (or of an estate).

        Parameters
        ----------
        c : :class:`float` or :class:`numpy.ndarray`
            Positive amount(s)

        Returns
        -------
        utility : :class:`float` or :class:`numpy.ndarray`
            Utility value(s)

        Raises
        ------
        ValueError
            Raised if any amount is not positive

        """
        c = np.asarray(c, dtype=float)
        if np.any(~(c > 0)):
            raise ValueError("utility is only defined for positive amounts")
        result = c ** (1.0 - self.gamma) / (1.0 - self.gamma)
        return result[()] if result.ndim == 0 else result

    def marginal_utility(self, c):
        """
        First derivative :math:`U'(c) = c^{-\\gamma}`.

        Parameters
        ----------
        c : :class:`float` or :class:`numpy.ndarray`
            Positive amount(s)

        Returns
        -------
        marginal_utility : :class:`float` or :class:`numpy.ndarray`
            Marginal utility value(s)

        """
        return np.asarray(c, dtype=float) ** (-self.gamma)

    def inverse_marginal_utility(self, jw):
        """
        Consumption whose marginal utility equals the marginal value ``jw``.

        This is the first-order condition :math:`U'(c^*) = J_w`, solved as
        :math:`c^* = J_w^{-1/\\gamma}`.

        Parameters
        ----------
        jw : :class:`float` or :class:`numpy.ndarray`
            Marginal value(s) of wealth, positive

        Returns
        -------
        consumption : :class:`float` or :class:`numpy.ndarray`
            Optimal consumption rate(s)

        Raises
        ------
        ValueError
            Raised if any marginal value is not positive, which means the
            value function is not increasing in wealth

        """
        jw = np.asarray(jw, dtype=float)
        if np.any(~(jw > 0)):
            raise ValueError("marginal value of wealth must be positive")
        result = jw ** (-1.0 / self.gamma)
        return result[()] if result.ndim == 0 else result


@dataclass(frozen=True)
class DIAContract:
    """
    Deferred income annuity with a refund blend.

    One unit of the contract pays $1 per year for life from age
    ``x + tau`` on. Its price at time ``t`` after the start age is

    .. math::

        {}_{(\\tau-t)}\\tilde{a}_{(x+t)} = \\bar{a}_{x+\\tau}
            e^{-r(\\tau-t)} \\left[{}_{(\\tau-t)}p_{x+t} (1-Q) + Q\\right]

    and upon death before retirement a unit is refunded at

    .. math::

        K_t = \\bar{a}_{x+\\tau} e^{-r(\\tau-t)} Q.

    The refund of a holding of ``I`` units is :math:`K_t I`.

    Attributes
    ----------
    Q : :class:`float`
        Refund weight in [0, 1]

    tau : :class:`float`
        Years from the start age to retirement, non-negative

    x : :class:`float`
        Start age (years)


    Examples
    --------
    Price of a fully refundable contract bought at 55 for income from 65:

    .. code-block::

        contract = DIAContract(Q=1.0, tau=10.0, x=55.0)
        contract.price(MortalityModel(), MarketModel(), 0.0)

    """

    Q: float = 1.0
    tau: float = 10.0
    x: float = 55.0

    def __post_init__(self):
        if not 0 <= self.Q <= 1:
            raise ValueError("contract.Q must lie in [0, 1]")
        if not math.isfinite(self.tau) or self.tau < 0:
            raise ValueError("contract deferral must not be negative")
        if not math.isfinite(self.x):
            raise ValueError("contract start age must be finite")

    @property
    def retirement_age(self):
        """Age at which income starts."""
        return self.x + self.tau

    def price(self, mortality, market, t):
        """
        Price per $1/year of income at ``t`` years after the start age.

        Parameters
        ----------
        mortality : :class:`MortalityModel`
            Mortality law

        market : :class:`MarketModel`
            Market assumptions (only the risk-free rate is used)

        t : :class:`float` or :class:`numpy.ndarray`
            Time(s) since the start age, within [0, tau]

        Returns
        -------
        price : :class:`float` or :class:`numpy.ndarray`
            Contract price(s)

        Raises
        ------
        ValueError
            Raised if ``t`` lies outside [0, tau]

        """
        t = self._check_time(t)
        deferral = self.tau - t
        bracket = (
            mortality.survival(self.x + t, deferral) * (1.0 - self.Q) + self.Q
        )
        return self._discounted_income(mortality, market, t) * bracket

    def refund(self, mortality, market, t):
        """
        Refund per unit of income paid upon death at time ``t``.

        Parameters
        ----------
        mortality : :class:`MortalityModel`
            Mortality law

        market : :class:`MarketModel`
            Market assumptions (only the risk-free rate is used)

        t : :class:`float` or :class:`numpy.ndarray`
            Time(s) since the start age, within [0, tau]

        Returns
        -------
        refund : :class:`float` or :class:`numpy.ndarray`
            :math:`K_t` per unit of income

        Raises
        ------
        ValueError
            Raised if ``t`` lies outside [0, tau]

        """
        t = self._check_time(t)
        return self._discounted_income(mortality, market, t) * self.Q

    def _discounted_income(self, mortality, market, t):
        annuity = immediate_annuity_factor(
            mortality, market, self.retirement_age
        )
        return annuity * np.exp(-market.r * (self.tau - t))

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        # tolerate round-off from accumulated time steps
        slack = 1e-9 * max(1.0, self.tau)
        if np.any(t < -slack) or np.any(t > self.tau + slack):
            raise ValueError(
                f"time since start age must lie in [0, {self.tau}]"
            )
        t = np.clip(t, 0.0, self.tau)
        return t[()] if t.ndim == 0 else t


def immediate_annuity_factor(mortality, market, x, rtol=1e-12):
    """
    Immediate pension annuity factor of somebody aged ``x``.

    Expected present value of $1 per year paid continuously for life,

    .. math::

        \\bar{a}_x = \\int_0^\\infty e^{-rs}\\,{}_sp_x\\,ds,

    computed by composite Simpson quadrature on the interval where survival
    exceeds :data:`SURVIVAL_CUTOFF`, refined by doubling the number of
    panels until successive estimates agree.

    Parameters
    ----------
    mortality : :class:`MortalityModel`
        Mortality law

    market : :class:`MarketModel`
        Market assumptions (only the risk-free rate is used)

    x : :class:`float`
        Age

    rtol : :class:`float`
        Relative tolerance between two successive refinements

    Returns
    -------
    factor : :class:`float`
        Price of $1/year of lifetime income

    """
    return _cached_annuity_factor(mortality, market.r, float(x), rtol)


_ANNUITY_CACHE = {}


def _cached_annuity_factor(mortality, rate, x, rtol):
    key = (mortality, rate, x, rtol)
    if key not in _ANNUITY_CACHE:
        _ANNUITY_CACHE[key] = _integrate_decaying(
            lambda s: np.exp(-rate * s) * mortality.survival(x, s),
            mortality.survival_horizon(x),
            rtol=rtol,
        )
    return _ANNUITY_CACHE[key]


def _integrate_decaying(integrand, upper, rtol=1e-12, max_panels=2**20):
    panels = 64
    nodes = np.linspace(0.0, upper, panels + 1)
    estimate = scipy.integrate.simpson(integrand(nodes), x=nodes)
    while panels < max_panels:
        panels *= 2
        nodes = np.linspace(0.0, upper, panels + 1)
        refined = scipy.integrate.simpson(integrand(nodes), x=nodes)
        if abs(refined - estimate) <= rtol * abs(refined):
            return refined
        estimate = refined
    logger.warning(
        "Quadrature stopped at %d panels before converging", panels
    )
    return estimate
