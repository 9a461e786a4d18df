"""
Run configuration.

A configuration is plain text with one ``key = value`` pair per line. Keys
carry a dotted section prefix, ``#`` starts a comment, blank lines are
ignored:

.. code-block:: text

    # steeper market
    market.mu = 0.10
    contract.q = 0.7
    solver.mode = dynamic-pre

Every key not given keeps its default, the baseline parameter set. Unknown
keys, values that cannot be parsed and parameter combinations violating any
constraint of the models are rejected with a :class:`ConfigurationError`
naming the offending key.


Recognised keys
===============

=========================  ===========  ======================================
Key                        Default      Meaning
=========================  ===========  ======================================
market.mu                  0.08         risky drift
market.sigma               0.16         risky volatility
market.r                   0.0325       risk-free rate
market.rho                 market.r     subjective discount rate
market.nu                  1            savings rate before retirement
market.pi                  1            pension rate after retirement
mortality.lambda0          0            accidental hazard
mortality.m                89.335       modal age
mortality.b                9.5          dispersion
preferences.gamma          3            relative risk aversion
contract.q                 1            refund weight
contract.start_age         55           first age at which DIAs can be bought
contract.retirement_age    65           age at which DIA income starts
grid.w_max                 30           largest wealth
grid.w_nodes               301          wealth nodes
grid.i_max                 6            largest DIA income
grid.i_nodes               61           income nodes
grid.steps_per_year        24           time steps per year
grid.terminal_age          120          age at which everybody is dead
grid.snapshot_interval     0.25         years between stored slices
solver.mode                fixed        fixed, dynamic-pre or dynamic-all
simulation.paths           100000       Monte Carlo paths
simulation.seed            0            root seed
simulation.workers         1            threads simulating blocks
simulation.block_size      4096         paths per block
output.directory           .            directory for result files
=========================  ===========  ======================================


Module documentation
====================

"""

import logging

from diaopt.model import DIAContract, MarketModel, MortalityModel, Preferences
from diaopt.numerics import build_grid

logger = logging.getLogger(__name__)

#: Allocation modes: optimised risky share before and after retirement
MODES = {
    "fixed": (False, False),
    "dynamic-pre": (True, False),
    "dynamic-all": (True, True),
}

DEFAULTS = {
    "market.mu": 0.08,
    "market.sigma": 0.16,
    "market.r": 0.0325,
    "market.rho": None,
    "market.nu": 1.0,
    "market.pi": 1.0,
    "mortality.lambda0": 0.0,
    "mortality.m": 89.335,
    "mortality.b": 9.5,
    "preferences.gamma": 3.0,
    "contract.q": 1.0,
    "contract.start_age": 55.0,
    "contract.retirement_age": 65.0,
    "grid.w_max": 30.0,
    "grid.w_nodes": 301,
    "grid.i_max": 6.0,
    "grid.i_nodes": 61,
    "grid.steps_per_year": 24,
    "grid.terminal_age": 120.0,
    "grid.snapshot_interval": 0.25,
    "solver.mode": "fixed",
    "simulation.paths": 100000,
    "simulation.seed": 0,
    "simulation.workers": 1,
    "simulation.block_size": 4096,
    "output.directory": ".",
}

_INTEGERS = {
    "grid.w_nodes",
    "grid.i_nodes",
    "grid.steps_per_year",
    "simulation.paths",
    "simulation.seed",
    "simulation.workers",
    "simulation.block_size",
}
_STRINGS = {"solver.mode", "output.directory"}


class ConfigurationError(ValueError):
    """Raised for unknown keys, unparsable values and invalid parameters."""


class RunConfig:
    """
    Validated set of run parameters.

    Attributes
    ----------
    settings : :class:`dict`
        Values of all recognised keys

        ``market.rho`` is None as long as it follows ``market.r``.


    Examples
    --------
    Read a file and override a single value:

    .. code-block::

        config = RunConfig()
        config.from_file("baseline.cfg")
        config.apply(["contract.q=0.7"])
        config.contract

    """

    def __init__(self):
        self.settings = dict(DEFAULTS)

    def from_string(self, text):
        """
        Read settings from configuration text.

        Parameters
        ----------
        text : :class:`str`
            Lines of ``key = value`` pairs

        Raises
        ------
        ConfigurationError
            Raised for malformed lines, unknown keys or invalid values

        """
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"line {number}: expected 'key = value', got {line!r}"
                )
            key, value = line.split("=", 1)
            self._set(key.strip(), value.strip())
        self.validate()

    def from_file(self, path):
        """
        Read settings from a configuration file.

        Parameters
        ----------
        path : :class:`str`
            Name of the file

        Raises
        ------
        ConfigurationError
            Raised if the file cannot be read or contains invalid settings

        """
        try:
            with open(path, encoding="utf8") as file:
                text = file.read()
        except OSError as error:
            raise ConfigurationError(
                f"cannot read configuration {path!r}: {error}"
            ) from error
        logger.info("Reading configuration from %s", path)
        self.from_string(text)

    def apply(self, overrides):
        """
        Apply ``key=value`` overrides, as given on the command line.

        Parameters
        ----------
        overrides : :class:`list`
            Strings of the form ``key=value``

        Raises
        ------
        ConfigurationError
            Raised for malformed overrides, unknown keys or invalid values

        """
        for override in overrides or []:
            if "=" not in override:
                raise ConfigurationError(
                    f"override {override!r} is not of the form key=value"
                )
            key, value = override.split("=", 1)
            self._set(key.strip(), value.strip())
        self.validate()

    def to_string(self):
        """
        Configuration text reproducing the current settings.

        Returns
        -------
        text : :class:`str`
            One ``key = value`` line per key

        """
        settings = dict(self.settings)
        settings["market.rho"] = self.rho
        return "".join(
            f"{key} = {value}\n" for key, value in settings.items()
        )

    def validate(self):
        """
        Check all settings against the constraints of the models.

        Raises
        ------
        ConfigurationError
            Raised with the first violated constraint

        """
        for name in ("mortality", "market", "preferences", "contract"):
            try:
                getattr(self, name)
            except ValueError as error:
                raise ConfigurationError(str(error)) from error
        start = self.settings["contract.start_age"]
        retirement = self.settings["contract.retirement_age"]
        if not retirement > start:
            raise ConfigurationError(
                "contract.retirement_age must exceed contract.start_age"
            )
        if not self.settings["grid.terminal_age"] > retirement:
            raise ConfigurationError(
                "grid.terminal_age must exceed contract.retirement_age"
            )
        try:
            self.grid
        except ValueError as error:
            raise ConfigurationError(str(error)) from error
        if not self.settings["grid.snapshot_interval"] > 0:
            raise ConfigurationError(
                "grid.snapshot_interval must be positive"
            )
        if self.settings["solver.mode"] not in MODES:
            raise ConfigurationError(
                f"solver.mode must be one of {', '.join(MODES)}"
            )
        for key, minimum in (
            ("simulation.paths", 1),
            ("simulation.seed", 0),
            ("simulation.workers", 1),
            ("simulation.block_size", 2),
        ):
            if self.settings[key] < minimum:
                raise ConfigurationError(f"{key} must be at least {minimum}")

    @property
    def rho(self):
        """Subjective discount rate, following the risk-free rate."""
        rho = self.settings["market.rho"]
        return self.settings["market.r"] if rho is None else rho

    @property
    def mortality(self):
        """:class:`diaopt.model.MortalityModel` of the settings."""
        return MortalityModel(
            lambda0=self.settings["mortality.lambda0"],
            m=self.settings["mortality.m"],
            b=self.settings["mortality.b"],
        )

    @property
    def market(self):
        """:class:`diaopt.model.MarketModel` of the settings."""
        return MarketModel(
            mu=self.settings["market.mu"],
            sigma=self.settings["market.sigma"],
            r=self.settings["market.r"],
            rho=self.rho,
            nu=self.settings["market.nu"],
            pi=self.settings["market.pi"],
        )

    @property
    def preferences(self):
        """:class:`diaopt.model.Preferences` of the settings."""
        return Preferences(gamma=self.settings["preferences.gamma"])

    @property
    def contract(self):
        """:class:`diaopt.model.DIAContract` of the settings."""
        start = self.settings["contract.start_age"]
        return DIAContract(
            Q=self.settings["contract.q"],
            tau=self.settings["contract.retirement_age"] - start,
            x=start,
        )

    @property
    def grid(self):
        """:class:`diaopt.numerics.Grid` of the settings."""
        return build_grid(
            start_age=self.settings["contract.start_age"],
            retirement_age=self.settings["contract.retirement_age"],
            w_max=self.settings["grid.w_max"],
            w_nodes=self.settings["grid.w_nodes"],
            i_max=self.settings["grid.i_max"],
            i_nodes=self.settings["grid.i_nodes"],
            steps_per_year=self.settings["grid.steps_per_year"],
            terminal_age=self.settings["grid.terminal_age"],
        )

    @property
    def dynamic_pre(self):
        """Whether the risky share is optimised before retirement."""
        return MODES[self.settings["solver.mode"]][0]

    @property
    def dynamic_post(self):
        """Whether the risky share is optimised after retirement."""
        return MODES[self.settings["solver.mode"]][1]

    @property
    def snapshot_interval(self):
        """Years between stored slices."""
        return self.settings["grid.snapshot_interval"]

    @property
    def output_directory(self):
        """Directory for result files."""
        return self.settings["output.directory"]

    def _set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        if key in _STRINGS:
            self.settings[key] = value
            return
        try:
            number = float(value)
        except ValueError as error:
            raise ConfigurationError(
                f"{key}: cannot parse {value!r} as a number"
            ) from error
        if key in _INTEGERS:
            if not number.is_integer():
                raise ConfigurationError(f"{key}: expected an integer")
            number = int(number)
        self.settings[key] = number


def load_config(path=None, overrides=None):
    """
    Load and validate a configuration in one call.

    Parameters
    ----------
    path : :class:`str` or None
        Configuration file, defaults only if None

    overrides : :class:`list` or None
        ``key=value`` strings applied after the file

    Returns
    -------
    config : :class:`RunConfig`
        Validated configuration

    Raises
    ------
    ConfigurationError
        Raised for any invalid setting

    """
    config = RunConfig()
    if path is not None:
        config.from_file(path)
    config.apply(overrides)
    return config
