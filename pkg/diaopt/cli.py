"""
Command line interface.

All results are written as CSV files with a header row and floats with 17
significant digits, so that they read back exactly. Files are first written
under a temporary name and only renamed into place when complete.


Subcommands
===========

============  ====================  ==========================================
Subcommand    Output file           Content
============  ====================  ==========================================
price         price.csv             age, a_tilde, refund per age
solve-post    post_surface.csv      value, consumption and alpha per node
solve-pre     pre_regions.csv       age, a_tilde and region share per slice
frontier      frontier.csv          age, I, w_star, a_tilde
alpha-map     alpha_map.csv         age, I, w, alpha, annuitize
recommend     recommendation.csv    purchase and state after the trade
simulate      simulation.csv        strategy, mean_utility, ci95, paths, seed
============  ====================  ==========================================

Without ``--age``, ``price`` tabulates every integer age of the deferral
period and ``frontier`` every integer age between start and retirement.


Exit codes
==========

* 0 on success,
* 1 if a subcommand failed for numerical reasons or invalid inputs,
* 2 for usage and configuration errors.


Use cases
=========

Export the frontier at age 62 for a partially refundable DIA:

.. code-block:: bash

    diaopt --set contract.q=0.7 --out results frontier --age 62

Compare the optimal policy with never buying a DIA:

.. code-block:: bash

    diaopt simulate --age 55 --wealth 10 --paths 20000 \\
        --strategies optimal,never-annuitize


Module documentation
====================

"""

import argparse
import logging
import math
import os
import sys
import tempfile

import pandas as pd

from diaopt.configuration import ConfigurationError, load_config
from diaopt.numerics import NumericalError
from diaopt.policy import allocation_table, extract_frontier
from diaopt.postretirement import PostRetirementSolver
from diaopt.preretirement import PreRetirementSolver
from diaopt.simulation import SimConfig, Simulator, Strategy

logger = logging.getLogger(__name__)

SUBCOMMANDS = (
    "price",
    "solve-post",
    "solve-pre",
    "frontier",
    "alpha-map",
    "recommend",
    "simulate",
)

FLOAT_FORMAT = "%.17g"


def write_table(table, directory, name):
    """
    Write a table atomically as CSV.

    Parameters
    ----------
    table : :class:`pandas.DataFrame`
        Table to write, without index

    directory : :class:`str`
        Output directory, created if missing

    name : :class:`str`
        File name

    Returns
    -------
    path : :class:`str`
        Path of the written file

    """
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, name)
    handle, temporary = tempfile.mkstemp(
        dir=directory, prefix=f".{name}.", suffix=".tmp"
    )
    try:
        with os.fdopen(handle, "w", encoding="utf8", newline="") as file:
            table.to_csv(
                file,
                index=False,
                float_format=FLOAT_FORMAT,
                lineterminator="\n",
            )
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise
    logger.info("Wrote %s", path)
    return path


def run_subcommand(name, config, args):
    """
    Run one subcommand and write its output.

    Parameters
    ----------
    name : :class:`str`
        One of :data:`SUBCOMMANDS`

    config : :class:`diaopt.configuration.RunConfig`
        Validated configuration

    args : :class:`argparse.Namespace`
        Subcommand arguments ``age``, ``wealth``, ``income``, ``paths`` and
        ``strategies``, missing ones count as not given

    Returns
    -------
    code : :class:`int`
        Exit code

    """
    if name not in SUBCOMMANDS:
        logger.error("unknown subcommand %r", name)
        return 2
    handler = _HANDLERS[name]
    try:
        table = handler(config, args)
    except _UsageError as error:
        logger.error("%s: %s", name, error)
        return 2
    except (NumericalError, ValueError) as error:
        logger.error("%s failed: %s", name, error)
        return 1
    try:
        write_table(table, config.output_directory, _OUTPUTS[name])
    except OSError as error:
        logger.error("%s: cannot write output: %s", name, error)
        return 1
    return 0


class _UsageError(Exception):
    pass


def _argument(args, name, default=None):
    value = getattr(args, name, None)
    return default if value is None else value


def _required(args, name):
    value = getattr(args, name, None)
    if value is None:
        raise _UsageError(f"--{name} is required")
    return value


def _solve_post(config):
    solver = PostRetirementSolver(
        config.grid,
        config.mortality,
        config.market,
        config.preferences,
        dynamic=config.dynamic_post,
        snapshot_interval=config.snapshot_interval,
    )
    return solver.solve()


def _solve_pre(config, surface=None):
    if surface is None:
        surface = _solve_post(config)
    solver = PreRetirementSolver(
        config.grid,
        config.mortality,
        config.market,
        config.preferences,
        config.contract,
        surface,
        dynamic=config.dynamic_pre,
        snapshot_interval=config.snapshot_interval,
    )
    return solver.solve()


def _integer_ages(start, stop):
    return list(range(math.ceil(start - 1e-9), math.floor(stop + 1e-9) + 1))


def _price(config, args):
    contract = config.contract
    age = _argument(args, "age")
    ages = (
        [age]
        if age is not None
        else _integer_ages(contract.x, contract.retirement_age)
    )
    rows = []
    for item in ages:
        t = item - contract.x
        price = contract.price(config.mortality, config.market, t)
        refund = contract.refund(config.mortality, config.market, t)
        rows.append(
            {
                "age": float(item),
                "a_tilde": float(price),
                "refund": float(refund),
            }
        )
    return pd.DataFrame(rows, columns=["age", "a_tilde", "refund"])


def _solve_post_table(config, args):
    surface = _solve_post(config)
    age = _argument(args, "age", config.contract.retirement_age)
    return surface.to_dataframe(age)


def _solve_pre_table(config, args):
    solution = _solve_pre(config)
    fractions = [
        item.region_fraction(config.grid.w[-1]) for item in solution.slices
    ]
    return pd.DataFrame(
        {
            "age": solution.ages,
            "a_tilde": [item.a_tilde for item in solution.slices],
            "region_fraction": fractions,
        }
    )


def _frontier(config, args):
    solution = _solve_pre(config)
    age = _argument(args, "age")
    ages = (
        [age]
        if age is not None
        else _integer_ages(solution.start_age, solution.retirement_age)
    )
    tables = []
    for item in ages:
        tables.append(extract_frontier(solution, item).to_dataframe())
    return pd.concat(tables, ignore_index=True)


def _alpha_map(config, args):
    solution = _solve_pre(config)
    age = _argument(args, "age", solution.start_age)
    return allocation_table(solution.slice_at(age))


def _recommend(config, args):
    age = _required(args, "age")
    wealth = _required(args, "wealth")
    income = _required(args, "income")
    solution = _solve_pre(config)
    frontier = extract_frontier(solution, age)
    recommendation = frontier.recommend(wealth=wealth, income=income)
    return pd.DataFrame([recommendation.to_dict()])


def _simulate(config, args):
    wealth = _required(args, "wealth")
    age = _argument(args, "age", config.contract.x)
    names = _argument(args, "strategies", "optimal,never-annuitize")
    try:
        strategies = [
            Strategy(item.strip())
            for item in names.split(",")
            if item.strip()
        ]
    except ValueError as error:
        raise _UsageError(str(error)) from error
    if not strategies:
        raise _UsageError("no strategy given")
    settings = config.settings
    sim_config = SimConfig(
        age=age,
        wealth=wealth,
        income=_argument(args, "income", 0.0),
        paths=_argument(args, "paths", settings["simulation.paths"]),
        seed=settings["simulation.seed"],
        block_size=settings["simulation.block_size"],
        workers=settings["simulation.workers"],
    )
    surface = _solve_post(config)
    solution = None
    if age < config.contract.retirement_age - 1e-9:
        solution = _solve_pre(config, surface)
    simulator = Simulator(
        config.mortality,
        config.market,
        config.preferences,
        config.contract,
        surface=surface,
        solution=solution,
    )
    return simulator.compare_strategies(sim_config, strategies)


_HANDLERS = {
    "price": _price,
    "solve-post": _solve_post_table,
    "solve-pre": _solve_pre_table,
    "frontier": _frontier,
    "alpha-map": _alpha_map,
    "recommend": _recommend,
    "simulate": _simulate,
}

_OUTPUTS = {
    "price": "price.csv",
    "solve-post": "post_surface.csv",
    "solve-pre": "pre_regions.csv",
    "frontier": "frontier.csv",
    "alpha-map": "alpha_map.csv",
    "recommend": "recommendation.csv",
    "simulate": "simulation.csv",
}


def build_parser():
    """
    Argument parser of the ``diaopt`` command.

    Returns
    -------
    parser : :class:`argparse.ArgumentParser`
        Parser with one subparser per subcommand

    """
    parser = argparse.ArgumentParser(
        prog="diaopt",
        description="Optimal purchase of deferred income annuities.",
    )
    parser.add_argument("--config", help="configuration file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="overrides",
        help="override a configuration key (repeatable)",
    )
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="simulation seed")
    parser.add_argument("--workers", type=int, help="simulation threads")
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="more output (-vv for debug messages)",
    )
    subparsers = parser.add_subparsers(
        dest="command", metavar="COMMAND", required=True
    )
    commands = {
        "price": ("DIA price and refund", ()),
        "solve-post": ("post-retirement value surface", ()),
        "solve-pre": ("annuitization region per age", ()),
        "frontier": ("annuitization frontier", ()),
        "alpha-map": ("risky share and purchase decision per node", ()),
        "recommend": ("DIA income to buy now", ("wealth", "income")),
        "simulate": (
            "Monte Carlo comparison of strategies",
            ("wealth", "income", "paths", "strategies"),
        ),
    }
    for name in SUBCOMMANDS:
        text, extras = commands[name]
        subparser = subparsers.add_parser(name, help=text, description=text)
        subparser.add_argument(
            "--age",
            type=float,
            required=(name == "recommend"),
            help="age in years",
        )
        if "wealth" in extras:
            subparser.add_argument(
                "--wealth", type=float, required=True, help="liquid wealth"
            )
        if "income" in extras:
            subparser.add_argument(
                "--income",
                type=float,
                required=(name == "recommend"),
                help="DIA income held",
            )
        if "paths" in extras:
            subparser.add_argument(
                "--paths", type=int, help="number of paths"
            )
        if "strategies" in extras:
            subparser.add_argument(
                "--strategies",
                help="comma-separated strategies: "
                + ", ".join(item.value for item in Strategy),
            )
    return parser


def main(argv=None):
    """
    Entry point of the ``diaopt`` command.

    Parameters
    ----------
    argv : :class:`list` or None
        Arguments, by default those of the process

    Returns
    -------
    code : :class:`int`
        Exit code

    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return int(error.code or 0)
    level = {0: logging.WARNING, 1: logging.INFO}.get(
        args.verbose, logging.DEBUG
    )
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s"
    )
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"output.directory={args.out}")
    if args.seed is not None:
        overrides.append(f"simulation.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"simulation.workers={args.workers}")
    try:
        config = load_config(args.config, overrides)
    except ConfigurationError as error:
        logger.error("configuration error: %s", error)
        return 2
    return run_subcommand(args.command, config, args)


if __name__ == "__main__":
    sys.exit(main())
