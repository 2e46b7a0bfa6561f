#!/usr/bin/env python3
# ooc-engine
# Copyright(C) 2020 Red Hat, Inc.
#
# This program is free software: you can redistribute it and / or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <http://www.gnu.org/licenses/>.

"""Command line front end: run, explain, gen, stats and costlab."""

import argparse
import logging
import sys

from typing import Any, Dict, List, Optional, Sequence, TextIO

from . import __service_version__
from .buffer_pool import BufferPool
from .configuration import Configuration
from .cost_lab import CostScenario
from .cost_lab import costs_frame
from .cost_lab import parse_sweep
from .cost_lab import scenario_chain3
from .cost_lab import sweep_frame
from .exceptions import OOCEngineException
from .exceptions import ShapeMismatchError
from .exceptions import StorageError
from .executor import Executor
from .executor import IoReport
from .expr_dag import ExprNode
from .expr_dag import dump
from .expr_dag import intermediate_count
from .planner import matmul_side
from .planner import plan
from .script import compile_script
from .templates import TextTemplates
from .templates import plan_operators
from .tiled_store import Linearization
from .tiled_store import Shape
from .tiled_store import StoredMatrix
from .tiled_store import TileSpec
from .tiled_store import import_dense
from .tiled_store import matrix_path
from .utils import format_value
from .utils import load_last_run
from .utils import push_io_report
from .utils import store_last_run
from .utils import uniform_rows

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SCRIPT_ERROR = 1
EXIT_IO_ERROR = 2

_TILINGS = {
    "square": TileSpec.square,
    "rows": TileSpec.row_strips,
    "cols": TileSpec.col_strips,
}

_LINEARIZATIONS = {
    "row": Linearization.TILE_ROW_MAJOR,
    "col": Linearization.TILE_COL_MAJOR,
    "zorder": Linearization.Z_ORDER,
}


def run_script(text: str, configuration: Configuration, out: Optional[TextIO] = None) -> IoReport:
    """Compile a script and evaluate its print statements, everything else stays deferred."""
    out = out or sys.stdout
    compiled = compile_script(
        text, configuration.store, seed=configuration.seed, block_scalars=configuration.block_scalars
    )
    executor = Executor(BufferPool(configuration.budget))
    try:
        for request in compiled.prints:
            if isinstance(request.value, ExprNode):
                physical_plan = plan(request.value, configuration.budget, optimize=configuration.optimize)
                value = executor.evaluate(physical_plan)
            else:
                value = request.value

            print(format_value(value), file=out)

        io_report = executor.report()
    finally:
        executor.close()

    _LOGGER.info(f"I/O report: {io_report.to_dict()}")
    return io_report


def explain_script(text: str, configuration: Configuration) -> str:
    """Render the DAG, the optimized DAG and the physical plan of every print statement."""
    compiled = compile_script(
        text, configuration.store, seed=configuration.seed, block_scalars=configuration.block_scalars
    )
    statements: List[Dict[str, Any]] = []
    for request in compiled.prints:
        if not isinstance(request.value, ExprNode):
            statements.append({"line": request.line, "scalar": format_value(request.value)})
            continue

        physical_plan = plan(request.value, configuration.budget, optimize=configuration.optimize)
        operators = plan_operators(physical_plan)
        statements.append(
            {
                "line": request.line,
                "scalar": None,
                "intermediates": intermediate_count(request.value),
                "dag": dump([request.value]),
                "optimized": configuration.optimize,
                "optimized_dag": dump([physical_plan.expr]),
                "chains": [
                    {"dims": chain.dims, "order": chain.render(names), "cost": chain.cost}
                    for chain, names in physical_plan.chains
                ],
                "p": matmul_side(configuration.budget),
                "operators": operators,
                "reads": sum(node.estimated_reads for node in physical_plan.nodes()),
                "writes": sum(node.estimated_writes for node in physical_plan.nodes()),
            }
        )

    return TextTemplates.explain_template(
        statements=statements,
        memory_scalars=configuration.memory_scalars,
        block_scalars=configuration.block_scalars,
    )


def generate_matrix(
    name: str, rows: int, cols: int, configuration: Configuration, tiling: str = "auto", lin: str = "row"
) -> StoredMatrix:
    """Write a seeded uniform [0, 1) matrix into the store."""
    if rows < 1 or cols < 1:
        raise ShapeMismatchError(f"Cannot generate a {rows}x{cols} matrix, both dimensions must be positive")

    shape = Shape(rows, cols)
    block_scalars = configuration.block_scalars
    tiles = TileSpec.default_for(shape, block_scalars) if tiling == "auto" else _TILINGS[tiling](block_scalars)
    pool = BufferPool(configuration.budget)
    matrix = import_dense(
        matrix_path(configuration.store, name),
        shape,
        tiles,
        _LINEARIZATIONS[lin],
        uniform_rows(rows, cols, configuration.seed),
        pool,
    )
    _LOGGER.info(f"Generated {matrix} with seed {configuration.seed}")
    return matrix


def _read_script(args: argparse.Namespace) -> str:
    """Script text given inline or as a file, '-' reads standard input."""
    if args.code is not None:
        return args.code

    if args.script is None:
        raise OOCEngineException("Either a script file or --code is required")

    if args.script == "-":
        return sys.stdin.read()

    try:
        with open(args.script) as script_file:
            return script_file.read()
    except OSError as exc:
        raise StorageError(f"Cannot read script: {exc}", path=args.script) from exc


def _configuration(args: argparse.Namespace) -> Configuration:
    """Configuration from the common flags."""
    return Configuration(
        memory_scalars=args.memory,
        block_scalars=args.block,
        store=args.store,
        seed=args.seed,
        optimize=False if getattr(args, "no_optimize", False) else None,
    )


def _command_run(args: argparse.Namespace) -> None:
    configuration = _configuration(args)
    text = _read_script(args)
    io_report = run_script(text, configuration)
    script = args.script or "<inline>"
    store_last_run(configuration.store, io_report.to_dict(), script)
    push_io_report(io_report.to_dict(), configuration, script)


def _command_explain(args: argparse.Namespace) -> None:
    sys.stdout.write(explain_script(_read_script(args), _configuration(args)))


def _command_gen(args: argparse.Namespace) -> None:
    generate_matrix(args.name, args.rows, args.cols, _configuration(args), tiling=args.tiling, lin=args.lin)


def _command_stats(args: argparse.Namespace) -> None:
    configuration = _configuration(args)
    last_run = load_last_run(configuration.store)
    if last_run is None:
        raise StorageError("No run recorded yet", path=str(configuration.store))

    sys.stdout.write(TextTemplates.io_report_template(**last_run))


def _command_costlab(args: argparse.Namespace) -> None:
    memory = args.memory if args.memory is not None else 2 ** 28
    block = args.block if args.block is not None else 1024
    try:
        if args.sweep:
            frame = sweep_frame(args.n, parse_sweep(args.sweep), memory, block)
        else:
            scenario = CostScenario(n=args.n, s=args.s, memory_scalars=memory, block_scalars=block)
            frame = costs_frame(scenario_chain3(scenario))
    except ValueError as exc:
        raise OOCEngineException(str(exc)) from exc

    sys.stdout.write(frame.to_csv(index=False))


def _budget_flags() -> argparse.ArgumentParser:
    """Flags shared by all commands."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--memory", type=int, default=None, help="Memory budget M in scalars.")
    parser.add_argument("--block", type=int, default=None, help="Block size B in scalars.")
    parser.add_argument("--store", default=None, help="Directory of stored matrices.")
    parser.add_argument("--seed", type=int, default=None, help="Seed for gen and sample().")
    return parser


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the riot command."""
    common = _budget_flags()
    parser = argparse.ArgumentParser(prog="riot", description="Out-of-core array engine with deferred evaluation.")
    parser.add_argument("--version", action="version", version=__service_version__)
    commands = parser.add_subparsers(dest="command", required=True)

    for name, handler, help_text in (
        ("run", _command_run, "Evaluate the print statements of a script."),
        ("explain", _command_explain, "Show DAGs and the physical plan of a script without running it."),
    ):
        command = commands.add_parser(name, parents=[common], help=help_text)
        command.add_argument("script", nargs="?", help="Script file, '-' for standard input.")
        command.add_argument("-c", "--code", default=None, help="Script text given inline.")
        command.add_argument(
            "--no-optimize", action="store_true", help="Disable gather pushdown and chain reordering."
        )
        command.set_defaults(handler=handler)

    gen = commands.add_parser("gen", parents=[common], help="Write a seeded uniform [0, 1) matrix.")
    gen.add_argument("name")
    gen.add_argument("rows", type=int)
    gen.add_argument("cols", type=int)
    gen.add_argument("--tiling", choices=["auto"] + sorted(_TILINGS), default="auto")
    gen.add_argument("--lin", choices=sorted(_LINEARIZATIONS), default="row")
    gen.set_defaults(handler=_command_gen)

    stats = commands.add_parser("stats", parents=[common], help="Show the I/O counters of the last run.")
    stats.set_defaults(handler=_command_stats)

    costlab = commands.add_parser(
        "costlab", parents=[common], help="Compare analytic costs of multiplication strategies."
    )
    costlab.add_argument("--n", type=int, required=True, help="Base dimension of the A B C chain.")
    costlab.add_argument("--s", type=float, default=4.0, help="Skewness factor, greater than 1.")
    costlab.add_argument("--sweep", default=None, help="Skewness sweep as s=start:stop:step.")
    costlab.set_defaults(handler=_command_costlab)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Execute the main function of the riot command."""
    args = build_parser().parse_args(argv)
    _LOGGER.debug(f"riot v{__service_version__}, command {args.command}")
    try:
        args.handler(args)
    except (StorageError, OSError) as exc:
        _LOGGER.error(f"I/O error: {exc}")
        return EXIT_IO_ERROR
    except OOCEngineException as exc:
        _LOGGER.error(f"Error: {exc}")
        return EXIT_SCRIPT_ERROR

    return EXIT_OK
