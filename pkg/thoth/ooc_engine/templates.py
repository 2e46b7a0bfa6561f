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

"""This file contains all templates used to render command line reports."""

from pathlib import Path
from typing import Any, Dict, List, Set

from jinja2 import Environment, FileSystemLoader

from .planner import PhysicalPlan
from .planner import PlanNode

_FILE_LOADER = FileSystemLoader(Path(__file__).parent.joinpath("static"))
ENV = Environment(loader=_FILE_LOADER, trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)


def plan_operators(plan: PhysicalPlan) -> List[Dict[str, Any]]:
    """Operators of a plan from the root down, shared operators are listed once and marked."""
    operators: List[Dict[str, Any]] = []
    seen: Set[int] = set()

    def _visit(node: PlanNode, depth: int) -> None:
        shared = node.plan_id in seen
        operators.append(
            {
                "depth": depth,
                "name": node.operator,
                "plan_id": node.plan_id,
                "shape": str(node.shape),
                "details": node.details(),
                "reads": node.estimated_reads,
                "writes": node.estimated_writes,
                "shared": shared,
            }
        )
        if shared:
            return

        seen.add(node.plan_id)
        for child in node.children:
            _visit(child, depth + 1)

    if plan.root is not None:
        _visit(plan.root, 0)

    return operators


class TextTemplates:
    """This class collects all text templates used by the command line."""

    def explain_template(statements: List[Dict[str, Any]], memory_scalars: int, block_scalars: int):
        """Create text for explain."""
        parameters = locals()
        template = ENV.get_template("templates/explain.j2")
        return template.render(**parameters)

    def io_report_template(io_report: Dict[str, int], script: str, datetime: str):
        """Create text for the counters of the last run."""
        parameters = locals()
        template = ENV.get_template("templates/io_report.j2")
        return template.render(**parameters)
