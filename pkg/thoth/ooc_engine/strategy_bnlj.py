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

"""This file contains class for block nested-loop style multiplication and the naive layouts."""

import logging

from .strategy_base import StrategyBase

_LOGGER = logging.getLogger(__name__)


class BnljInspired(StrategyBase):
    """Rows of the left operand fill memory, the right operand is scanned once per batch of rows."""

    _STRATEGY_NAME = "BnljInspired"

    def cost_matmul(self, m: int, l: int, n: int) -> float:
        """m*l*n*(l+n)/(B*M) rescans plus one pass over inputs and output."""
        block, memory = self.block_scalars, self.memory_scalars
        return m * l * n * (l + n) / (block * memory) + (m * l + l * n + m * n) / block


def naive_column_layout(m: int, l: int, n: int, block_scalars: int) -> float:
    """Textbook triple loop with both operands column-major: every access to the left operand faults."""
    return m * l * n + (l * n + m * n) / block_scalars


def naive_row_layout(m: int, l: int, n: int, block_scalars: int) -> float:
    """Textbook triple loop with a row-major left operand, which is scanned once per result column."""
    return m * l * n / block_scalars + (l * n + m * n) / block_scalars
