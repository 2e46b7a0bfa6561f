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

"""This file contains basic class for all multiplication strategies compared by the cost lab."""

from dataclasses import dataclass
from typing import Sequence

from .chain import ChainPlan


@dataclass(frozen=True)
class StrategyCost:
    """Estimated block I/Os of one strategy for a chain."""

    strategy: str
    blocks: float
    order: str


class StrategyBase:
    """This class contain base functions that need to be created for a strategy."""

    _STRATEGY_NAME = None

    def __init__(self, memory_scalars: int, block_scalars: int):
        """Initialize strategy with memory M and block size B in scalars."""
        if memory_scalars < 3 * block_scalars:
            raise ValueError(f"Memory of {memory_scalars} scalars holds fewer than 3 blocks of {block_scalars}")

        self.memory_scalars = memory_scalars
        self.block_scalars = block_scalars

    def _aggregate_info(self):
        """Aggregate info required for the cost lab."""
        return {"cost_method": self.cost_matmul, "order_method": self._choose_order, "chain_method": self.cost_chain}

    def cost_matmul(self, m: int, l: int, n: int) -> float:
        """Block I/Os of multiplying an m x l by an l x n matrix.

        @param m: It's the number of rows of the left operand.
        @param l: It's the shared inner dimension.
        @param n: It's the number of columns of the right operand.
        """
        raise NotImplementedError

    def _choose_order(self, dims: Sequence[int]) -> ChainPlan:
        """Multiplication order used for a chain, program order unless overridden."""
        return ChainPlan.in_order(dims)

    def cost_chain(self, dims: Sequence[int]) -> StrategyCost:
        """Block I/Os of a whole chain, one multiplication at a time."""
        plan = self._choose_order(dims)
        blocks = sum(self.cost_matmul(m, l, n) for m, l, n in plan.product_shapes())

        return StrategyCost(strategy=self._STRATEGY_NAME, blocks=blocks, order=plan.render())
