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

"""This file contains classes for square tiled blocked multiplication."""

import logging
import math

from typing import Sequence

from .chain import ChainPlan
from .chain import order_chain
from .strategy_base import StrategyBase

_LOGGER = logging.getLogger(__name__)


class SquareInOrder(StrategyBase):
    """Three p x p submatrices in memory, p = sqrt(M/3), chain multiplied in program order."""

    _STRATEGY_NAME = "SquareInOrder"

    @property
    def p(self) -> float:
        """Submatrix side."""
        return math.sqrt(self.memory_scalars / 3)

    def cost_matmul(self, m: int, l: int, n: int) -> float:
        """(2 * (p^2/B) * (l/p) + p^2/B) * (m*n/p^2)."""
        p, block = self.p, self.block_scalars
        return (2 * (p * p / block) * (l / p) + p * p / block) * (m * n / (p * p))


class SquareOptOrder(SquareInOrder):
    """Square tiled multiplication after choosing the chain order with the fewest products."""

    _STRATEGY_NAME = "SquareOptOrder"

    def _choose_order(self, dims: Sequence[int]) -> ChainPlan:
        """Cheapest parenthesization."""
        return order_chain(dims)
