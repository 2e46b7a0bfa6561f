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

"""This file contains class for multiplication as a relational join plan."""

import logging

from .strategy_base import StrategyBase

_LOGGER = logging.getLogger(__name__)


class RiotDb(StrategyBase):
    """Matrices as (i, j, value) tables: hash join on the inner index, sort and aggregate.

    Tuples are costed as single scalars, index storage is left out.
    """

    _STRATEGY_NAME = "RiotDb"

    def cost_matmul(self, m: int, l: int, n: int) -> float:
        """Hash join of both inputs, two sort passes over m*l*n join tuples, aggregated output."""
        block = self.block_scalars
        hash_join = 3 * (m * l + l * n) / block
        external_sort = 2 * 2 * (m * l * n) / block
        aggregate = m * n / block
        return hash_join + external_sort + aggregate
