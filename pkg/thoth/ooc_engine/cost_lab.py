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

"""This file contains all strategies compared by the cost lab and the scenarios they are compared on."""

import logging
import math

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .chain import order_chain
from .strategy_base import StrategyCost
from .strategy_bnlj import BnljInspired
from .strategy_bnlj import naive_column_layout
from .strategy_bnlj import naive_row_layout
from .strategy_riot_db import RiotDb
from .strategy_square import SquareInOrder
from .strategy_square import SquareOptOrder

_LOGGER = logging.getLogger(__name__)

STRATEGIES = (RiotDb, BnljInspired, SquareInOrder, SquareOptOrder)

_NAIVE_FORMULAS = {
    "naive_column_layout": naive_column_layout,
    "naive_row_layout": naive_row_layout,
}

COST_COLUMNS = ["strategy", "order", "blocks"]


@dataclass(frozen=True)
class CostScenario:
    """Three-matrix chain A (n x n/s), B (n/s x n), C (n x n) under a budget."""

    n: int
    s: float
    memory_scalars: int
    block_scalars: int

    def __post_init__(self):
        """Validate the scenario."""
        if self.s <= 1:
            raise ValueError(f"Skewness factor must be greater than 1, got {self.s}")

        if min(self.n, int(self.n / self.s)) < 1:
            raise ValueError(f"Scenario n={self.n}, s={self.s} derives an empty dimension")

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        """Chain dimensions of A B C."""
        return (self.n, int(self.n / self.s), self.n, self.n)


class CostLab:
    """This class contains all strategies evaluated for a budget."""

    def __init__(self, memory_scalars: int, block_scalars: int):
        """Initialize cost lab."""
        self.memory_scalars = memory_scalars
        self.block_scalars = block_scalars

        self.strategy_context = {
            strategy._STRATEGY_NAME: strategy(
                memory_scalars=memory_scalars, block_scalars=block_scalars
            )._aggregate_info()
            for strategy in STRATEGIES
        }

    def cost_matmul(self, strategy: str, m: int, l: int, n: int) -> float:
        """Blocks of one multiplication under a strategy or one of the naive layouts."""
        if strategy in _NAIVE_FORMULAS:
            return _NAIVE_FORMULAS[strategy](m, l, n, self.block_scalars)

        if strategy not in self.strategy_context:
            raise ValueError(f"Unknown strategy {strategy!r}")

        return self.strategy_context[strategy]["cost_method"](m, l, n)

    def scenario_chain(self, dims: Sequence[int]) -> List[StrategyCost]:
        """Costs of all strategies for a chain, sorted by strategy name."""
        costs = []
        for strategy_name, strategy_methods in self.strategy_context.items():
            cost = strategy_methods["chain_method"](dims)
            _LOGGER.debug(f"{strategy_name} on {tuple(dims)}: {cost.blocks:.1f} blocks with order {cost.order}")
            costs.append(cost)

        return sorted(costs, key=lambda cost: cost.strategy)


def cost_matmul(strategy: str, m: int, l: int, n: int, memory_scalars: int, block_scalars: int) -> float:
    """Blocks of one m x l by l x n multiplication."""
    return CostLab(memory_scalars, block_scalars).cost_matmul(strategy, m, l, n)


def scenario_chain(dims: Sequence[int], memory_scalars: int, block_scalars: int) -> List[StrategyCost]:
    """Costs of all strategies for an arbitrary chain."""
    return CostLab(memory_scalars, block_scalars).scenario_chain(dims)


def scenario_chain3(scenario: CostScenario) -> List[StrategyCost]:
    """Costs of all strategies for the skewed three-matrix chain."""
    return scenario_chain(scenario.dims, scenario.memory_scalars, scenario.block_scalars)


def lower_bound(
    kind: str,
    memory_scalars: int,
    block_scalars: int,
    m: Optional[int] = None,
    l: Optional[int] = None,
    n: Optional[int] = None,
    dims: Optional[Sequence[int]] = None,
) -> float:
    """I/O lower bound in blocks.

    single: l*m*n / (B * sqrt(M)) for one multiplication.
    chain: N / (B * sqrt(M)) where N is the multiplication count of the best order.
    """
    scale = block_scalars * math.sqrt(memory_scalars)
    if kind == "single":
        if None in (m, l, n):
            raise ValueError("Single multiplication bound needs m, l and n")

        return l * m * n / scale

    if kind == "chain":
        if not dims:
            raise ValueError("Chain bound needs chain dimensions")

        return order_chain(dims).cost / scale

    raise ValueError(f"Unknown lower bound kind {kind!r}")


def costs_frame(costs: Iterable[StrategyCost]) -> pd.DataFrame:
    """Cost table with one row per strategy."""
    return pd.DataFrame(
        [{"strategy": cost.strategy, "order": cost.order, "blocks": cost.blocks} for cost in costs],
        columns=COST_COLUMNS,
    )


def parse_sweep(sweep: str) -> np.ndarray:
    """Skewness values of a sweep given as s=start:stop:step, stop included."""
    name, _, bounds = sweep.partition("=")
    parts = bounds.split(":")
    if name.strip() != "s" or len(parts) != 3:
        raise ValueError(f"Sweep must look like s=start:stop:step, got {sweep!r}")

    start, stop, step = (float(part) for part in parts)
    if step <= 0 or stop < start:
        raise ValueError(f"Sweep {sweep!r} is empty")

    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def sweep_frame(n: int, skews: Iterable[float], memory_scalars: int, block_scalars: int) -> pd.DataFrame:
    """Cost table over several skewness factors, one row per (s, strategy)."""
    frames = []
    for s in skews:
        scenario = CostScenario(n=n, s=float(s), memory_scalars=memory_scalars, block_scalars=block_scalars)
        frame = costs_frame(scenario_chain3(scenario))
        frame.insert(0, "s", float(s))
        frames.append(frame)

    if not frames:
        return pd.DataFrame(columns=["s"] + COST_COLUMNS)

    return pd.concat(frames, ignore_index=True)
