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


"""Tests of the analytic cost lab."""

import numpy as np
import pytest

from thoth.ooc_engine.cost_lab import COST_COLUMNS
from thoth.ooc_engine.cost_lab import CostLab
from thoth.ooc_engine.cost_lab import CostScenario
from thoth.ooc_engine.cost_lab import cost_matmul
from thoth.ooc_engine.cost_lab import lower_bound
from thoth.ooc_engine.cost_lab import parse_sweep
from thoth.ooc_engine.cost_lab import scenario_chain
from thoth.ooc_engine.cost_lab import scenario_chain3
from thoth.ooc_engine.cost_lab import sweep_frame
from thoth.ooc_engine.strategy_bnlj import BnljInspired
from thoth.ooc_engine.strategy_riot_db import RiotDb
from thoth.ooc_engine.strategy_square import SquareInOrder

# Roughly a quarter of a gigabyte of memory with 8 KiB blocks.
MEMORY, BLOCK = 2**28, 1024


@pytest.fixture
def cost_lab():
    """Small budget where the square tile side is 16."""
    return CostLab(memory_scalars=768, block_scalars=16)


class TestStrategies:
    """Block formulas of single multiplications."""

    def test_square(self, cost_lab):
        """Square tiling reads both strips of every result tile once."""
        assert SquareInOrder(768, 16).p == 16.0
        assert cost_lab.cost_matmul("SquareInOrder", 64, 64, 64) == 2304.0
        assert cost_lab.cost_matmul("SquareOptOrder", 64, 64, 64) == 2304.0

    def test_relational(self, cost_lab):
        """Join, two sort passes and aggregation."""
        assert RiotDb(768, 16).cost_matmul(4, 4, 4) == 23.0
        assert cost_lab.cost_matmul("RiotDb", 4, 4, 4) == 23.0

    def test_nested_loop(self):
        """Right operand rescanned once per memory load of left rows."""
        assert BnljInspired(768, 16).cost_matmul(8, 8, 8) == pytest.approx(12 + 2 / 3)

    def test_naive_layouts(self, cost_lab):
        """A column-major left operand costs one block per scalar access."""
        assert cost_lab.cost_matmul("naive_column_layout", 2, 3, 4) == 29.0
        assert cost_matmul("naive_row_layout", 2, 3, 4, memory_scalars=768, block_scalars=4) == 11.0

    def test_unknown_strategy(self, cost_lab):
        """Unknown strategies are rejected."""
        with pytest.raises(ValueError):
            cost_lab.cost_matmul("Strassen", 2, 2, 2)

    def test_too_little_memory(self):
        """Every strategy needs room for three blocks."""
        with pytest.raises(ValueError):
            RiotDb(memory_scalars=32, block_scalars=16)


class TestScenarios:
    """Comparisons of strategies on chains."""

    def test_chain_costs(self):
        """One row per strategy, sorted by name, the optimizing strategy reorders."""
        costs = scenario_chain((1000, 10, 1000, 10), memory_scalars=768, block_scalars=16)
        by_name = {cost.strategy: cost for cost in costs}

        assert [cost.strategy for cost in costs] == ["BnljInspired", "RiotDb", "SquareInOrder", "SquareOptOrder"]
        assert by_name["SquareInOrder"].order == "(AB)C"
        assert by_name["SquareOptOrder"].order == "A(BC)"
        assert by_name["SquareOptOrder"].blocks < by_name["SquareInOrder"].blocks

    def test_skewed_ordering(self):
        """Optimized order beats program order, which beats nested loops and the relational plan."""
        costs = {cost.strategy: cost.blocks for cost in scenario_chain3(CostScenario(100000, 2.0, MEMORY, BLOCK))}

        assert costs["SquareOptOrder"] < costs["SquareInOrder"] < costs["BnljInspired"] < costs["RiotDb"]
        assert costs["SquareOptOrder"] == pytest.approx(2.21e8, rel=0.01)
        assert costs["SquareInOrder"] == pytest.approx(3.29e8, rel=0.01)

    def test_gap_grows_with_skew(self):
        """Reordering saves more the more skewed the chain is."""
        frame = sweep_frame(100000, [2, 4, 8], MEMORY, BLOCK)
        blocks = frame.pivot(index="s", columns="strategy", values="blocks")
        gap = (blocks["SquareInOrder"] - blocks["SquareOptOrder"]).to_numpy()

        assert np.all(np.diff(gap) >= 0)
        assert gap[0] == pytest.approx(1.08e8, rel=0.01)

    def test_scenario_dims(self):
        """A is n x n/s, B is n/s x n and C is n x n."""
        assert CostScenario(1000, 4.0, MEMORY, BLOCK).dims == (1000, 250, 1000, 1000)

    @pytest.mark.parametrize("n,s", [(1000, 1.0), (1000, 0.5), (3, 4.0)])
    def test_invalid_scenario(self, n, s):
        """Skewness must exceed one and leave every dimension non-empty."""
        with pytest.raises(ValueError):
            CostScenario(n, s, MEMORY, BLOCK)


class TestLowerBound:
    """Lower bounds on block transfers."""

    def test_single(self):
        """l*m*n / (B * sqrt(M))."""
        assert lower_bound("single", 1024, 16, m=64, l=64, n=64) == 512.0

    def test_chain(self):
        """Uses the multiplication count of the cheapest order."""
        assert lower_bound("chain", 1024, 16, dims=(1000, 10, 1000, 10)) == 390.625

    @pytest.mark.parametrize(
        "kind,kwargs",
        [("single", {"m": 4, "l": 4}), ("chain", {}), ("triple", {"m": 1, "l": 1, "n": 1})],
    )
    def test_invalid(self, kind, kwargs):
        """Missing dimensions and unknown kinds are rejected."""
        with pytest.raises(ValueError):
            lower_bound(kind, 1024, 16, **kwargs)


class TestSweep:
    """Skewness sweeps."""

    def test_parse(self):
        """The stop value is included."""
        np.testing.assert_allclose(parse_sweep("s=2:8:2"), [2.0, 4.0, 6.0, 8.0])
        np.testing.assert_allclose(parse_sweep("s=1.5:2:0.25"), [1.5, 1.75, 2.0])

    @pytest.mark.parametrize("sweep", ["t=1:2:1", "s=1:2", "s=3:2:1", "s=1:2:0", "s=a:b:c"])
    def test_parse_invalid(self, sweep):
        """Malformed and empty sweeps are rejected."""
        with pytest.raises(ValueError):
            parse_sweep(sweep)

    def test_frame(self):
        """One row per skewness and strategy."""
        frame = sweep_frame(100000, parse_sweep("s=2:4:2"), MEMORY, BLOCK)

        assert list(frame.columns) == ["s"] + COST_COLUMNS
        assert len(frame) == 8
        assert sorted(frame["s"].unique()) == [2.0, 4.0]

    def test_empty_frame(self):
        """No skew values give an empty table with the same columns."""
        frame = sweep_frame(100000, [], MEMORY, BLOCK)

        assert frame.empty
        assert list(frame.columns) == ["s"] + COST_COLUMNS
