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

"""Shared fixtures: stores under tmp_path, small budgets and random programs."""

from typing import List

import numpy as np
import pytest

from thoth.ooc_engine.buffer_pool import BufferPool
from thoth.ooc_engine.buffer_pool import ResourceBudget
from thoth.ooc_engine.expr_dag import ExprNode
from thoth.ooc_engine.expr_dag import build
from thoth.ooc_engine.tiled_store import Linearization
from thoth.ooc_engine.tiled_store import Shape
from thoth.ooc_engine.tiled_store import TileSpec
from thoth.ooc_engine.tiled_store import import_dense
from thoth.ooc_engine.tiled_store import matrix_path

# 4x4 square tiles, 16 frames.
SMALL_BLOCK = 16
SMALL_MEMORY = 16 * SMALL_BLOCK


@pytest.fixture
def store(tmp_path):
    """Empty store directory."""
    path = tmp_path / "store"
    path.mkdir()
    return path


@pytest.fixture
def small_budget():
    """Budget with 16 frames of 16 scalars."""
    return ResourceBudget(SMALL_MEMORY, SMALL_BLOCK)


@pytest.fixture
def pool(small_budget):
    """Buffer pool over the small budget."""
    return BufferPool(small_budget)


@pytest.fixture
def store_matrix(store):
    """Write an array into the store, vectors given as 1-D arrays become columns."""

    def _store_matrix(name, array, budget, tiles=None, lin=Linearization.TILE_ROW_MAJOR):
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 1:
            array = array.reshape(-1, 1)

        shape = Shape(*array.shape)
        tiles = tiles or TileSpec.default_for(shape, budget.block_scalars)
        return import_dense(matrix_path(store, name), shape, tiles, lin, array, BufferPool(budget))

    return _store_matrix


_UNARY = ["sqrt", "square", "negate"]
_BINARY = ["add", "sub", "mul", "div", "pow"]
_COMPARE = ["gt", "ge", "lt", "le", "eq"]


def _index(rng, rows: int) -> ExprNode:
    """Range or sample over 1..rows."""
    if rng.random() < 0.5:
        lo, hi = (int(value) for value in rng.integers(1, rows + 1, size=2))
        return build("range", lo, hi)

    return build("sample", rows, int(rng.integers(1, min(rows, 50) + 1)), int(rng.integers(0, 2 ** 31)))


def _compare(rng, node: ExprNode) -> ExprNode:
    """Comparison of node against a random scalar."""
    return build(str(rng.choice(_COMPARE)), node, float(np.round(rng.normal(), 1)))


def random_elementwise_program(rng, leaves: List[ExprNode], steps: int = 6) -> ExprNode:
    """Random DAG of elementwise, comparison, substitution and gather nodes over vector leaves."""
    by_rows = {}
    for leaf in leaves:
        by_rows.setdefault(leaf.shape.rows, []).append(leaf)

    node = None
    for _ in range(steps):
        rows = int(rng.choice(sorted(by_rows)))
        candidates = by_rows[rows]
        x = candidates[int(rng.integers(len(candidates)))]
        y = candidates[int(rng.integers(len(candidates)))]
        choice = int(rng.integers(7))
        if choice == 0:
            node = build(str(rng.choice(_UNARY)), x)
        elif choice == 1:
            other = y if rng.random() < 0.5 else float(np.round(rng.normal(), 2))
            operands = (x, other) if rng.random() < 0.5 else (other, x)
            node = build(str(rng.choice(_BINARY)), *operands)
        elif choice == 2:
            node = _compare(rng, x)
        elif choice == 3:
            node = build(str(rng.choice(["and", "or"])), _compare(rng, x), _compare(rng, y))
        elif choice == 4:
            node = build("subst", x, _compare(rng, y), float(np.round(rng.normal(), 1)))
        elif choice == 5:
            node = build("not", _compare(rng, x))
        else:
            node = build("gather", x, _index(rng, rows))

        by_rows.setdefault(node.shape.rows, []).append(node)

    return node


@pytest.fixture
def random_program():
    """Generator of random elementwise programs."""
    return random_elementwise_program


def _path_lengths(x, y, endpoints=(1.0, 2.0, 3.0, 4.0)):
    """Lengths of the paths from a start point via (x, y) to an end point."""
    xs, ys, xe, ye = endpoints
    to_start = build("sqrt", build("add", build("square", build("sub", x, xs)), build("square", build("sub", y, ys))))
    to_end = build("sqrt", build("add", build("square", build("sub", x, xe)), build("square", build("sub", y, ye))))
    return build("add", to_start, to_end)


@pytest.fixture
def path_lengths():
    """Builder of the path length expression over two coordinate vectors."""
    return _path_lengths
