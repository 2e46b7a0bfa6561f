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

"""Straightforward in-memory interpreter, every intermediate result is a full array."""

import logging

from typing import Callable, Dict, Optional

import numpy as np

from .buffer_pool import BufferPool
from .buffer_pool import ResourceBudget
from .executor import gather_positions
from .expr_dag import ExprNode
from .expr_dag import Gather
from .expr_dag import Leaf
from .expr_dag import MatMul
from .expr_dag import Range
from .expr_dag import Sample
from .expr_dag import ScalarConst
from .expr_dag import walk
from .tiled_store import StoredMatrix
from .tiled_store import load_dense

_LOGGER = logging.getLogger(__name__)


def load_leaf(matrix: StoredMatrix) -> np.ndarray:
    """Read a stored matrix through a private pool, so no shared counters move."""
    pool = BufferPool(ResourceBudget(3 * matrix.block_scalars, matrix.block_scalars))
    return load_dense(matrix, pool)


def evaluate_eager(root: ExprNode, loader: Optional[Callable[[StoredMatrix], np.ndarray]] = None) -> np.ndarray:
    """Evaluate root bottom-up with whole-array numpy operations."""
    loader = loader or load_leaf
    values: Dict[int, object] = {}
    with np.errstate(all="ignore"):
        for node in walk([root]):
            values[node.node_id] = _evaluate_node(node, values, loader)

    result = values[root.node_id]
    if np.ndim(result) == 0:
        return np.full((1, 1), result)

    return result


def _evaluate_node(node: ExprNode, values: Dict[int, object], loader) -> object:
    """Value of one node given the values of its children."""
    if isinstance(node, Leaf):
        return loader(node.matrix)

    if isinstance(node, ScalarConst):
        return node.value

    if isinstance(node, (Range, Sample)):
        return node.values().reshape(-1, 1)

    operands = [values[child.node_id] for child in node.children]
    if isinstance(node, Gather):
        data, index = operands
        positions = gather_positions(index, node.child.shape.rows)
        return data[positions, 0].reshape(-1, 1)

    if isinstance(node, MatMul):
        return operands[0] @ operands[1]

    return node.apply(*operands)
