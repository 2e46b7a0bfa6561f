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

"""Multiplication order of matrix chains."""

import logging
import string

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

_LOGGER = logging.getLogger(__name__)

# A tree is the position of a matrix in the chain or a pair of subtrees.
ChainTree = Union[int, Tuple["ChainTree", "ChainTree"]]


def tree_cost(dims: Sequence[int], tree: ChainTree) -> int:
    """Scalar multiplications needed to evaluate a parenthesization."""
    return _tree_cost(dims, tree)[2]


def _tree_cost(dims: Sequence[int], tree: ChainTree) -> Tuple[int, int, int]:
    """Rows, columns and multiplications of a subtree."""
    if isinstance(tree, int):
        return dims[tree], dims[tree + 1], 0

    left_rows, inner, left_cost = _tree_cost(dims, tree[0])
    _, right_cols, right_cost = _tree_cost(dims, tree[1])
    return left_rows, right_cols, left_cost + right_cost + left_rows * inner * right_cols


def left_deep_tree(count: int) -> ChainTree:
    """Program order ((A B) C) ... of count matrices."""
    tree: ChainTree = 0
    for position in range(1, count):
        tree = (tree, position)

    return tree


def tree_leaves(tree: ChainTree) -> List[int]:
    """Matrix positions of a tree from left to right."""
    if isinstance(tree, int):
        return [tree]

    return tree_leaves(tree[0]) + tree_leaves(tree[1])


def default_names(count: int) -> List[str]:
    """A, B, C, ... for short chains and A1, A2, ... otherwise."""
    if count <= len(string.ascii_uppercase):
        return list(string.ascii_uppercase[:count])

    return [f"A{position + 1}" for position in range(count)]


def render_tree(tree: ChainTree, names: Sequence[str]) -> str:
    """Render a tree by juxtaposition, e.g. A(BC) or (AB)C."""

    def _render(subtree: ChainTree, nested: bool) -> str:
        if isinstance(subtree, int):
            return names[subtree]

        text = _render(subtree[0], True) + _render(subtree[1], True)
        return f"({text})" if nested else text

    return _render(tree, False)


@dataclass(frozen=True)
class ChainPlan:
    """Parenthesization of a chain of len(dims) - 1 matrices and its multiplication count."""

    dims: Tuple[int, ...]
    tree: ChainTree
    cost: int

    @property
    def length(self) -> int:
        """Number of matrices in the chain."""
        return len(self.dims) - 1

    @classmethod
    def in_order(cls, dims: Sequence[int]) -> "ChainPlan":
        """Plan multiplying in program order."""
        dims = tuple(dims)
        tree = left_deep_tree(len(dims) - 1)
        return cls(dims, tree, tree_cost(dims, tree))

    @classmethod
    def from_tree(cls, dims: Sequence[int], tree: ChainTree) -> "ChainPlan":
        """Plan for a given parenthesization."""
        dims = tuple(dims)
        return cls(dims, tree, tree_cost(dims, tree))

    def render(self, names: Optional[Sequence[str]] = None) -> str:
        """Parenthesization as text."""
        return render_tree(self.tree, names or default_names(self.length))

    def multiplications(self) -> List[Tuple[ChainTree, ChainTree]]:
        """Products of the tree in execution order, children before parents."""
        steps: List[Tuple[ChainTree, ChainTree]] = []

        def _visit(subtree: ChainTree) -> None:
            if isinstance(subtree, int):
                return

            _visit(subtree[0])
            _visit(subtree[1])
            steps.append(subtree)

        _visit(self.tree)
        return steps

    def product_shapes(self) -> List[Tuple[int, int, int]]:
        """(m, l, n) of every product in execution order."""
        shapes = []
        for left, right in self.multiplications():
            left_leaves, right_leaves = tree_leaves(left), tree_leaves(right)
            shapes.append((self.dims[left_leaves[0]], self.dims[right_leaves[0]], self.dims[right_leaves[-1] + 1]))

        return shapes


def order_chain(dims: Sequence[int]) -> ChainPlan:
    """Find the parenthesization with the fewest scalar multiplications.

    Matrix i of the chain is dims[i] x dims[i + 1]. Among equally cheap trees the one
    closest to left-deep program order is kept.
    """
    dims = tuple(int(dim) for dim in dims)
    if len(dims) < 2:
        raise ValueError(f"A chain needs at least two dimensions, got {dims}")

    count = len(dims) - 1
    cost = [[0] * count for _ in range(count)]
    split = [[0] * count for _ in range(count)]
    for span in range(2, count + 1):
        for i in range(count - span + 1):
            j = i + span - 1
            best = None
            # Largest split first, so ties keep the longest left operand.
            for k in range(j - 1, i - 1, -1):
                candidate = cost[i][k] + cost[k + 1][j] + dims[i] * dims[k + 1] * dims[j + 1]
                if best is None or candidate < best:
                    best = candidate
                    split[i][j] = k

            cost[i][j] = best

    def _build(i: int, j: int) -> ChainTree:
        if i == j:
            return i

        k = split[i][j]
        return (_build(i, k), _build(k + 1, j))

    plan = ChainPlan(dims, _build(0, count - 1), cost[0][count - 1])
    _LOGGER.debug(f"Chain {dims} ordered as {plan.render()} with {plan.cost} multiplications")
    return plan
