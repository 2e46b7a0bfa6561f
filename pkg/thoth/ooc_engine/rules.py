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

"""Rules pushing selections (Gather) down towards stored data.

A gather is moved below every pointwise operator, so only the selected elements are ever
computed. Matrix products are never crossed.
"""

import logging

from typing import Callable

from .expr_dag import Compare
from .expr_dag import ElemBinary
from .expr_dag import ElemUnary
from .expr_dag import ExprNode
from .expr_dag import Gather
from .expr_dag import MaskCombine
from .expr_dag import MaskNot
from .expr_dag import Subst
from .rule_base import RewriteRule

_LOGGER = logging.getLogger(__name__)

Intern = Callable[[ExprNode], ExprNode]


def _gather(node: ExprNode, index: ExprNode, intern: Intern) -> ExprNode:
    """Select from node unless it is a broadcast scalar."""
    if node.is_scalar:
        return node

    return intern(Gather(node, index))


class GatherThroughUnary(RewriteRule):
    """Gather(op(x), i) -> op(Gather(x, i))."""

    _RULE_NAME = "gather_through_unary"

    def _matches(self, node: ExprNode) -> bool:
        """Match a gather over sqrt, square or negation."""
        return isinstance(node, Gather) and isinstance(node.child, ElemUnary)

    def _rewrite(self, node: ExprNode, intern: Intern) -> ExprNode:
        """Push the gather below the unary operation."""
        unary = node.child
        return intern(ElemUnary(unary.op, _gather(unary.children[0], node.index, intern)))


class GatherThroughBinary(RewriteRule):
    """Gather(x op y, i) -> Gather(x, i) op Gather(y, i), scalars stay as they are."""

    _RULE_NAME = "gather_through_binary"

    def _matches(self, node: ExprNode) -> bool:
        """Match a gather over elementwise arithmetic."""
        return isinstance(node, Gather) and isinstance(node.child, ElemBinary)

    def _rewrite(self, node: ExprNode, intern: Intern) -> ExprNode:
        """Push the gather into both operands."""
        binary = node.child
        left, right = binary.children
        return intern(ElemBinary(binary.op, _gather(left, node.index, intern), _gather(right, node.index, intern)))


class GatherThroughCompare(RewriteRule):
    """Gather(x > c, i) -> Gather(x, i) > c."""

    _RULE_NAME = "gather_through_compare"

    def _matches(self, node: ExprNode) -> bool:
        """Match a gather over a comparison."""
        return isinstance(node, Gather) and isinstance(node.child, Compare)

    def _rewrite(self, node: ExprNode, intern: Intern) -> ExprNode:
        """Push the gather below the comparison."""
        compare = node.child
        return intern(Compare(compare.op, _gather(compare.children[0], node.index, intern), compare.scalar))


class GatherThroughMask(RewriteRule):
    """Gather over &, | and ! of masks is pushed into every operand."""

    _RULE_NAME = "gather_through_mask"

    def _matches(self, node: ExprNode) -> bool:
        """Match a gather over a mask combination."""
        return isinstance(node, Gather) and isinstance(node.child, (MaskCombine, MaskNot))

    def _rewrite(self, node: ExprNode, intern: Intern) -> ExprNode:
        """Push the gather below the mask operation."""
        mask = node.child
        return intern(mask.with_children([_gather(child, node.index, intern) for child in mask.children]))


class GatherThroughSubst(RewriteRule):
    """Gather(Subst(x, mask, v), i) -> Subst(Gather(x, i), Gather(mask, i), v).

    Valid because the mask is a pointwise predicate over the same index space as x.
    """

    _RULE_NAME = "gather_through_subst"

    def _matches(self, node: ExprNode) -> bool:
        """Match a gather over a masked assignment."""
        return isinstance(node, Gather) and isinstance(node.child, Subst)

    def _rewrite(self, node: ExprNode, intern: Intern) -> ExprNode:
        """Push the gather into the assigned vector and into its mask."""
        subst = node.child
        child, mask = subst.children
        return intern(Subst(_gather(child, node.index, intern), _gather(mask, node.index, intern), subst.value))


class GatherOfGather(RewriteRule):
    """Gather(Gather(x, i), j) -> Gather(x, Gather(i, j))."""

    _RULE_NAME = "gather_of_gather"

    def _matches(self, node: ExprNode) -> bool:
        """Match two selections on top of each other."""
        return isinstance(node, Gather) and isinstance(node.child, Gather)

    def _rewrite(self, node: ExprNode, intern: Intern) -> ExprNode:
        """Compose the index vectors, so only one selection touches x."""
        inner = node.child
        return intern(Gather(inner.child, intern(Gather(inner.index, node.index))))


GATHER_PUSHDOWN_RULES = (
    GatherThroughUnary(),
    GatherThroughBinary(),
    GatherThroughCompare(),
    GatherThroughMask(),
    GatherThroughSubst(),
    GatherOfGather(),
)
