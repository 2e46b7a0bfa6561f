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

"""Fixpoint rewriting of expression DAGs."""

import logging

from typing import Any, Dict, Iterable, Optional, Tuple

from .expr_dag import ExprNode
from .rule_base import RewriteRule
from .rules import GATHER_PUSHDOWN_RULES

_LOGGER = logging.getLogger(__name__)


class Rewriter:
    """Applies rewrite rules bottom-up until no rule matches anywhere."""

    def __init__(self, rules: Optional[Iterable[RewriteRule]] = None):
        """Initialize rewriter with its rule context."""
        rules = GATHER_PUSHDOWN_RULES if rules is None else rules
        self.rule_context = {rule._RULE_NAME: rule._aggregate_info() for rule in rules}
        self.applied: Dict[str, int] = {name: 0 for name in self.rule_context}
        self._memo: Dict[int, ExprNode] = {}
        self._interned: Dict[Tuple[Any, ...], ExprNode] = {}

    def intern(self, node: ExprNode) -> ExprNode:
        """Hash-cons a node whose children are already interned."""
        return self._interned.setdefault(node.structural_key(), node)

    def rewrite(self, root: ExprNode) -> ExprNode:
        """Rewrite the DAG below root to its fixpoint."""
        result = self._rewrite_node(root)
        applied = {name: count for name, count in self.applied.items() if count}
        _LOGGER.debug(f"Rewrite rules applied: {applied}")
        return result

    def _rewrite_node(self, node: ExprNode) -> ExprNode:
        """Rewrite children first, then the node itself."""
        cached = self._memo.get(node.node_id)
        if cached is not None:
            return cached

        children = [self._rewrite_node(child) for child in node.children]
        if any(new is not old for new, old in zip(children, node.children)):
            candidate = self.intern(node.with_children(children))
        else:
            candidate = self.intern(node)

        result = candidate
        for rule_name, rule_methods in self.rule_context.items():
            if rule_methods["match_method"](candidate):
                self.applied[rule_name] += 1
                result = self._rewrite_node(rule_methods["rewrite_method"](candidate, self.intern))
                break

        self._memo[node.node_id] = result
        self._memo[candidate.node_id] = result
        return result


def push_gather(root: ExprNode) -> ExprNode:
    """Push every selection below pointwise operators, onto stored or generated vectors.

    Structurally equal nodes are shared in the result, so a selection of the same vector
    by the same index appears exactly once.
    """
    return Rewriter().rewrite(root)
