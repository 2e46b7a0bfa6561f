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

"""This file contains basic class for all rewrite rules applied by the optimizer."""

from typing import Callable

from .expr_dag import ExprNode


class RewriteRule:
    """This class contain base functions that need to be created for a rewrite rule."""

    _RULE_NAME = None

    def _aggregate_info(self):
        """Aggregate info required by the rewriter for this rule."""
        return {"match_method": self._matches, "rewrite_method": self._rewrite}

    def _matches(self, node: ExprNode) -> bool:
        """Check whether the rule applies to node.

        @param node: It's a node whose children are already rewritten.
        """
        raise NotImplementedError

    def _rewrite(self, node: ExprNode, intern: Callable[[ExprNode], ExprNode]) -> ExprNode:
        """Build the replacement of a matching node.

        @param node: It's a node accepted by _matches.
        @param intern: It's the hash-consing function new nodes are passed through.
        """
        raise NotImplementedError
