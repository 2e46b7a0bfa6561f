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

"""Tests of gather pushdown and chain ordering."""

import numpy as np
import pytest

from thoth.ooc_engine.chain import ChainPlan
from thoth.ooc_engine.chain import order_chain
from thoth.ooc_engine.chain import tree_cost
from thoth.ooc_engine.eager import evaluate_eager
from thoth.ooc_engine.expr_dag import ElemBinary
from thoth.ooc_engine.expr_dag import Gather
from thoth.ooc_engine.expr_dag import Leaf
from thoth.ooc_engine.expr_dag import MatMul
from thoth.ooc_engine.expr_dag import ScalarConst
from thoth.ooc_engine.expr_dag import Subst
from thoth.ooc_engine.expr_dag import build
from thoth.ooc_engine.expr_dag import dump
from thoth.ooc_engine.expr_dag import walk
from thoth.ooc_engine.optimizer import Rewriter
from thoth.ooc_engine.optimizer import push_gather


def _gathers(root):
    return [node for node in walk([root]) if isinstance(node, Gather)]


def _clamp_program(a, index):
    """b <- a^2; b[b > 100] <- 100; b[index]."""
    b = build("square", a)
    b = build("subst", b, build("gt", b, 100), 100)
    return build("gather", b, index)


def _trees(i, j):
    """Every parenthesization of matrices i..j."""
    if i == j:
        yield i
        return

    for k in range(i, j):
        for left in _trees(i, k):
            for right in _trees(k + 1, j):
                yield (left, right)


class TestGatherPushdown:
    """Selections move below pointwise operators."""

    @pytest.fixture
    def a(self, small_budget, store_matrix):
        """Stored vector (5, 20, 3, 11, 30)."""
        return Leaf(store_matrix("a", [5.0, 20.0, 3.0, 11.0, 30.0], small_budget))

    def test_pushed_onto_leaf(self, a):
        """The selection of a masked assignment ends up on the stored vector, once."""
        optimized = push_gather(_clamp_program(a, build("range", 1, 2)))

        gathers = _gathers(optimized)
        assert len(gathers) == 1
        assert gathers[0].child is a
        assert isinstance(optimized, Subst)

    def test_pushdown_keeps_values(self, a):
        """Square then clamp at 100 on the first two elements."""
        root = _clamp_program(a, build("range", 1, 2))

        expected = np.array([[25.0], [100.0]])
        np.testing.assert_array_equal(evaluate_eager(root), expected)
        np.testing.assert_array_equal(evaluate_eager(push_gather(root)), expected)

    def test_gather_on_leaf_is_fixpoint(self, a):
        """Nothing to rewrite when the selection is already on a leaf."""
        root = build("gather", a, build("range", 1, 3))
        rewriter = Rewriter()

        assert rewriter.rewrite(root) is root
        assert not any(rewriter.applied.values())

    def test_scalars_are_not_gathered(self, a):
        """Broadcast scalars stay scalars."""
        optimized = push_gather(build("gather", build("add", a, 1), build("range", 2, 4)))

        assert isinstance(optimized, ElemBinary)
        left, right = optimized.children
        assert isinstance(left, Gather) and left.child is a
        assert isinstance(right, ScalarConst)

    def test_gather_of_gather(self, a):
        """Two selections compose into one selection of the leaf."""
        root = build("gather", build("gather", a, build("range", 5, 2)), build("range", 2, 3))
        rewriter = Rewriter()
        optimized = rewriter.rewrite(root)

        assert isinstance(optimized, Gather)
        assert optimized.child is a
        assert isinstance(optimized.index, Gather)
        assert rewriter.applied["gather_of_gather"] == 1
        np.testing.assert_array_equal(evaluate_eager(optimized), np.array([[11.0], [3.0]]))

    def test_not_through_matmul(self, small_budget, store_matrix):
        """Selections stop at matrix products."""
        m = Leaf(store_matrix("m", np.ones((6, 4)), small_budget))
        v = Leaf(store_matrix("v", np.ones(4), small_budget))
        root = build("gather", build("sqrt", build("matmul", m, v)), build("range", 1, 2))

        optimized = push_gather(root)

        gathers = _gathers(optimized)
        assert len(gathers) == 1
        assert isinstance(gathers[0].child, MatMul)

    def test_idempotent(self, a):
        """Rewriting an optimized DAG again changes nothing."""
        once = push_gather(_clamp_program(a, build("sample", 5, 3, 9)))
        assert dump([push_gather(once)]) == dump([once])

    def test_rule_counts(self, a):
        """Every rule application is counted by name."""
        rewriter = Rewriter()
        rewriter.rewrite(_clamp_program(a, build("range", 1, 2)))

        assert rewriter.applied["gather_through_subst"] == 1
        assert rewriter.applied["gather_through_compare"] == 1
        assert rewriter.applied["gather_through_unary"] >= 1


class TestOrderChain:
    """Dynamic programming over parenthesizations."""

    def test_reorders_skewed_chain(self):
        """A(BC) is a hundred times cheaper than program order."""
        chain = order_chain((1000, 10, 1000, 10))

        assert chain.render() == "A(BC)"
        assert chain.cost == 200000
        assert ChainPlan.in_order((1000, 10, 1000, 10)).cost == 20000000
        assert chain.product_shapes() == [(10, 1000, 10), (1000, 10, 10)]

    def test_two_orders_of_three(self):
        """Costs of both trees of a chain of three."""
        n1, n2, n3, n4 = 7, 3, 11, 5
        assert ChainPlan.in_order((n1, n2, n3, n4)).cost == n1 * n2 * n3 + n1 * n3 * n4
        assert tree_cost((n1, n2, n3, n4), (0, (1, 2))) == n2 * n3 * n4 + n1 * n2 * n4

    def test_ties_prefer_left_deep(self):
        """Equal costs keep program order."""
        assert order_chain((10, 10, 10, 10)).render() == "(AB)C"
        assert order_chain((4, 4, 4, 4, 4)).tree == ((((0, 1), 2), 3))

    def test_single_matrix(self):
        """One matrix needs no multiplication."""
        chain = order_chain((5, 7))

        assert chain.tree == 0
        assert chain.cost == 0
        assert chain.render() == "A"
        assert chain.multiplications() == []

    def test_too_short(self):
        """A chain needs at least one matrix."""
        with pytest.raises(ValueError):
            order_chain((5,))

    def test_brute_force(self):
        """Optimal cost on random chains equals the minimum over all parenthesizations."""
        rng = np.random.default_rng(2020)
        for _ in range(200):
            count = int(rng.integers(1, 8))
            dims = tuple(int(dim) for dim in rng.integers(1, 51, size=count + 1))

            best = min(tree_cost(dims, tree) for tree in _trees(0, count - 1))
            chain = order_chain(dims)

            assert chain.cost == best
            assert tree_cost(dims, chain.tree) == best

    def test_render_names(self):
        """Explicit names replace the default letters."""
        chain = order_chain((1000, 10, 1000, 10))
        assert chain.render(["X", "Y", "Z"]) == "X(YZ)"
