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

"""Tests of deferred expression DAGs."""

import numpy as np
import pytest

from thoth.ooc_engine.buffer_pool import BufferPool
from thoth.ooc_engine.exceptions import ShapeMismatchError
from thoth.ooc_engine.exceptions import UndefinedNameError
from thoth.ooc_engine.exceptions import UnsupportedAssignmentError
from thoth.ooc_engine.expr_dag import Environment
from thoth.ooc_engine.expr_dag import Leaf
from thoth.ooc_engine.expr_dag import build
from thoth.ooc_engine.expr_dag import dump
from thoth.ooc_engine.expr_dag import infer_shape
from thoth.ooc_engine.expr_dag import intermediate_count
from thoth.ooc_engine.expr_dag import is_mask
from thoth.ooc_engine.expr_dag import reuse_counts
from thoth.ooc_engine.expr_dag import sample_indices
from thoth.ooc_engine.expr_dag import walk
from thoth.ooc_engine.tiled_store import Shape
from thoth.ooc_engine.tiled_store import StoredMatrix


@pytest.fixture
def vectors(small_budget, store_matrix):
    """Leaves over two stored vectors of length 50 and a 6x4 matrix."""
    rng = np.random.default_rng(0)
    x = Leaf(store_matrix("x", rng.random(50), small_budget))
    y = Leaf(store_matrix("y", rng.random(50), small_budget))
    a = Leaf(store_matrix("a", rng.random((6, 4)), small_budget))
    return x, y, a


class TestShapes:
    """Shape inference when nodes are built."""

    def test_elementwise(self, vectors):
        """Elementwise operations keep the shape, scalars broadcast."""
        x, y, _ = vectors
        node = build("add", build("sqrt", x), build("mul", 2, y))
        assert node.shape == Shape(50, 1)
        assert not node.is_scalar

    def test_scalar_folding_shape(self):
        """Operations over scalars only are scalars."""
        node = build("add", 1, 2)
        assert node.is_scalar

    def test_mismatch(self, vectors):
        """Arrays of different shapes cannot be combined."""
        x, _, a = vectors
        with pytest.raises(ShapeMismatchError):
            build("add", x, a)

    def test_matmul(self, vectors, small_budget, store_matrix):
        """Inner dimensions must agree."""
        _, _, a = vectors
        b = Leaf(store_matrix("b", np.ones((4, 3)), small_budget))
        assert build("matmul", a, b).shape == Shape(6, 3)

        with pytest.raises(ShapeMismatchError):
            build("matmul", b, a)

    def test_gather(self, vectors):
        """A selection has the shape of its index."""
        x, _, a = vectors
        assert build("gather", x, build("range", 3, 9)).shape == Shape(7, 1)
        assert build("gather", x, build("range", 9, 3)).shape == Shape(7, 1)
        assert build("gather", x, build("sample", 50, 5, 1)).shape == Shape(5, 1)

        with pytest.raises(ShapeMismatchError):
            build("gather", a, build("range", 1, 2))

    def test_sample_larger_than_population(self):
        """Sampling without replacement cannot draw more than n positions."""
        with pytest.raises(ShapeMismatchError):
            build("sample", 5, 6, 1)

    def test_masks(self, vectors):
        """Masks combine comparisons only, substitution needs a mask."""
        x, y, _ = vectors
        mask = build("and", build("gt", x, 0.5), build("not", build("lt", y, 0.1)))
        assert is_mask(mask)
        assert build("subst", x, mask, 0).shape == x.shape

        with pytest.raises(UnsupportedAssignmentError):
            build("and", x, build("gt", y, 0.5))

        with pytest.raises(UnsupportedAssignmentError):
            build("subst", x, y, 0)

    def test_unknown_operation(self):
        """Unknown operations are rejected."""
        with pytest.raises(ValueError):
            build("modulo", 1, 2)


class TestSample:
    """Seeded sampling without replacement."""

    def test_distinct_in_range(self):
        """Positions are distinct and 1-based."""
        drawn = sample_indices(1000, 100, 42)
        assert len(set(drawn.tolist())) == 100
        assert drawn.min() >= 1
        assert drawn.max() <= 1000

    def test_deterministic(self):
        """The same seed draws the same positions, another seed does not."""
        np.testing.assert_array_equal(sample_indices(10 ** 6, 50, 7), sample_indices(10 ** 6, 50, 7))
        assert not np.array_equal(sample_indices(10 ** 6, 50, 7), sample_indices(10 ** 6, 50, 8))

    def test_full_permutation(self):
        """Drawing all n positions is a permutation."""
        assert sorted(sample_indices(20, 20, 3).tolist()) == list(range(1, 21))

    def test_sample_values(self):
        """Sample nodes draw the same positions as the generator."""
        node = build("sample", 100, 10, 5)
        np.testing.assert_array_equal(node.values(), sample_indices(100, 10, 5).astype(np.float64))


class TestDagStructure:
    """Walking, dumping and counting DAGs."""

    def test_walk_children_first(self, vectors):
        """Shared nodes are visited once and before their consumers."""
        x, y, _ = vectors
        shared = build("sqrt", x)
        root = build("add", shared, build("mul", shared, y))

        order = walk([root])
        positions = {node.node_id: position for position, node in enumerate(order)}

        assert len(order) == len({node.node_id for node in order})
        for node in order:
            for child in node.children:
                assert positions[child.node_id] < positions[node.node_id]

        assert reuse_counts([root])[shared.node_id] == 2

    def test_intermediate_count(self, vectors):
        """Operation nodes below the root count, leaves and constants do not."""
        x, y, _ = vectors
        root = build("add", build("sqrt", x), build("mul", 2, y))
        assert intermediate_count(root) == 2

    def test_dump(self, vectors):
        """Dumps number nodes locally, children first."""
        x, _, _ = vectors
        root = build("gather", build("sqrt", x), build("range", 1, 3))

        assert dump([root]).splitlines() == [
            "%0 Leaf(x) [] 50x1",
            "%1 ElemUnary(sqrt) [%0] 50x1",
            "%2 Range(1, 3) [] 3x1",
            "%3 Gather [%1, %2] 3x1",
        ]

    def test_building_performs_no_io(self, vectors, small_budget, store_matrix, random_program, monkeypatch):
        """Building DAGs over stored leaves neither touches blocks nor computes elements."""
        x, y, a = vectors
        b = Leaf(store_matrix("b", np.ones((4, 50)), small_budget))

        def _no_io(*args, **kwargs):
            raise AssertionError("building a DAG must not access the store")

        for name in ("get_block", "count_elements"):
            monkeypatch.setattr(BufferPool, name, _no_io)
        for name in ("_read_block", "_write_block"):
            monkeypatch.setattr(StoredMatrix, name, _no_io)

        rng = np.random.default_rng(4)
        roots = [random_program(rng, [x, y]) for _ in range(50)]
        product = build("matmul", build("matmul", a, b), build("sqrt", x))
        roots.append(build("gather", build("add", product, 1), build("range", 6, 1)))
        roots.append(build("subst", product, build("gt", product, 0.5), 0))

        for node in walk(roots):
            assert infer_shape(node) == node.shape


class TestEnvironment:
    """Name bindings."""

    def test_assign_is_pure(self, vectors):
        """Rebinding a name does not change nodes that captured the old binding."""
        x, y, _ = vectors
        environment = Environment().assign("x", x)
        z = build("add", environment.lookup("x"), 1)
        rebound = environment.assign("x", y)

        assert z.children[0] is x
        assert rebound.lookup("x") is y
        assert environment.lookup("x") is x

    def test_dependencies(self, vectors):
        """Bindings know the nodes they reference."""
        x, y, _ = vectors
        node = build("add", x, y)
        environment = Environment().assign("z", node)

        assert environment.dependencies("z") == {x.node_id, y.node_id, node.node_id}
        assert "z" in environment
        assert environment.names == ["z"]

    def test_undefined(self):
        """Unknown names are reported."""
        with pytest.raises(UndefinedNameError):
            Environment().lookup("nope")
