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

"""Physical planning: fusion into pipelines, blocked multiplications and materialization points."""

import itertools
import logging
import math

from dataclasses import dataclass
from dataclasses import field
from typing import Dict, List, Optional, Set, Tuple

from .buffer_pool import ResourceBudget
from .chain import ChainPlan
from .chain import default_names
from .chain import order_chain
from .exceptions import PlanError
from .expr_dag import ExprNode
from .expr_dag import Gather
from .expr_dag import Leaf
from .expr_dag import MatMul
from .expr_dag import Range
from .expr_dag import Sample
from .expr_dag import ScalarConst
from .expr_dag import walk
from .optimizer import push_gather
from .tiled_store import LayoutKind
from .tiled_store import Linearization
from .tiled_store import Shape
from .tiled_store import TileSpec

_LOGGER = logging.getLogger(__name__)

_PLAN_IDS = itertools.count(1)


def matmul_side(budget: ResourceBudget) -> int:
    """Side p of the square submatrices, three of them fit into memory with whole tiles."""
    side = budget.square_side
    return side * math.isqrt(budget.frames // 3)


def blocked_matmul_io(m: int, l: int, n: int, budget: ResourceBudget) -> Tuple[int, int]:
    """Exact block reads and writes of the blocked multiplication of an m x l by an l x n matrix.

    Every p x p panel of the result is accumulated in memory while the matching panels of
    both operands are streamed in, then written once.
    """
    p = matmul_side(budget)
    s = budget.square_side
    reads = -(-n // p) * -(-m // s) * -(-l // s) + -(-m // p) * -(-l // s) * -(-n // s)
    writes = -(-m // s) * -(-n // s)
    return reads, writes


def stored_blocks(shape: Shape, tiles: TileSpec, block_scalars: int) -> int:
    """Data blocks of a matrix of the given shape and tiling."""
    grid = -(-shape.rows // tiles.tile_rows) * -(-shape.cols // tiles.tile_cols)
    return grid * tiles.blocks_per_tile(block_scalars)


class PlanNode:
    """Base class of physical operators."""

    _OPERATOR = None

    def __init__(self, shape: Shape, children: Tuple["PlanNode", ...] = ()):
        """Initialize operator."""
        self.plan_id = next(_PLAN_IDS)
        self.shape = shape
        self.children = tuple(children)
        self.estimated_reads = 0
        self.estimated_writes = 0

    @property
    def operator(self) -> str:
        """Name of the operator."""
        return self._OPERATOR

    @property
    def estimated_blocks(self) -> int:
        """Block transfers this operator performs itself."""
        return self.estimated_reads + self.estimated_writes

    @property
    def is_stored(self) -> bool:
        """Check whether the operator leaves its result in a stored matrix."""
        return False

    def stored_tiles(self, block_scalars: int) -> Optional[TileSpec]:
        """Tiling of the stored result."""
        return None

    def details(self) -> str:
        """Operator parameters shown by explain."""
        return ""

    def __repr__(self) -> str:
        """Represent operator."""
        return f"<{self._OPERATOR} #{self.plan_id} {self.shape}>"


class Scan(PlanNode):
    """Tiles of a stored matrix."""

    _OPERATOR = "Scan"

    def __init__(self, node: Leaf):
        """Initialize scan of a leaf."""
        super().__init__(node.shape)
        self.node = node
        self.matrix = node.matrix

    @property
    def is_stored(self) -> bool:
        """Scans read stored matrices."""
        return True

    def stored_tiles(self, block_scalars: int) -> Optional[TileSpec]:
        """Tiling of the leaf."""
        return self.matrix.tiles

    def details(self) -> str:
        """Matrix name and layout."""
        return f"{self.node.name}, {self.matrix.tiles.layout_kind.name}, {self.matrix.lin.name}"


class Generate(PlanNode):
    """Range, sample or scalar produced in memory."""

    _OPERATOR = "Generate"

    def __init__(self, node: ExprNode):
        """Initialize generator."""
        super().__init__(node.shape)
        self.node = node

    def details(self) -> str:
        """Generated expression."""
        return self.node.describe()


class Pipeline(PlanNode):
    """Fused elementwise evaluation of an expression over tile-aligned inputs."""

    _OPERATOR = "Pipeline"

    def __init__(self, root: ExprNode, inputs: Dict[int, PlanNode], fused: List[ExprNode]):
        """Initialize pipeline, inputs are keyed by the id of the expression node they produce."""
        super().__init__(root.shape, tuple(inputs.values()))
        self.root = root
        self.inputs = inputs
        self.fused = fused

    @property
    def op_count(self) -> int:
        """Number of fused operations evaluated per element."""
        return len(self.fused)

    def details(self) -> str:
        """Fused operations."""
        return f"{self.op_count} fused ops: " + ", ".join(node.describe() for node in self.fused)


class GatherExec(PlanNode):
    """Selection of elements by index, reading only the tiles holding them."""

    _OPERATOR = "GatherExec"

    def __init__(self, node: Gather, data: PlanNode, index: PlanNode):
        """Initialize selection."""
        super().__init__(node.shape, (data, index))
        self.node = node

    @property
    def data(self) -> PlanNode:
        """Operator producing the selected vector."""
        return self.children[0]

    @property
    def index(self) -> PlanNode:
        """Operator producing the positions."""
        return self.children[1]

    def details(self) -> str:
        """How the data side is accessed."""
        if self.data.is_stored:
            return "random tile access"

        if isinstance(self.data, Pipeline):
            return "streamed pipeline"

        return "in memory"


class BlockedMatMul(PlanNode):
    """Product computed panel by panel with a third of the memory for each operand and the result."""

    _OPERATOR = "BlockedMatMul"

    def __init__(self, left: PlanNode, right: PlanNode, p: int):
        """Initialize multiplication."""
        if left.shape.cols != right.shape.rows:
            raise PlanError(f"Cannot multiply {left.shape} by {right.shape}")

        super().__init__(Shape(left.shape.rows, right.shape.cols), (left, right))
        self.p = p

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(m, l, n) of the product."""
        return self.children[0].shape.rows, self.children[0].shape.cols, self.children[1].shape.cols

    @property
    def is_stored(self) -> bool:
        """The product is written to a square tiled matrix."""
        return True

    def stored_tiles(self, block_scalars: int) -> Optional[TileSpec]:
        """Square tiles."""
        return TileSpec.square(block_scalars)

    def details(self) -> str:
        """Submatrix side and dimensions."""
        m, l, n = self.dims
        return f"p={self.p}, m={m}, l={l}, n={n}"


class Materialize(PlanNode):
    """Result of the child written to a temporary stored matrix."""

    _OPERATOR = "Materialize"

    def __init__(self, child: PlanNode, tiles: TileSpec, lin: Linearization = Linearization.TILE_ROW_MAJOR):
        """Initialize materialization."""
        super().__init__(child.shape, (child,))
        self.tiles = tiles
        self.lin = lin

    @property
    def child(self) -> PlanNode:
        """Operator whose result is stored."""
        return self.children[0]

    @property
    def is_stored(self) -> bool:
        """Materialized results are stored."""
        return True

    @property
    def passes_through(self) -> bool:
        """Check whether the child already wrote its result in the requested tiling."""
        return isinstance(self.child, BlockedMatMul) and self.tiles.layout_kind is LayoutKind.SQUARE

    def stored_tiles(self, block_scalars: int) -> Optional[TileSpec]:
        """Requested tiling."""
        return self.tiles

    def details(self) -> str:
        """Target tiling."""
        return f"{self.tiles.layout_kind.name}, {self.lin.name}"


class Relayout(PlanNode):
    """Conversion of a stored matrix into square tiles for multiplication."""

    _OPERATOR = "Relayout"

    def __init__(self, child: Scan, tiles: TileSpec):
        """Initialize conversion."""
        super().__init__(child.shape, (child,))
        self.tiles = tiles

    @property
    def child(self) -> Scan:
        """Converted matrix."""
        return self.children[0]

    @property
    def is_stored(self) -> bool:
        """Converted matrices are stored."""
        return True

    def stored_tiles(self, block_scalars: int) -> Optional[TileSpec]:
        """Target tiling."""
        return self.tiles

    def details(self) -> str:
        """Source and target tiling."""
        return f"{self.child.matrix.tiles.layout_kind.name} -> {self.tiles.layout_kind.name}"


def plan_nodes(root: Optional[PlanNode]) -> List[PlanNode]:
    """Distinct operators below root, children first."""
    if root is None:
        return []

    order: List[PlanNode] = []
    seen: Set[int] = set()

    def _visit(node: PlanNode) -> None:
        if node.plan_id in seen:
            return

        seen.add(node.plan_id)
        for child in node.children:
            _visit(child)

        order.append(node)

    _visit(root)
    return order


@dataclass
class IoEstimate:
    """Estimated block transfers per operator and in total."""

    per_node: Dict[int, int] = field(default_factory=dict)
    reads: int = 0
    writes: int = 0

    @property
    def total(self) -> int:
        """All estimated block transfers."""
        return self.reads + self.writes


@dataclass
class PhysicalPlan:
    """Operator tree of one evaluation together with the DAG it was derived from."""

    root: Optional[PlanNode]
    expr: Optional[ExprNode]
    budget: ResourceBudget
    optimized: bool = True
    chains: List[Tuple[ChainPlan, List[str]]] = field(default_factory=list)

    def nodes(self) -> List[PlanNode]:
        """Operators, children first."""
        return plan_nodes(self.root)

    @property
    def estimated_blocks(self) -> int:
        """Estimated block transfers of the whole plan."""
        return sum(node.estimated_blocks for node in self.nodes())


def _stored_child_blocks(node: PlanNode, block_scalars: int) -> int:
    """Data blocks of a stored operator result."""
    if isinstance(node, Scan):
        return node.matrix.n_blocks

    return stored_blocks(node.shape, node.stored_tiles(block_scalars), block_scalars)


def _estimate_node(node: PlanNode, budget: ResourceBudget) -> Tuple[int, int]:
    """Reads and writes an operator performs itself."""
    block_scalars = budget.block_scalars
    if isinstance(node, Pipeline):
        reads = sum(_stored_child_blocks(child, block_scalars) for child in node.inputs.values() if child.is_stored)
        return reads, 0

    if isinstance(node, GatherExec):
        if node.data.is_stored:
            k = node.index.shape.rows
            return min(k, _stored_child_blocks(node.data, block_scalars)), 0

        return 0, 0

    if isinstance(node, BlockedMatMul):
        return blocked_matmul_io(*node.dims, budget)

    if isinstance(node, Materialize):
        if node.passes_through:
            return 0, 0

        writes = stored_blocks(node.shape, node.tiles, block_scalars)
        reads = _stored_child_blocks(node.child, block_scalars) if node.child.is_stored else 0
        return reads, writes

    if isinstance(node, Relayout):
        return node.child.matrix.n_blocks, stored_blocks(node.shape, node.tiles, block_scalars)

    return 0, 0


def estimate_io(plan: PhysicalPlan, budget: Optional[ResourceBudget] = None) -> IoEstimate:
    """Estimate data block transfers of every operator, headers are not counted."""
    budget = budget or plan.budget
    estimate = IoEstimate()
    for node in plan.nodes():
        reads, writes = _estimate_node(node, budget)
        node.estimated_reads = reads
        node.estimated_writes = writes
        estimate.per_node[node.plan_id] = reads + writes
        estimate.reads += reads
        estimate.writes += writes

    return estimate


class Planner:
    """Turns an expression DAG into a physical plan under a resource budget."""

    def __init__(self, budget: ResourceBudget, optimize: bool = True):
        """Initialize planner."""
        self.budget = budget
        self.optimize = optimize
        self.p = matmul_side(budget)
        side = budget.square_side
        if 3 * (self.p // side) ** 2 > budget.frames:
            raise PlanError(f"Submatrices of side {self.p} do not fit into {budget.frames} frames")

    def plan(self, root: ExprNode) -> PhysicalPlan:
        """Plan evaluation of root."""
        expr = push_gather(root) if self.optimize else root
        self._consumers = self._consumer_map(expr)
        self._materialize_points = self._find_materialization_points(expr)
        self._memo: Dict[int, PlanNode] = {}
        self._chains: List[Tuple[ChainPlan, List[str]]] = []

        plan_root = self._plan(expr)
        physical_plan = PhysicalPlan(
            root=plan_root, expr=expr, budget=self.budget, optimized=self.optimize, chains=self._chains
        )
        estimate = estimate_io(physical_plan, self.budget)
        _LOGGER.debug(
            f"Planned {len(physical_plan.nodes())} operators, {len(self._materialize_points)} materialization "
            f"point(s), estimated {estimate.total} blocks"
        )
        return physical_plan

    @staticmethod
    def _consumer_map(root: ExprNode) -> Dict[int, List[ExprNode]]:
        """Distinct consumers of every node."""
        consumers: Dict[int, List[ExprNode]] = {}
        for node in walk([root]):
            consumers.setdefault(node.node_id, [])
            for child in {child.node_id: child for child in node.children}.values():
                consumers.setdefault(child.node_id, []).append(node)

        return consumers

    def _find_materialization_points(self, root: ExprNode) -> Set[int]:
        """Fusible nodes read by more than one operator are computed once and stored."""
        points: Set[int] = set()
        for node in reversed(walk([root])):
            if node is root or not node.fusible or node.is_scalar:
                continue

            consumers = self._consumers[node.node_id]
            if len(consumers) > 1 and any(
                not consumer.fusible or consumer.node_id in points for consumer in consumers
            ):
                points.add(node.node_id)

        return points

    def _plan(self, node: ExprNode) -> PlanNode:
        """Operator producing the value of node."""
        planned = self._memo.get(node.node_id)
        if planned is not None:
            return planned

        if isinstance(node, Leaf):
            planned = Scan(node)
        elif isinstance(node, (Range, Sample, ScalarConst)):
            planned = Generate(node)
        elif isinstance(node, Gather):
            planned = GatherExec(node, self._plan(node.child), self._plan(node.index))
        elif isinstance(node, MatMul):
            planned = self._plan_chain(node)
        elif node.fusible:
            planned = self._plan_pipeline(node)
        else:
            raise PlanError(f"Cannot plan node {node!r}")

        if node.node_id in self._materialize_points:
            planned = Materialize(planned, TileSpec.default_for(node.shape, self.budget.block_scalars))
            _LOGGER.debug(f"Materializing shared {node!r}")

        self._memo[node.node_id] = planned
        return planned

    def _plan_pipeline(self, root: ExprNode) -> Pipeline:
        """Fuse the maximal elementwise region below root."""
        inputs: Dict[int, PlanNode] = {}
        fused: List[ExprNode] = []
        seen: Set[int] = set()

        def _collect(node: ExprNode) -> None:
            seen.add(node.node_id)
            for child in node.children:
                if child.node_id in seen or child.node_id in inputs:
                    continue

                if isinstance(child, ScalarConst):
                    seen.add(child.node_id)
                elif child.fusible and child.node_id not in self._materialize_points:
                    _collect(child)
                else:
                    inputs[child.node_id] = self._plan(child)

            fused.append(node)

        _collect(root)
        for planned_input in inputs.values():
            if planned_input.shape != root.shape:
                raise PlanError(f"Pipeline input of {planned_input.shape} does not match output {root.shape}")

        return Pipeline(root, inputs, fused)

    def _plan_chain(self, root: MatMul) -> PlanNode:
        """Plan a chain of multiplications, one active product at a time."""
        factors: List[ExprNode] = []

        def _flatten(node: ExprNode):
            if isinstance(node, MatMul) and (node is root or len(self._consumers[node.node_id]) == 1):
                return (_flatten(node.children[0]), _flatten(node.children[1]))

            factors.append(node)
            return len(factors) - 1

        program_tree = _flatten(root)
        dims = [factor.shape.rows for factor in factors] + [factors[-1].shape.cols]
        chain = order_chain(dims) if self.optimize else ChainPlan.from_tree(dims, program_tree)

        leaf_names = [factor.name for factor in factors if isinstance(factor, Leaf)]
        if len(leaf_names) == len(factors) and len(set(leaf_names)) == len(leaf_names):
            names = leaf_names
        else:
            names = default_names(len(factors))

        self._chains.append((chain, names))
        _LOGGER.info(f"Multiplying chain of {len(factors)} matrices as {chain.render(names)}, {chain.cost} products")

        inputs = [self._plan_square_input(factor) for factor in factors]

        def _build(tree, is_root: bool) -> PlanNode:
            if isinstance(tree, int):
                return inputs[tree]

            product = BlockedMatMul(_build(tree[0], False), _build(tree[1], False), self.p)
            if is_root:
                return product

            return Materialize(product, TileSpec.square(self.budget.block_scalars))

        return _build(chain.tree, True)

    def _plan_square_input(self, factor: ExprNode) -> PlanNode:
        """Operator delivering a multiplication operand in square tiles."""
        block_scalars = self.budget.block_scalars
        if isinstance(factor, Leaf):
            scan = self._plan(factor)
            if factor.matrix.tiles.layout_kind is LayoutKind.SQUARE:
                return scan

            return Relayout(scan, TileSpec.square(block_scalars))

        planned = self._plan(factor)
        if isinstance(planned, BlockedMatMul):
            return planned

        if isinstance(planned, Materialize) and planned.tiles.layout_kind is LayoutKind.SQUARE:
            return planned

        return Materialize(planned, TileSpec.square(block_scalars))


def plan(dag: ExprNode, budget: ResourceBudget, optimize: bool = True) -> PhysicalPlan:
    """Plan evaluation of an expression DAG."""
    return Planner(budget, optimize=optimize).plan(dag)
