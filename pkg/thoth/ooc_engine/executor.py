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

"""Evaluation of physical plans against tiled storage under the memory budget."""

import itertools
import logging
import shutil
import tempfile

from contextlib import ExitStack
from dataclasses import asdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .buffer_pool import BufferPool
from .buffer_pool import IoCounters
from .buffer_pool import ResourceBudget
from .chain import ChainPlan
from .exceptions import BudgetError
from .exceptions import IndexOutOfRangeError
from .exceptions import PlanError
from .exceptions import ShapeMismatchError
from .expr_dag import ExprNode
from .expr_dag import Range
from .expr_dag import Sample
from .expr_dag import ScalarConst
from .planner import BlockedMatMul
from .planner import GatherExec
from .planner import Generate
from .planner import Materialize
from .planner import PhysicalPlan
from .planner import Pipeline
from .planner import PlanNode
from .planner import Relayout
from .planner import Scan
from .planner import matmul_side
from .planner import plan_nodes
from .tiled_store import LayoutKind
from .tiled_store import MATRIX_SUFFIX
from .tiled_store import Linearization
from .tiled_store import StoredMatrix
from .tiled_store import TileSpec
from .tiled_store import create_matrix
from .tiled_store import delete_matrix
from .tiled_store import import_dense
from .tiled_store import load_dense
from .tiled_store import pinned_tile
from .tiled_store import read_region
from .tiled_store import read_tile
from .tiled_store import relayout
from .tiled_store import Shape
from .tiled_store import tile_address

_LOGGER = logging.getLogger(__name__)

Bounds = Tuple[int, int, int, int]
Value = Union[StoredMatrix, np.ndarray, float]


@dataclass
class IoReport:
    """Per-run I/O report."""

    blocks_read: int = 0
    blocks_written: int = 0
    elements_computed: int = 0
    peak_pinned_blocks: int = 0
    conversion_blocks: int = 0

    @classmethod
    def from_counters(cls, counters: IoCounters, conversion_blocks: int = 0) -> "IoReport":
        """Build report from buffer pool counters."""
        return cls(conversion_blocks=conversion_blocks, **counters.to_dict())

    @property
    def total_blocks(self) -> int:
        """All data block transfers, conversions included."""
        return self.blocks_read + self.blocks_written

    def to_dict(self) -> Dict[str, int]:
        """Convert report to a plain dictionary."""
        return asdict(self)


@dataclass(frozen=True)
class MatmulSchedule:
    """Blocked multiplication schedule: i over result rows, j over result columns, k over the inner dimension."""

    p: int
    tile_side: int

    @classmethod
    def for_budget(cls, budget: ResourceBudget) -> "MatmulSchedule":
        """Largest schedule whose three p x p submatrices fit into memory."""
        return cls(matmul_side(budget), budget.square_side)

    @property
    def panel_tiles(self) -> int:
        """Tiles along one side of a submatrix."""
        return self.p // self.tile_side

    def validate(self, budget: ResourceBudget) -> None:
        """Check the submatrices for operands and result fit the pool."""
        if self.p % self.tile_side or self.panel_tiles < 1:
            raise BudgetError(f"Submatrix side {self.p} is not a multiple of the tile side {self.tile_side}")

        if 3 * self.panel_tiles ** 2 > budget.frames:
            raise BudgetError(f"Three {self.p}x{self.p} submatrices do not fit into {budget.frames} frames")


def _check_square(matrix: StoredMatrix, side: int) -> None:
    """Multiplication operands must be stored in square tiles of the schedule."""
    if matrix.tiles.layout_kind is not LayoutKind.SQUARE or matrix.tiles.tile_rows != side:
        raise PlanError(f"{matrix.path} is not stored in {side}x{side} tiles")


def exec_matmul_blocked(
    left: StoredMatrix, right: StoredMatrix, out: StoredMatrix, schedule: MatmulSchedule, pool: BufferPool
) -> StoredMatrix:
    """Compute out = left x right one p x p result submatrix at a time.

    The pool is emptied first; for every result submatrix its frames stay pinned while the
    operand submatrices of each inner step are read, accumulated and released, and the
    finished submatrix is written right away.
    When both operands are the same matrix, right operand blocks are read into replica frames.
    """
    if left.shape.cols != right.shape.rows or out.shape.rows != left.shape.rows or out.shape.cols != right.shape.cols:
        raise ShapeMismatchError(f"Cannot multiply {left.shape} by {right.shape} into {out.shape}")

    schedule.validate(pool.budget)
    side = schedule.tile_side
    for matrix in (left, right, out):
        _check_square(matrix, side)

    pool.evict_all()
    panel = schedule.panel_tiles
    for i0 in range(0, out.grid_rows, panel):
        i_tiles = range(i0, min(i0 + panel, out.grid_rows))
        for j0 in range(0, out.grid_cols, panel):
            j_tiles = range(j0, min(j0 + panel, out.grid_cols))
            result_frames = {}
            try:
                for ti in i_tiles:
                    for tj in j_tiles:
                        result_frames[ti, tj] = pool.get_block(out, tile_address(out, ti, tj), mode="write")

                for k0 in range(0, left.grid_cols, panel):
                    k_tiles = range(k0, min(k0 + panel, left.grid_cols))
                    operand_frames = []
                    try:
                        left_tiles = {}
                        for ti in i_tiles:
                            for tk in k_tiles:
                                frame = pool.get_block(left, tile_address(left, ti, tk))
                                operand_frames.append(frame)
                                left_tiles[ti, tk] = frame.data[: side * side].reshape(side, side)

                        right_tiles = {}
                        replica = 1 if right.key == left.key else 0
                        for tk in k_tiles:
                            for tj in j_tiles:
                                frame = pool.get_block(right, tile_address(right, tk, tj), replica=replica)
                                operand_frames.append(frame)
                                right_tiles[tk, tj] = frame.data[: side * side].reshape(side, side)

                        for (ti, tj), frame in result_frames.items():
                            accumulator = frame.data[: side * side].reshape(side, side)
                            for tk in k_tiles:
                                accumulator += left_tiles[ti, tk] @ right_tiles[tk, tj]
                    finally:
                        for frame in operand_frames:
                            pool.unpin(frame, discard=True)
            finally:
                for frame in result_frames.values():
                    pool.unpin(frame, dirty=True, discard=True)

    pool.count_elements(left.shape.rows * left.shape.cols * right.shape.cols)
    _LOGGER.debug(f"Multiplied {left.shape} by {right.shape} with p={schedule.p}")
    return out


def _is_pinnable(value: Value, tiles: TileSpec) -> bool:
    """Check whether a pipeline input tile maps onto a single block of the output tile grid."""
    return isinstance(value, StoredMatrix) and value.tiles == tiles and value.blocks_per_tile == 1


def _check_positions(values: np.ndarray, length: int) -> np.ndarray:
    """Turn 1-based (possibly fractional) index values into 0-based positions."""
    values = np.ravel(values)
    positions = np.trunc(values)
    invalid = ~((positions >= 1) & (positions <= length))
    if invalid.any():
        value = values[np.argmax(invalid)]
        raise IndexOutOfRangeError(f"Index {value:g} is outside of 1..{length}")

    return positions.astype(np.int64) - 1


def gather_positions(values: np.ndarray, length: int) -> np.ndarray:
    """Validate gather index values against a vector of the given length."""
    return _check_positions(values, length)


class Executor:
    """Evaluates physical plans through one buffer pool."""

    def __init__(self, pool: BufferPool, scratch_dir: Optional[Union[str, Path]] = None):
        """Initialize executor, temporaries are created below scratch_dir."""
        self.pool = pool
        self.schedule = MatmulSchedule.for_budget(pool.budget)
        self._owns_scratch = scratch_dir is None
        self.scratch_dir = Path(scratch_dir) if scratch_dir is not None else Path(tempfile.mkdtemp(prefix="riot-"))
        self.scratch_dir.mkdir(parents=True, exist_ok=True)
        self.conversion_blocks = 0
        self._temporary_ids = itertools.count(1)
        self._temporaries: Set[str] = set()
        self._results: Dict[int, Value] = {}
        self._remaining: Dict[int, int] = {}

    def close(self) -> None:
        """Remove all temporaries."""
        for path in list(self._temporaries):
            self._temporaries.discard(path)
            Path(path).unlink(missing_ok=True)

        if self._owns_scratch:
            shutil.rmtree(self.scratch_dir, ignore_errors=True)

    def report(self) -> IoReport:
        """I/O report of everything executed since the pool counters were last reset."""
        return IoReport.from_counters(self.pool.stats(), conversion_blocks=self.conversion_blocks)

    def reset(self) -> None:
        """Reset pool counters and conversion accounting."""
        self.pool.reset_counters()
        self.conversion_blocks = 0

    # Temporaries

    def _temporary_path(self) -> Path:
        """Fresh path inside of the scratch directory."""
        return self.scratch_dir / f"tmp-{next(self._temporary_ids)}{MATRIX_SUFFIX}"

    def _new_temporary(
        self, shape: Shape, tiles: TileSpec, lin: Linearization = Linearization.TILE_ROW_MAJOR
    ) -> StoredMatrix:
        """Create a stored matrix owned by the executor."""
        matrix = create_matrix(
            self._temporary_path(), shape, tiles, lin, block_scalars=self.pool.budget.block_scalars, derived=True
        )
        self._temporaries.add(matrix.key)
        return matrix

    def is_temporary(self, matrix: StoredMatrix) -> bool:
        """Check whether the executor created the matrix."""
        return matrix.key in self._temporaries

    def discard(self, value: Value) -> None:
        """Delete a temporary result."""
        if isinstance(value, StoredMatrix) and self.is_temporary(value):
            self._temporaries.discard(value.key)
            delete_matrix(value, self.pool)

    # Plan evaluation

    def execute(self, plan: PhysicalPlan) -> Value:
        """Run a plan, the caller owns the returned result."""
        if plan.root is None:
            raise PlanError("Nothing to execute")

        self._results = {}
        self._remaining = {}
        for node in plan_nodes(plan.root):
            for child in node.children:
                self._remaining[child.plan_id] = self._remaining.get(child.plan_id, 0) + 1

        with np.errstate(all="ignore"):
            value = self._run(plan.root)
            if isinstance(plan.root, Pipeline):
                self._release_children(plan.root)

        return value

    def evaluate(self, plan: PhysicalPlan) -> np.ndarray:
        """Run a plan and return its result in memory."""
        value = self.execute(plan)
        result = self.to_array(value)
        self.discard(value)
        return result

    def to_array(self, value: Value) -> np.ndarray:
        """Load any result into a 2-D array."""
        if isinstance(value, StoredMatrix):
            return load_dense(value, self.pool)

        if isinstance(value, np.ndarray):
            return value

        return np.full((1, 1), value)

    def _result(self, node: PlanNode) -> Value:
        """Value of an operator, computed once."""
        if node.plan_id not in self._results:
            self._results[node.plan_id] = self._run(node)

        return self._results[node.plan_id]

    def _release(self, node: PlanNode) -> None:
        """Drop one reference to the result of node, deleting temporaries after their last consumer."""
        self._remaining[node.plan_id] -= 1
        if self._remaining[node.plan_id]:
            return

        value = self._results.pop(node.plan_id, None)
        if value is not None:
            self.discard(value)

        if isinstance(node, Pipeline):
            self._release_children(node)

    def _release_children(self, node: PlanNode) -> None:
        """Release every input of node."""
        for child in node.children:
            self._release(child)

    def _run(self, node: PlanNode) -> Value:
        """Compute the result of an operator."""
        if isinstance(node, Scan):
            return node.matrix

        if isinstance(node, Generate):
            return self._generate(node.node)

        if isinstance(node, Pipeline):
            return self.exec_pipeline(node)

        if isinstance(node, GatherExec):
            return self.exec_gather(node)

        if isinstance(node, BlockedMatMul):
            left = self._result(node.children[0])
            right = self._result(node.children[1])
            out = self._new_temporary(node.shape, TileSpec.square(self.pool.budget.block_scalars))
            result = exec_matmul_blocked(left, right, out, self.schedule, self.pool)
            self._release_children(node)
            return result

        if isinstance(node, Materialize):
            return self.materialize(node)

        if isinstance(node, Relayout):
            return self._relayout(node)

        raise PlanError(f"Unknown operator {node!r}")

    @staticmethod
    def _generate(node: ExprNode) -> Value:
        """Values of an in-memory generator."""
        if isinstance(node, ScalarConst):
            return node.value

        if isinstance(node, (Range, Sample)):
            return node.values().reshape(-1, 1)

        raise PlanError(f"Cannot generate {node!r}")

    def _in_memory(self, node: PlanNode) -> np.ndarray:
        """Result of an operator as a 2-D array."""
        value = self._result(node)
        return self.to_array(value)

    # Pipelines

    def _stream(
        self, pipeline: Pipeline, tiles: Optional[TileSpec], out: Optional[StoredMatrix]
    ) -> Iterator[Tuple[Bounds, np.ndarray]]:
        """Evaluate a pipeline over the tile grid of tiles, writing tiles into out if given."""
        if pipeline.root.is_scalar:
            values: Dict[int, Any] = {}
            scalar = self._evaluate_fused(pipeline, values)
            yield (0, 1, 0, 1), np.full((1, 1), scalar)
            return

        block_scalars = self.pool.budget.block_scalars
        tiles = tiles or TileSpec.default_for(pipeline.shape, block_scalars)
        inputs = {expr_id: self._result(node) for expr_id, node in pipeline.inputs.items()}
        expected = (pipeline.shape.rows, pipeline.shape.cols)
        for value in inputs.values():
            if isinstance(value, StoredMatrix):
                actual = (value.shape.rows, value.shape.cols)
            elif isinstance(value, np.ndarray):
                actual = value.shape
            else:
                continue

            if actual != expected:
                raise ShapeMismatchError(f"Pipeline input {actual} drifted from {pipeline.shape}")

        # One frame stays free for copied tiles, inputs beyond that are read as copies
        pin_slots = max(self.pool.budget.frames - 1, 0)
        pinned_inputs = set()
        for expr_id, value in inputs.items():
            if len(pinned_inputs) < pin_slots and _is_pinnable(value, tiles):
                pinned_inputs.add(expr_id)

        grid_rows = -(-pipeline.shape.rows // tiles.tile_rows)
        grid_cols = -(-pipeline.shape.cols // tiles.tile_cols)
        for ti in range(grid_rows):
            for tj in range(grid_cols):
                row_start = ti * tiles.tile_rows
                col_start = tj * tiles.tile_cols
                bounds = (
                    row_start,
                    min(row_start + tiles.tile_rows, pipeline.shape.rows),
                    col_start,
                    min(col_start + tiles.tile_cols, pipeline.shape.cols),
                )
                with ExitStack() as stack:
                    values = {
                        expr_id: self._input_chunk(value, expr_id in pinned_inputs, ti, tj, bounds, stack)
                        for expr_id, value in inputs.items()
                    }
                    result = self._evaluate_fused(pipeline, values)
                    result = np.broadcast_to(result, (bounds[1] - bounds[0], bounds[3] - bounds[2]))
                    if out is not None:
                        target = stack.enter_context(pinned_tile(out, ti, tj, self.pool, mode="write"))
                        target[: result.shape[0], : result.shape[1]] = result

                yield bounds, result

    def _input_chunk(
        self, value: Value, pin: bool, ti: int, tj: int, bounds: Bounds, stack: ExitStack
    ) -> Union[np.ndarray, float]:
        """Elements of one input covering an output tile, pinned in place or copied."""
        row_start, row_end, col_start, col_end = bounds
        if isinstance(value, StoredMatrix):
            if pin:
                view = stack.enter_context(pinned_tile(value, ti, tj, self.pool))
                return view[: row_end - row_start, : col_end - col_start]

            return read_region(value, row_start, row_end, col_start, col_end, self.pool)

        if isinstance(value, np.ndarray):
            return value[row_start:row_end, col_start:col_end]

        return value

    def _evaluate_fused(self, pipeline: Pipeline, values: Dict[int, Any]) -> Any:
        """Apply the fused operations of a pipeline to one chunk, shared nodes once."""
        for node in pipeline.fused:
            operands = [
                child.value if isinstance(child, ScalarConst) else values[child.node_id] for child in node.children
            ]
            result = node.apply(*operands)
            values[node.node_id] = result
            self.pool.count_elements(np.size(result))

        return values[pipeline.root.node_id]

    def exec_pipeline(self, pipeline: Pipeline) -> np.ndarray:
        """Evaluate a pipeline into memory."""
        rows, cols = pipeline.shape.rows, pipeline.shape.cols
        result = np.empty((rows, cols))
        for (row_start, row_end, col_start, col_end), chunk in self._stream(pipeline, None, None):
            result[row_start:row_end, col_start:col_end] = chunk

        return result

    # Gather

    def exec_gather(self, node: GatherExec) -> np.ndarray:
        """Select elements, touching only the tiles that hold them."""
        positions = _check_positions(self._in_memory(node.index), node.data.shape.rows)
        self._release(node.index)
        data = node.data
        result = np.empty((positions.size, 1))
        if positions.size == 0:
            self._release(data)
            return result

        if isinstance(data, Pipeline) and data.plan_id not in self._results:
            for (row_start, row_end, _, _), chunk in self._stream(data, None, None):
                selected = (positions >= row_start) & (positions < row_end)
                result[selected, 0] = chunk[positions[selected] - row_start, 0]
        else:
            value = self._result(data)
            if isinstance(value, StoredMatrix):
                self._gather_stored(value, positions, result)
            elif isinstance(value, np.ndarray):
                result[:, 0] = value[positions, 0]
            else:
                result[:, 0] = value

        self._release(data)
        return result

    def _gather_stored(self, matrix: StoredMatrix, positions: np.ndarray, result: np.ndarray) -> None:
        """Random tile access, every tile holding requested positions is read once."""
        tile_rows = matrix.tiles.tile_rows
        tile_of = positions // tile_rows
        tiles, inverse = np.unique(tile_of, return_inverse=True)
        for tile_number, ti in enumerate(tiles):
            tile = read_tile(matrix, int(ti), 0, self.pool)
            selected = inverse == tile_number
            result[selected, 0] = tile[positions[selected] - ti * tile_rows, 0]

    # Materialization

    def materialize(self, node: Materialize) -> StoredMatrix:
        """Store the result of the child of node in the requested tiling."""
        child = node.child
        if node.passes_through:
            value = self._result(child)
            # Ownership of the product moves to this operator.
            self._results.pop(child.plan_id, None)
            self._remaining[child.plan_id] -= 1
            return value

        if isinstance(child, Pipeline) and child.plan_id not in self._results:
            out = self._new_temporary(node.shape, node.tiles, node.lin)
            for _ in self._stream(child, node.tiles, out):
                pass
        else:
            value = self._result(child)
            if isinstance(value, StoredMatrix):
                out = relayout(value, self._temporary_path(), node.tiles, node.lin, self.pool)
            else:
                out = import_dense(
                    self._temporary_path(),
                    node.shape,
                    node.tiles,
                    node.lin,
                    self.to_array(value),
                    self.pool,
                    derived=True,
                )
            self._temporaries.add(out.key)

        self.pool.flush_matrix(out)
        self._release(child)
        _LOGGER.debug(f"Materialized {node.shape} into {out.path}")
        return out

    def _relayout(self, node: Relayout) -> StoredMatrix:
        """Convert a stored matrix, accounting its I/O as conversion."""
        before = self.pool.stats()
        source = self._result(node.child)
        converted = relayout(source, self._temporary_path(), node.tiles, Linearization.TILE_ROW_MAJOR, self.pool)
        self._temporaries.add(converted.key)
        after = self.pool.stats()
        self.conversion_blocks += after.blocks_read - before.blocks_read + after.blocks_written - before.blocks_written
        self._release(node.child)
        return converted

    # Chains

    def exec_chain(self, chain: ChainPlan, matrices: Sequence[StoredMatrix]) -> StoredMatrix:
        """Multiply square tiled matrices in the order of a chain plan, one product at a time.

        Intermediate products are stored and deleted as soon as their consumer finishes.
        """
        if len(matrices) != chain.length:
            raise PlanError(f"Chain of {chain.length} matrices got {len(matrices)} operands")

        for position, matrix in enumerate(matrices):
            if (matrix.shape.rows, matrix.shape.cols) != (chain.dims[position], chain.dims[position + 1]):
                raise ShapeMismatchError(f"Operand {position} of {matrix.shape} does not match chain {chain.dims}")

        def _multiply(tree) -> StoredMatrix:
            if isinstance(tree, int):
                return matrices[tree]

            left = _multiply(tree[0])
            right = _multiply(tree[1])
            out = self._new_temporary(
                Shape(left.shape.rows, right.shape.cols), TileSpec.square(self.pool.budget.block_scalars)
            )
            exec_matmul_blocked(left, right, out, self.schedule, self.pool)
            self.discard(left)
            self.discard(right)
            return out

        with np.errstate(all="ignore"):
            return _multiply(chain.tree)
