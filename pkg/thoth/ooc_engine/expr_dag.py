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

"""Deferred evaluation: every operation builds an immutable node of an expression DAG.

Nothing in this module reads data or computes element values; the ``apply`` methods are
the element kernels the executor and the eager oracle share.
"""

import itertools
import logging

from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ShapeMismatchError
from .exceptions import UndefinedNameError
from .exceptions import UnsupportedAssignmentError
from .tiled_store import Shape
from .tiled_store import StoredMatrix

_LOGGER = logging.getLogger(__name__)

_NODE_IDS = itertools.count(1)

UNARY_OPS = {"sqrt": np.sqrt, "square": np.square, "negate": np.negative}
BINARY_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide, "pow": np.power}
COMPARE_OPS = {"gt": np.greater, "ge": np.greater_equal, "lt": np.less, "le": np.less_equal, "eq": np.equal}
MASK_OPS = {"and": np.logical_and, "or": np.logical_or}

SCALAR_SHAPE = Shape(1, 1)

_MASK = 0xFFFFFFFFFFFFFFFF


class ExprNode:
    """Base class of all expression DAG nodes."""

    _KIND = None
    # Elementwise nodes fuse into pipelines.
    fusible = False

    def __init__(self, children: Sequence["ExprNode"]):
        """Initialize node and infer its shape."""
        self.node_id = next(_NODE_IDS)
        self.children = tuple(children)
        self.shape = self._infer_shape()

    @property
    def kind(self) -> str:
        """Kind of node."""
        return self._KIND

    @property
    def is_scalar(self) -> bool:
        """Check whether the node denotes a scalar rather than an array."""
        return False

    def params(self) -> Tuple[Any, ...]:
        """Non-child parameters of the node."""
        return ()

    def structural_key(self) -> Tuple[Any, ...]:
        """Key identifying nodes that compute the same thing."""
        return (self._KIND, self.params(), tuple(child.node_id for child in self.children))

    def with_children(self, children: Sequence["ExprNode"]) -> "ExprNode":
        """Build a node of the same kind and parameters over other children."""
        raise NotImplementedError

    def _infer_shape(self) -> Shape:
        """Infer shape from children and parameters."""
        raise NotImplementedError

    def describe(self) -> str:
        """Kind and parameters as shown in DAG dumps."""
        params = ", ".join(str(param) for param in self.params())
        return f"{self._KIND}({params})" if params else self._KIND

    def __repr__(self) -> str:
        """Represent node."""
        return f"<{self.describe()} #{self.node_id} {self.shape}>"


class Leaf(ExprNode):
    """A stored matrix."""

    _KIND = "Leaf"

    def __init__(self, matrix: StoredMatrix, name: Optional[str] = None):
        """Initialize leaf."""
        self.matrix = matrix
        self.name = name or matrix.name
        super().__init__(())

    def params(self) -> Tuple[Any, ...]:
        """Leaves are identified by their file."""
        return (self.name, str(self.matrix.path))

    def describe(self) -> str:
        """Leaf is shown by name."""
        return f"Leaf({self.name})"

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Leaves have no children."""
        return self

    def _infer_shape(self) -> Shape:
        """Shape of the stored matrix."""
        return self.matrix.shape


class ScalarConst(ExprNode):
    """A scalar constant, broadcast over arrays."""

    _KIND = "ScalarConst"

    def __init__(self, value: float):
        """Initialize constant."""
        self.value = float(value)
        super().__init__(())

    @property
    def is_scalar(self) -> bool:
        """Constants are scalars."""
        return True

    def params(self) -> Tuple[Any, ...]:
        """Constant value."""
        return (self.value,)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Constants have no children."""
        return self

    def _infer_shape(self) -> Shape:
        """Scalars have a 1x1 shape."""
        return SCALAR_SHAPE


class ElemUnary(ExprNode):
    """Elementwise sqrt, square or negation."""

    _KIND = "ElemUnary"
    fusible = True

    def __init__(self, op: str, child: ExprNode):
        """Initialize unary operation."""
        if op not in UNARY_OPS:
            raise ValueError(f"Unknown unary operation {op!r}")

        self.op = op
        super().__init__((child,))

    @property
    def is_scalar(self) -> bool:
        """Scalar if the operand is."""
        return self.children[0].is_scalar

    def params(self) -> Tuple[Any, ...]:
        """Operation name."""
        return (self.op,)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return ElemUnary(self.op, children[0])

    def _infer_shape(self) -> Shape:
        """Same shape as the operand."""
        return self.children[0].shape

    def apply(self, value):
        """Element kernel."""
        return UNARY_OPS[self.op](value)


class ElemBinary(ExprNode):
    """Elementwise arithmetic, one side may be a scalar broadcast over the other."""

    _KIND = "ElemBinary"
    fusible = True

    def __init__(self, op: str, left: ExprNode, right: ExprNode):
        """Initialize binary operation."""
        if op not in BINARY_OPS:
            raise ValueError(f"Unknown binary operation {op!r}")

        self.op = op
        super().__init__((left, right))

    @property
    def is_scalar(self) -> bool:
        """Scalar if both operands are."""
        return self.children[0].is_scalar and self.children[1].is_scalar

    def params(self) -> Tuple[Any, ...]:
        """Operation name."""
        return (self.op,)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return ElemBinary(self.op, children[0], children[1])

    def _infer_shape(self) -> Shape:
        """Operands must agree unless one of them is a scalar."""
        left, right = self.children
        if left.is_scalar:
            return right.shape

        if right.is_scalar or left.shape == right.shape:
            return left.shape

        raise ShapeMismatchError(f"Elementwise {self.op} of {left.shape} and {right.shape}")

    def apply(self, left, right):
        """Element kernel."""
        return BINARY_OPS[self.op](left, right)


class Compare(ExprNode):
    """Comparison of an array against a scalar, producing a 0/1 mask."""

    _KIND = "Compare"
    fusible = True

    def __init__(self, op: str, child: ExprNode, scalar: float):
        """Initialize comparison."""
        if op not in COMPARE_OPS:
            raise ValueError(f"Unknown comparison {op!r}")

        self.op = op
        self.scalar = float(scalar)
        super().__init__((child,))

    def params(self) -> Tuple[Any, ...]:
        """Comparison and the scalar compared against."""
        return (self.op, self.scalar)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return Compare(self.op, children[0], self.scalar)

    def _infer_shape(self) -> Shape:
        """Same shape as the compared array."""
        if self.children[0].is_scalar:
            raise ShapeMismatchError("Comparisons need an array operand")

        return self.children[0].shape

    def apply(self, value):
        """Element kernel."""
        return COMPARE_OPS[self.op](value, self.scalar).astype(np.float64)


class MaskCombine(ExprNode):
    """Conjunction or disjunction of two masks."""

    _KIND = "MaskCombine"
    fusible = True

    def __init__(self, op: str, left: ExprNode, right: ExprNode):
        """Initialize mask combination."""
        if op not in MASK_OPS:
            raise ValueError(f"Unknown mask operation {op!r}")

        self.op = op
        super().__init__((left, right))

    def params(self) -> Tuple[Any, ...]:
        """Operation name."""
        return (self.op,)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return MaskCombine(self.op, children[0], children[1])

    def _infer_shape(self) -> Shape:
        """Both masks must have the same shape."""
        left, right = self.children
        if not (is_mask(left) and is_mask(right)):
            raise UnsupportedAssignmentError(f"Operands of {self.op} must be comparisons")

        if left.shape != right.shape:
            raise ShapeMismatchError(f"Mask {self.op} of {left.shape} and {right.shape}")

        return left.shape

    def apply(self, left, right):
        """Element kernel."""
        return MASK_OPS[self.op](left != 0, right != 0).astype(np.float64)


class MaskNot(ExprNode):
    """Negation of a mask."""

    _KIND = "MaskNot"
    fusible = True

    def __init__(self, child: ExprNode):
        """Initialize mask negation."""
        super().__init__((child,))

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return MaskNot(children[0])

    def _infer_shape(self) -> Shape:
        """Same shape as the negated mask."""
        if not is_mask(self.children[0]):
            raise UnsupportedAssignmentError("Only comparisons can be negated")

        return self.children[0].shape

    def apply(self, value):
        """Element kernel."""
        return (value == 0).astype(np.float64)


class Subst(ExprNode):
    """Pure model of the masked assignment ``x[mask] <- value``."""

    _KIND = "Subst"
    fusible = True

    def __init__(self, child: ExprNode, mask: ExprNode, value: float):
        """Initialize substitution."""
        self.value = float(value)
        super().__init__((child, mask))

    def params(self) -> Tuple[Any, ...]:
        """Replacement value."""
        return (self.value,)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return Subst(children[0], children[1], self.value)

    def _infer_shape(self) -> Shape:
        """Mask must be a predicate over the substituted array."""
        child, mask = self.children
        if child.is_scalar:
            raise ShapeMismatchError("Cannot assign into a scalar")

        if not is_mask(mask):
            raise UnsupportedAssignmentError(
                "Masked assignment needs a comparison mask, general index assignment is not supported"
            )

        if mask.shape != child.shape:
            raise ShapeMismatchError(f"Mask of {mask.shape} does not match {child.shape}")

        return child.shape

    def apply(self, value, mask):
        """Element kernel."""
        return np.where(mask != 0, self.value, value)


class Gather(ExprNode):
    """Selection of vector elements by 1-based positions."""

    _KIND = "Gather"

    def __init__(self, child: ExprNode, index: ExprNode):
        """Initialize selection."""
        super().__init__((child, index))

    @property
    def child(self) -> ExprNode:
        """Vector elements are selected from."""
        return self.children[0]

    @property
    def index(self) -> ExprNode:
        """Vector of 1-based positions."""
        return self.children[1]

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return Gather(children[0], children[1])

    def _infer_shape(self) -> Shape:
        """Result has the shape of the index vector."""
        child, index = self.children
        if child.is_scalar or not child.shape.is_vector:
            raise ShapeMismatchError(f"Only vectors can be indexed, got {child.shape}")

        if index.is_scalar or not index.shape.is_vector:
            raise ShapeMismatchError(f"Index must be a vector, got {index.shape}")

        return index.shape


class Range(ExprNode):
    """Index vector lo:hi, descending when hi < lo."""

    _KIND = "Range"

    def __init__(self, lo: int, hi: int):
        """Initialize range."""
        self.lo = int(lo)
        self.hi = int(hi)
        super().__init__(())

    def params(self) -> Tuple[Any, ...]:
        """Bounds."""
        return (self.lo, self.hi)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Ranges have no children."""
        return self

    def _infer_shape(self) -> Shape:
        """Both bounds are included."""
        return Shape(abs(self.hi - self.lo) + 1, 1)

    def values(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        """Elements start..stop-1 of the range."""
        stop = self.shape.rows if stop is None else stop
        step = 1 if self.hi >= self.lo else -1
        return (self.lo + step * np.arange(start, stop)).astype(np.float64)


class Sample(ExprNode):
    """k distinct positions drawn uniformly from 1..n."""

    _KIND = "Sample"

    def __init__(self, n: int, k: int, seed: int):
        """Initialize sample."""
        self.n = int(n)
        self.k = int(k)
        self.seed = int(seed)
        super().__init__(())

    def params(self) -> Tuple[Any, ...]:
        """Population, sample size and seed."""
        return (self.n, self.k, self.seed)

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Samples have no children."""
        return self

    def _infer_shape(self) -> Shape:
        """A column of k positions."""
        if self.k < 0 or self.k > self.n:
            raise ShapeMismatchError(f"Cannot draw {self.k} distinct samples from 1..{self.n}")

        return Shape(self.k, 1)

    def values(self) -> np.ndarray:
        """Draw the sample."""
        return sample_indices(self.n, self.k, self.seed).astype(np.float64)


class MatMul(ExprNode):
    """Matrix product."""

    _KIND = "MatMul"

    def __init__(self, left: ExprNode, right: ExprNode):
        """Initialize product."""
        super().__init__((left, right))

    def with_children(self, children: Sequence[ExprNode]) -> ExprNode:
        """Rebuild over other children."""
        return MatMul(children[0], children[1])

    def _infer_shape(self) -> Shape:
        """Inner dimensions must agree."""
        left, right = self.children
        if left.is_scalar or right.is_scalar:
            raise ShapeMismatchError("Matrix product of a scalar")

        if left.shape.cols != right.shape.rows:
            raise ShapeMismatchError(f"Matrix product of {left.shape} and {right.shape}")

        return Shape(left.shape.rows, right.shape.cols)


def is_mask(node: ExprNode) -> bool:
    """Check whether a node is a pointwise predicate (possibly selected by a gather)."""
    if isinstance(node, (Compare, MaskCombine, MaskNot)):
        return True

    return isinstance(node, Gather) and is_mask(node.child)


class SplitMix64:
    """Seeded splitmix64 generator."""

    def __init__(self, seed: int):
        """Initialize generator state."""
        self.state = seed & _MASK

    def next(self) -> int:
        """Next 64-bit output."""
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection."""
        threshold = (1 << 64) % bound
        while True:
            value = self.next()
            if value >= threshold:
                return value % bound


def sample_indices(n: int, k: int, seed: int) -> np.ndarray:
    """Draw k distinct 1-based positions from 1..n with a partial Fisher-Yates shuffle."""
    generator = SplitMix64(seed)
    # Only displaced slots of the virtual array 0..n-1 are kept.
    displaced: Dict[int, int] = {}
    drawn = np.empty(k, dtype=np.int64)
    for i in range(k):
        j = i + generator.below(n - i)
        value_j = displaced.get(j, j)
        displaced[j] = displaced.get(i, i)
        drawn[i] = value_j + 1

    return drawn


_BUILDERS = {
    "leaf": Leaf,
    "const": ScalarConst,
    "gather": Gather,
    "range": Range,
    "subst": Subst,
    "matmul": MatMul,
    "sample": Sample,
    "not": MaskNot,
}


def _as_node(operand: Union[ExprNode, float, int]) -> ExprNode:
    """Wrap plain numbers into scalar constants."""
    if isinstance(operand, ExprNode):
        return operand

    return ScalarConst(operand)


def build(op: str, *operands, **params) -> ExprNode:
    """Build a node of any kind, performing neither I/O nor arithmetic.

    :param op: unary (sqrt, square, negate), binary (add, sub, mul, div, pow), comparison
        (gt, ge, lt, le, eq), mask (and, or, not) operation, or one of leaf, const, gather,
        range, subst, matmul, sample
    :param operands: child nodes, numbers are wrapped into scalar constants
    """
    if op in UNARY_OPS:
        return ElemUnary(op, _as_node(operands[0]))

    if op in BINARY_OPS:
        return ElemBinary(op, _as_node(operands[0]), _as_node(operands[1]))

    if op in COMPARE_OPS:
        child, scalar = operands
        if isinstance(scalar, ScalarConst):
            scalar = scalar.value

        return Compare(op, child, scalar)

    if op in MASK_OPS:
        return MaskCombine(op, operands[0], operands[1])

    if op in ("gather", "matmul"):
        return _BUILDERS[op](_as_node(operands[0]), _as_node(operands[1]))

    if op == "subst":
        child, mask, value = operands
        if isinstance(value, ExprNode):
            if not isinstance(value, ScalarConst):
                raise UnsupportedAssignmentError("Replacement of a masked assignment must be a scalar constant")
            value = value.value

        return Subst(child, mask, value)

    if op in _BUILDERS:
        return _BUILDERS[op](*operands, **params)

    raise ValueError(f"Unknown operation {op!r}")


def infer_shape(node: ExprNode) -> Shape:
    """Re-derive the shape of a node from its children."""
    return node._infer_shape()


def walk(roots: Iterable[ExprNode]) -> List[ExprNode]:
    """Distinct nodes reachable from roots, children before parents."""
    order = []
    seen = set()
    stack = [(root, False) for root in reversed(list(roots))]
    while stack:
        node, expanded = stack.pop()
        if node.node_id in seen:
            continue

        if expanded:
            seen.add(node.node_id)
            order.append(node)
            continue

        stack.append((node, True))
        for child in reversed(node.children):
            if child.node_id not in seen:
                stack.append((child, False))

    return order


def reuse_counts(roots: Iterable[ExprNode]) -> Dict[int, int]:
    """Number of distinct consumers of every node reachable from roots."""
    parents: Dict[int, set] = {}
    for node in walk(roots):
        parents.setdefault(node.node_id, set())
        for child in node.children:
            parents.setdefault(child.node_id, set()).add(node.node_id)

    return {node_id: len(consumers) for node_id, consumers in parents.items()}


def intermediate_count(root: ExprNode) -> int:
    """Number of operation nodes strictly below root, i.e. intermediate results."""
    return sum(
        1
        for node in walk([root])
        if node is not root and not isinstance(node, (Leaf, ScalarConst))
    )


def dump(roots: Iterable[ExprNode]) -> str:
    """Stable textual dump, one node per line: id, kind, child ids, shape."""
    local_ids: Dict[int, str] = {}
    lines = []
    for node in walk(roots):
        local_ids[node.node_id] = f"%{len(local_ids)}"
        children = ", ".join(local_ids[child.node_id] for child in node.children)
        shape = "scalar" if node.is_scalar else str(node.shape)
        lines.append(f"{local_ids[node.node_id]} {node.describe()} [{children}] {shape}")

    return "\n".join(lines)


class Environment:
    """Name bindings of a script together with the nodes each binding depends on."""

    def __init__(
        self, bindings: Optional[Dict[str, ExprNode]] = None, dependencies: Optional[Dict[str, FrozenSet[int]]] = None
    ):
        """Initialize environment."""
        self._bindings = dict(bindings or {})
        self._dependencies = dict(dependencies or {})

    def __contains__(self, name: str) -> bool:
        """Check whether a name is bound."""
        return name in self._bindings

    @property
    def names(self) -> List[str]:
        """Bound names."""
        return list(self._bindings)

    def lookup(self, name: str) -> ExprNode:
        """Node bound to a name."""
        try:
            return self._bindings[name]
        except KeyError:
            raise UndefinedNameError(f"Name {name!r} is not defined") from None

    def dependencies(self, name: str) -> FrozenSet[int]:
        """Ids of all nodes the binding of name transitively references."""
        self.lookup(name)
        return self._dependencies[name]

    def assign(self, name: str, node: ExprNode) -> "Environment":
        """Return a new environment with name bound to node, other bindings are untouched."""
        bindings = dict(self._bindings)
        bindings[name] = node
        dependencies = dict(self._dependencies)
        dependencies[name] = frozenset(reachable.node_id for reachable in walk([node]))
        _LOGGER.debug(f"Bound {name!r} to {node!r}")
        return Environment(bindings, dependencies)


def assign(env: Environment, name: str, node: ExprNode) -> Environment:
    """Bind a name, prior nodes that captured the old binding keep referencing it."""
    return env.assign(name, node)
