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

"""Small R-like script language: tokenizer, parser and lowering onto the expression DAG.

Grammar, lowest precedence first; all binary operators associate left::

    statement   := 'print' expr | NAME '<-' expr | NAME '[' expr ']' '<-' expr
    or          := and ('|' and)*
    and         := not ('&' not)*
    not         := '!' not | comparison
    comparison  := additive (('>' | '>=' | '<' | '<=' | '==' | '!=') additive)?
    additive    := product (('+' | '-') product)*
    product     := matmul (('*' | '/') matmul)*
    matmul      := range ('%*%' range)*
    range       := unary (':' unary)*
    unary       := '-' unary | power
    power       := postfix ('^' exponent)*
    exponent    := '-'? postfix
    postfix     := primary ('[' expr ']')*
    primary     := NUMBER | NAME | NAME '(' args ')' | '(' expr ')'
"""

import logging
import re

from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import BudgetError
from .exceptions import ScriptSyntaxError
from .exceptions import ShapeMismatchError
from .exceptions import UndefinedNameError
from .exceptions import UnsupportedAssignmentError
from .expr_dag import BINARY_OPS
from .expr_dag import COMPARE_OPS
from .expr_dag import UNARY_OPS
from .expr_dag import Environment
from .expr_dag import ExprNode
from .expr_dag import Leaf
from .expr_dag import ScalarConst
from .expr_dag import build
from .expr_dag import is_mask
from .tiled_store import StoredMatrix
from .tiled_store import find_matrix

_LOGGER = logging.getLogger(__name__)

_TOKEN_SPEC = [
    ("NUMBER", r"(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?"),
    ("NAME", r"[A-Za-z][A-Za-z0-9._]*|\.[A-Za-z_][A-Za-z0-9._]*"),
    ("ASSIGN", r"<-"),
    ("MATMUL", r"%\*%"),
    ("OP", r">=|<=|==|!=|[-+*/^<>&|!:]"),
    ("LPAREN", r"\("),
    ("RPAREN", r"\)"),
    ("LBRACKET", r"\["),
    ("RBRACKET", r"\]"),
    ("COMMA", r","),
    ("NEWLINE", r"\n|;"),
    ("SKIP", r"[ \t\r]+|#[^\n]*"),
    ("MISMATCH", r"."),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))

_COMPARISONS = {">": "gt", ">=": "ge", "<": "lt", "<=": "le", "==": "eq", "!=": "ne"}
_FLIPPED = {"gt": "lt", "ge": "le", "lt": "gt", "le": "ge", "eq": "eq", "ne": "ne"}
_ARITHMETIC = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow"}


@dataclass(frozen=True)
class Token:
    """Lexical token with its 1-based position."""

    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> List[Token]:
    """Split script text into tokens, ending with an EOF token."""
    tokens = []
    line, line_start = 1, 0
    for match in _TOKEN_RE.finditer(text):
        kind, value = match.lastgroup, match.group()
        column = match.start() - line_start + 1
        if kind == "MISMATCH":
            raise ScriptSyntaxError(f"Unexpected character {value!r}", line, column)

        if kind != "SKIP":
            tokens.append(Token(kind, value, line, column))

        if value == "\n":
            line, line_start = line + 1, match.end()

    tokens.append(Token("EOF", "", line, len(text) - line_start + 1))
    return tokens


# Syntax tree


@dataclass(frozen=True)
class Expr:
    """Base of expression syntax nodes."""

    line: int
    column: int


@dataclass(frozen=True)
class Number(Expr):
    """Numeric literal."""

    value: float
    integral: bool


@dataclass(frozen=True)
class Name(Expr):
    """Reference to a bound name or a stored matrix."""

    name: str


@dataclass(frozen=True)
class Unary(Expr):
    """Negation or logical not."""

    op: str
    operand: Expr


@dataclass(frozen=True)
class Binary(Expr):
    """Binary operator application."""

    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    """Function call."""

    function: str
    args: Tuple[Expr, ...]


@dataclass(frozen=True)
class Index(Expr):
    """Indexing target[index]."""

    target: Expr
    index: Expr


@dataclass(frozen=True)
class Assign:
    """name <- value."""

    name: str
    value: Expr
    line: int


@dataclass(frozen=True)
class MaskedAssign:
    """name[predicate] <- value."""

    name: str
    predicate: Expr
    value: Expr
    line: int


@dataclass(frozen=True)
class Print:
    """print(value), the only statement forcing evaluation."""

    value: Expr
    line: int


Statement = Union[Assign, MaskedAssign, Print]


@dataclass(frozen=True)
class Script:
    """Parsed script."""

    statements: Tuple[Statement, ...]


def interior_count(expr: Expr) -> int:
    """Operator nodes of a syntax tree below its root."""

    def _count(node: Expr) -> int:
        if isinstance(node, (Number, Name)):
            return 0

        if isinstance(node, Unary):
            children = [node.operand]
        elif isinstance(node, Binary):
            children = [node.left, node.right]
        elif isinstance(node, Call):
            children = list(node.args)
        else:
            children = [node.target, node.index]

        return 1 + sum(_count(child) for child in children)

    return max(_count(expr) - 1, 0)


class Parser:
    """Recursive descent parser over a token list."""

    def __init__(self, text: str):
        """Initialize parser."""
        self.tokens = tokenize(text)
        self.position = 0

    def _peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.position + offset, len(self.tokens) - 1)]

    def _next(self) -> Token:
        token = self._peek()
        self.position += 1
        return token

    def _check(self, kind: str, text: Optional[str] = None) -> bool:
        token = self._peek()
        return token.kind == kind and (text is None or token.text == text)

    def _expect(self, kind: str, text: Optional[str] = None) -> Token:
        if not self._check(kind, text):
            token = self._peek()
            wanted = text or kind.lower()
            found = token.text or "end of script"
            raise ScriptSyntaxError(f"Expected {wanted!r} but found {found!r}", token.line, token.column)

        return self._next()

    def _error(self, message: str, token: Token) -> ScriptSyntaxError:
        return ScriptSyntaxError(message, token.line, token.column)

    def parse(self) -> Script:
        """Parse the whole script."""
        statements = []
        while not self._check("EOF"):
            if self._check("NEWLINE"):
                self._next()
                continue

            statements.append(self._statement())
            if not (self._check("NEWLINE") or self._check("EOF")):
                token = self._peek()
                if token.kind == "ASSIGN":
                    raise self._error("Chained assignment is not supported", token)

                raise self._error(f"Unexpected {token.text!r} after statement", token)

        return Script(tuple(statements))

    def _statement(self) -> Statement:
        start = self._peek()
        if start.kind == "NAME" and start.text == "print" and self._peek(1).kind != "ASSIGN":
            self._next()
            return Print(self._expression(), start.line)

        target = self._expression()
        if not self._check("ASSIGN"):
            raise self._error("Statement has no effect, assign it or print it", start)

        self._next()
        value = self._expression()
        if isinstance(target, Name):
            return Assign(target.name, value, start.line)

        if isinstance(target, Index) and isinstance(target.target, Name):
            return MaskedAssign(target.target.name, target.index, value, start.line)

        raise self._error("Only names and name[predicate] can be assigned", start)

    def _expression(self) -> Expr:
        return self._or()

    def _binary_level(self, operand: Callable[[], Expr], operators: Sequence[str], kind: str = "OP") -> Expr:
        left = operand()
        while self._peek().kind == kind and self._peek().text in operators:
            token = self._next()
            left = Binary(token.line, token.column, token.text, left, operand())

        return left

    def _or(self) -> Expr:
        return self._binary_level(self._and, ("|",))

    def _and(self) -> Expr:
        return self._binary_level(self._not, ("&",))

    def _not(self) -> Expr:
        if self._check("OP", "!"):
            token = self._next()
            return Unary(token.line, token.column, "!", self._not())

        return self._comparison()

    def _comparison(self) -> Expr:
        left = self._additive()
        if self._peek().kind == "OP" and self._peek().text in _COMPARISONS:
            token = self._next()
            left = Binary(token.line, token.column, token.text, left, self._additive())
            if self._peek().kind == "OP" and self._peek().text in _COMPARISONS:
                raise self._error("Comparisons cannot be chained", self._peek())

        return left

    def _additive(self) -> Expr:
        return self._binary_level(self._product, ("+", "-"))

    def _product(self) -> Expr:
        return self._binary_level(self._matmul, ("*", "/"))

    def _matmul(self) -> Expr:
        return self._binary_level(self._range, ("%*%",), kind="MATMUL")

    def _range(self) -> Expr:
        return self._binary_level(self._unary, (":",))

    def _unary(self) -> Expr:
        if self._check("OP", "-"):
            token = self._next()
            return Unary(token.line, token.column, "-", self._unary())

        if self._check("OP", "+"):
            self._next()
            return self._unary()

        return self._power()

    def _power(self) -> Expr:
        left = self._postfix()
        while self._check("OP", "^"):
            token = self._next()
            if self._check("OP", "-"):
                sign = self._next()
                exponent = Unary(sign.line, sign.column, "-", self._postfix())
            else:
                exponent = self._postfix()

            left = Binary(token.line, token.column, "^", left, exponent)

        return left

    def _postfix(self) -> Expr:
        node = self._primary()
        while self._check("LBRACKET"):
            token = self._next()
            index = self._expression()
            self._expect("RBRACKET")
            node = Index(token.line, token.column, node, index)

        return node

    def _primary(self) -> Expr:
        token = self._next()
        if token.kind == "NUMBER":
            value = float(token.text)
            return Number(token.line, token.column, value, value.is_integer())

        if token.kind == "NAME":
            if not self._check("LPAREN"):
                return Name(token.line, token.column, token.text)

            self._next()
            args = []
            if not self._check("RPAREN"):
                args.append(self._expression())
                while self._check("COMMA"):
                    self._next()
                    args.append(self._expression())

            self._expect("RPAREN")
            return Call(token.line, token.column, token.text, tuple(args))

        if token.kind == "LPAREN":
            node = self._expression()
            self._expect("RPAREN")
            return node

        found = token.text or "end of script"
        raise self._error(f"Unexpected {found!r}", token)


def parse(text: str) -> Script:
    """Parse script text."""
    return Parser(text).parse()


# Lowering

Operand = Union[ExprNode, float]


@dataclass(frozen=True)
class PrintRequest:
    """A value to print, the node is evaluated only when the script runs."""

    line: int
    value: Operand


@dataclass
class CompiledScript:
    """Final name bindings and the print requests of a script, nothing evaluated yet."""

    environment: Environment
    prints: List[PrintRequest] = field(default_factory=list)

    @property
    def roots(self) -> List[ExprNode]:
        """DAG roots forced by print statements."""
        return [request.value for request in self.prints if isinstance(request.value, ExprNode)]


class Compiler:
    """Lowers a parsed script onto deferred DAG nodes, folding scalar arithmetic."""

    def __init__(self, store: Union[str, Path], seed: int = 42, block_scalars: Optional[int] = None):
        """Initialize compiler resolving free names against matrices of the store."""
        self.store = Path(store)
        self.seed = seed
        self.block_scalars = block_scalars
        self._leaves = {}

    def compile(self, script: Script) -> CompiledScript:
        """Lower all statements, resolving every name before anything runs."""
        compiled = CompiledScript(Environment())
        for statement in script.statements:
            if isinstance(statement, Print):
                compiled.prints.append(PrintRequest(statement.line, self._lower(statement.value, compiled.environment)))
            elif isinstance(statement, Assign):
                value = self._lower(statement.value, compiled.environment)
                compiled.environment = compiled.environment.assign(statement.name, self._as_node(value))
            else:
                compiled.environment = self._masked_assign(statement, compiled.environment)

        _LOGGER.debug(f"Compiled {len(script.statements)} statement(s), {len(compiled.prints)} print(s)")
        return compiled

    def _masked_assign(self, statement: MaskedAssign, environment: Environment) -> Environment:
        target = self._resolve(statement.name, environment)
        if not isinstance(target, ExprNode) or target.is_scalar:
            raise UnsupportedAssignmentError(f"{statement.name!r} is a scalar and cannot be assigned by a mask")

        predicate = self._lower(statement.predicate, environment)
        if not isinstance(predicate, ExprNode) or not is_mask(predicate):
            raise UnsupportedAssignmentError(f"Line {statement.line}: masked assignment needs a comparison predicate")

        value = self._lower(statement.value, environment)
        if isinstance(value, ExprNode):
            raise UnsupportedAssignmentError(f"Line {statement.line}: only scalars can be assigned through a mask")

        return environment.assign(statement.name, build("subst", target, predicate, value))

    @staticmethod
    def _as_node(value: Operand) -> ExprNode:
        return value if isinstance(value, ExprNode) else ScalarConst(value)

    def _resolve(self, name: str, environment: Environment) -> Operand:
        if name in environment:
            node = environment.lookup(name)
            return node.value if isinstance(node, ScalarConst) else node

        if name not in self._leaves:
            matrix = find_matrix(self.store, name)
            if matrix is None:
                raise UndefinedNameError(f"Name {name!r} is neither assigned nor stored in {self.store}")

            self._check_block_size(matrix)
            self._leaves[name] = Leaf(matrix, name=name)

        return self._leaves[name]

    def _check_block_size(self, matrix: StoredMatrix) -> None:
        if self.block_scalars is not None and matrix.block_scalars != self.block_scalars:
            raise BudgetError(
                f"{matrix.name} is stored with blocks of {matrix.block_scalars} scalars, "
                f"the budget uses {self.block_scalars}"
            )

    def _lower(self, expr: Expr, environment: Environment) -> Operand:
        if isinstance(expr, Number):
            return expr.value

        if isinstance(expr, Name):
            return self._resolve(expr.name, environment)

        if isinstance(expr, Unary):
            return self._unary(expr, self._lower(expr.operand, environment))

        if isinstance(expr, Binary):
            left = self._lower(expr.left, environment)
            right = self._lower(expr.right, environment)
            return self._binary(expr, left, right)

        if isinstance(expr, Call):
            return self._call(expr, [self._lower(arg, environment) for arg in expr.args])

        return self._index(expr, self._lower(expr.target, environment), self._lower(expr.index, environment))

    @staticmethod
    def _unary(expr: Unary, operand: Operand) -> Operand:
        if expr.op == "-":
            return -operand if not isinstance(operand, ExprNode) else build("negate", operand)

        if not isinstance(operand, ExprNode):
            return float(not operand)

        return build("not", operand)

    def _binary(self, expr: Binary, left: Operand, right: Operand) -> Operand:
        scalars = not isinstance(left, ExprNode) and not isinstance(right, ExprNode)
        if expr.op in _ARITHMETIC:
            op = _ARITHMETIC[expr.op]
            if scalars:
                with np.errstate(all="ignore"):
                    return float(BINARY_OPS[op](np.float64(left), np.float64(right)))

            if op == "pow" and not isinstance(right, ExprNode) and right == 2:
                return build("square", left)

            return build(op, left, right)

        if expr.op in _COMPARISONS:
            return self._compare(expr, _COMPARISONS[expr.op], left, right)

        if expr.op in ("&", "|"):
            if scalars:
                return float(bool(left) and bool(right)) if expr.op == "&" else float(bool(left) or bool(right))

            if not isinstance(left, ExprNode) or not isinstance(right, ExprNode):
                raise ShapeMismatchError(f"Line {expr.line}: {expr.op!r} combines two masks")

            return build("and" if expr.op == "&" else "or", left, right)

        if expr.op == "%*%":
            if scalars or not isinstance(left, ExprNode) or not isinstance(right, ExprNode):
                raise ShapeMismatchError(f"Line {expr.line}: %*% multiplies two matrices")

            return build("matmul", left, right)

        return self._range(expr, left, right)

    @staticmethod
    def _compare(expr: Binary, op: str, left: Operand, right: Operand) -> Operand:
        if not isinstance(left, ExprNode) and not isinstance(right, ExprNode):
            if op == "ne":
                return float(left != right)

            return float(COMPARE_OPS[op](left, right))

        if isinstance(left, ExprNode) and isinstance(right, ExprNode):
            raise ShapeMismatchError(f"Line {expr.line}: arrays can only be compared against scalars")

        if not isinstance(left, ExprNode):
            left, right, op = right, left, _FLIPPED[op]

        if op == "ne":
            return build("not", build("eq", left, right))

        return build(op, left, right)

    @staticmethod
    def _integer(value: Operand, expr: Expr, what: str) -> int:
        if isinstance(value, ExprNode) or not float(value).is_integer():
            raise ScriptSyntaxError(f"{what} must be an integer", expr.line, expr.column)

        return int(value)

    def _range(self, expr: Binary, left: Operand, right: Operand) -> ExprNode:
        lo = self._integer(left, expr.left, "Range start")
        hi = self._integer(right, expr.right, "Range end")
        return build("range", lo, hi)

    def _call(self, expr: Call, args: List[Operand]) -> Operand:
        if expr.function in ("sqrt", "square") and len(args) == 1:
            if not isinstance(args[0], ExprNode):
                with np.errstate(all="ignore"):
                    return float(UNARY_OPS[expr.function](np.float64(args[0])))

            return build(expr.function, args[0])

        if expr.function == "length" and len(args) == 1:
            return float(args[0].shape.size) if isinstance(args[0], ExprNode) else 1.0

        if expr.function == "sample" and len(args) in (2, 3):
            n = self._integer(args[0], expr.args[0], "Sample population")
            k = self._integer(args[1], expr.args[1], "Sample size")
            seed = self._integer(args[2], expr.args[2], "Sample seed") if len(args) == 3 else self.seed
            return build("sample", n, k, seed)

        if expr.function in ("sqrt", "square", "length", "sample"):
            raise ScriptSyntaxError(f"Wrong number of arguments for {expr.function}()", expr.line, expr.column)

        raise UndefinedNameError(f"Line {expr.line}: unknown function {expr.function!r}")

    def _index(self, expr: Index, target: Operand, index: Operand) -> ExprNode:
        if not isinstance(target, ExprNode):
            raise ShapeMismatchError(f"Line {expr.line}: scalars cannot be indexed")

        if not isinstance(index, ExprNode):
            position = int(np.trunc(index))
            index = build("range", position, position)

        if is_mask(index):
            raise UnsupportedAssignmentError(
                f"Line {expr.line}: logical indexing is only supported on the left of an assignment"
            )

        return build("gather", target, index)


def compile_script(
    text: str, store: Union[str, Path], seed: int = 42, block_scalars: Optional[int] = None
) -> CompiledScript:
    """Parse and lower a script."""
    return Compiler(store, seed=seed, block_scalars=block_scalars).compile(parse(text))
