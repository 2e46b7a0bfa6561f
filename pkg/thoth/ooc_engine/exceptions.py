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

"""Exceptions raised by the out-of-core array engine."""


class OOCEngineException(Exception):
    """A base class for the engine exception hierarchy."""


class ShapeMismatchError(OOCEngineException):
    """Raised when operand shapes are not compatible for an operation."""


class UndefinedNameError(OOCEngineException):
    """Raised when a name is not bound in the environment nor present in the store."""


class UnsupportedAssignmentError(OOCEngineException):
    """Raised on assignments that cannot be modelled as a masked substitution."""


class IndexOutOfRangeError(OOCEngineException):
    """Raised when a 1-based index falls outside of the indexed vector."""


class ScriptSyntaxError(OOCEngineException):
    """Raised when a script cannot be parsed."""

    def __init__(self, message: str, line: int, column: int):
        """Initialize syntax error with its position in the script."""
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class BudgetError(OOCEngineException):
    """Raised when a resource budget is not usable."""


class PoolExhaustedError(OOCEngineException):
    """Raised when all buffer pool frames are pinned and a new one is requested."""


class PlanError(OOCEngineException):
    """Raised when a physical plan cannot be built or executed as requested."""


class StorageError(OOCEngineException):
    """Raised on failures of the on-disk tiled storage."""

    def __init__(self, message: str, path: str = None):
        """Initialize storage error with the offending path."""
        super().__init__(f"{message} ({path})" if path else message)
        self.path = path


class CorruptHeaderError(StorageError):
    """Raised when a stored matrix header cannot be parsed."""


class StreamLengthError(StorageError):
    """Raised when an imported element stream does not match the declared shape."""
