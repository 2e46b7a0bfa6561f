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

"""Buffer pool enforcing the memory budget and counting every block transfer."""

import logging
import math

from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import replace
from typing import Dict, Iterator, Tuple

import numpy as np

from .exceptions import BudgetError
from .exceptions import PoolExhaustedError
from .exceptions import StorageError
from .tiled_store import DEFAULT_BLOCK_SCALARS
from .tiled_store import MIN_BLOCK_SCALARS
from .tiled_store import StoredMatrix

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResourceBudget:
    """Memory budget M and block size B, both in scalars."""

    memory_scalars: int
    block_scalars: int = DEFAULT_BLOCK_SCALARS

    def __post_init__(self):
        """Validate budget."""
        if self.block_scalars < MIN_BLOCK_SCALARS:
            raise BudgetError(f"Block size {self.block_scalars} is below the minimum of {MIN_BLOCK_SCALARS} scalars")

        if self.memory_scalars < 3 * self.block_scalars:
            raise BudgetError(
                f"Memory of {self.memory_scalars} scalars holds fewer than 3 blocks of {self.block_scalars}"
            )

        if self.memory_scalars % self.block_scalars:
            raise BudgetError(f"Memory {self.memory_scalars} is not a multiple of block size {self.block_scalars}")

    @property
    def frames(self) -> int:
        """Number of block frames the pool holds."""
        return self.memory_scalars // self.block_scalars

    @property
    def square_side(self) -> int:
        """Side of a square tile."""
        return math.isqrt(self.block_scalars)


@dataclass
class IoCounters:
    """Block transfers and arithmetic performed since the last reset."""

    blocks_read: int = 0
    blocks_written: int = 0
    elements_computed: int = 0
    peak_pinned_blocks: int = 0

    def to_dict(self) -> Dict[str, int]:
        """Convert counters to a plain dictionary."""
        return asdict(self)


class Frame:
    """A pinned block of the pool."""

    __slots__ = ("matrix", "block_offset", "replica", "data", "dirty", "pin_count")

    def __init__(self, matrix: StoredMatrix, block_offset: int, data: np.ndarray, replica: int = 0):
        """Initialize frame."""
        self.matrix = matrix
        self.block_offset = block_offset
        self.replica = replica
        self.data = data
        self.dirty = False
        self.pin_count = 0

    @property
    def key(self) -> Tuple[str, int, int]:
        """Key of the frame inside of the pool."""
        return self.matrix.key, self.block_offset, self.replica


class BufferPool:
    """Fixed number of block frames with pin, LRU eviction and lazy write-back."""

    def __init__(self, budget: ResourceBudget):
        """Initialize an empty pool."""
        self.budget = budget
        self.counters = IoCounters()
        self._frames: "OrderedDict[Tuple[str, int, int], Frame]" = OrderedDict()
        self._pinned_frames = 0

    @property
    def resident_scalars(self) -> int:
        """Scalars currently held in the pool."""
        return len(self._frames) * self.budget.block_scalars

    @property
    def pinned_blocks(self) -> int:
        """Number of frames currently pinned."""
        return self._pinned_frames

    def get_block(self, matrix: StoredMatrix, block_offset: int, mode: str = "read", replica: int = 0) -> Frame:
        """Pin a block, reading it on a miss unless the caller is going to overwrite it.

        Replicas other than 0 are separate read-only frames of the same block, each read from disk.
        """
        if mode not in ("read", "write"):
            raise ValueError(f"Unknown access mode {mode!r}")

        if replica and mode == "write":
            raise ValueError("Block replicas are read-only")

        if matrix.block_scalars != self.budget.block_scalars:
            raise StorageError(
                f"Block size {matrix.block_scalars} does not match pool block size {self.budget.block_scalars}",
                path=str(matrix.path),
            )

        if not 0 <= block_offset < matrix.n_blocks:
            raise StorageError(f"Block {block_offset} is outside of the data region", path=str(matrix.path))

        key = (matrix.key, block_offset, replica)
        frame = self._frames.get(key)
        if frame is not None:
            self._frames.move_to_end(key)
        else:
            if len(self._frames) >= self.budget.frames:
                self._evict()

            if mode == "read":
                data = matrix._read_block(block_offset)
                self.counters.blocks_read += 1
            else:
                data = np.zeros(self.budget.block_scalars)

            frame = Frame(matrix, block_offset, data, replica)
            self._frames[key] = frame
            assert self.resident_scalars <= self.budget.memory_scalars, "Resident scalars exceed the memory budget"

        if frame.pin_count == 0:
            self._pinned_frames += 1
            self.counters.peak_pinned_blocks = max(self.counters.peak_pinned_blocks, self._pinned_frames)

        frame.pin_count += 1
        return frame

    def unpin(self, frame: Frame, dirty: bool = False, discard: bool = False) -> None:
        """Unpin a frame, optionally marking it dirty or releasing it right away."""
        if frame.pin_count <= 0:
            raise PoolExhaustedError(f"Frame {frame.key} is not pinned")

        frame.dirty = frame.dirty or dirty
        frame.pin_count -= 1
        if frame.pin_count:
            return

        self._pinned_frames -= 1
        if discard:
            self._release(frame)

    @contextmanager
    def pinned(self, matrix: StoredMatrix, block_offset: int, mode: str = "read") -> Iterator[Frame]:
        """Pin a block for the duration of a with block, write mode marks it dirty."""
        frame = self.get_block(matrix, block_offset, mode=mode)
        try:
            yield frame
        finally:
            self.unpin(frame, dirty=(mode == "write"))

    def _write_back(self, frame: Frame) -> None:
        """Write a dirty frame to disk."""
        frame.matrix._write_block(frame.block_offset, frame.data)
        self.counters.blocks_written += 1
        frame.dirty = False

    def _release(self, frame: Frame) -> None:
        """Write back if needed and remove an unpinned frame from the pool."""
        if frame.dirty:
            self._write_back(frame)

        del self._frames[frame.key]

    def _evict(self) -> None:
        """Evict the least recently used unpinned frame."""
        for frame in self._frames.values():
            if frame.pin_count == 0:
                _LOGGER.debug(f"Evicting block {frame.block_offset} of {frame.matrix.path} (dirty={frame.dirty})")
                self._release(frame)
                return

        raise PoolExhaustedError(f"All {self.budget.frames} frames of the buffer pool are pinned")

    def flush(self) -> int:
        """Write all dirty frames, return number of blocks written."""
        written = 0
        for frame in self._frames.values():
            if frame.dirty:
                self._write_back(frame)
                written += 1

        return written

    def flush_matrix(self, matrix: StoredMatrix) -> int:
        """Write dirty frames of one matrix."""
        written = 0
        for frame in self._frames.values():
            if frame.dirty and frame.matrix.key == matrix.key:
                self._write_back(frame)
                written += 1

        return written

    def drop_matrix(self, matrix: StoredMatrix) -> None:
        """Forget all frames of a matrix that is about to be deleted, without write-back."""
        for key in [key for key in self._frames if key[0] == matrix.key]:
            if self._frames[key].pin_count:
                raise PoolExhaustedError(f"Cannot drop pinned block {key[1]} of {matrix.path}")

            del self._frames[key]

    def evict_all(self) -> None:
        """Flush and release every unpinned frame."""
        for frame in [frame for frame in self._frames.values() if frame.pin_count == 0]:
            self._release(frame)

    def count_elements(self, count: int) -> None:
        """Account scalar results computed by the executor."""
        self.counters.elements_computed += int(count)

    def reset_counters(self) -> None:
        """Reset counters, the peak of pinned frames restarts from the current number."""
        self.counters = IoCounters(peak_pinned_blocks=self._pinned_frames)

    def stats(self) -> IoCounters:
        """Return a snapshot of the counters."""
        return replace(self.counters)
