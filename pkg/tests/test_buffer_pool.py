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

"""Tests of the buffer pool."""

from collections import OrderedDict

import numpy as np
import pytest

from thoth.ooc_engine.buffer_pool import BufferPool
from thoth.ooc_engine.buffer_pool import ResourceBudget
from thoth.ooc_engine.exceptions import BudgetError
from thoth.ooc_engine.exceptions import PoolExhaustedError
from thoth.ooc_engine.exceptions import StorageError
from thoth.ooc_engine.tiled_store import Linearization
from thoth.ooc_engine.tiled_store import Shape
from thoth.ooc_engine.tiled_store import TileSpec
from thoth.ooc_engine.tiled_store import create_matrix
from thoth.ooc_engine.tiled_store import load_dense
from thoth.ooc_engine.tiled_store import matrix_path


@pytest.fixture
def four_frames():
    """Pool of four 16 scalar frames."""
    return BufferPool(ResourceBudget(64, 16))


@pytest.fixture
def ten_blocks(store):
    """Vector of ten column strips."""
    return create_matrix(
        matrix_path(store, "v"), Shape(160, 1), TileSpec.col_strips(16), Linearization.TILE_ROW_MAJOR, 16
    )


class TestResourceBudget:
    """Budget validation."""

    def test_frames(self):
        """M / B frames of isqrt(B) wide square tiles."""
        budget = ResourceBudget(3072, 1024)
        assert budget.frames == 3
        assert budget.square_side == 32

    @pytest.mark.parametrize(
        "memory_scalars,block_scalars",
        [(32, 16), (100, 16), (60, 6)],
    )
    def test_invalid(self, memory_scalars, block_scalars):
        """Fewer than three frames, a partial frame or a block below the header size."""
        with pytest.raises(BudgetError):
            ResourceBudget(memory_scalars, block_scalars)


class TestBufferPool:
    """Pinning, replacement and write-back."""

    def test_lru_replacement(self, four_frames, ten_blocks):
        """Misses match a least recently used simulation of the same access sequence."""
        accesses = np.random.default_rng(7).integers(0, ten_blocks.n_blocks, size=300)
        resident = OrderedDict()
        expected_misses = 0
        for block in accesses:
            block = int(block)
            if block in resident:
                resident.move_to_end(block)
                continue

            expected_misses += 1
            if len(resident) == 4:
                resident.popitem(last=False)
            resident[block] = True

        for block in accesses:
            with four_frames.pinned(ten_blocks, int(block)):
                assert four_frames.resident_scalars <= four_frames.budget.memory_scalars

        assert four_frames.stats().blocks_read == expected_misses
        assert four_frames.stats().blocks_written == 0

    def test_pinned_frames_are_not_evicted(self, four_frames, ten_blocks):
        """With every frame pinned another block cannot be brought in."""
        frames = [four_frames.get_block(ten_blocks, block) for block in range(4)]
        assert four_frames.pinned_blocks == 4

        with pytest.raises(PoolExhaustedError):
            four_frames.get_block(ten_blocks, 4)

        four_frames.unpin(frames[2])
        frame = four_frames.get_block(ten_blocks, 4)

        assert frame.block_offset == 4
        assert four_frames.stats().peak_pinned_blocks == 4
        assert four_frames.stats().blocks_read == 5

    def test_repeated_pins(self, four_frames, ten_blocks):
        """A block pinned twice stays pinned until both pins are released."""
        first = four_frames.get_block(ten_blocks, 0)
        second = four_frames.get_block(ten_blocks, 0)
        assert first is second
        assert four_frames.pinned_blocks == 1

        four_frames.unpin(first)
        assert four_frames.pinned_blocks == 1
        four_frames.unpin(second)
        assert four_frames.pinned_blocks == 0

        with pytest.raises(PoolExhaustedError):
            four_frames.unpin(second)

    def test_replicas(self, four_frames, ten_blocks):
        """A replica of a pinned block is a frame of its own, read from disk again."""
        original = four_frames.get_block(ten_blocks, 2)
        replica = four_frames.get_block(ten_blocks, 2, replica=1)

        assert original is not replica
        assert replica.key == (ten_blocks.key, 2, 1)
        assert four_frames.pinned_blocks == 2
        assert four_frames.stats().blocks_read == 2
        np.testing.assert_array_equal(original.data, replica.data)

        four_frames.unpin(replica, discard=True)
        four_frames.unpin(original)
        assert four_frames.resident_scalars == 16

    def test_replicas_are_read_only(self, four_frames, ten_blocks):
        """Replicas cannot be pinned for writing."""
        with pytest.raises(ValueError):
            four_frames.get_block(ten_blocks, 0, mode="write", replica=1)

        assert four_frames.pinned_blocks == 0

    def test_lazy_write_back(self, four_frames, ten_blocks, small_budget):
        """Dirty frames reach the disk on eviction or flush, write mode skips the read."""
        with four_frames.pinned(ten_blocks, 3, mode="write") as frame:
            frame.data[:] = 7.0

        assert four_frames.stats().blocks_read == 0
        assert four_frames.stats().blocks_written == 0

        assert four_frames.flush() == 1
        assert four_frames.stats().blocks_written == 1
        assert four_frames.flush() == 0

        values = load_dense(ten_blocks, BufferPool(small_budget))
        np.testing.assert_array_equal(values[48:64, 0], np.full(16, 7.0))
        np.testing.assert_array_equal(values[:48, 0], np.zeros(48))

    def test_eviction_writes_dirty_frame(self, four_frames, ten_blocks):
        """Evicting a dirty frame writes it exactly once."""
        with four_frames.pinned(ten_blocks, 0, mode="write") as frame:
            frame.data[:] = 1.0

        for block in range(1, 5):
            with four_frames.pinned(ten_blocks, block):
                pass

        assert four_frames.stats().blocks_written == 1
        assert four_frames.stats().blocks_read == 4

    def test_discard_releases_frame(self, four_frames, ten_blocks):
        """Unpinning with discard frees the frame right away."""
        frame = four_frames.get_block(ten_blocks, 0)
        four_frames.unpin(frame, discard=True)

        assert four_frames.resident_scalars == 0

    def test_block_size_mismatch(self, four_frames, store):
        """Blocks of another size cannot enter the pool."""
        matrix = create_matrix(matrix_path(store, "big"), Shape(64, 1), TileSpec.col_strips(64), block_scalars=64)

        with pytest.raises(StorageError):
            four_frames.get_block(matrix, 0)

    def test_block_outside_data_region(self, four_frames, ten_blocks):
        """Block offsets are checked against the data region."""
        with pytest.raises(StorageError):
            four_frames.get_block(ten_blocks, 10)

    def test_reset_counters(self, four_frames, ten_blocks):
        """Counters restart, the pinned peak restarts from the pins still held."""
        frame = four_frames.get_block(ten_blocks, 0)
        with four_frames.pinned(ten_blocks, 1):
            pass
        four_frames.count_elements(5)

        four_frames.reset_counters()

        assert four_frames.stats().to_dict() == {
            "blocks_read": 0,
            "blocks_written": 0,
            "elements_computed": 0,
            "peak_pinned_blocks": 1,
        }
        four_frames.unpin(frame)
