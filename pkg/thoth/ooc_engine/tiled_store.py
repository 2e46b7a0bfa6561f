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

"""On-disk format for tiled matrices.

A stored matrix is a single file made of fixed size blocks of B scalars (64-bit IEEE-754,
little-endian). Block 0 holds the header, the data region follows it:

    offset  size  field
    0       4     magic, the bytes ``RIOT``
    4       2     format version (uint16), currently 1
    6       8     rows (uint64)
    14      8     cols (uint64)
    22      8     tile_rows (uint64)
    30      8     tile_cols (uint64)
    38      1     linearization code (0 tile-row-major, 1 tile-col-major, 2 Z-order)
    39      1     element type code (1 float64 little-endian)
    40      8     block size B in scalars (uint64)
    48      1     layout code (1 row strips, 2 column strips, 3 square)

The rest of the header block is zero. Every tile occupies ``blocks_per_tile`` consecutive
blocks in the data region, elements stored row-major inside the tile, edge tiles padded
with zeros. Tiles are placed in the order given by the linearization; for Z-order the
real tiles are compacted by their rank along the curve.
"""

import logging
import math
import struct

from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Tuple, Union

import numpy as np

from .exceptions import CorruptHeaderError
from .exceptions import ShapeMismatchError
from .exceptions import StorageError
from .exceptions import StreamLengthError

_LOGGER = logging.getLogger(__name__)

MAGIC = b"RIOT"
FORMAT_VERSION = 1
ELEMENT_FLOAT64_LE = 1
HEADER_FORMAT = "<4sHQQQQBBQB"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
SCALAR_SIZE = 8
ELEMENT_DTYPE = np.dtype("<f8")

DEFAULT_BLOCK_SCALARS = 1024
# The header has to fit into one block.
MIN_BLOCK_SCALARS = -(-HEADER_SIZE // SCALAR_SIZE)

MATRIX_SUFFIX = ".riot"


class LayoutKind(Enum):
    """Shape of the tiles a matrix is partitioned into."""

    ROW_STRIPS = 1
    COL_STRIPS = 2
    SQUARE = 3


class Linearization(Enum):
    """Order in which tiles are laid out on disk."""

    TILE_ROW_MAJOR = 0
    TILE_COL_MAJOR = 1
    Z_ORDER = 2

    def linear_index(self, ti: int, tj: int, grid_rows: int, grid_cols: int) -> int:
        """Position of tile (ti, tj) among all tiles of a grid_rows x grid_cols grid."""
        if self is Linearization.TILE_ROW_MAJOR:
            return ti * grid_cols + tj

        if self is Linearization.TILE_COL_MAJOR:
            return tj * grid_rows + ti

        return z_order_rank(ti, tj, grid_rows, grid_cols)


@dataclass(frozen=True)
class Shape:
    """Logical shape of a 2-D array, vectors are rows x 1."""

    rows: int
    cols: int

    def __post_init__(self):
        """Validate dimensions."""
        # Zero rows is only produced by an empty selection.
        if self.rows < 0 or self.cols < 1:
            raise ShapeMismatchError(f"Invalid shape {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        """Number of scalars."""
        return self.rows * self.cols

    @property
    def is_vector(self) -> bool:
        """Check whether the shape describes a column vector."""
        return self.cols == 1

    def __str__(self) -> str:
        """Render shape as used in plan dumps."""
        return f"{self.rows}x{self.cols}"


@dataclass(frozen=True)
class TileSpec:
    """Tile dimensions together with the layout they were derived from."""

    tile_rows: int
    tile_cols: int
    layout_kind: LayoutKind

    @classmethod
    def row_strips(cls, block_scalars: int) -> "TileSpec":
        """Long and skinny tiles along rows, one block each."""
        return cls(1, block_scalars, LayoutKind.ROW_STRIPS)

    @classmethod
    def col_strips(cls, block_scalars: int) -> "TileSpec":
        """Long and skinny tiles along columns, one block each."""
        return cls(block_scalars, 1, LayoutKind.COL_STRIPS)

    @classmethod
    def square(cls, block_scalars: int) -> "TileSpec":
        """Square tiles of area at most B."""
        side = math.isqrt(block_scalars)
        return cls(side, side, LayoutKind.SQUARE)

    @classmethod
    def for_layout(cls, layout_kind: LayoutKind, block_scalars: int) -> "TileSpec":
        """Build the tile spec a layout kind implies for the given block size."""
        if layout_kind is LayoutKind.ROW_STRIPS:
            return cls.row_strips(block_scalars)

        if layout_kind is LayoutKind.COL_STRIPS:
            return cls.col_strips(block_scalars)

        return cls.square(block_scalars)

    @classmethod
    def default_for(cls, shape: Shape, block_scalars: int) -> "TileSpec":
        """Tiling used for results: column strips for vectors, square tiles otherwise."""
        if shape.is_vector:
            return cls.col_strips(block_scalars)

        return cls.square(block_scalars)

    def validate(self, block_scalars: int) -> None:
        """Check tile dimensions against the layout invariants for block size B."""
        expected = TileSpec.for_layout(self.layout_kind, block_scalars)
        if (self.tile_rows, self.tile_cols) != (expected.tile_rows, expected.tile_cols):
            raise StorageError(
                f"Tile {self.tile_rows}x{self.tile_cols} does not match layout {self.layout_kind.name} "
                f"for block size {block_scalars}, expected {expected.tile_rows}x{expected.tile_cols}"
            )

    def blocks_per_tile(self, block_scalars: int) -> int:
        """Number of blocks one (padded) tile occupies."""
        return -(-(self.tile_rows * self.tile_cols) // block_scalars)


def morton_code(ti: int, tj: int) -> int:
    """Interleave bits, tile-row bit k goes to bit 2k and tile-col bit k to bit 2k+1."""
    code = 0
    bit = 0
    while ti or tj:
        code |= (ti & 1) << (2 * bit)
        code |= (tj & 1) << (2 * bit + 1)
        ti >>= 1
        tj >>= 1
        bit += 1

    return code


def _overlap(start: int, length: int, limit: int) -> int:
    """Length of [start, start + length) clipped to [0, limit)."""
    return max(0, min(start + length, limit) - start)


def z_order_rank(ti: int, tj: int, grid_rows: int, grid_cols: int) -> int:
    """Rank of tile (ti, tj) along the Z curve counting only tiles inside the grid.

    The grid is padded conceptually to the next power of two per axis; tiles of the
    padding are skipped, so ranks are dense in [0, grid_rows * grid_cols).
    """
    levels = max(grid_rows - 1, grid_cols - 1, 1).bit_length()
    rank = 0
    row_start = 0
    col_start = 0
    for level in reversed(range(levels)):
        half = 1 << level
        row_bit = (ti >> level) & 1
        col_bit = (tj >> level) & 1
        position = 2 * col_bit + row_bit
        for quadrant in range(position):
            quadrant_row, quadrant_col = quadrant & 1, quadrant >> 1
            rank += _overlap(row_start + quadrant_row * half, half, grid_rows) * _overlap(
                col_start + quadrant_col * half, half, grid_cols
            )

        row_start += row_bit * half
        col_start += col_bit * half

    return rank


class StoredMatrix:
    """Handle to an on-disk tiled 2-D array."""

    def __init__(self, path: Path, shape: Shape, tiles: TileSpec, lin: Linearization, block_scalars: int):
        """Initialize handle, the file is opened lazily."""
        self.path = Path(path)
        self.shape = shape
        self.tiles = tiles
        self.lin = lin
        self.block_scalars = block_scalars
        self._handle = None

    def __repr__(self) -> str:
        """Represent stored matrix."""
        return (
            f"StoredMatrix(path='{self.path}', shape={self.shape}, layout={self.tiles.layout_kind.name}, "
            f"lin={self.lin.name})"
        )

    @property
    def key(self) -> str:
        """Identify the matrix inside the buffer pool."""
        return str(self.path)

    @property
    def name(self) -> str:
        """Name of the matrix as referenced from scripts."""
        return self.path.name[: -len(MATRIX_SUFFIX)] if self.path.name.endswith(MATRIX_SUFFIX) else self.path.name

    @property
    def grid_rows(self) -> int:
        """Number of tile rows."""
        return -(-self.shape.rows // self.tiles.tile_rows)

    @property
    def grid_cols(self) -> int:
        """Number of tile columns."""
        return -(-self.shape.cols // self.tiles.tile_cols)

    @property
    def n_tiles(self) -> int:
        """Number of tiles stored."""
        return self.grid_rows * self.grid_cols

    @property
    def blocks_per_tile(self) -> int:
        """Number of blocks a tile occupies."""
        return self.tiles.blocks_per_tile(self.block_scalars)

    @property
    def n_blocks(self) -> int:
        """Size of the data region in blocks."""
        return self.n_tiles * self.blocks_per_tile

    def _block_position(self, block_offset: int) -> int:
        """Byte position of a data block, the header block comes first."""
        return (1 + block_offset) * self.block_scalars * SCALAR_SIZE

    def _open(self):
        """Open the underlying file for reading and writing."""
        if self._handle is None:
            try:
                self._handle = open(self.path, "r+b")
            except OSError as exc:
                raise StorageError(f"Cannot open stored matrix: {exc}", path=str(self.path)) from exc

        return self._handle

    def _read_block(self, block_offset: int) -> np.ndarray:
        """Read one data block from disk, called by the buffer pool only."""
        handle = self._open()
        size = self.block_scalars * SCALAR_SIZE
        try:
            handle.seek(self._block_position(block_offset))
            payload = handle.read(size)
        except OSError as exc:
            raise StorageError(f"Cannot read block {block_offset}: {exc}", path=str(self.path)) from exc

        if len(payload) != size:
            raise StorageError(f"Truncated block {block_offset}", path=str(self.path))

        return np.frombuffer(payload, dtype=ELEMENT_DTYPE).astype(np.float64)

    def _write_block(self, block_offset: int, data: np.ndarray) -> None:
        """Write one data block to disk, called by the buffer pool only."""
        handle = self._open()
        try:
            handle.seek(self._block_position(block_offset))
            handle.write(np.ascontiguousarray(data, dtype=ELEMENT_DTYPE).tobytes())
        except OSError as exc:
            raise StorageError(f"Cannot write block {block_offset}: {exc}", path=str(self.path)) from exc

    def close(self) -> None:
        """Close the underlying file."""
        if self._handle is not None:
            self._handle.close()
            self._handle = None


def _pack_header(shape: Shape, tiles: TileSpec, lin: Linearization, block_scalars: int) -> bytes:
    """Serialize header into one zero padded block."""
    header = struct.pack(
        HEADER_FORMAT,
        MAGIC,
        FORMAT_VERSION,
        shape.rows,
        shape.cols,
        tiles.tile_rows,
        tiles.tile_cols,
        lin.value,
        ELEMENT_FLOAT64_LE,
        block_scalars,
        tiles.layout_kind.value,
    )
    return header.ljust(block_scalars * SCALAR_SIZE, b"\0")


def create_matrix(
    path: Union[str, Path],
    shape: Shape,
    tiles: TileSpec,
    lin: Linearization = Linearization.TILE_ROW_MAJOR,
    block_scalars: int = DEFAULT_BLOCK_SCALARS,
    derived: bool = False,
) -> StoredMatrix:
    """Create a zero initialized stored matrix, only derived results may have no rows."""
    if shape.rows < 1 and not derived:
        raise ShapeMismatchError(f"Stored matrix {path} needs at least one row, got {shape}")

    if block_scalars < MIN_BLOCK_SCALARS:
        raise StorageError(f"Block of {block_scalars} scalars cannot hold the {HEADER_SIZE} byte header")

    tiles.validate(block_scalars)
    matrix = StoredMatrix(Path(path), shape, tiles, lin, block_scalars)
    try:
        with open(matrix.path, "wb") as stored_file:
            stored_file.write(_pack_header(shape, tiles, lin, block_scalars))
            stored_file.truncate((1 + matrix.n_blocks) * block_scalars * SCALAR_SIZE)
    except OSError as exc:
        raise StorageError(f"Cannot create stored matrix: {exc}", path=str(path)) from exc

    _LOGGER.debug(f"Created {matrix} with {matrix.n_tiles} tiles of {matrix.blocks_per_tile} block(s)")
    return matrix


def open_matrix(path: Union[str, Path]) -> StoredMatrix:
    """Open an existing stored matrix, the header is read outside of the buffer pool."""
    path = Path(path)
    try:
        with open(path, "rb") as stored_file:
            payload = stored_file.read(HEADER_SIZE)
            file_size = path.stat().st_size
    except OSError as exc:
        raise StorageError(f"Cannot open stored matrix: {exc}", path=str(path)) from exc

    if len(payload) != HEADER_SIZE:
        raise CorruptHeaderError("Header is truncated", path=str(path))

    fields = struct.unpack(HEADER_FORMAT, payload)
    magic, version, rows, cols, tile_rows, tile_cols, lin_code, element_code, block_scalars, layout_code = fields
    if magic != MAGIC or version != FORMAT_VERSION or element_code != ELEMENT_FLOAT64_LE:
        raise CorruptHeaderError(f"Unknown format (magic={magic!r}, version={version})", path=str(path))

    try:
        lin = Linearization(lin_code)
        tiles = TileSpec(tile_rows, tile_cols, LayoutKind(layout_code))
        tiles.validate(block_scalars)
        shape = Shape(rows, cols)
    except (ValueError, StorageError, ShapeMismatchError) as exc:
        raise CorruptHeaderError(f"Invalid header field: {exc}", path=str(path)) from exc

    matrix = StoredMatrix(path, shape, tiles, lin, block_scalars)
    if file_size != (1 + matrix.n_blocks) * block_scalars * SCALAR_SIZE:
        raise CorruptHeaderError(f"File size {file_size} does not match header", path=str(path))

    return matrix


def delete_matrix(matrix: StoredMatrix, pool=None) -> None:
    """Remove a stored matrix, dropping its frames from the pool without write-back."""
    if pool is not None:
        pool.drop_matrix(matrix)

    matrix.close()
    try:
        matrix.path.unlink()
    except FileNotFoundError:
        pass
    except OSError as exc:
        raise StorageError(f"Cannot delete stored matrix: {exc}", path=str(matrix.path)) from exc

    _LOGGER.debug(f"Deleted {matrix.path}")


def _check_tile(matrix: StoredMatrix, ti: int, tj: int) -> None:
    """Check tile coordinates are inside of the tile grid."""
    if not (0 <= ti < matrix.grid_rows and 0 <= tj < matrix.grid_cols):
        raise StorageError(
            f"Tile ({ti}, {tj}) is outside of the {matrix.grid_rows}x{matrix.grid_cols} tile grid",
            path=str(matrix.path),
        )


def tile_address(matrix: StoredMatrix, ti: int, tj: int) -> int:
    """Offset of the first block of tile (ti, tj) inside of the data region."""
    _check_tile(matrix, ti, tj)
    linear_index = matrix.lin.linear_index(ti, tj, matrix.grid_rows, matrix.grid_cols)
    return linear_index * matrix.blocks_per_tile


def tile_bounds(matrix: StoredMatrix, ti: int, tj: int) -> Tuple[int, int, int, int]:
    """In-bounds element range (row_start, row_end, col_start, col_end) of a tile."""
    row_start = ti * matrix.tiles.tile_rows
    col_start = tj * matrix.tiles.tile_cols
    row_end = min(row_start + matrix.tiles.tile_rows, matrix.shape.rows)
    col_end = min(col_start + matrix.tiles.tile_cols, matrix.shape.cols)
    return row_start, row_end, col_start, col_end


def read_tile(matrix: StoredMatrix, ti: int, tj: int, pool) -> np.ndarray:
    """Read a tile through the buffer pool, only in-bounds elements are exposed."""
    _check_tile(matrix, ti, tj)
    first_block = tile_address(matrix, ti, tj)
    padded = np.empty(matrix.blocks_per_tile * matrix.block_scalars)
    for block in range(matrix.blocks_per_tile):
        with pool.pinned(matrix, first_block + block) as frame:
            padded[block * matrix.block_scalars : (block + 1) * matrix.block_scalars] = frame.data

    row_start, row_end, col_start, col_end = tile_bounds(matrix, ti, tj)
    tile = padded[: matrix.tiles.tile_rows * matrix.tiles.tile_cols].reshape(
        matrix.tiles.tile_rows, matrix.tiles.tile_cols
    )
    return tile[: row_end - row_start, : col_end - col_start].copy()


def write_tile(matrix: StoredMatrix, ti: int, tj: int, data: np.ndarray, pool) -> None:
    """Write in-bounds elements of a tile through the buffer pool, padding with zeros."""
    _check_tile(matrix, ti, tj)
    row_start, row_end, col_start, col_end = tile_bounds(matrix, ti, tj)
    data = np.asarray(data, dtype=np.float64)
    if data.shape != (row_end - row_start, col_end - col_start):
        raise ShapeMismatchError(
            f"Tile ({ti}, {tj}) expects {row_end - row_start}x{col_end - col_start} elements, got {data.shape}"
        )

    padded = np.zeros(matrix.blocks_per_tile * matrix.block_scalars)
    tile = padded[: matrix.tiles.tile_rows * matrix.tiles.tile_cols].reshape(
        matrix.tiles.tile_rows, matrix.tiles.tile_cols
    )
    tile[: data.shape[0], : data.shape[1]] = data

    first_block = tile_address(matrix, ti, tj)
    for block in range(matrix.blocks_per_tile):
        with pool.pinned(matrix, first_block + block, mode="write") as frame:
            frame.data[:] = padded[block * matrix.block_scalars : (block + 1) * matrix.block_scalars]


@contextmanager
def pinned_tile(matrix: StoredMatrix, ti: int, tj: int, pool, mode: str = "read") -> Iterator[np.ndarray]:
    """Pin a single-block tile and expose the padded tile as a view on its frame."""
    if matrix.blocks_per_tile != 1:
        raise StorageError("Pinned tile access requires single-block tiles", path=str(matrix.path))

    with pool.pinned(matrix, tile_address(matrix, ti, tj), mode=mode) as frame:
        yield frame.data[: matrix.tiles.tile_rows * matrix.tiles.tile_cols].reshape(
            matrix.tiles.tile_rows, matrix.tiles.tile_cols
        )


def read_region(matrix: StoredMatrix, row_start: int, row_end: int, col_start: int, col_end: int, pool) -> np.ndarray:
    """Read an arbitrary rectangular region, visiting every overlapping tile once."""
    region = np.empty((row_end - row_start, col_end - col_start))
    tile_rows, tile_cols = matrix.tiles.tile_rows, matrix.tiles.tile_cols
    for ti in range(row_start // tile_rows, -(-row_end // tile_rows)):
        for tj in range(col_start // tile_cols, -(-col_end // tile_cols)):
            tile = read_tile(matrix, ti, tj, pool)
            tile_row_start, _, tile_col_start, _ = tile_bounds(matrix, ti, tj)
            top = max(row_start, tile_row_start)
            bottom = min(row_end, tile_row_start + tile.shape[0])
            left = max(col_start, tile_col_start)
            right = min(col_end, tile_col_start + tile.shape[1])
            region[top - row_start : bottom - row_start, left - col_start : right - col_start] = tile[
                top - tile_row_start : bottom - tile_row_start, left - tile_col_start : right - tile_col_start
            ]

    return region


def _iter_chunks(row_major_stream: Union[np.ndarray, Iterable]) -> Iterator[np.ndarray]:
    """Turn an array or an iterable of row-major pieces into flat float64 chunks."""
    if isinstance(row_major_stream, np.ndarray):
        yield np.ravel(row_major_stream).astype(np.float64, copy=False)
        return

    for chunk in row_major_stream:
        yield np.ravel(np.asarray(chunk, dtype=np.float64))


def import_dense(
    path: Union[str, Path],
    shape: Shape,
    tiles: TileSpec,
    lin: Linearization,
    row_major_stream: Union[np.ndarray, Iterable],
    pool,
    derived: bool = False,
) -> StoredMatrix:
    """Create a stored matrix from a row-major stream of scalars, one band of tiles at a time."""
    matrix = create_matrix(path, shape, tiles, lin, block_scalars=pool.budget.block_scalars, derived=derived)
    chunks = _iter_chunks(row_major_stream)
    pending = []
    pending_size = 0
    try:
        for ti in range(matrix.grid_rows):
            row_start, row_end, _, _ = tile_bounds(matrix, ti, 0)
            needed = (row_end - row_start) * shape.cols
            while pending_size < needed:
                chunk = next(chunks, None)
                if chunk is None:
                    raise StreamLengthError(
                        f"Stream ended after {row_start * shape.cols + pending_size} of {shape.size} scalars",
                        path=str(path),
                    )
                pending.append(chunk)
                pending_size += chunk.size

            flat = np.concatenate(pending) if len(pending) > 1 else pending[0]
            band = flat[:needed].reshape(row_end - row_start, shape.cols)
            rest = flat[needed:]
            pending = [rest] if rest.size else []
            pending_size = rest.size

            for tj in range(matrix.grid_cols):
                _, _, col_start, col_end = tile_bounds(matrix, ti, tj)
                write_tile(matrix, ti, tj, band[:, col_start:col_end], pool)

        extra = pending_size + sum(chunk.size for chunk in chunks)
        if extra:
            raise StreamLengthError(f"Stream has {extra} scalars more than {shape.size}", path=str(path))
    except Exception:
        delete_matrix(matrix, pool)
        raise

    pool.flush_matrix(matrix)
    return matrix


def export_dense(matrix: StoredMatrix, pool) -> Iterator[np.ndarray]:
    """Stream a stored matrix in row-major order, one band of tiles per chunk."""
    for ti in range(matrix.grid_rows):
        row_start, row_end, _, _ = tile_bounds(matrix, ti, 0)
        band = np.empty((row_end - row_start, matrix.shape.cols))
        for tj in range(matrix.grid_cols):
            _, _, col_start, col_end = tile_bounds(matrix, ti, tj)
            band[:, col_start:col_end] = read_tile(matrix, ti, tj, pool)

        yield band.ravel()


def load_dense(matrix: StoredMatrix, pool) -> np.ndarray:
    """Read a whole stored matrix into memory."""
    chunks = list(export_dense(matrix, pool))
    flat = np.concatenate(chunks) if chunks else np.empty(0)
    return flat.reshape(matrix.shape.rows, matrix.shape.cols)


def relayout(
    matrix: StoredMatrix, path: Union[str, Path], tiles: TileSpec, lin: Linearization, pool
) -> StoredMatrix:
    """Copy a stored matrix into another tiling, every transfer goes through the pool."""
    converted = create_matrix(path, matrix.shape, tiles, lin, block_scalars=matrix.block_scalars, derived=True)
    for ti in range(converted.grid_rows):
        for tj in range(converted.grid_cols):
            row_start, row_end, col_start, col_end = tile_bounds(converted, ti, tj)
            write_tile(converted, ti, tj, read_region(matrix, row_start, row_end, col_start, col_end, pool), pool)

    pool.flush_matrix(converted)
    _LOGGER.debug(f"Converted {matrix.path} to {tiles.layout_kind.name} tiles at {converted.path}")
    return converted


def matrix_path(store: Union[str, Path], name: str) -> Path:
    """Path of a named matrix inside of a store directory."""
    return Path(store) / f"{name}{MATRIX_SUFFIX}"


def find_matrix(store: Union[str, Path], name: str) -> Optional[StoredMatrix]:
    """Open a named matrix from a store directory if it exists."""
    path = matrix_path(store, name)
    if not path.exists():
        return None

    return open_matrix(path)
