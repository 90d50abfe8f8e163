"""Binary occupancy grids and their run-length-encoded file format.

The file layout follows the de-facto binvox convention: an ASCII header
(``#binvox 1`` / ``dim n n n`` / ``translate tx ty tz`` / ``scale s`` /
``data``) followed by (value, count) byte pairs with counts in 1..255.
The linear voxel index is ``x*n*n + z*n + y`` (x slowest, y fastest).
Internally the occupancy array is indexed ``[x, y, z]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VoxelFormatError

GRID_AXES_TO_FILE = (0, 2, 1)  # [x, y, z] -> x, z, y file order


@dataclass(eq=False)
class VoxelGrid:
    """n^3 binary occupancy with the world placement of the grid cube.

    ``translate`` is the world position of the grid's corner and ``scale``
    the world length of the cube edge; voxel (i, j, k) has world center
    ``translate + scale * ((i, j, k) + 0.5) / n``.
    """

    n: int
    bits: np.ndarray
    translate: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        self.translate = tuple(float(t) for t in self.translate)
        self.scale = float(self.scale)
        if self.bits.shape != (self.n, self.n, self.n):
            raise VoxelFormatError(
                f"bits shape {self.bits.shape} does not match resolution {self.n}")
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise VoxelFormatError("occupancy must be strictly binary")

    @classmethod
    def empty(cls, n: int) -> "VoxelGrid":
        return cls(n, np.zeros((n, n, n), dtype=np.uint8))

    def occupied_count(self) -> int:
        return int(self.bits.sum())

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.bits == 1)

    def voxel_centers_world(self, indices: np.ndarray) -> np.ndarray:
        t = np.asarray(self.translate, dtype=np.float64)
        return t + self.scale * (indices + 0.5) / self.n

    def as_float_array(self, dtype=np.float32) -> np.ndarray:
        return self.bits.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (self.n == other.n and self.translate == other.translate
                and self.scale == other.scale and np.array_equal(self.bits, other.bits))


def write_voxels(grid: VoxelGrid) -> bytes:
    header = (
        "#binvox 1\n"
        f"dim {grid.n} {grid.n} {grid.n}\n"
        f"translate {grid.translate[0]!r} {grid.translate[1]!r} {grid.translate[2]!r}\n"
        f"scale {grid.scale!r}\n"
        "data\n"
    ).encode("ascii")
    flat = grid.bits.transpose(GRID_AXES_TO_FILE).reshape(-1)
    runs = bytearray()
    total = flat.size
    # run boundaries via change points, chunked at the 255-count limit
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [total]))
    for s, e in zip(starts, ends):
        value = int(flat[s])
        length = int(e - s)
        while length > 0:
            c = min(length, 255)
            runs.append(value)
            runs.append(c)
            length -= c
    return header + bytes(runs)


def read_voxels(blob: bytes) -> VoxelGrid:
    offset = 0

    def next_line():
        nonlocal offset
        end = blob.find(b"\n", offset)
        if end < 0:
            raise VoxelFormatError("truncated header", offset=offset)
        line = blob[offset:end].decode("ascii", errors="replace").strip()
        offset = end + 1
        return line

    magic = next_line()
    if not magic.startswith("#binvox"):
        raise VoxelFormatError(f"bad magic {magic!r}", offset=0)
    n = None
    translate = (0.0, 0.0, 0.0)
    scale = 1.0
    while True:
        at = offset
        line = next_line()
        if line == "data":
            break
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "dim":
            if len(parts) != 4 or len(set(parts[1:])) != 1:
                raise VoxelFormatError(f"unsupported dim line {line!r}", offset=at)
            n = int(parts[1])
        elif parts[0] == "translate":
            translate = tuple(float(v) for v in parts[1:4])
        elif parts[0] == "scale":
            scale = float(parts[1])
        else:
            raise VoxelFormatError(f"unknown header line {line!r}", offset=at)
    if n is None:
        raise VoxelFormatError("missing dim line", offset=offset)

    total = n * n * n
    flat = np.empty(total, dtype=np.uint8)
    filled = 0
    pos = offset
    while filled < total:
        if pos + 2 > len(blob):
            raise VoxelFormatError("truncated RLE stream", offset=pos)
        value, count = blob[pos], blob[pos + 1]
        if value not in (0, 1):
            raise VoxelFormatError(f"run value {value} is not binary", offset=pos)
        if count < 1:
            raise VoxelFormatError("zero-length run", offset=pos + 1)
        if filled + count > total:
            raise VoxelFormatError(
                f"runs overflow the grid ({filled + count} > {total})", offset=pos + 1)
        flat[filled:filled + count] = value
        filled += count
        pos += 2
    if pos != len(blob):
        raise VoxelFormatError("trailing bytes after final run", offset=pos)
    bits = flat.reshape(n, n, n).transpose(GRID_AXES_TO_FILE)
    return VoxelGrid(n, bits, translate, scale)


def load_voxels(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        return read_voxels(fh.read())


def save_voxels(grid: VoxelGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_voxels(grid))
