"""Per-voxel, per-branch probability maps and their on-disk format.

The ``.seg`` file is a small ASCII header (magic, resolution, branch
count, ``data``) followed by one little-endian float32 blob of
``branches * n^3`` values in branch-major, x-slowest order, aligned 1:1
with the voxel grid the map was inferred from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VoxelFormatError


@dataclass
class SegmentationMap:
    maps: np.ndarray          # [branches, n, n, n] float32 in [0, 1]
    scores: np.ndarray        # [branches] weak classification scores

    def __post_init__(self):
        self.maps = np.ascontiguousarray(self.maps, dtype=np.float32)
        self.scores = np.ascontiguousarray(self.scores, dtype=np.float32)
        if self.maps.ndim != 4 or len({self.maps.shape[1], self.maps.shape[2], self.maps.shape[3]}) != 1:
            raise VoxelFormatError(f"maps must be [K, n, n, n], got {self.maps.shape}")

    @property
    def branches(self) -> int:
        return self.maps.shape[0]

    @property
    def n(self) -> int:
        return self.maps.shape[1]

    def positive_map(self, branch: int = 1) -> np.ndarray:
        """The tag-present branch map (branch 1 in binary configurations)."""
        return self.maps[branch]


def write_segmap(seg: SegmentationMap) -> bytes:
    header = (
        "#voxseg 1\n"
        f"dim {seg.n}\n"
        f"branches {seg.branches}\n"
        f"scores {' '.join(repr(float(s)) for s in seg.scores)}\n"
        "data\n"
    ).encode("ascii")
    return header + seg.maps.astype("<f4").tobytes()


def read_segmap(blob: bytes) -> SegmentationMap:
    offset = 0

    def next_line():
        nonlocal offset
        end = blob.find(b"\n", offset)
        if end < 0:
            raise VoxelFormatError("truncated header", offset=offset)
        line = blob[offset:end].decode("ascii", errors="replace").strip()
        offset = end + 1
        return line

    if not next_line().startswith("#voxseg"):
        raise VoxelFormatError("bad segmentation map magic", offset=0)
    n = branches = None
    scores = None
    while True:
        at = offset
        line = next_line()
        if line == "data":
            break
        parts = line.split()
        if parts[0] == "dim":
            n = int(parts[1])
        elif parts[0] == "branches":
            branches = int(parts[1])
        elif parts[0] == "scores":
            scores = np.array([float(v) for v in parts[1:]], dtype=np.float32)
        else:
            raise VoxelFormatError(f"unknown header line {line!r}", offset=at)
    if n is None or branches is None:
        raise VoxelFormatError("missing dim/branches header", offset=offset)
    expected = branches * n ** 3 * 4
    body = blob[offset:]
    if len(body) != expected:
        raise VoxelFormatError(
            f"payload is {len(body)} bytes, expected {expected}", offset=offset)
    maps = np.frombuffer(body, dtype="<f4").reshape(branches, n, n, n).copy()
    if scores is None:
        scores = np.zeros(branches, dtype=np.float32)
    return SegmentationMap(maps, scores)


def load_segmap(path) -> SegmentationMap:
    with open(path, "rb") as fh:
        return read_segmap(fh.read())


def save_segmap(seg: SegmentationMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_segmap(seg))
