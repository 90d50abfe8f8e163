"""Reflection-plane detection, map symmetrization, and thresholding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateInputError, ShapeError
from .voxel import VoxelGrid

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class SymmetryPlane:
    axis: str                 # x | y | z
    position: float           # half-integer voxel coordinate of the plane
    score: float              # fraction of occupied voxels whose mirror is occupied


def _mirror_indices(idx: np.ndarray, position: float) -> np.ndarray:
    return np.round(2.0 * position - idx).astype(np.int64)


def _axis_score(bits: np.ndarray, axis: int, position: float) -> float:
    occ = np.argwhere(bits == 1)
    mirrored = occ.copy()
    mirrored[:, axis] = _mirror_indices(occ[:, axis], position)
    n = bits.shape[0]
    inside = (mirrored[:, axis] >= 0) & (mirrored[:, axis] < n)
    hits = np.zeros(len(occ), dtype=bool)
    m = mirrored[inside]
    hits[inside] = bits[m[:, 0], m[:, 1], m[:, 2]] == 1
    return float(hits.mean())


def detect_symmetry_plane(grid: VoxelGrid) -> SymmetryPlane:
    """Best mirror plane through the occupancy centroid, ties broken x<y<z.

    The plane position is the centroid coordinate rounded to the nearest
    half voxel so mirrored indices stay integral; the score is the fraction
    of occupied voxels whose mirror voxel is also occupied.
    """
    if grid.occupied_count() == 0:
        raise DegenerateInputError("cannot detect symmetry of an empty grid")
    occ = np.argwhere(grid.bits == 1)
    best: SymmetryPlane | None = None
    for axis in range(3):
        centroid = float(occ[:, axis].mean())
        position = np.round(2.0 * centroid) / 2.0
        score = _axis_score(grid.bits, axis, position)
        if best is None or score > best.score:
            best = SymmetryPlane(AXES[axis], position, score)
    return best


def mirror_map(values: np.ndarray, axis: int, position: float) -> np.ndarray:
    """Mirror a volume across the plane; out-of-grid mirrors read as zero."""
    n = values.shape[axis]
    src = _mirror_indices(np.arange(n), position)
    inside = (src >= 0) & (src < n)
    out = np.zeros_like(values)
    take = np.take(values, src[inside], axis=axis)
    dest = [slice(None)] * values.ndim
    dest[axis] = np.arange(n)[inside]
    out[tuple(dest)] = take
    return out


def symmetrize_map(values: np.ndarray, plane: SymmetryPlane, grid: VoxelGrid) -> np.ndarray:
    """Voxelwise max of the map and its mirror image, re-masked by occupancy."""
    if values.shape != grid.bits.shape:
        raise ShapeError(
            f"map dims {list(values.shape)} do not match grid dims {list(grid.bits.shape)}")
    axis = AXES.index(plane.axis)
    mirrored = mirror_map(values, axis, plane.position)
    return np.maximum(values, mirrored) * grid.bits


def threshold_map(values: np.ndarray, t: float, grid: VoxelGrid) -> np.ndarray:
    """Binary mask of occupied voxels whose map value exceeds t."""
    if not 0.0 <= t <= 1.0:
        raise ArgumentError(f"threshold must be in [0, 1], got {t}")
    if values.shape != grid.bits.shape:
        raise ShapeError(
            f"map dims {list(values.shape)} do not match grid dims {list(grid.bits.shape)}")
    return (values > t) & (grid.bits == 1)
