"""Part-sensitive similarity, ranked search, and export artifacts.

The distance between two shapes' salient regions is a weighted symmetric
nearest-neighbour (Chamfer-style) average over the voxel centers above
threshold, computed after translating the second set so the weighted
centroids coincide.  Shapes whose salient set is empty are flagged
"no-part" and excluded from search and embedding exports.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError, NoPartError, VoxpartError
from .voxel import VoxelGrid


@dataclass
class SalientPointSet:
    points: np.ndarray    # (N, 3) voxel-center coordinates, grid units
    weights: np.ndarray   # (N,) map values above threshold
    centroid: np.ndarray  # (3,) weight-averaged position

    @property
    def empty(self) -> bool:
        return len(self.points) == 0


def extract_salient(map_values: np.ndarray, grid: VoxelGrid, threshold: float = 0.9) -> SalientPointSet:
    """Voxel centers whose (masked) map value exceeds the threshold.

    An empty result is returned as an empty set, not an error; callers
    decide whether that means "shape lacks the part".
    """
    if map_values.shape != grid.bits.shape:
        raise ArgumentError(
            f"map dims {list(map_values.shape)} do not match grid dims {list(grid.bits.shape)}")
    mask = (map_values > threshold) & (grid.bits == 1)
    idx = np.argwhere(mask)
    if len(idx) == 0:
        return SalientPointSet(np.zeros((0, 3)), np.zeros(0), np.zeros(3))
    points = idx.astype(np.float64) + 0.5
    weights = map_values[mask].astype(np.float64)
    centroid = (points * weights[:, None]).sum(axis=0) / weights.sum()
    return SalientPointSet(points, weights, centroid)


def part_distance(a: SalientPointSet, b: SalientPointSet) -> float:
    """Centroid-aligned, weighted symmetric nearest-neighbour distance.

    Zero for identical sets (or identical up to translation), symmetric,
    and nonnegative.
    """
    if a.empty or b.empty:
        raise NoPartError("part distance needs two nonempty salient sets")
    pb = b.points + (a.centroid - b.centroid)
    d2 = ((a.points[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    nn_ab = np.sqrt(d2.min(axis=1))
    nn_ba = np.sqrt(d2.min(axis=0))
    term_ab = (a.weights * nn_ab).sum() / a.weights.sum()
    term_ba = (b.weights * nn_ba).sum() / b.weights.sum()
    return 0.5 * float(term_ab + term_ba)


@dataclass
class CorpusEntry:
    id: str
    salient: SalientPointSet


def build_corpus(ids: Sequence[str], maps: Sequence[np.ndarray],
                 grids: Sequence[VoxelGrid], threshold: float = 0.9) -> list[CorpusEntry]:
    return [CorpusEntry(i, extract_salient(m, g, threshold))
            for i, m, g in zip(ids, maps, grids)]


def rank_search(query_id: str, corpus: Sequence[CorpusEntry], k: int) -> list[tuple[str, float]]:
    """Top-k most similar shapes by part distance, ascending, ties by id.

    No-part shapes are excluded from the ranking; a no-part query is an
    error (the requested tag does not appear on the query shape).
    """
    by_id = {e.id: e for e in corpus}
    if query_id not in by_id:
        raise ArgumentError(f"query id {query_id!r} is not in the corpus")
    query = by_id[query_id]
    if query.salient.empty:
        raise NoPartError(
            f"query {query_id!r} has no salient voxels; its tag may not match the trained part")
    scored = []
    for entry in corpus:
        if entry.salient.empty:
            continue
        scored.append((part_distance(query.salient, entry.salient), entry.id))
    scored.sort(key=lambda pair: (pair[0], pair[1]))
    return [(sid, dist) for dist, sid in scored[:k]]


def export_embedding_distances(corpus: Sequence[CorpusEntry], path) -> list[str]:
    """Dense symmetric distance matrix as text; returns the excluded ids.

    No-part shapes go to a sidecar exclusion list (``<path>.excluded``)
    instead of receiving infinite distances.
    """
    included = [e for e in corpus if not e.salient.empty]
    excluded = [e.id for e in corpus if e.salient.empty]
    n = len(included)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = part_distance(included[i].salient, included[j].salient)
            matrix[i, j] = matrix[j, i] = d
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(e.id for e in included) + "\n")
        for row in matrix:
            fh.write(",".join(f"{v:.9f}" for v in row) + "\n")
    with open(f"{path}.excluded", "w", encoding="ascii") as fh:
        fh.write("\n".join(excluded) + ("\n" if excluded else ""))
    return excluded


HIGHLIGHT_RGB = (255, 0, 0)
NEUTRAL_RGB = (211, 211, 211)


def export_thumbnail(grid: VoxelGrid, mask: np.ndarray, path) -> int:
    """Colored point cloud (ASCII PLY): one point per occupied voxel center,
    salient voxels highlighted red.  Returns the point count."""
    mask = np.asarray(mask).astype(bool)
    if mask.shape != grid.bits.shape:
        raise ArgumentError(
            f"mask dims {list(mask.shape)} do not match grid dims {list(grid.bits.shape)}")
    if np.any(mask & (grid.bits == 0)):
        raise VoxpartError("salient mask marks unoccupied voxels")
    idx = grid.occupied_indices()
    centers = grid.voxel_centers_world(idx)
    colors = np.where(mask[idx[:, 0], idx[:, 1], idx[:, 2], None],
                      np.array(HIGHLIGHT_RGB), np.array(NEUTRAL_RGB))
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(idx)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for c, rgb in zip(centers, colors):
        lines.append(f"{c[0]:.6f} {c[1]:.6f} {c[2]:.6f} {rgb[0]} {rgb[1]} {rgb[2]}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(idx)
