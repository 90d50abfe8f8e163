"""Triangle meshes: OBJ parsing and surface voxelization.

Voxelization rasterizes the surface only (interiors stay empty): each
triangle is supersampled on a barycentric lattice dense enough that no
in-triangle voxel can be missed, and every sampled point marks the voxel
containing it under half-open voxel intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, MeshParseError
from .voxel import VoxelGrid


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64 vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise MeshParseError("triangle index out of range")


def parse_obj(text: str) -> TriMesh:
    """Parse ``v`` and ``f`` records from Wavefront OBJ text.

    Polygon faces are fan-triangulated, ``v/vt/vn`` suffixes are ignored,
    negative indices count from the end, and unknown record types are
    skipped.  Parse errors report the 1-based line number.
    """
    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshParseError(f"vertex needs 3 coordinates: {raw.strip()!r}", line=lineno)
            try:
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise MeshParseError(f"bad vertex coordinate: {raw.strip()!r}", line=lineno)
        elif tag == "f":
            if len(parts) < 4:
                raise MeshParseError(f"face needs at least 3 vertices: {raw.strip()!r}", line=lineno)
            idx = []
            for token in parts[1:]:
                head = token.split("/", 1)[0]
                try:
                    ref = int(head)
                except ValueError:
                    raise MeshParseError(f"bad face index {token!r}", line=lineno)
                if ref == 0:
                    raise MeshParseError("face index 0 is not allowed", line=lineno)
                resolved = ref - 1 if ref > 0 else len(vertices) + ref
                if resolved < 0 or resolved >= len(vertices):
                    raise MeshParseError(f"face index {ref} out of range", line=lineno)
                idx.append(resolved)
            for second, third in zip(idx[1:-1], idx[2:]):
                triangles.append((idx[0], second, third))
        # all other record types (vn, vt, o, g, s, usemtl, ...) are skipped
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                   np.array(triangles, dtype=np.int64).reshape(-1, 3))


def load_obj(path) -> TriMesh:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        return parse_obj(fh.read())


def voxelize_surface(mesh: TriMesh, n: int = 64) -> VoxelGrid:
    """Rasterize the mesh surface into an n^3 grid tightly fitting the shape.

    The grid cube is isotropic: its edge equals the longest bounding-box
    extent and the shape is centered along the other axes, so the result is
    invariant to global translation and uniform scaling.
    """
    if len(mesh.triangles) == 0:
        raise DegenerateInputError("mesh has no triangles")
    verts = mesh.vertices
    used = verts[np.unique(mesh.triangles)]
    lo = used.min(axis=0)
    hi = used.max(axis=0)
    extent = hi - lo
    scale = float(extent.max())
    if scale <= 0.0:
        raise DegenerateInputError("mesh bounding box has zero extent")
    translate = lo - (scale - extent) / 2.0

    bits = np.zeros((n, n, n), dtype=np.uint8)
    voxel_edge = scale / n
    tri_pts = verts[mesh.triangles]  # (T, 3, 3)
    for a, b, c in tri_pts:
        ab = b - a
        ac = c - a
        # lattice spacing <= 1/4 voxel edge guarantees no voxel is skipped
        steps = int(np.ceil(4.0 * max(np.linalg.norm(ab), np.linalg.norm(ac)) / voxel_edge))
        steps = max(steps, 1)
        u = np.arange(steps + 1) / steps
        uu, vv = np.meshgrid(u, u, indexing="ij")
        keep = uu + vv <= 1.0 + 1e-12
        pts = a + uu[keep, None] * ab + vv[keep, None] * ac
        idx = np.floor((pts - translate) / scale * n).astype(np.int64)
        np.clip(idx, 0, n - 1, out=idx)
        bits[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return VoxelGrid(n, bits, tuple(float(t) for t in translate), scale)
