"""Procedural tagged voxel shapes with ground-truth part masks.

Shapes are generated directly in voxel space from seeded random
proportions, composed of axis-aligned boxes and hollowed to a surface
shell, mirroring how surface voxelization renders real meshes.  The
"chair" family optionally carries two side armrest slabs whose voxels are
recorded as the ground-truth part mask; the "table" family uses a lower
shelf slab as its part.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ArgumentError, DatasetError
from .voxel import VoxelGrid, load_voxels, save_voxels

FAMILIES = ("chair", "table")
PART_TAG = {"chair": "armrest", "table": "shelf"}


@dataclass
class TaggedShape:
    id: str
    grid: VoxelGrid
    tags: dict[str, int]
    gt_masks: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ShapeRecord:
    id: str
    path: str
    tags: dict[str, int]
    split: str
    gt_path: Optional[str] = None


@dataclass
class DatasetManifest:
    records: list[ShapeRecord]
    seed: int
    params: dict[str, str]

    def split_records(self, split: str) -> list[ShapeRecord]:
        return [r for r in self.records if r.split == split]


def _box(solid: np.ndarray, x0, x1, y0, y1, z0, z1) -> None:
    n = solid.shape[0]
    solid[max(x0, 0):min(x1, n), max(y0, 0):min(y1, n), max(z0, 0):min(z1, n)] = True


def _hollow(solid: np.ndarray) -> np.ndarray:
    """Keep only voxels with at least one empty 6-neighbour (or on the border)."""
    padded = np.pad(solid, 1)
    interior = np.ones_like(solid)
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    return solid & ~interior


def _gen_chair(rng, m: int, with_part: bool) -> tuple[np.ndarray, np.ndarray]:
    """Chair in a canonical m^3 frame: seat slab, 4 legs, optional back,
    optional armrest slabs (the tagged part)."""

    def frac(lo, hi):
        return int(round(m * rng.uniform(lo, hi)))

    solid = np.zeros((m, m, m), dtype=bool)
    part = np.zeros_like(solid)

    z_seat = frac(0.40, 0.56)
    t_seat = max(2, frac(0.05, 0.10))
    x0, x1 = frac(0.02, 0.14), m - frac(0.02, 0.14)
    y0, y1 = frac(0.02, 0.14), m - frac(0.02, 0.14)
    _box(solid, x0, x1, y0, y1, z_seat - t_seat, z_seat)

    leg = max(2, frac(0.06, 0.12))
    z_floor = frac(0.0, 0.05)
    for lx in (x0, x1 - leg):
        for ly in (y0, y1 - leg):
            _box(solid, lx, lx + leg, ly, ly + leg, z_floor, z_seat - t_seat)

    # back slab: random presence and height, independent of the part tag
    if rng.uniform() < 0.75:
        tb = max(2, frac(0.04, 0.09))
        _box(solid, x0, x1, y1 - tb, y1, z_seat, frac(0.72, 0.95))

    if with_part:
        ta = max(2, frac(0.05, 0.08))
        z_arm = z_seat + max(3, frac(0.08, 0.16))
        ay0 = y0 + max(3, frac(0.14, 0.22))
        ay1 = y1 - frac(0.0, 0.05)
        arm = np.zeros_like(solid)
        _box(arm, x0, x0 + ta, ay0, ay1, z_seat, z_arm)
        _box(arm, x1 - ta, x1, ay0, ay1, z_seat, z_arm)
        part = arm & ~solid
        solid |= arm
    return solid, part


def _gen_table(rng, m: int, with_part: bool) -> tuple[np.ndarray, np.ndarray]:
    """Table analog: top slab, 4 legs, optional lower shelf (the part)."""

    def frac(lo, hi):
        return int(round(m * rng.uniform(lo, hi)))

    solid = np.zeros((m, m, m), dtype=bool)
    part = np.zeros_like(solid)

    z_top = frac(0.52, 0.70)
    t_top = max(2, frac(0.04, 0.08))
    x0, x1 = frac(0.02, 0.12), m - frac(0.02, 0.12)
    y0, y1 = frac(0.02, 0.12), m - frac(0.02, 0.12)
    _box(solid, x0, x1, y0, y1, z_top - t_top, z_top)
    leg = max(2, frac(0.05, 0.10))
    z_floor = frac(0.0, 0.05)
    for lx in (x0, x1 - leg):
        for ly in (y0, y1 - leg):
            _box(solid, lx, lx + leg, ly, ly + leg, z_floor, z_top - t_top)
    if with_part:
        ts = max(2, frac(0.04, 0.07))
        z_shelf = frac(0.18, 0.34)
        inset = leg + max(1, frac(0.02, 0.08))
        shelf = np.zeros_like(solid)
        _box(shelf, x0 + inset, x1 - inset, y0 + inset, y1 - inset, z_shelf, z_shelf + ts)
        part = shelf & ~solid
        solid |= shelf
    return solid, part


def gen_shape(family: str, with_part: bool, seed, n: int = 32, shape_id: str | None = None) -> TaggedShape:
    """Generate one tagged shape; bit-identical for identical arguments.

    Proportions, overall scale, grid placement, and yaw orientation are all
    drawn from the seed, so no absolute voxel position or fixed body
    template is informative about the tag; only the part region is.
    """
    if family not in FAMILIES:
        raise ArgumentError(f"unknown family {family!r}; choose from {FAMILIES}")
    rng = np.random.default_rng(np.random.SeedSequence([int(s) for s in np.atleast_1d(seed)]))

    m = int(round(n * rng.uniform(0.62, 1.0)))
    build = _gen_chair if family == "chair" else _gen_table
    solid_m, part_m = build(rng, m, with_part)

    # paste the canonical frame at a random offset, then a random yaw
    solid = np.zeros((n, n, n), dtype=bool)
    part = np.zeros_like(solid)
    off = [int(rng.integers(0, n - m + 1)) for _ in range(3)]
    solid[off[0]:off[0] + m, off[1]:off[1] + m, off[2]:off[2] + m] = solid_m
    part[off[0]:off[0] + m, off[1]:off[1] + m, off[2]:off[2] + m] = part_m
    yaw = int(rng.integers(0, 4))
    if yaw:
        solid = np.ascontiguousarray(np.rot90(solid, yaw, axes=(0, 1)))
        part = np.ascontiguousarray(np.rot90(part, yaw, axes=(0, 1)))

    shell = _hollow(solid)
    gt = part & shell
    tag = PART_TAG[family]
    shape_id = shape_id or f"{family}-{'pos' if with_part else 'neg'}"
    return TaggedShape(
        id=shape_id,
        grid=VoxelGrid(n, shell.astype(np.uint8)),
        tags={tag: int(with_part)},
        gt_masks={tag: gt} if with_part else {},
    )


def _assign_splits(ids: list[str], fractions: tuple[float, float, float], seed: int, stream: int) -> dict[str, str]:
    order = sorted(ids)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 904, stream]))
    perm = rng.permutation(len(order))
    shuffled = [order[i] for i in perm]
    n_train = round(fractions[0] * len(order))
    n_val = round(fractions[1] * len(order))
    assignment = {}
    for i, sid in enumerate(shuffled):
        if i < n_train:
            assignment[sid] = "train"
        elif i < n_train + n_val:
            assignment[sid] = "val"
        else:
            assignment[sid] = "test"
    return assignment


def gen_dataset(out_dir, family: str, count_pos: int, count_neg: int,
                split_fractions=(0.45, 0.05, 0.5), seed: int = 0, n: int = 32) -> DatasetManifest:
    """Generate a dataset on disk and return (and write) its manifest."""
    if count_pos <= 0 or count_neg <= 0:
        raise ArgumentError("both class counts must be positive")
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise ArgumentError(f"split fractions must sum to 1, got {split_fractions}")
    os.makedirs(out_dir, exist_ok=True)
    shapes_dir = os.path.join(out_dir, "shapes")
    os.makedirs(shapes_dir, exist_ok=True)

    tag = PART_TAG[family]
    records: list[ShapeRecord] = []
    class_ids = {1: [], 0: []}
    for with_part, count in ((True, count_pos), (False, count_neg)):
        for i in range(count):
            sid = f"{family}-{'pos' if with_part else 'neg'}-{i:05d}"
            class_ids[int(with_part)].append(sid)
    splits = {}
    splits.update(_assign_splits(class_ids[1], split_fractions, seed, stream=1))
    splits.update(_assign_splits(class_ids[0], split_fractions, seed, stream=0))

    for with_part in (True, False):
        for i, sid in enumerate(class_ids[int(with_part)]):
            shape = gen_shape(family, with_part, seed=[seed, int(with_part), i], n=n, shape_id=sid)
            rel = os.path.join("shapes", f"{sid}.binvox")
            save_voxels(shape.grid, os.path.join(out_dir, rel))
            gt_rel = None
            if with_part:
                gt_rel = os.path.join("shapes", f"{sid}.gt.binvox")
                save_voxels(VoxelGrid(n, shape.gt_masks[tag].astype(np.uint8)),
                            os.path.join(out_dir, gt_rel))
            records.append(ShapeRecord(sid, rel, dict(shape.tags), splits[sid], gt_rel))

    records.sort(key=lambda r: r.id)
    manifest = DatasetManifest(
        records=records,
        seed=seed,
        params={
            "family": family,
            "res": str(n),
            "count_pos": str(count_pos),
            "count_neg": str(count_neg),
            "split_fractions": " ".join(str(f) for f in split_fractions),
        },
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.txt"))
    manifest.params["_base"] = os.path.abspath(out_dir)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["# voxpart manifest v1", f"seed {manifest.seed}"]
    for key, value in sorted(manifest.params.items()):
        if key.startswith("_"):
            continue
        lines.append(f"param {key} {value}")
    for r in manifest.records:
        tags = " ".join(f"tag:{k}={v}" for k, v in sorted(r.tags.items()))
        gt = f" gt={r.gt_path}" if r.gt_path else ""
        lines.append(f"record id={r.id} path={r.path} split={r.split} {tags}{gt}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    base = os.path.dirname(os.path.abspath(path))
    records = []
    seed = 0
    params: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "seed":
                seed = int(parts[1])
            elif parts[0] == "param":
                params[parts[1]] = " ".join(parts[2:])
            elif parts[0] == "record":
                fields = dict(p.split("=", 1) for p in parts[1:])
                tags = {k[4:]: int(v) for k, v in fields.items() if k.startswith("tag:")}
                records.append(ShapeRecord(fields["id"], fields["path"], tags,
                                           fields["split"], fields.get("gt")))
            else:
                raise DatasetError(f"unknown manifest line {line!r}")
    manifest = DatasetManifest(records, seed, params)
    for r in manifest.records:
        if not os.path.exists(os.path.join(base, r.path)):
            raise DatasetError(f"shape file missing for id {r.id}: {r.path}")
    manifest.params["_base"] = base
    return manifest


@dataclass
class LoadedShape:
    id: str
    grid: VoxelGrid
    tags: dict[str, int]
    gt: Optional[np.ndarray]  # bool mask of the part voxels, or None


def load_split(manifest: DatasetManifest, split: str) -> list[LoadedShape]:
    base = manifest.params.get("_base", ".")
    shapes = []
    for r in manifest.split_records(split):
        path = os.path.join(base, r.path)
        if not os.path.exists(path):
            raise DatasetError(f"shape file missing for id {r.id}: {r.path}")
        grid = load_voxels(path)
        gt = None
        if r.gt_path:
            gt = load_voxels(os.path.join(base, r.gt_path)).bits.astype(bool)
        shapes.append(LoadedShape(r.id, grid, dict(r.tags), gt))
    return shapes


# ---------------------------------------------------------------------------
# rotation augmentation: the 24 axis-aligned cube rotations
# ---------------------------------------------------------------------------

def _proper_rotations() -> list[tuple[tuple[int, int, int], tuple[bool, bool, bool]]]:
    rotations = []
    from itertools import permutations, product
    for perm in permutations(range(3)):
        sign_perm = np.zeros((3, 3))
        for i, p in enumerate(perm):
            sign_perm[i, p] = 1.0
        for flips in product((False, True), repeat=3):
            mat = sign_perm * np.array([[-1.0 if f else 1.0] for f in flips])
            if np.linalg.det(mat) > 0:
                rotations.append((perm, flips))
    return rotations


ROTATIONS_24 = _proper_rotations()


def rotate_bits(bits: np.ndarray, rotation: int) -> np.ndarray:
    """Apply one of the 24 proper axis-aligned rotations to a cube array."""
    perm, flips = ROTATIONS_24[rotation % 24]
    out = np.transpose(bits, perm)
    for axis, flip in enumerate(flips):
        if flip:
            out = np.flip(out, axis=axis)
    return np.ascontiguousarray(out)


@dataclass
class Batch:
    x: np.ndarray            # [B, 1, n, n, n] float32
    labels: np.ndarray       # [B] int64 (tag value)
    occupancy: np.ndarray    # [B, n, n, n] bool
    gts: list[Optional[np.ndarray]]
    ids: list[str]


def batches(shapes: list[LoadedShape], tag: str, batch_size: int, *,
            seed: int = 0, epoch: int = 0, rotate: bool = False,
            balanced: bool = True) -> Iterator[Batch]:
    """Deterministic batch stream; order is a pure function of (seed, epoch).

    With ``balanced`` the two classes are interleaved alternately; rotation
    applies one of the 24 axis-aligned rotations per shape per epoch.
    """
    if not shapes:
        raise DatasetError("empty shape list")
    if balanced:
        pos = [s for s in shapes if s.tags.get(tag, 0) == 1]
        neg = [s for s in shapes if s.tags.get(tag, 0) != 1]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7001, epoch]))
        pos = [pos[i] for i in rng.permutation(len(pos))] if pos else []
        neg = [neg[i] for i in rng.permutation(len(neg))] if neg else []
        ordered = []
        for i in range(max(len(pos), len(neg))):
            if i < len(pos):
                ordered.append(pos[i])
            if i < len(neg):
                ordered.append(neg[i])
    else:
        ordered = list(shapes)

    rot_rng = np.random.default_rng(np.random.SeedSequence([seed, 7002, epoch]))
    rotations = rot_rng.integers(0, 24, size=len(ordered)) if rotate else np.zeros(len(ordered), dtype=int)

    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start:start + batch_size]
        rots = rotations[start:start + batch_size]
        n = chunk[0].grid.n
        x = np.zeros((len(chunk), 1, n, n, n), dtype=np.float32)
        occ = np.zeros((len(chunk), n, n, n), dtype=bool)
        labels = np.zeros(len(chunk), dtype=np.int64)
        gts: list[Optional[np.ndarray]] = []
        for i, (shape, rot) in enumerate(zip(chunk, rots)):
            bits = shape.grid.bits
            gt = shape.gt
            if rotate and rot:
                bits = rotate_bits(bits, int(rot))
                gt = rotate_bits(gt, int(rot)) if gt is not None else None
            x[i, 0] = bits
            occ[i] = bits.astype(bool)
            labels[i] = shape.tags.get(tag, 0)
            gts.append(gt)
        yield Batch(x, labels, occ, gts, [s.id for s in chunk])
