"""Two-phase weakly-supervised training, strong supervision, multi-label
mode, inference, and checkpointing.

The protocol: phase 1 trains the trunk with a temporary classification
head (channel-wise global max + fully-connected map) until train and val
tag accuracy both clear the stop threshold; phase 2 discards the head,
freshly initializes the segmentation branches, and trains end-to-end with
the weak score (masked branch map -> average pool -> global max) under a
growing average-pool kernel schedule.  "No pooling" is kernel 1.

All per-epoch randomness (batch order, rotations) is derived statelessly
from (seed, epoch), so a run interrupted at any epoch boundary and resumed
from its checkpoint is bitwise identical to an uninterrupted run.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .errors import ArgumentError, CheckpointError, ConfigError, DegenerateInputError
from .network import ForwardResult, NetConfig, Network, build_network, forward
from .optim import Adam
from .segmap import SegmentationMap
from .synth import DatasetManifest, LoadedShape, batches, load_split
from .tensor import Tape, Tensor
from .voxel import VoxelGrid


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "weak"                       # weak | strong | multilabel
    tag: str = "armrest"
    tags: tuple[str, ...] = ()               # multilabel tag list
    batch_size: int = 15
    lr: float = 1e-3
    seed: int = 0
    rotate: bool = False
    phase1_threshold: float = 0.95
    phase1_epoch_cap: int = 300
    schedule: tuple[tuple[int, int], ...] = ((1, 50), (2, 10))
    strong_epochs: int = 100
    strong_stop_accuracy: Optional[float] = None
    multilabel_threshold: float = 0.5

    def validate(self) -> None:
        if self.mode not in ("weak", "strong", "multilabel"):
            raise ConfigError(f"unknown training mode {self.mode!r}")
        kernels = [k for k, _ in self.schedule]
        if kernels != sorted(kernels):
            raise ConfigError(f"schedule kernels must be nondecreasing, got {kernels}")
        if any(k < 1 or e < 0 for k, e in self.schedule):
            raise ConfigError(f"bad schedule {self.schedule}")
        if not 0.0 <= self.phase1_threshold <= 1.0:
            raise ConfigError("phase1 threshold must be in [0, 1]")
        if self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("batch_size must be >= 1 and lr > 0")


def kernel_for_epoch(schedule, epoch: int) -> int:
    """Active average-pool kernel as a pure function of the epoch index."""
    at = 0
    for kernel, epochs in schedule:
        at += epochs
        if epoch < at:
            return kernel
    return schedule[-1][0]


def schedule_epochs(schedule) -> int:
    return sum(e for _, e in schedule)


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    kernel: int
    loss: float
    train_acc: float = float("nan")
    val_acc: float = float("nan")


@dataclass
class TrainResult:
    converged: bool
    epochs_run: int
    history: list[EpochRecord] = field(default_factory=list)


def _require_both_classes(shapes: list[LoadedShape], tag: str) -> None:
    labels = {s.tags.get(tag, 0) for s in shapes}
    if labels != {0, 1}:
        raise DegenerateInputError(
            f"training split needs both classes for tag {tag!r}, found labels {sorted(labels)}")


def _collect_grads(param_nodes: dict[str, T.Node]) -> dict[str, np.ndarray]:
    grads = {}
    for name, node in param_nodes.items():
        if node.grad is not None:
            grads[name] = node.grad.data
    return grads


def make_phase1_head(cfg: NetConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 501]))
    std = float(np.sqrt(1.0 / cfg.channels))
    return {
        "head.w": Tensor(rng.normal(0.0, std, size=(2, cfg.channels)).astype(np.float32)),
        "head.b": Tensor(np.zeros(2, dtype=np.float32)),
    }


def _scores_forward(net: Network, x: np.ndarray, mode: str, kernel: int,
                    head: Optional[dict[str, Tensor]]) -> tuple[Tape, ForwardResult]:
    tape = Tape()
    res = forward(net, x, mode, avgpool_kernel=kernel, tape=tape, head_params=head)
    return tape, res


def _split_accuracy(net: Network, shapes: list[LoadedShape], tag: str, batch_size: int,
                    mode: str, kernel: int, head: Optional[dict[str, Tensor]]) -> float:
    correct = 0
    total = 0
    for batch in batches(shapes, tag, batch_size, balanced=False):
        _, res = _scores_forward(net, batch.x, mode, kernel, head)
        pred = np.argmax(res.class_scores.value.data, axis=1)
        correct += int((pred == batch.labels).sum())
        total += len(batch.labels)
    return correct / total


def train_phase1(net: Network, manifest: DatasetManifest, cfg: TrainConfig,
                 head: Optional[dict[str, Tensor]] = None,
                 optimizer: Optional[Adam] = None,
                 start_epoch: int = 0,
                 history: Optional[list[EpochRecord]] = None,
                 on_epoch: Optional[Callable] = None) -> tuple[TrainResult, dict[str, Tensor]]:
    """Train trunk + temporary head until train and val accuracy clear the
    threshold (or the epoch cap is hit, reported as non-converged)."""
    cfg.validate()
    train_shapes = load_split(manifest, "train")
    val_shapes = load_split(manifest, "val")
    _require_both_classes(train_shapes, cfg.tag)
    if head is None:
        head = make_phase1_head(net.config, cfg.seed)
    trainable = dict(net.params)
    trainable.update(head)
    if optimizer is None:
        optimizer = Adam(trainable, lr=cfg.lr)
    else:
        optimizer.params = trainable
    history = history if history is not None else []
    converged = False
    epoch = start_epoch
    for epoch in range(start_epoch, cfg.phase1_epoch_cap):
        losses = []
        correct = 0
        seen = 0
        for batch in batches(train_shapes, cfg.tag, cfg.batch_size,
                             seed=cfg.seed, epoch=epoch, rotate=cfg.rotate):
            tape, res = _scores_forward(net, batch.x, "phase1", 1, head)
            loss = T.softmax_cross_entropy(res.class_scores, batch.labels)
            pred = np.argmax(res.class_scores.value.data, axis=1)
            correct += int((pred == batch.labels).sum())
            seen += len(batch.labels)
            tape.backward(loss)
            optimizer.step(_collect_grads(_param_nodes(tape, trainable)))
            losses.append(loss.value.item())
        # training accuracy is the running measure over this epoch's forwards
        train_acc = correct / seen
        val_acc = _split_accuracy(net, val_shapes, cfg.tag, cfg.batch_size, "phase1", 1, head) \
            if val_shapes else train_acc
        record = EpochRecord("phase1", epoch, 1, float(np.mean(losses)), train_acc, val_acc)
        history.append(record)
        if on_epoch:
            on_epoch("phase1", epoch, record)
        if train_acc >= cfg.phase1_threshold and val_acc >= cfg.phase1_threshold:
            converged = True
            epoch += 1
            break
    else:
        epoch = cfg.phase1_epoch_cap
    return TrainResult(converged, max(0, epoch - start_epoch), history), head


def _param_nodes(tape: Tape, params: dict[str, Tensor]) -> dict[str, T.Node]:
    """Locate the tape leaves wrapping these parameter tensors (by identity)."""
    by_obj = {id(p): name for name, p in params.items()}
    out = {}
    for node_id, record in enumerate(tape.nodes):
        if record.kind == "leaf":
            name = by_obj.get(id(tape.values[node_id]))
            if name is not None:
                out[name] = T.Node(tape, node_id)
    return out


def reinit_branches(net: Network, seed: int) -> None:
    """Fresh segmentation-branch parameters (phase 1 trained none).

    Zero weights and a negative bias start every map flat at sigmoid(-2),
    whatever magnitude the phase-1 trunk features reached: the score
    gradient then lifts the correct branch through the responsive part of
    the sigmoid instead of starting saturated, where it vanishes.  (The
    output layer has no symmetry to break, so zero weights are safe.)
    """
    del seed  # deterministic regardless; kept for call-site symmetry
    for j in range(net.config.branches):
        net.params[f"branch{j}.w"].data[...] = 0.0
        net.params[f"branch{j}.b"].data[...] = -2.0


def train_phase2(net: Network, manifest: DatasetManifest, cfg: TrainConfig,
                 optimizer: Optional[Adam] = None,
                 start_epoch: int = 0,
                 history: Optional[list[EpochRecord]] = None,
                 on_epoch: Optional[Callable] = None) -> TrainResult:
    """End-to-end weak training through the segmentation branches."""
    cfg.validate()
    train_shapes = load_split(manifest, "train")
    _require_both_classes(train_shapes, cfg.tag)
    if start_epoch == 0:
        reinit_branches(net, cfg.seed)
    if optimizer is None:
        optimizer = Adam(dict(net.params), lr=cfg.lr)
    history = history if history is not None else []
    total = schedule_epochs(cfg.schedule)
    for epoch in range(start_epoch, total):
        kernel = kernel_for_epoch(cfg.schedule, epoch)
        losses = []
        for batch in batches(train_shapes, cfg.tag, cfg.batch_size,
                             seed=cfg.seed, epoch=epoch, rotate=cfg.rotate):
            tape = Tape()
            res = forward(net, batch.x, "weak", avgpool_kernel=kernel, tape=tape)
            loss = T.softmax_cross_entropy(res.class_scores, batch.labels)
            tape.backward(loss)
            optimizer.step(_collect_grads(_param_nodes(tape, net.params)))
            losses.append(loss.value.item())
        record = EpochRecord("phase2", epoch, kernel, float(np.mean(losses)))
        history.append(record)
        if on_epoch:
            on_epoch("phase2", epoch, record)
    return TrainResult(True, max(0, total - start_epoch), history)


def train_weak(net: Network, manifest: DatasetManifest, cfg: TrainConfig,
               on_epoch: Optional[Callable] = None) -> tuple[TrainResult, TrainResult]:
    """The full two-phase protocol; the temporary head is discarded."""
    phase1, _head = train_phase1(net, manifest, cfg, on_epoch=on_epoch)
    phase2 = train_phase2(net, manifest, cfg, on_epoch=on_epoch)
    return phase1, phase2


def _voxel_labels(batch_gts, occupancy: np.ndarray) -> np.ndarray:
    labels = np.zeros(occupancy.shape, dtype=np.int64)
    for i, gt in enumerate(batch_gts):
        if gt is not None:
            labels[i][gt] = 1
    return labels


def strong_voxel_accuracy(net: Network, shapes: list[LoadedShape], tag: str,
                          batch_size: int) -> float:
    correct = 0
    total = 0
    for batch in batches(shapes, tag, batch_size, balanced=False):
        res = forward(net, batch.x, "strong")
        stacked = np.concatenate([m.value.data for m in res.branch_maps], axis=1)
        pred = np.argmax(stacked, axis=1)
        gt = _voxel_labels(batch.gts, batch.occupancy)
        correct += int((pred[batch.occupancy] == gt[batch.occupancy]).sum())
        total += int(batch.occupancy.sum())
    return correct / total


def train_strong(net: Network, manifest: DatasetManifest, cfg: TrainConfig,
                 optimizer: Optional[Adam] = None,
                 start_epoch: int = 0,
                 history: Optional[list[EpochRecord]] = None,
                 on_epoch: Optional[Callable] = None) -> TrainResult:
    """Single-stage training with the per-voxel cross-entropy loss."""
    cfg.validate()
    train_shapes = load_split(manifest, "train")
    val_shapes = load_split(manifest, "val") or load_split(manifest, "test")
    if optimizer is None:
        optimizer = Adam(dict(net.params), lr=cfg.lr)
    history = history if history is not None else []
    reached = False
    epochs_run = 0
    for epoch in range(start_epoch, cfg.strong_epochs):
        losses = []
        for batch in batches(train_shapes, cfg.tag, cfg.batch_size,
                             seed=cfg.seed, epoch=epoch, rotate=cfg.rotate):
            tape = Tape()
            res = forward(net, batch.x, "strong", tape=tape)
            stacked = res.branch_maps[0]
            for m in res.branch_maps[1:]:
                stacked = T.concat_channels(stacked, m)
            labels = _voxel_labels(batch.gts, batch.occupancy)
            loss = T.voxel_cross_entropy(stacked, labels, batch.occupancy)
            tape.backward(loss)
            optimizer.step(_collect_grads(_param_nodes(tape, net.params)))
            losses.append(loss.value.item())
        val_acc = strong_voxel_accuracy(net, val_shapes, cfg.tag, cfg.batch_size) \
            if val_shapes else float("nan")
        record = EpochRecord("strong", epoch, 1, float(np.mean(losses)), val_acc=val_acc)
        history.append(record)
        epochs_run += 1
        if on_epoch:
            on_epoch("strong", epoch, record)
        if cfg.strong_stop_accuracy is not None and val_acc >= cfg.strong_stop_accuracy:
            reached = True
            break
    return TrainResult(reached or cfg.strong_stop_accuracy is None, epochs_run, history)


def train_multilabel(net: Network, manifest: DatasetManifest, cfg: TrainConfig,
                     on_epoch: Optional[Callable] = None) -> TrainResult:
    """Independent binary cross-entropy per tag on the weak branch scores."""
    cfg.validate()
    if not cfg.tags:
        raise ConfigError("multilabel mode needs cfg.tags")
    if net.config.branches != len(cfg.tags):
        raise ConfigError(
            f"network has {net.config.branches} branches for {len(cfg.tags)} tags")
    train_shapes = load_split(manifest, "train")
    for shape in train_shapes:
        for tag in cfg.tags:
            if tag not in shape.tags:
                raise DegenerateInputError(f"shape {shape.id} lacks tag {tag!r}")
    optimizer = Adam(dict(net.params), lr=cfg.lr)
    history = []
    total = schedule_epochs(cfg.schedule)
    by_id = {s.id: s for s in train_shapes}
    for epoch in range(total):
        kernel = kernel_for_epoch(cfg.schedule, epoch)
        losses = []
        for batch in batches(train_shapes, cfg.tags[0], cfg.batch_size,
                             seed=cfg.seed, epoch=epoch, rotate=cfg.rotate):
            targets = np.zeros((len(batch.ids), len(cfg.tags)), dtype=np.float32)
            for i, sid in enumerate(batch.ids):
                for j, tag in enumerate(cfg.tags):
                    targets[i, j] = by_id[sid].tags[tag]
            tape = Tape()
            res = forward(net, batch.x, "weak", avgpool_kernel=kernel, tape=tape)
            loss = T.binary_cross_entropy_scores(res.class_scores, targets)
            tape.backward(loss)
            optimizer.step(_collect_grads(_param_nodes(tape, net.params)))
            losses.append(loss.value.item())
        record = EpochRecord("multilabel", epoch, kernel, float(np.mean(losses)))
        history.append(record)
        if on_epoch:
            on_epoch("multilabel", epoch, record)
    return TrainResult(True, total, history)


def infer(net: Network, grid, avgpool_kernel: int = 1) -> SegmentationMap:
    """Deterministic inference: masked branch sigmoid maps + weak scores."""
    bits = grid.bits if isinstance(grid, VoxelGrid) else np.asarray(grid)
    if bits.shape != (net.config.input_res,) * 3:
        raise ArgumentError(
            f"grid resolution {list(bits.shape)} does not match network "
            f"input_res {net.config.input_res}")
    x = bits.astype(np.float32)[None, None]
    res = forward(net, x, "weak", avgpool_kernel=avgpool_kernel)
    maps = np.concatenate([m.value.data for m in res.branch_maps], axis=1)[0]
    scores = res.class_scores.value.data[0]
    return SegmentationMap(maps, scores)


def multilabel_output(seg: SegmentationMap, threshold: float) -> dict[int, np.ndarray]:
    """Branch maps whose classification score exceeds the common threshold."""
    return {j: seg.maps[j] for j in range(seg.branches) if seg.scores[j] > threshold}


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    net: Network
    net_config: NetConfig
    train_config: TrainConfig
    stage: str
    epoch: int
    adam_arrays: dict[str, np.ndarray]
    adam_step: int
    history: list[EpochRecord]
    head: Optional[dict[str, Tensor]]


def _config_lines(prefix: str, cfg) -> list[str]:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "schedule":
            value = ";".join(f"{k},{e}" for k, e in value)
        elif f.name == "tags":
            value = ",".join(value)
        lines.append(f"{prefix} {f.name} {value}")
    return lines


def _parse_config(kind, raw: dict[str, str]):
    kwargs = {}
    for f in fields(kind):
        if f.name not in raw:
            continue
        text = raw[f.name]
        if f.name == "schedule":
            kwargs[f.name] = tuple(tuple(int(v) for v in part.split(","))
                                   for part in text.split(";") if part)
        elif f.name == "tags":
            kwargs[f.name] = tuple(t for t in text.split(",") if t)
        elif f.type in ("int", int):
            kwargs[f.name] = int(text)
        elif f.type in ("float", float):
            kwargs[f.name] = float(text)
        elif f.type in ("bool", bool):
            kwargs[f.name] = text == "True"
        elif text == "None":
            kwargs[f.name] = None
        elif f.type == "Optional[float]":
            kwargs[f.name] = float(text)
        else:
            kwargs[f.name] = text
    return kind(**kwargs)


def save_checkpoint(path, net: Network, optimizer: Optional[Adam], stage: str, epoch: int,
                    train_cfg: TrainConfig, history: list[EpochRecord],
                    head: Optional[dict[str, Tensor]] = None) -> None:
    """Write manifest + one float32 blob; reload reproduces forwards bitwise."""
    os.makedirs(path, exist_ok=True)
    tensors: dict[str, np.ndarray] = {name: p.data for name, p in sorted(net.params.items())}
    if head is not None:
        for name, p in sorted(head.items()):
            tensors[name] = p.data
    adam_step = 0
    if optimizer is not None:
        adam_step = optimizer.step_count
        for name, arr in sorted(optimizer.state_arrays().items()):
            tensors[name] = arr

    lines = ["# voxpart checkpoint v1", f"stage {stage}", f"epoch {epoch}",
             f"adam_step {adam_step}",
             "rng derived-from-seed-and-epoch"]
    lines += _config_lines("net", net.config)
    lines += _config_lines("train", train_cfg)
    for rec in history:
        lines.append(
            f"history {rec.stage} {rec.epoch} {rec.kernel} {rec.loss!r} "
            f"{rec.train_acc!r} {rec.val_acc!r}")
    offset = 0
    blob_parts = []
    for name, arr in tensors.items():
        flat = np.ascontiguousarray(arr, dtype="<f4")
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {offset} {flat.size} {dims}")
        blob_parts.append(flat.tobytes())
        offset += flat.size
    with open(os.path.join(path, "manifest.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, "params.bin"), "wb") as fh:
        fh.write(b"".join(blob_parts))


def load_checkpoint(path, expect_config: Optional[NetConfig] = None) -> Checkpoint:
    manifest_path = os.path.join(path, "manifest.txt")
    blob_path = os.path.join(path, "params.bin")
    if not os.path.exists(manifest_path) or not os.path.exists(blob_path):
        raise CheckpointError(f"no checkpoint at {path}")
    stage = None
    epoch = 0
    adam_step = 0
    net_raw: dict[str, str] = {}
    train_raw: dict[str, str] = {}
    tensor_specs: list[tuple[str, int, int, tuple[int, ...]]] = []
    history: list[EpochRecord] = []
    with open(manifest_path, "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("rng "):
                continue
            parts = line.split()
            if parts[0] == "stage":
                stage = parts[1]
            elif parts[0] == "epoch":
                epoch = int(parts[1])
            elif parts[0] == "adam_step":
                adam_step = int(parts[1])
            elif parts[0] == "net":
                net_raw[parts[1]] = " ".join(parts[2:])
            elif parts[0] == "train":
                train_raw[parts[1]] = " ".join(parts[2:]) if len(parts) > 2 else ""
            elif parts[0] == "history":
                history.append(EpochRecord(parts[1], int(parts[2]), int(parts[3]),
                                           float(parts[4]), float(parts[5]), float(parts[6])))
            elif parts[0] == "tensor":
                dims = tuple(int(d) for d in parts[4:])
                tensor_specs.append((parts[1], int(parts[2]), int(parts[3]), dims))
            else:
                raise CheckpointError(f"unknown checkpoint line {line!r}")
    if stage is None or not tensor_specs:
        raise CheckpointError("checkpoint manifest is incomplete")

    net_cfg = _parse_config(NetConfig, net_raw)
    train_cfg = _parse_config(TrainConfig, train_raw)
    if expect_config is not None and expect_config != net_cfg:
        differing = tuple(f.name for f in fields(NetConfig)
                          if getattr(expect_config, f.name) != getattr(net_cfg, f.name))
        raise CheckpointError("checkpoint config does not match requested network", differing)

    blob = np.fromfile(blob_path, dtype="<f4")
    expected = tensor_specs[-1][1] + tensor_specs[-1][2]
    if blob.size != expected:
        raise CheckpointError(f"blob holds {blob.size} floats, manifest expects {expected}")

    arrays: dict[str, np.ndarray] = {}
    for name, off, length, dims in tensor_specs:
        arrays[name] = blob[off:off + length].reshape(dims).copy()

    net = build_network(net_cfg, init_seed=0)
    for name in net.params:
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        net.params[name].data[...] = arrays.pop(name)
    head = None
    if "head.w" in arrays:
        head = {"head.w": Tensor(arrays.pop("head.w")),
                "head.b": Tensor(arrays.pop("head.b"))}
    adam_arrays = {name: arr for name, arr in arrays.items() if name.startswith("adam.")}
    return Checkpoint(net, net_cfg, train_cfg, stage, epoch, adam_arrays, adam_step,
                      history, head)


def make_optimizer_from_checkpoint(ckpt: Checkpoint, params: dict[str, Tensor],
                                   lr: float) -> Adam:
    opt = Adam(params, lr=lr)
    if ckpt.adam_arrays:
        opt.load_state_arrays(ckpt.adam_arrays, ckpt.adam_step)
    return opt
