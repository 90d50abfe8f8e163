"""Single command-line entry point for the whole pipeline.

Subcommands: gen, voxelize, describe, train, infer, postprocess, eval,
search, embed, thumb.  Settings come from an optional sectioned
``key = value`` config file merged with flag overrides; unknown keys are
errors.  Every command writes a run manifest (config snapshot, seed,
version, wall time) next to its outputs so any artifact can be
regenerated from it.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__
from .errors import ConfigError, VoxpartError
from .network import NetConfig, build_network, build_steps, param_count
from .synth import PART_TAG, gen_dataset, load_manifest, load_split
from .training import (
    TrainConfig,
    infer,
    load_checkpoint,
    make_optimizer_from_checkpoint,
    save_checkpoint,
    train_multilabel,
    train_phase1,
    train_phase2,
    train_strong,
)

NET_KEYS = {f.name for f in fields(NetConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def parse_config_file(path) -> dict[str, dict[str, str]]:
    """Flat sectioned key=value text; '#' starts a comment."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections.setdefault(current, {})
            elif "=" in line:
                if current is None:
                    raise ConfigError(f"line {lineno}: key outside any [section]")
                key, value = (part.strip() for part in line.split("=", 1))
                if key in sections[current]:
                    raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current}]")
                sections[current][key] = value
            else:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
    return sections


def _coerce(dataclass_type, raw: dict[str, str], overrides: dict | None = None):
    known = {f.name: f for f in fields(dataclass_type)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(
            f"unknown {dataclass_type.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, text in raw.items():
        f = known[name]
        if f.name == "schedule":
            kwargs[name] = tuple(
                tuple(int(v) for v in part.split(",")) for part in text.split(";") if part)
        elif f.name == "tags":
            kwargs[name] = tuple(t for t in text.split(",") if t)
        elif f.type in ("int", int):
            kwargs[name] = int(text)
        elif f.type in ("float", float):
            kwargs[name] = float(text)
        elif f.type in ("bool", bool):
            kwargs[name] = text.lower() in ("1", "true", "yes")
        elif text == "None":
            kwargs[name] = None
        elif f.type == "Optional[float]":
            kwargs[name] = float(text)
        else:
            kwargs[name] = text
    for key, value in (overrides or {}).items():
        if value is not None:
            kwargs[key] = value
    return dataclass_type(**kwargs)


def load_run_config(args) -> tuple[NetConfig, TrainConfig]:
    sections = parse_config_file(args.config) if getattr(args, "config", None) else {}
    stray = set(sections) - {"net", "train"}
    if stray:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(stray))}")
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    net_cfg = _coerce(NetConfig, sections.get("net", {}))
    train_cfg = _coerce(TrainConfig, sections.get("train", {}), overrides)
    return net_cfg, train_cfg


def write_run_manifest(out_path, command: str, settings: dict, started: float) -> None:
    target = os.path.join(out_path, "run_manifest.txt") if os.path.isdir(out_path) \
        else f"{out_path}.manifest.txt"
    lines = [
        "# voxpart run manifest",
        f"command {command}",
        f"version {__version__}",
        f"wall_seconds {time.time() - started:.3f}",
    ]
    for key, value in sorted(settings.items()):
        lines.append(f"set {key} {value}")
    with open(target, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args):
    started = time.time()
    fractions = tuple(float(v) for v in args.split.split(","))
    gen_dataset(args.out, args.family, args.pos, args.neg, fractions,
                seed=args.seed if args.seed is not None else 0, n=args.res)
    write_run_manifest(args.out, "gen", {
        "family": args.family, "pos": args.pos, "neg": args.neg,
        "res": args.res, "seed": args.seed or 0, "split": args.split,
    }, started)
    print(f"generated {args.pos}+{args.neg} shapes under {args.out}")
    return 0


def cmd_voxelize(args):
    from .mesh import load_obj, voxelize_surface
    from .voxel import save_voxels
    started = time.time()
    grid = voxelize_surface(load_obj(getattr(args, "in")), n=args.res)
    save_voxels(grid, args.out)
    write_run_manifest(args.out, "voxelize", {
        "in": getattr(args, "in"), "res": args.res,
    }, started)
    print(f"voxelized to {args.out}: {grid.occupied_count()} voxels set")
    return 0


def cmd_describe(args):
    net_cfg, _ = load_run_config(args)
    net_cfg.validate()
    steps = build_steps(net_cfg)
    print(f"arch {net_cfg.arch} stack {net_cfg.stack} channels {net_cfg.channels} "
          f"input {net_cfg.input_res}^3")
    for step in steps:
        if step.kind == "conv":
            print(f"  conv   {step.name:<24} {step.kernel}^3 -> {step.out_channels} ch")
        elif step.kind in ("concat", "maxpool", "upsample"):
            print(f"  {step.kind:<6} {step.name:<24} <- {', '.join(step.inputs)}")
    print(f"parameters: {param_count(net_cfg)}")
    return 0


def cmd_train(args):
    from .optim import Adam
    from .training import make_phase1_head
    started = time.time()
    net_cfg, train_cfg = load_run_config(args)
    manifest = load_manifest(args.data)
    os.makedirs(args.out, exist_ok=True)

    def hook(net, optimizer, head=None):
        def save(stage, epoch, record):
            save_checkpoint(args.out, net, optimizer, stage, epoch + 1,
                            train_cfg, history, head=head)
            extra = ""
            if record.train_acc == record.train_acc:  # not NaN
                extra = f" train {record.train_acc:.3f} val {record.val_acc:.3f}"
            print(f"  {stage} epoch {epoch}: loss {record.loss:.5f}{extra}", flush=True)
        return save

    def run_phase2(net, start_epoch=0, optimizer=None):
        # train_phase2 re-initializes the branches itself at epoch 0; the
        # moments of a fresh Adam are zero either way
        if optimizer is None:
            optimizer = Adam(dict(net.params), lr=train_cfg.lr)
        train_phase2(net, manifest, train_cfg, optimizer=optimizer,
                     start_epoch=start_epoch, history=history,
                     on_epoch=hook(net, optimizer))
        return optimizer

    history = []
    final_optimizer = None
    if args.resume:
        ckpt = load_checkpoint(args.out, expect_config=net_cfg if args.config else None)
        net, net_cfg, train_cfg, history = ckpt.net, ckpt.net_config, ckpt.train_config, ckpt.history
        if ckpt.stage == "phase1":
            head = ckpt.head or make_phase1_head(net_cfg, train_cfg.seed)
            opt = make_optimizer_from_checkpoint(
                ckpt, {**dict(net.params), **head}, train_cfg.lr)
            result, head = train_phase1(net, manifest, train_cfg, head=head,
                                        optimizer=opt, start_epoch=ckpt.epoch,
                                        history=history, on_epoch=hook(net, opt, head))
            if not result.converged:
                print("phase1 did not converge within the epoch cap")
            final_optimizer = run_phase2(net)
        elif ckpt.stage == "phase2":
            opt = make_optimizer_from_checkpoint(ckpt, dict(net.params), train_cfg.lr)
            final_optimizer = run_phase2(net, start_epoch=ckpt.epoch, optimizer=opt)
        elif ckpt.stage == "strong":
            opt = make_optimizer_from_checkpoint(ckpt, dict(net.params), train_cfg.lr)
            train_strong(net, manifest, train_cfg, optimizer=opt,
                         start_epoch=ckpt.epoch, history=history, on_epoch=hook(net, opt))
            final_optimizer = opt
        else:
            print(f"checkpoint at stage {ckpt.stage!r} has nothing to resume")
            return 0
    else:
        net = build_network(net_cfg, init_seed=train_cfg.seed)
        if train_cfg.mode == "weak":
            head = make_phase1_head(net_cfg, train_cfg.seed)
            opt = Adam({**dict(net.params), **head}, lr=train_cfg.lr)
            result, head = train_phase1(net, manifest, train_cfg, head=head,
                                        optimizer=opt, history=history,
                                        on_epoch=hook(net, opt, head))
            if not result.converged:
                print("phase1 did not converge within the epoch cap")
            final_optimizer = run_phase2(net)
        elif train_cfg.mode == "strong":
            opt = Adam(dict(net.params), lr=train_cfg.lr)
            train_strong(net, manifest, train_cfg, optimizer=opt,
                         history=history, on_epoch=hook(net, opt))
            final_optimizer = opt
        else:
            train_multilabel(net, manifest, train_cfg, on_epoch=None)

    save_checkpoint(args.out, net, final_optimizer, "final", 0, train_cfg, history)
    write_run_manifest(args.out, "train", {
        "data": args.data, "mode": train_cfg.mode, "seed": train_cfg.seed,
        "net": str(net_cfg), "train": str(train_cfg),
    }, started)
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_infer(args):
    from .segmap import save_segmap
    from .voxel import load_voxels
    started = time.time()
    ckpt = load_checkpoint(args.ckpt)
    grid = load_voxels(args.grid)
    seg = infer(ckpt.net, grid, avgpool_kernel=args.kernel)
    save_segmap(seg, args.out)
    write_run_manifest(args.out, "infer", {
        "ckpt": args.ckpt, "grid": args.grid, "kernel": args.kernel,
    }, started)
    print(f"map written to {args.out}; scores {seg.scores.tolist()}")
    return 0


def cmd_postprocess(args):
    from .postprocess import detect_symmetry_plane, symmetrize_map, threshold_map
    from .segmap import SegmentationMap, load_segmap, save_segmap
    from .voxel import VoxelGrid, load_voxels, save_voxels
    started = time.time()
    seg = load_segmap(args.map)
    grid = load_voxels(args.grid)
    values = seg.maps[args.branch]
    if args.symmetrize:
        plane = detect_symmetry_plane(grid)
        values = symmetrize_map(values, plane, grid)
        print(f"symmetrized across {plane.axis} at {plane.position} (score {plane.score:.3f})")
    if args.threshold is not None:
        mask = threshold_map(values, args.threshold, grid)
        save_voxels(VoxelGrid(grid.n, mask.astype(np.uint8), grid.translate, grid.scale), args.out)
        print(f"binary mask written to {args.out}: {int(mask.sum())} voxels")
    else:
        maps = seg.maps.copy()
        maps[args.branch] = values
        save_segmap(SegmentationMap(maps, seg.scores), args.out)
        print(f"map written to {args.out}")
    write_run_manifest(args.out, "postprocess", {
        "map": args.map, "grid": args.grid, "symmetrize": args.symmetrize,
        "threshold": args.threshold, "branch": args.branch,
    }, started)
    return 0


def _load_eval_shapes(manifest, split):
    shapes = load_split(manifest, split)
    if not shapes:
        raise ConfigError(f"split {split!r} is empty")
    return shapes


def cmd_eval(args):
    from .evaluation import pr_curve
    from .segmap import load_segmap
    started = time.time()
    manifest = load_manifest(args.gt)
    shapes = _load_eval_shapes(manifest, args.split)
    maps, gts, occs = [], [], []
    for shape in shapes:
        seg = load_segmap(os.path.join(args.pred, f"{shape.id}.seg"))
        maps.append(seg.maps[args.branch])
        gts.append(shape.gt)
        occs.append(shape.grid.bits)
    curve = pr_curve(maps, gts, occs)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(curve.as_text())
    write_run_manifest(args.out, "eval", {
        "pred": args.pred, "gt": args.gt, "split": args.split, "branch": args.branch,
    }, started)
    print(f"pr curve written to {args.out}; auc {curve.auc:.4f}")
    return 0


def _resolve_branch(args, train_cfg) -> int:
    """Map a --tag to its branch: multilabel nets have one branch per tag,
    binary nets put the tag-present map on branch 1."""
    tag = getattr(args, "tag", None)
    if not tag:
        return args.branch
    if train_cfg.tags:
        if tag not in train_cfg.tags:
            raise ConfigError(
                f"tag {tag!r} not among the checkpoint's tags {list(train_cfg.tags)}")
        return train_cfg.tags.index(tag)
    if tag != train_cfg.tag:
        raise ConfigError(
            f"checkpoint was trained for tag {train_cfg.tag!r}, not {tag!r}")
    return 1


def _corpus_from_checkpoint(args, threshold):
    from .retrieval import build_corpus
    ckpt = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.data)
    shapes = _load_eval_shapes(manifest, args.split)
    branch = _resolve_branch(args, ckpt.train_config)
    ids, maps, grids = [], [], []
    for shape in shapes:
        seg = infer(ckpt.net, shape.grid, avgpool_kernel=args.kernel)
        ids.append(shape.id)
        maps.append(seg.maps[branch])
        grids.append(shape.grid)
    return build_corpus(ids, maps, grids, threshold), {s.id: s for s in shapes}


def cmd_search(args):
    from .retrieval import rank_search
    started = time.time()
    corpus, _ = _corpus_from_checkpoint(args, args.threshold)
    results = rank_search(args.query, corpus, args.k)
    for rank, (sid, dist) in enumerate(results, start=1):
        print(f"{rank}\t{sid}\t{dist:.6f}")
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write("rank,id,distance\n")
            for rank, (sid, dist) in enumerate(results, start=1):
                fh.write(f"{rank},{sid},{dist:.9f}\n")
        write_run_manifest(args.out, "search", {
            "query": args.query, "k": args.k, "threshold": args.threshold,
        }, started)
    return 0


def cmd_embed(args):
    from .retrieval import export_embedding_distances
    started = time.time()
    corpus, _ = _corpus_from_checkpoint(args, args.threshold)
    excluded = export_embedding_distances(corpus, args.out)
    write_run_manifest(args.out, "embed", {
        "data": args.data, "ckpt": args.ckpt, "threshold": args.threshold,
    }, started)
    print(f"distance matrix written to {args.out} "
          f"({len(corpus) - len(excluded)} shapes, {len(excluded)} excluded)")
    return 0


def cmd_thumb(args):
    from .postprocess import detect_symmetry_plane, symmetrize_map, threshold_map
    from .retrieval import export_thumbnail
    started = time.time()
    ckpt = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.data)
    shapes = {s.id: s for s in _load_eval_shapes(manifest, args.split)}
    if args.shape not in shapes:
        raise ConfigError(f"shape id {args.shape!r} not found in split {args.split!r}")
    shape = shapes[args.shape]
    branch = _resolve_branch(args, ckpt.train_config)
    seg = infer(ckpt.net, shape.grid, avgpool_kernel=args.kernel)
    values = seg.maps[branch]
    if args.symmetrize:
        values = symmetrize_map(values, detect_symmetry_plane(shape.grid), shape.grid)
    mask = threshold_map(values, args.threshold, shape.grid)
    count = export_thumbnail(shape.grid, mask, args.out)
    write_run_manifest(args.out, "thumb", {
        "shape": args.shape, "threshold": args.threshold, "branch": branch,
    }, started)
    print(f"thumbnail written to {args.out}: {count} points, {int(mask.sum())} highlighted")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxpart",
                                     description="weakly-supervised voxel part discovery")
    parser.add_argument("--threads", type=int, default=os.cpu_count(),
                        help="cap internal op parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic tagged dataset")
    p.add_argument("--family", choices=sorted(PART_TAG), default="chair")
    p.add_argument("--pos", type=int, required=True)
    p.add_argument("--neg", type=int, required=True)
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="0.45,0.05,0.5")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("voxelize", help="rasterize an OBJ mesh surface")
    p.add_argument("--in", dest="in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--res", type=int, default=64)
    p.set_defaults(fn=cmd_voxelize)

    p = sub.add_parser("describe", help="print the resolved architecture")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("train", help="train a network")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("weak", "strong", "multilabel"))
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="run inference on one voxel grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", type=int, default=2)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("postprocess", help="symmetrize and threshold a map")
    p.add_argument("--map", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--threshold", type=float)
    p.add_argument("--branch", type=int, default=1)
    p.set_defaults(fn=cmd_postprocess)

    p = sub.add_parser("eval", help="precision/recall curve against ground truth")
    p.add_argument("--pred", required=True, help="directory of <id>.seg maps")
    p.add_argument("--gt", required=True, help="dataset manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--branch", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    for name, fn in (("search", cmd_search), ("embed", cmd_embed), ("thumb", cmd_thumb)):
        p = sub.add_parser(name, help=f"part-sensitive {name}")
        p.add_argument("--data", required=True)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--split", default="train")
        p.add_argument("--tag", help="select the branch trained for this tag")
        p.add_argument("--branch", type=int, default=1)
        p.add_argument("--kernel", type=int, default=2)
        p.add_argument("--threshold", type=float, default=0.9)
        if name == "search":
            p.add_argument("--query", required=True)
            p.add_argument("--k", type=int, default=3)
            p.add_argument("--out")
        elif name == "embed":
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--shape", required=True)
            p.add_argument("--out", required=True)
            p.add_argument("--symmetrize", action="store_true")
        p.set_defaults(fn=fn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from . import tensor
    tensor.set_num_threads(max(1, args.threads or 1))
    try:
        return args.fn(args)
    except VoxpartError as err:
        print(f"{err.category}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
