"""Stacked-U voxel networks built from a declarative configuration.

All supported architectures are stacks of U structures over the occupancy
grid.  Each U downsamples to a bottom resolution (one level for the
shallow stack, log2(input/bottom) levels for deep stacks) and comes back
up, with two kinds of concatenation skips:

* intra-U: each decoder level sees the encoder features of the same
  resolution ("no_skip" drops these);
* inter-U: each encoder level below full resolution sees the previous U's
  latest features at that resolution ("shn3d" drops these, turning the
  deep stack into an hourglass-style chain).

Every conv block keeps the configured channel width; segmentation branches
are one 3^3 conv each with sigmoid activation, masked by the input grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ArgumentError, ConfigError
from .tensor import Node, Tape, Tensor

ARCHS = ("shallow_u_stack", "deep_u_stack", "no_skip", "shn3d")
MODES = ("weak", "strong", "phase1")


@dataclass(frozen=True)
class NetConfig:
    arch: str = "shallow_u_stack"
    stack: int = 3
    bottom_res: int = 4            # deep archs only
    inception: bool = False
    channels: int = 12
    convs_per_block: int = 2
    kernel: int = 5
    branches: int = 2
    input_res: int = 64

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; choose from {ARCHS}")
        if self.stack < 1:
            raise ConfigError("stack must be >= 1")
        if self.branches < 2:
            raise ConfigError("branches must be >= 2")
        if self.channels < 1 or self.convs_per_block < 1:
            raise ConfigError("channels and convs_per_block must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd and >= 1")
        if self.input_res < 2 or self.input_res % 2:
            raise ConfigError("input_res must be even and >= 2")
        bottom = self.resolved_bottom()
        ratio = self.input_res / bottom
        if bottom < 1 or ratio < 2 or abs(np.log2(ratio) - round(np.log2(ratio))) > 1e-9:
            raise ConfigError(
                f"input_res {self.input_res} must exceed bottom_res {bottom} by powers of 2")

    def resolved_bottom(self) -> int:
        if self.arch in ("shallow_u_stack", "no_skip"):
            return self.input_res // 2
        return self.bottom_res

    def levels(self) -> int:
        return int(round(np.log2(self.input_res / self.resolved_bottom())))

    def has_intra_skips(self) -> bool:
        return self.arch != "no_skip"

    def has_inter_skips(self) -> bool:
        return self.arch in ("shallow_u_stack", "deep_u_stack")


@dataclass(frozen=True)
class Step:
    kind: str                  # conv | relu | maxpool | upsample | concat | input
    name: str
    inputs: tuple[str, ...]
    out_channels: int
    kernel: int = 0


@dataclass
class Network:
    config: NetConfig
    steps: list[Step]
    params: dict[str, Tensor]

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def clone_params(self) -> dict[str, Tensor]:
        return {name: p.copy() for name, p in self.params.items()}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Network":
        """Copy of the network with parameters cast (for 64-bit checking)."""
        cast = {name: Tensor(p.data.astype(dtype)) for name, p in self.params.items()}
        return Network(self.config, self.steps, cast)


@dataclass
class ForwardResult:
    wu_features: Node
    branch_maps: list[Node] = field(default_factory=list)
    class_scores: Optional[Node] = None


def _conv_unit(steps, cfg: NetConfig, name: str, src: str) -> str:
    """One conv+ReLU unit; expands to parallel 5/3/2 kernels under inception."""
    c = cfg.channels
    if not cfg.inception:
        steps.append(Step("conv", name, (src,), c, cfg.kernel))
        steps.append(Step("relu", name + ".relu", (name,), c))
        return name + ".relu"
    for k in (cfg.kernel, 3, 2):
        steps.append(Step("conv", f"{name}.k{k}", (src,), c, k))
    steps.append(Step("concat", f"{name}.cat", (f"{name}.k{cfg.kernel}", f"{name}.k3", f"{name}.k2"), 3 * c))
    steps.append(Step("conv", f"{name}.proj", (f"{name}.cat",), c, 1))
    steps.append(Step("relu", name + ".relu", (f"{name}.proj",), c))
    return name + ".relu"


def _conv_block(steps, cfg: NetConfig, prefix: str, src: str) -> str:
    out = src
    for j in range(cfg.convs_per_block):
        out = _conv_unit(steps, cfg, f"{prefix}.conv{j + 1}", out)
    return out


def build_steps(cfg: NetConfig) -> list[Step]:
    """Resolve the configured architecture into an ordered op graph."""
    cfg.validate()
    steps: list[Step] = [Step("input", "input", (), 1)]
    levels = cfg.levels()
    prev_u_out = "input"
    # latest feature name per resolution level from the previous U
    prev_at_level: dict[int, str] = {}

    for i in range(1, cfg.stack + 1):
        enc_out: dict[int, str] = {}
        src = _conv_block(steps, cfg, f"u{i}.enc0", prev_u_out)
        enc_out[0] = src
        for lvl in range(1, levels + 1):
            pool = f"u{i}.pool{lvl}"
            steps.append(Step("maxpool", pool, (src,), cfg.channels))
            src = pool
            if cfg.has_inter_skips() and i > 1:
                skip = f"u{i}.skip_lo{lvl}"
                steps.append(Step("concat", skip, (src, prev_at_level[lvl]), 2 * cfg.channels))
                src = skip
            src = _conv_block(steps, cfg, f"u{i}.enc{lvl}", src)
            enc_out[lvl] = src
        cur_at_level = {levels: enc_out[levels]}
        for lvl in range(levels - 1, -1, -1):
            up = f"u{i}.up{lvl}"
            steps.append(Step("upsample", up, (src,), cfg.channels))
            src = up
            if cfg.has_intra_skips():
                skip = f"u{i}.skip_hi{lvl}"
                steps.append(Step("concat", skip, (src, enc_out[lvl]), 2 * cfg.channels))
                src = skip
            src = _conv_block(steps, cfg, f"u{i}.dec{lvl}", src)
            if lvl > 0:
                cur_at_level[lvl] = src
        prev_u_out = src
        prev_at_level = cur_at_level

    steps.append(Step("relu", "wu", (prev_u_out,), cfg.channels))
    for j in range(cfg.branches):
        steps.append(Step("conv", f"branch{j}", ("wu",), 1, 3))
    return steps


def _conv_in_channels(steps: list[Step], step: Step) -> int:
    by_name = {s.name: s for s in steps}
    return by_name[step.inputs[0]].out_channels


def param_count(cfg: NetConfig) -> int:
    """Closed-form parameter total, no allocation."""
    steps = build_steps(cfg)
    total = 0
    for step in steps:
        if step.kind == "conv":
            cin = _conv_in_channels(steps, step)
            total += step.out_channels * cin * step.kernel ** 3 + step.out_channels
    return total


def build_network(cfg: NetConfig, init_seed: int = 0) -> Network:
    """Allocate parameters for the resolved topology.

    Trunk conv weights are fan-in-scaled Gaussians (std sqrt(2/fan_in) for
    the ReLU body, sqrt(1/fan_in) for the sigmoid branch heads); biases
    start at zero.  Identical seeds produce identical parameters.
    """
    steps = build_steps(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([int(init_seed), 331]))
    params: dict[str, Tensor] = {}
    for step in steps:
        if step.kind != "conv":
            continue
        cin = _conv_in_channels(steps, step)
        fan_in = cin * step.kernel ** 3
        gain = 1.0 if step.name.startswith("branch") else 2.0
        std = float(np.sqrt(gain / fan_in))
        w = rng.normal(0.0, std, size=(step.out_channels, cin) + (step.kernel,) * 3)
        params[step.name + ".w"] = Tensor(w.astype(np.float32))
        params[step.name + ".b"] = Tensor(np.zeros(step.out_channels, dtype=np.float32))
    return Network(cfg, steps, params)


def trunk_forward(net: Network, tape: Tape, x: Node,
                  param_nodes: Optional[dict[str, Node]] = None) -> Node:
    """Run the trunk steps, returning the WU feature node."""
    if param_nodes is None:
        param_nodes = {name: tape.leaf(p) for name, p in net.params.items()}
    produced: dict[str, Node] = {"input": x}
    for step in net.steps:
        if step.kind == "input" or step.name.startswith("branch"):
            continue
        if step.kind == "conv":
            produced[step.name] = T.conv3d(
                produced[step.inputs[0]],
                param_nodes[step.name + ".w"],
                param_nodes[step.name + ".b"],
            )
        elif step.kind == "relu":
            produced[step.name] = T.relu(produced[step.inputs[0]])
        elif step.kind == "maxpool":
            produced[step.name] = T.maxpool3d(produced[step.inputs[0]])
        elif step.kind == "upsample":
            produced[step.name] = T.upsample_trilinear(produced[step.inputs[0]])
        elif step.kind == "concat":
            node = produced[step.inputs[0]]
            for other in step.inputs[1:]:
                node = T.concat_channels(node, produced[other])
            produced[step.name] = node
        else:
            raise ArgumentError(f"unknown step kind {step.kind!r}")
    return produced["wu"]


def branch_map(net: Network, tape: Tape, wu: Node, occupancy: np.ndarray, j: int,
               param_nodes: dict[str, Node]) -> Node:
    """Masked sigmoid segmentation map of branch j."""
    conv = T.conv3d(wu, param_nodes[f"branch{j}.w"], param_nodes[f"branch{j}.b"])
    return T.mask_mul(T.sigmoid(conv), occupancy)


def forward(net: Network, x: np.ndarray, mode: str = "weak", avgpool_kernel: int = 1,
            tape: Optional[Tape] = None,
            head_params: Optional[dict[str, Tensor]] = None) -> ForwardResult:
    """Full forward pass in one of the three supervision modes.

    weak:   branch maps -> mask -> avgpool -> global max -> class scores
    phase1: class scores from the channel-wise global max of the WU features
            through the temporary fully-connected head (no branch maps)
    strong: branch maps only
    """
    if mode not in MODES:
        raise ArgumentError(f"unknown mode {mode!r}; choose from {MODES}")
    cfg = net.config
    if x.ndim != 5 or x.shape[1] != 1 or x.shape[2:] != (cfg.input_res,) * 3:
        raise ArgumentError(
            f"input dims {list(x.shape)} do not match configured resolution {cfg.input_res}")
    tape = tape or Tape()
    x_node = tape.leaf(np.ascontiguousarray(x, dtype=net.dtype))
    param_nodes = {name: tape.leaf(p) for name, p in net.params.items()}
    wu = trunk_forward(net, tape, x_node, param_nodes)
    occupancy = x[:, 0]

    if mode == "phase1":
        if head_params is None:
            raise ArgumentError("phase1 forward needs the temporary head parameters")
        head_nodes = {name: tape.leaf(p) for name, p in head_params.items()}
        maxima = T.global_max_spatial(wu)
        scores = T.fully_connected(maxima, head_nodes["head.w"], head_nodes["head.b"])
        return ForwardResult(wu, [], scores)

    maps = [branch_map(net, tape, wu, occupancy, j, param_nodes) for j in range(cfg.branches)]
    if mode == "strong":
        return ForwardResult(wu, maps, None)

    per_branch = []
    for m in maps:
        pooled = T.avgpool3d(m, avgpool_kernel)
        per_branch.append(T.global_max_spatial(pooled))
    scores = per_branch[0]
    for nxt in per_branch[1:]:
        scores = T.concat_channels(scores, nxt)
    return ForwardResult(wu, maps, scores)
