"""Dense tensors, the 3D network operator set, and reverse-mode differentiation.

Conventions used throughout:

* Tensors are contiguous row-major numpy arrays, float32 by default
  (float64 for gradient checking).  5-d activations are laid out
  ``[batch, channel, x, y, z]`` with batch slowest.
* A ``Tape`` records every operation applied to its nodes in execution
  order (which is automatically a topological order); ``Tape.backward``
  sweeps the records in reverse and accumulates gradients per node.
* Convolution is evaluated as a frequency-domain cross-correlation with a
  single transform size shared by the forward pass and both backward
  products.  Batch work is split at fixed chunk boundaries with any
  cross-chunk reduction done in fixed order, so results are bitwise
  identical whether chunks run serially or on a thread pool.
* ``maxpool3d`` and ``global_max_spatial`` break gradient ties toward the
  lowest flat index.  ``avgpool3d`` is stride-1, same-size, and divides by
  the in-bounds window count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.fft import ifft, irfft, irfftn, next_fast_len, rfftn

from .errors import ArgumentError, DegenerateInputError, ShapeError, VoxpartError

DEFAULT_DTYPE = np.float32
PROB_EPS = 1e-7  # probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] inside logs

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Cap internal per-sample parallelism of the heavy ops."""
    global _num_threads
    if n < 1:
        raise ArgumentError(f"thread count must be >= 1, got {n}")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


_CHUNK = 8  # fixed batch chunk; must not depend on the thread count


def _map_batch_chunks(fn: Callable[[slice], None], count: int) -> None:
    # Chunk boundaries are fixed so the set of numpy calls (and therefore
    # every reduction grouping) is identical at any thread count; threads
    # only decide whether the chunks run serially or concurrently.
    pieces = [slice(start, min(start + _CHUNK, count)) for start in range(0, count, _CHUNK)]
    if _num_threads == 1 or len(pieces) == 1:
        for piece in pieces:
            fn(piece)
    else:
        with ThreadPoolExecutor(max_workers=min(_num_threads, len(pieces))) as pool:
            list(pool.map(fn, pieces))


class Tensor:
    """Contiguous N-d float array (N <= 5), row-major, batch slowest."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ArgumentError(f"unsupported dtype {dtype}")
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.ndim > 5:
            raise ShapeError(f"tensors support at most 5 dims, got {list(arr.shape)}")
        if arr.size == 0:
            raise ShapeError(f"all extents must be >= 1, got {list(arr.shape)}")
        self.data = arr

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got dims {list(self.dims)}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(dims={list(self.dims)}, dtype={self.data.dtype.name})"


@dataclass
class OpRecord:
    """One tape entry: op kind, input node ids, and the saved-state backward."""

    kind: str
    parents: tuple[int, ...]
    backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]


class Node:
    """Handle to one tape entry; carries its value and, after backward, its grad."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> Tensor:
        return self.tape.values[self.id]

    @property
    def grad(self) -> Optional[Tensor]:
        return self.tape.grads[self.id]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.value.dims


class Tape:
    """Ordered record of operations; owns per-node values and gradients.

    A tape is single-owner: build a graph, call :meth:`backward` once, read
    gradients off the leaves.  Calling backward again without
    :meth:`reset_grads` is an error.  Independent tapes may run in parallel.
    """

    def __init__(self):
        self.nodes: list[OpRecord] = []
        self.values: list[Tensor] = []
        self.grads: list[Optional[Tensor]] = []
        self._swept = False

    def leaf(self, value) -> Node:
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        return self._append("leaf", (), tensor, None)

    def _append(self, kind, parents, tensor, backward) -> Node:
        self.nodes.append(OpRecord(kind, parents, backward))
        self.values.append(tensor if isinstance(tensor, Tensor) else Tensor(tensor))
        self.grads.append(None)
        return Node(self, len(self.nodes) - 1)

    def reset_grads(self) -> None:
        self.grads = [None] * len(self.nodes)
        self._swept = False

    def backward(self, loss: Node) -> None:
        if loss.tape is not self:
            raise ArgumentError("loss node belongs to a different tape")
        if self._swept:
            raise VoxpartError("backward already ran on this tape; call reset_grads first")
        if loss.value.data.ndim != 0 and loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got dims {list(loss.value.dims)}")
        self._swept = True
        self.grads[loss.id] = Tensor(np.ones_like(loss.value.data))
        for nid in range(loss.id, -1, -1):
            grad = self.grads[nid]
            record = self.nodes[nid]
            if grad is None or record.backward is None:
                continue
            parent_grads = record.backward(grad.data)
            for pid, pgrad in zip(record.parents, parent_grads):
                if pgrad is None:
                    continue
                if self.grads[pid] is None:
                    # backward closures return freshly allocated arrays, so
                    # adopting the buffer (and accumulating into it) is safe
                    self.grads[pid] = Tensor(pgrad)
                else:
                    self.grads[pid].data += pgrad


def _val(node: Node) -> np.ndarray:
    return node.value.data


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ArgumentError("operands live on different tapes")
    return tape


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_pads(k: int) -> tuple[int, int]:
    # Same-size output; even kernels pad one extra cell on the low side.
    return k // 2, (k - 1) // 2


def _fft_shape(dp: int) -> tuple[int, int, int]:
    # dp = d + k - 1 already covers the full-convolution support, and the
    # gradient's circular wraparound only ever reads zero padding
    n = next_fast_len(dp)
    return (n, n, n)


def _conv3d_forward(xp, w, fshape):
    """Valid cross-correlation of the padded input with w, via one FFT size.

    Returns (out, Wh, Xh): kernel and input spectra are kept for backward.
    """
    cin, k = w.shape[1], w.shape[2]
    cout = w.shape[0]
    b = xp.shape[0]
    d = xp.shape[2] - k + 1
    rshape = fshape[:2] + (fshape[2] // 2 + 1,)
    wh = rfftn(w, s=fshape, axes=(2, 3, 4))
    whc = np.conj(wh).reshape(cout, cin, -1)
    xh_all = np.empty((b, cin) + rshape, dtype=np.complex128 if xp.dtype == np.float64 else np.complex64)
    out = np.empty((b, cout, d, d, d), dtype=xp.dtype)

    def run(sl):
        xh = rfftn(xp[sl], s=fshape, axes=(2, 3, 4))
        xh_all[sl] = xh
        nb = sl.stop - sl.start
        yh = np.einsum("bif,oif->bof", xh.reshape(nb, cin, -1), whc)
        out[sl] = irfftn(yh.reshape((nb, cout) + rshape), s=fshape, axes=(2, 3, 4))[:, :, :d, :d, :d]

    _map_batch_chunks(run, b)
    return out, wh, xh_all


def _conv3d_backward(g, xh_all, wh, fshape, k, pad_lo, d):
    """Gradients of the valid cross-correlation w.r.t. input and kernel."""
    b, cout = g.shape[:2]
    cin = wh.shape[1]
    rshape = wh.shape[2:]
    fflat = wh.reshape(cout, cin, -1)
    gx = np.empty((b, cin, d, d, d), dtype=g.dtype)
    n_chunks = -(-b // _CHUNK)
    gw_spectra = [None] * n_chunks

    def run(sl):
        nb = sl.stop - sl.start
        gh = rfftn(g[sl], s=fshape, axes=(2, 3, 4)).reshape(nb, cout, -1)
        xh = xh_all[sl].reshape(nb, cin, -1)
        # d(loss)/d(padded input): full convolution of the output grad with w
        gxh = np.einsum("bof,oif->bif", gh, fflat)
        gxp = irfftn(gxh.reshape((nb, cin) + rshape), s=fshape, axes=(2, 3, 4))
        gx[sl] = gxp[:, :, pad_lo:pad_lo + d, pad_lo:pad_lo + d, pad_lo:pad_lo + d]
        # d(loss)/d(kernel) in frequency space, reduced over this chunk
        gw_spectra[sl.start // _CHUNK] = np.einsum("bof,bif->oif", np.conj(gh), xh)

    _map_batch_chunks(run, b)
    acc = gw_spectra[0]
    for part in gw_spectra[1:]:
        acc = acc + part
    # cross-correlation of the padded input with the grad; invert axis by
    # axis, cropping to the k^3 corner in between
    gwp = ifft(acc.reshape((cout, cin) + rshape), axis=2)[:, :, :k]
    gwp = ifft(gwp, axis=3)[:, :, :, :k]
    gw = irfft(gwp, n=fshape[2], axis=4)[:, :, :, :, :k]
    return gx, np.ascontiguousarray(gw)


def conv3d(x: Node, w: Node, b: Node) -> Node:
    """Same-size 3D cross-correlation plus per-channel bias.

    ``x`` is [B, Cin, D, H, W]; ``w`` is [Cout, Cin, k, k, k]; ``b`` is [Cout].
    Zero padding keeps the spatial extents; differentiable in all three
    arguments.
    """
    tape = _same_tape(x, w, b)
    xv, wv, bv = _val(x), _val(w), _val(b)
    if xv.ndim != 5 or wv.ndim != 5:
        raise ShapeError(f"conv3d needs 5-d input and weights, got {list(xv.shape)} and {list(wv.shape)}")
    if wv.shape[2] != wv.shape[3] or wv.shape[3] != wv.shape[4]:
        raise ShapeError(f"conv3d kernel must be cubic, got {list(wv.shape)}")
    if xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"channel mismatch: input dims {list(xv.shape)} vs weight dims {list(wv.shape)}")
    if bv.shape != (wv.shape[0],):
        raise ShapeError(f"bias dims {list(bv.shape)} do not match output channels {wv.shape[0]}")
    if xv.shape[2] != xv.shape[3] or xv.shape[3] != xv.shape[4]:
        raise ShapeError(f"conv3d expects cubic spatial extents, got {list(xv.shape)}")
    k = wv.shape[2]
    d = xv.shape[2]
    pad_lo, pad_hi = _conv_pads(k)
    dp = d + pad_lo + pad_hi
    xp = np.zeros(xv.shape[:2] + (dp, dp, dp), dtype=xv.dtype)
    xp[:, :, pad_lo:pad_lo + d, pad_lo:pad_lo + d, pad_lo:pad_lo + d] = xv
    fshape = _fft_shape(dp)
    out, wh, xh = _conv3d_forward(xp, wv, fshape)
    del xp
    out += bv[None, :, None, None, None]

    def backward(g):
        gx, gw = _conv3d_backward(g, xh, wh, fshape, k, pad_lo, d)
        gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    return tape._append("conv3d", (x.id, w.id, b.id), out, backward)


# ---------------------------------------------------------------------------
# pooling and resampling
# ---------------------------------------------------------------------------

def maxpool3d(x: Node) -> Node:
    """Disjoint 2x2x2 max pooling; gradient goes to the first argmax per block."""
    xv = _val(x)
    if xv.ndim != 5:
        raise ShapeError(f"maxpool3d needs 5-d input, got {list(xv.shape)}")
    b, c, d, h, w = xv.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"maxpool3d needs even spatial extents, got {list(xv.shape)}")
    blocks = (
        xv.reshape(b, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(b, c, d // 2, h // 2, w // 2, 8)
    )
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = (
            gb.reshape(b, c, d // 2, h // 2, w // 2, 2, 2, 2)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(b, c, d, h, w)
        )
        return (gx,)

    return x.tape._append("maxpool3d", (x.id,), out, backward)


@lru_cache(maxsize=32)
def _avgpool_counts(shape: tuple[int, int, int], k: int) -> np.ndarray:
    ones = np.ones(shape, dtype=np.float64)
    lo, hi = k // 2, (k - 1) - k // 2
    op = np.pad(ones, ((lo, hi),) * 3)
    count = np.zeros(shape, dtype=np.float64)
    for dz in range(k):
        for dy in range(k):
            for dx in range(k):
                count += op[dz:dz + shape[0], dy:dy + shape[1], dx:dx + shape[2]]
    return count


def avgpool3d(x: Node, k: int) -> Node:
    """Stride-1, same-size average pooling over a k^3 window.

    Each voxel becomes the mean of its in-bounds neighbourhood (the divisor
    is the in-bounds count, so borders are true means).  k=1 is the identity.
    """
    if k < 1:
        raise ArgumentError(f"avgpool3d kernel must be >= 1, got {k}")
    if k == 1:
        return x
    xv = _val(x)
    if xv.ndim != 5:
        raise ShapeError(f"avgpool3d needs 5-d input, got {list(xv.shape)}")
    spatial = xv.shape[2:]
    lo, hi = k // 2, (k - 1) - k // 2
    count = _avgpool_counts(spatial, k).astype(xv.dtype)
    xp = np.pad(xv, ((0, 0), (0, 0), (lo, hi), (lo, hi), (lo, hi)))
    acc = np.zeros_like(xv)
    d, h, w = spatial
    for dz in range(k):
        for dy in range(k):
            for dx in range(k):
                acc += xp[:, :, dz:dz + d, dy:dy + h, dx:dx + w]
    out = acc / count

    def backward(g):
        q = g / count
        gxp = np.zeros_like(xp)
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    gxp[:, :, dz:dz + d, dy:dy + h, dx:dx + w] += q
        return (gxp[:, :, lo:lo + d, lo:lo + h, lo:lo + w],)

    return x.tape._append("avgpool3d", (x.id,), out, backward)


@lru_cache(maxsize=32)
def _upsample_matrix(n_in: int) -> np.ndarray:
    """Column u of the (n_in x 2*n_in) matrix holds the two align-corners
    interpolation weights mapping output u to input n_in-vector entries."""
    n_out = 2 * n_in
    mat = np.zeros((n_in, n_out), dtype=np.float64)
    if n_in == 1:
        mat[0, :] = 1.0
        return mat
    for u in range(n_out):
        src = u * (n_in - 1) / (n_out - 1)
        i0 = int(np.floor(src))
        i0 = min(i0, n_in - 2)
        f = src - i0
        mat[i0, u] += 1.0 - f
        mat[i0 + 1, u] += f
    return mat


def upsample_trilinear(x: Node, factor: int = 2) -> Node:
    """Align-corners trilinear upsampling by a factor of 2 on all spatial axes."""
    if factor != 2:
        raise ArgumentError(f"only factor 2 is supported, got {factor}")
    xv = _val(x)
    if xv.ndim != 5:
        raise ShapeError(f"upsample needs 5-d input, got {list(xv.shape)}")
    mats = [
        _upsample_matrix(xv.shape[axis]).astype(xv.dtype) for axis in (2, 3, 4)
    ]

    def apply(arr, tableau):
        for axis, m in zip((2, 3, 4), tableau):
            arr = np.moveaxis(np.tensordot(arr, m, axes=([axis], [0])), -1, axis)
        return np.ascontiguousarray(arr)

    out = apply(xv, mats)

    def backward(g):
        arr = g
        for axis, m in zip((2, 3, 4), mats):
            arr = np.moveaxis(np.tensordot(arr, m.T, axes=([axis], [0])), -1, axis)
        return (np.ascontiguousarray(arr),)

    return x.tape._append("upsample_trilinear", (x.id,), out, backward)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def relu(x: Node) -> Node:
    xv = _val(x)
    out = np.maximum(xv, 0)

    def backward(g):
        return (g * (xv > 0),)

    return x.tape._append("relu", (x.id,), out, backward)


def sigmoid(x: Node) -> Node:
    xv = _val(x)
    out = np.empty_like(xv)
    np.negative(np.abs(xv), out=out)
    np.exp(out, out=out)  # exp(-|x|), never overflows
    pos = xv >= 0
    out = np.where(pos, 1.0 / (1.0 + out), out / (1.0 + out))

    def backward(g):
        return (g * out * (1.0 - out),)

    return x.tape._append("sigmoid", (x.id,), out, backward)


def activation(x: Node, kind: str) -> Node:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ArgumentError(f"unknown activation kind {kind!r}")


def concat_channels(a: Node, b: Node) -> Node:
    """Concatenate along axis 1; a occupies the leading channels."""
    tape = _same_tape(a, b)
    av, bv = _val(a), _val(b)
    if av.ndim != bv.ndim or av.shape[:1] + av.shape[2:] != bv.shape[:1] + bv.shape[2:]:
        raise ShapeError(f"concat mismatch: {list(av.shape)} vs {list(bv.shape)}")
    ca = av.shape[1]
    out = np.concatenate([av, bv], axis=1)

    def backward(g):
        return np.ascontiguousarray(g[:, :ca]), np.ascontiguousarray(g[:, ca:])

    return tape._append("concat_channels", (a.id, b.id), out, backward)


def mask_mul(seg: Node, occupancy: np.ndarray) -> Node:
    """Zero a map wherever the binary occupancy is zero (broadcast over channels)."""
    sv = _val(seg)
    occ = np.asarray(occupancy, dtype=sv.dtype)
    if occ.ndim == sv.ndim - 2:
        occ = occ[None, None]
    elif occ.ndim == sv.ndim - 1:
        occ = occ[:, None]
    if occ.shape[0] not in (1, sv.shape[0]) or occ.shape[2:] != sv.shape[2:] or occ.shape[1] != 1:
        raise ShapeError(f"mask dims {list(occ.shape)} incompatible with map dims {list(sv.shape)}")
    out = sv * occ

    def backward(g):
        return (g * occ,)

    return seg.tape._append("mask_mul", (seg.id,), out, backward)


def global_max_spatial(x: Node) -> Node:
    """Per-batch, per-channel max over all voxels -> [B, C]."""
    xv = _val(x)
    if xv.ndim != 5:
        raise ShapeError(f"global_max_spatial needs 5-d input, got {list(xv.shape)}")
    b, c = xv.shape[:2]
    flat = xv.reshape(b, c, -1)
    idx = np.argmax(flat, axis=2)
    out = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g[..., None], axis=2)
        return (gf.reshape(xv.shape),)

    return x.tape._append("global_max_spatial", (x.id,), out, backward)


def fully_connected(x: Node, w: Node, b: Node) -> Node:
    """Affine map: [B, N] @ [M, N]^T + [M]."""
    tape = _same_tape(x, w, b)
    xv, wv, bv = _val(x), _val(w), _val(b)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"fully_connected mismatch: input {list(xv.shape)} vs weights {list(wv.shape)}")
    if bv.shape != (wv.shape[0],):
        raise ShapeError(f"bias dims {list(bv.shape)} do not match outputs {wv.shape[0]}")
    out = xv @ wv.T + bv

    def backward(g):
        return g @ wv, g.T @ xv, g.sum(axis=0)

    return tape._append("fully_connected", (x.id, w.id, b.id), out, backward)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(scores: Node, labels: np.ndarray) -> Node:
    """Mean over the batch of -log softmax(scores)[label], max-stabilized."""
    sv = _val(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if sv.ndim != 2 or sv.shape[1] < 2:
        raise ShapeError(f"scores must be [B, K>=2], got {list(sv.shape)}")
    if labels.shape != (sv.shape[0],):
        raise ShapeError(f"labels dims {list(labels.shape)} do not match batch {sv.shape[0]}")
    if labels.min() < 0 or labels.max() >= sv.shape[1]:
        raise ArgumentError(f"label out of range [0, {sv.shape[1]})")
    b = sv.shape[0]
    shifted = sv - sv.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    log_z = np.log(exps.sum(axis=1))
    loss = (log_z - shifted[np.arange(b), labels]).mean()
    probs = exps / exps.sum(axis=1, keepdims=True)

    def backward(g):
        gs = probs.copy()
        gs[np.arange(b), labels] -= 1.0
        return (gs * (g / b),)

    return scores.tape._append("softmax_cross_entropy", (scores.id,), np.asarray(loss, dtype=sv.dtype), backward)


def voxel_cross_entropy(seg: Node, gt_labels: np.ndarray, occupancy: np.ndarray) -> Node:
    """Per-voxel cross-entropy over occupied voxels.

    ``seg`` holds the per-branch sigmoid maps stacked on the channel axis,
    already masked by occupancy; per-voxel class probabilities are the
    branch values normalized across branches.  Empty voxels contribute
    nothing to the loss or the gradient.
    """
    sv = _val(seg)
    occ = np.asarray(occupancy).astype(bool)
    gt = np.asarray(gt_labels, dtype=np.int64)
    if sv.ndim != 5:
        raise ShapeError(f"segmentation map must be 5-d, got {list(sv.shape)}")
    if occ.shape != (sv.shape[0],) + sv.shape[2:]:
        raise ShapeError(f"occupancy dims {list(occ.shape)} vs map dims {list(sv.shape)}")
    if gt.shape != occ.shape:
        raise ShapeError(f"labels dims {list(gt.shape)} vs occupancy dims {list(occ.shape)}")
    n_occ = int(occ.sum())
    if n_occ == 0:
        raise DegenerateInputError("no occupied voxels to score")
    k = sv.shape[1]
    if gt[occ].min() < 0 or gt[occ].max() >= k:
        raise ArgumentError(f"ground-truth label out of range [0, {k})")

    vals = sv.transpose(0, 2, 3, 4, 1)[occ]          # [n_occ, K]
    picked = gt[occ]
    total = vals.sum(axis=1)
    total = np.maximum(total, np.finfo(sv.dtype).tiny)
    probs = vals[np.arange(n_occ), picked] / total
    clamped = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    loss = -np.log(clamped).mean()
    active = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)

    def backward(g):
        # d(-log p)/d(v_k) with p = v_label / sum(v):  1/sum - [k == label]/v_label
        gv = np.empty_like(vals)
        gv[:] = (active / total)[:, None]
        sel = np.maximum(vals[np.arange(n_occ), picked], np.finfo(sv.dtype).tiny)
        gv[np.arange(n_occ), picked] -= active / sel
        gs = np.zeros_like(sv)
        gst = gs.transpose(0, 2, 3, 4, 1)
        gst[occ] = gv * (g / n_occ)
        return (gs,)

    return seg.tape._append("voxel_cross_entropy", (seg.id,), np.asarray(loss, dtype=sv.dtype), backward)


def binary_cross_entropy_scores(scores: Node, targets: np.ndarray) -> Node:
    """Mean independent binary cross-entropy over [B, K] scores in [0, 1]."""
    sv = _val(scores)
    tv = np.asarray(targets, dtype=sv.dtype)
    if sv.shape != tv.shape:
        raise ShapeError(f"targets dims {list(tv.shape)} do not match scores dims {list(sv.shape)}")
    clamped = np.clip(sv, PROB_EPS, 1.0 - PROB_EPS)
    loss = -(tv * np.log(clamped) + (1.0 - tv) * np.log(1.0 - clamped)).mean()
    active = (sv > PROB_EPS) & (sv < 1.0 - PROB_EPS)

    def backward(g):
        gs = np.where(active, (clamped - tv) / (clamped * (1.0 - clamped)), 0.0)
        return (gs * (g / sv.size),)

    return scores.tape._append("binary_cross_entropy", (scores.id,), np.asarray(loss, dtype=sv.dtype), backward)
