"""Tree-arranged dense network: specs, dense forward/backward, stitching,
receptive-field arithmetic, the single-patch CNN and checkpoints.

Branch leaves are kept as one stacked array ``(4**depth, C, h, w)``. A split
turns leaf ``n`` into leaves ``4n + 2*py + px``, so a leaf's index written in
base 4 is its phase path with the first split as the most significant digit.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor_core import (
    DTYPE,
    PHASES,
    ConvKernel,
    ShapeError,
    as_tensor,
    floating,
    conv2d_valid,
    conv2d_valid_bwd,
    conv2d_valid_reference,
    interleave_phases,
    pad2d,
    relu,
    relu_bwd,
    shifted_maxpool,
    shifted_maxpool_bwd,
    softmax_channels,
    split_phases,
)

DECIMATE = "decimate"
SHIFTEDMAX = "shiftedmax"
BRANCH_MODES = (DECIMATE, SHIFTEDMAX)


class SpecError(ValueError):
    """The network spec is malformed or cannot process the given input."""


@dataclass(frozen=True)
class Conv:
    k: int
    out_channels: int


@dataclass(frozen=True)
class BranchPool:
    mode: str = DECIMATE


@dataclass(frozen=True)
class StridedPool:
    """Non-branching stride-2 pool. ``max`` pools 2x2 windows, ``decimate`` keeps phase (0, 0)."""

    mode: str = "max"


@dataclass(frozen=True)
class Head:
    num_classes: int

    @property
    def out_channels(self) -> int:
        return self.num_classes + 1


@dataclass
class NetworkSpec:
    layers: tuple
    input_channels: int = 1
    name: str = "net"
    seed: int = 0

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.validate()

    def validate(self) -> None:
        if not self.layers or not isinstance(self.layers[-1], Head):
            raise SpecError("the last layer must be a Head")
        if sum(isinstance(l, Head) for l in self.layers) != 1:
            raise SpecError("exactly one Head is allowed")
        seen_branch = False
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if layer.k < 1 or layer.k % 2 == 0 or layer.out_channels < 1:
                    raise SpecError(f"layer {i}: conv needs odd k >= 1 and positive width, got {layer}")
            elif isinstance(layer, BranchPool):
                if layer.mode not in BRANCH_MODES:
                    raise SpecError(f"layer {i}: unknown branch mode {layer.mode!r}")
                seen_branch = True
            elif isinstance(layer, StridedPool):
                if layer.mode not in ("max", DECIMATE):
                    raise SpecError(f"layer {i}: unknown strided pool mode {layer.mode!r}")
                if seen_branch:
                    raise SpecError(f"layer {i}: strided pools must precede every branch pool")
            elif isinstance(layer, Head):
                if layer.num_classes < 1:
                    raise SpecError("head needs at least one character class")
            else:
                raise SpecError(f"layer {i}: unknown layer {layer!r}")

    @property
    def head(self) -> Head:
        return self.layers[-1]

    @property
    def num_channels_out(self) -> int:
        return self.head.out_channels

    @property
    def branch_depth(self) -> int:
        return sum(isinstance(l, BranchPool) for l in self.layers)

    @property
    def output_stride(self) -> int:
        return 2 ** sum(isinstance(l, StridedPool) for l in self.layers)

    @property
    def branch_mode(self) -> str | None:
        modes = {l.mode for l in self.layers if isinstance(l, BranchPool)}
        return modes.pop() if len(modes) == 1 else (None if not modes else "mixed")

    def kernel_shapes(self) -> list[tuple[int, int, int, int]]:
        shapes, c = [], self.input_channels
        for layer in self.layers:
            if isinstance(layer, Conv):
                shapes.append((layer.out_channels, c, layer.k, layer.k))
                c = layer.out_channels
            elif isinstance(layer, Head):
                shapes.append((layer.out_channels, c, 1, 1))
        return shapes

    def to_dict(self) -> dict:
        layers = []
        for l in self.layers:
            if isinstance(l, Conv):
                layers.append({"type": "conv", "k": l.k, "out": l.out_channels})
            elif isinstance(l, BranchPool):
                layers.append({"type": "branchpool", "mode": l.mode})
            elif isinstance(l, StridedPool):
                layers.append({"type": "stridedpool", "mode": l.mode})
            else:
                layers.append({"type": "head", "classes": l.num_classes})
        return {"name": self.name, "seed": self.seed, "input_channels": self.input_channels, "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        makers = {
            "conv": lambda e: Conv(e["k"], e["out"]),
            "branchpool": lambda e: BranchPool(e["mode"]),
            "stridedpool": lambda e: StridedPool(e["mode"]),
            "head": lambda e: Head(e["classes"]),
        }
        try:
            layers = [makers[e["type"]](e) for e in d["layers"]]
        except KeyError as exc:
            raise SpecError(f"bad layer entry in spec dict: {exc}") from None
        return cls(layers, d.get("input_channels", 1), d.get("name", "net"), d.get("seed", 0))


# ---------------------------------------------------------------------------
# named specs

NUM_CLASSES = 12


def taofcn_spec(branch_mode: str = DECIMATE, num_classes: int = NUM_CLASSES, seed: int = 0) -> NetworkSpec:
    """Full-resolution tree net: every pool branches, so output stride is 1."""
    layers = [
        Conv(3, 8), Conv(3, 12), BranchPool(branch_mode),
        Conv(3, 16), BranchPool(branch_mode),
        Conv(3, 24), Conv(3, 32), Conv(1, 48), Head(num_classes),
    ]
    return NetworkSpec(layers, 1, f"taofcn-{branch_mode}", seed)


def baseline_spec(spec: NetworkSpec) -> NetworkSpec:
    """Single-branch "normal FCN": every branch pool becomes a strided pool that keeps one phase."""
    layers = []
    for l in spec.layers:
        if isinstance(l, BranchPool):
            layers.append(StridedPool(DECIMATE if l.mode == DECIMATE else "max"))
        else:
            layers.append(l)
    return NetworkSpec(layers, spec.input_channels, spec.name.replace("taofcn", "fcn") + "-single", spec.seed)


def tiny_spec(branch_mode: str = DECIMATE, num_classes: int = NUM_CLASSES, seed: int = 0) -> NetworkSpec:
    return NetworkSpec([Conv(3, 3), BranchPool(branch_mode), Conv(3, 4), Head(num_classes)],
                       1, f"tiny-{branch_mode}", seed)


def head_only_spec(num_classes: int = NUM_CLASSES, input_channels: int = 1) -> NetworkSpec:
    return NetworkSpec([Head(num_classes)], input_channels, "head-only")


SPECS = {
    "taofcn": taofcn_spec,
    "fcn": lambda mode=DECIMATE, **kw: baseline_spec(taofcn_spec(mode, **kw)),
    "tiny": tiny_spec,
    "head-only": lambda mode=DECIMATE, **kw: head_only_spec(**kw),
}


def build_spec(name: str, branch_mode: str = DECIMATE, **kw) -> NetworkSpec:
    try:
        factory = SPECS[name]
    except KeyError:
        raise SpecError(f"unknown spec {name!r}; choose from {sorted(SPECS)}") from None
    return factory(branch_mode, **kw)


# ---------------------------------------------------------------------------
# parameters

def init_params(spec: NetworkSpec, seed: int | None = None) -> list[ConvKernel]:
    """Fan-in scaled uniform init (He-uniform bound), zero bias."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    params = []
    for shape in spec.kernel_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape).astype(DTYPE)
        params.append(ConvKernel(w, np.zeros(shape[0], dtype=DTYPE)))
    return params


def flat_params(params: list[ConvKernel]) -> list[np.ndarray]:
    out = []
    for p in params:
        out += [p.weights, p.bias]
    return out


def count_params(params: list[ConvKernel]) -> int:
    return sum(a.size for a in flat_params(params))


# ---------------------------------------------------------------------------
# geometry

def _raw_receptive_field(layers) -> tuple[int, int]:
    r, j = 1, 1
    for l in layers:
        if isinstance(l, Conv):
            r += (l.k - 1) * j
        elif isinstance(l, (BranchPool, StridedPool)):
            k_eff = 1 if l.mode == DECIMATE else 2
            r += (k_eff - 1) * j
            j *= 2
    return r, j


def receptive_field(spec: NetworkSpec) -> tuple[int, int]:
    """Patch side ``r`` and the stride of the stitched output grid.

    Branch pools double the internal jump but the stitched output stays at
    stride 1; only strided pools coarsen the grid.
    """
    r, _ = _raw_receptive_field(spec.layers)
    return r, spec.output_stride


def _leaf_extent(layers, n: int) -> tuple[int, bool]:
    """Stitched extent produced from an input extent ``n``, and whether every split was even."""
    even, depth = True, 0
    for l in layers:
        if isinstance(l, Conv):
            n = n - l.k + 1
        elif isinstance(l, BranchPool):
            depth += 1
            if l.mode == DECIMATE:
                even &= n % 2 == 0
                n = (n + 1) // 2
            else:
                n = (n - 1) // 2
        elif isinstance(l, StridedPool):
            n = n // 2 if l.mode == "max" else (n + 1) // 2
        if n < 1:
            return 0, False
    return n * 2 ** depth, even


@dataclass
class PaddedImage:
    """An image padded for dense inference, with what is needed to crop back."""

    data: np.ndarray
    height: int
    width: int
    top: int
    left: int
    out_height: int
    out_width: int
    stride: int


def pad_for_dense(image, spec: NetworkSpec, pad_value: float = 0.0) -> PaddedImage:
    """Pad so the stitched output covers every input pixel.

    ``(r - 1) // 2`` goes on the top/left; bottom/right get the rest of the
    receptive field plus the smallest margin that keeps every decimating
    split even.
    """
    image = as_tensor(image, spec.input_channels)
    _, h, w = image.shape
    r, stride = receptive_field(spec)
    top = (r - 1) // 2
    out_h, out_w = -(-h // stride), -(-w // stride)

    def extra_for(n, need):
        for extra in range(0, 4 * 2 ** (spec.branch_depth + 2)):
            ext, even = _leaf_extent(spec.layers, n + r - 1 + extra)
            if ext >= need and even:
                return extra
        raise SpecError(f"cannot align an extent of {n} for spec {spec.name}")

    eh, ew = extra_for(h, out_h), extra_for(w, out_w)
    bottom, right = r - 1 - top + eh, r - 1 - top + ew
    data = pad2d(image, (top, bottom, top, right), pad_value)
    return PaddedImage(data, h, w, top, top, out_h, out_w, stride)


# ---------------------------------------------------------------------------
# feature tree


@dataclass
class FeatureTree:
    node: np.ndarray
    children: list["FeatureTree"] = field(default_factory=list)
    phase: tuple[int, int] | None = None

    @property
    def depth(self) -> int:
        return 0 if not self.children else 1 + self.children[0].depth

    def leaves(self) -> list["FeatureTree"]:
        if not self.children:
            return [self]
        out = []
        for c in self.children:
            out += c.leaves()
        return out


def _build_tree(levels: list[np.ndarray], level: int = 0, index: int = 0, phase=None) -> FeatureTree:
    node = FeatureTree(levels[level][index], phase=phase)
    if level + 1 < len(levels):
        node.children = [_build_tree(levels, level + 1, 4 * index + p, PHASES[p]) for p in range(4)]
    return node


def split_tree(tensor: np.ndarray, depth: int) -> FeatureTree:
    """Recursively decimate a tensor into a depth-``depth`` tree of phase leaves."""
    levels = [floating(tensor)[None]]
    for _ in range(depth):
        levels.append(split_phases(levels[-1]))
    return _build_tree(levels)


def stitch(tree: FeatureTree, branch_depth: int | None = None) -> np.ndarray:
    """Interleave the leaves of ``tree`` back into one map.

    ``out[c, y, x]`` comes from the leaf whose phase path matches the bits
    of ``y mod 2**depth`` and ``x mod 2**depth`` (first split = lowest bit).
    """
    depth = tree.depth if branch_depth is None else branch_depth
    leaves = tree.leaves()
    if len(leaves) != 4 ** depth:
        raise ShapeError(f"tree has {len(leaves)} leaves, expected {4 ** depth}")
    shapes = {l.node.shape for l in leaves}
    if len(shapes) != 1:
        raise ShapeError(f"ragged leaf shapes: {sorted(shapes)}")
    stack = np.stack([l.node for l in leaves])
    for _ in range(depth):
        stack = interleave_phases(stack)
    return stack[0]


# ---------------------------------------------------------------------------
# dense forward / backward


@dataclass
class DenseOutput:
    """Per-pixel class probabilities; grid position ``(i, j)`` sits on pixel
    ``(offset[0] + i*stride, offset[1] + j*stride)`` of the unpadded image."""

    probs: np.ndarray
    stride: int = 1
    offset: tuple[int, int] = (0, 0)

    @property
    def num_channels(self) -> int:
        return self.probs.shape[0]

    def grid_index(self, y: int, x: int) -> tuple[int, int]:
        _, gh, gw = self.probs.shape
        i = int(np.clip(round((y - self.offset[0]) / self.stride), 0, gh - 1))
        j = int(np.clip(round((x - self.offset[1]) / self.stride), 0, gw - 1))
        return i, j

    def upsample(self, height: int, width: int) -> np.ndarray:
        """Nearest-neighbour assignment of the grid onto a ``height x width`` pixel map."""
        if self.stride == 1 and self.offset == (0, 0):
            return self.probs[:, :height, :width]
        ys = [self.grid_index(y, 0)[0] for y in range(height)]
        xs = [self.grid_index(0, x)[1] for x in range(width)]
        return self.probs[:, ys][:, :, xs]


class DenseCache:
    """Activations retained by a dense forward pass for the backward pass."""

    def __init__(self):
        self.records = []
        self.stitched_shape = None
        self.out_shape = None
        self.depth = 0


def _dense_logits(spec, params, x, out_h, out_w, cache=None, levels=None):
    x = x[None]
    it = iter(params)
    depth = 0
    for i, layer in enumerate(spec.layers):
        _, c, h, w = x.shape
        if isinstance(layer, (Conv, Head)):
            kern = next(it)
            if h < kern.k or w < kern.k:
                raise SpecError(f"layer {i}: feature map {h}x{w} is smaller than the {kern.k}x{kern.k} kernel")
            y = conv2d_valid(x, kern)
            if isinstance(layer, Head):
                if cache is not None:
                    cache.records.append(("conv", kern, x, None))
                x = y
            else:
                if cache is not None:
                    cache.records.append(("conv", kern, x, y))
                x = relu(y)
        elif isinstance(layer, BranchPool):
            if levels is not None:
                levels.append(x)
            if layer.mode == DECIMATE:
                ph, pw = h % 2, w % 2
                if ph or pw:
                    x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
                if cache is not None:
                    cache.records.append(("decimate", ph, pw))
                x = split_phases(x)
            else:
                nh, nw = (h - 1) // 2, (w - 1) // 2
                if nh < 1 or nw < 1:
                    raise SpecError(f"layer {i}: feature map {h}x{w} too small to branch")
                kids, idxs = [], []
                for py, px in PHASES:
                    k, a = shifted_maxpool(x[:, :, py:py + 2 * nh, px:px + 2 * nw], 0, 0, return_argmax=True)
                    kids.append(k)
                    idxs.append(a)
                x = np.stack(kids, axis=1).reshape(4 * x.shape[0], c, nh, nw)
                if cache is not None:
                    cache.records.append(("shiftedmax", idxs, (h, w)))
            depth += 1
        elif isinstance(layer, StridedPool):
            if h < 2 or w < 2:
                raise SpecError(f"layer {i}: feature map {h}x{w} too small to pool")
            if layer.mode == "max":
                x, a = shifted_maxpool(x[:, :, : h - h % 2, : w - w % 2], 0, 0, return_argmax=True)
                if cache is not None:
                    cache.records.append(("stridedmax", a, (h, w)))
            else:
                x = np.ascontiguousarray(x[:, :, ::2, ::2])
                if cache is not None:
                    cache.records.append(("strideddecimate", (h, w)))
    if levels is not None:
        levels.append(x)
    for _ in range(depth):
        x = interleave_phases(x)
    x = x[0]
    if x.shape[1] < out_h or x.shape[2] < out_w:
        raise SpecError(f"stitched output {x.shape[1:]} smaller than the requested {out_h}x{out_w}; pad with pad_for_dense")
    if cache is not None:
        cache.stitched_shape = x.shape
        cache.out_shape = (out_h, out_w)
        cache.depth = depth
    return np.ascontiguousarray(x[:, :out_h, :out_w])


def _prepare(spec, image, pad_value=0.0) -> PaddedImage:
    if isinstance(image, PaddedImage):
        return image
    return pad_for_dense(image, spec, pad_value)


def forward_dense(spec: NetworkSpec, params: list[ConvKernel], image, return_tree: bool = False,
                  cache: DenseCache | None = None):
    """Dense inference over a whole image.

    ``image`` is a :class:`PaddedImage` or a raw tensor (padded here with 0).
    Returns a :class:`DenseOutput`, plus the :class:`FeatureTree` of branch
    feature maps when ``return_tree`` is set.
    """
    padded = _prepare(spec, image)
    levels = [] if return_tree else None
    logits = _dense_logits(spec, params, padded.data, padded.out_height, padded.out_width, cache, levels)
    dense = DenseOutput(softmax_channels(logits), padded.stride, (0, 0))
    if return_tree:
        levels[-1] = softmax_channels(levels[-1])
        return dense, _build_tree(levels)
    return dense


def backward_dense(spec: NetworkSpec, cache: DenseCache, grad_logits: np.ndarray) -> list[ConvKernel]:
    """Backpropagate a gradient on the (cropped) output logits.

    Returns parameter gradients shaped like the parameter list.
    """
    c, sh, sw = cache.stitched_shape
    if grad_logits.shape != (c,) + tuple(cache.out_shape):
        raise ShapeError(f"grad shape {grad_logits.shape} does not match output {(c,) + tuple(cache.out_shape)}")
    g = np.zeros((1, c, sh, sw), dtype=grad_logits.dtype)
    g[0, :, : grad_logits.shape[1], : grad_logits.shape[2]] = grad_logits
    for _ in range(cache.depth):
        g = split_phases(g)
    grads = []
    for rec in reversed(cache.records):
        kind = rec[0]
        if kind == "conv":
            _, kern, x_in, pre = rec
            if pre is not None:
                g = relu_bwd(g, pre)
            g, gw, gb = conv2d_valid_bwd(x_in, kern, g)
            grads.append(ConvKernel(gw, gb))
        elif kind == "decimate":
            _, ph, pw = rec
            g = interleave_phases(g)
            h, w = g.shape[2] - ph, g.shape[3] - pw
            g = np.ascontiguousarray(g[:, :, :h, :w])
        elif kind == "shiftedmax":
            _, idxs, (h, w) = rec
            n4, cc, nh, nw = g.shape
            g = g.reshape(n4 // 4, 4, cc, nh, nw)
            out = np.zeros((n4 // 4, cc, h, w), dtype=g.dtype)
            for p, (py, px) in enumerate(PHASES):
                out[:, :, py:py + 2 * nh, px:px + 2 * nw] += shifted_maxpool_bwd(
                    g[:, p], idxs[p], 0, 0, (n4 // 4, cc, 2 * nh, 2 * nw))
            g = out
        elif kind == "stridedmax":
            _, a, (h, w) = rec
            out = np.zeros((g.shape[0], g.shape[1], h, w), dtype=g.dtype)
            out[:, :, : h - h % 2, : w - w % 2] = shifted_maxpool_bwd(g, a, 0, 0, (g.shape[0], g.shape[1], h - h % 2, w - w % 2))
            g = out
        else:
            _, (h, w) = rec
            out = np.zeros((g.shape[0], g.shape[1], h, w), dtype=g.dtype)
            out[:, :, ::2, ::2] = g
            g = out
    grads.reverse()
    return grads


# ---------------------------------------------------------------------------
# single-patch CNN


@dataclass(frozen=True)
class Subsample:
    """Stride-2 subsampling keeping the top-left phase of the patch."""


@dataclass(frozen=True)
class MaxPool:
    """Plain 2x2 stride-2 max pooling."""


@dataclass
class PatchNetSpec:
    layers: tuple
    r: int
    num_classes: int


def extract_patch_cnn(spec: NetworkSpec) -> PatchNetSpec:
    """The plain CNN that classifies one receptive-field patch with the same parameters."""
    layers = []
    for l in spec.layers:
        if isinstance(l, (BranchPool, StridedPool)):
            layers.append(Subsample() if l.mode == DECIMATE else MaxPool())
        else:
            layers.append(l)
    return PatchNetSpec(tuple(layers), receptive_field(spec)[0], spec.head.num_classes)


def forward_patch(patch_spec: PatchNetSpec, params: list[ConvKernel], patch, exact: bool = False) -> np.ndarray:
    """Class-probability vector for a single ``r x r`` patch.

    ``exact`` routes convolutions through the direct reference kernel.
    """
    x = floating(patch)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (patch_spec.r, patch_spec.r):
        raise ShapeError(f"patch must be {patch_spec.r}x{patch_spec.r}, got {x.shape[1:]}")
    conv = conv2d_valid_reference if exact else conv2d_valid
    it = iter(params)
    for layer in patch_spec.layers:
        if isinstance(layer, Conv):
            x = relu(conv(x, next(it)))
        elif isinstance(layer, Head):
            x = conv(x, next(it))
        elif isinstance(layer, Subsample):
            x = x[:, ::2, ::2]
        else:
            h, w = x.shape[1] - x.shape[1] % 2, x.shape[2] - x.shape[2] % 2
            x = shifted_maxpool(x[:, :h, :w], 0, 0)
    if x.shape[1:] != (1, 1):
        raise ShapeError(f"patch net ended with spatial shape {x.shape[1:]}, expected 1x1")
    return softmax_channels(x)[:, 0, 0]


def patch_at(padded: PaddedImage, y: int, x: int, r: int) -> np.ndarray:
    """The receptive-field patch of output grid position ``(y, x)`` (stride-1 grids)."""
    s = padded.stride
    return padded.data[:, y * s:y * s + r, x * s:x * s + r]


def dense_by_patches(spec: NetworkSpec, params: list[ConvKernel], image, exact: bool = False) -> DenseOutput:
    """Naive dense output: run the patch CNN once per output position."""
    padded = _prepare(spec, image)
    pspec = extract_patch_cnn(spec)
    out = np.empty((spec.num_channels_out, padded.out_height, padded.out_width), dtype=DTYPE)
    for y in range(padded.out_height):
        for x in range(padded.out_width):
            out[:, y, x] = forward_patch(pspec, params, patch_at(padded, y, x, pspec.r), exact)
    return DenseOutput(out, padded.stride, (0, 0))


def center_pixel_classify(dense: DenseOutput, box) -> int:
    """Character class at the centre of ``box = (x0, y0, x1, y1)`` (half-open), background excluded."""
    x0, y0, x1, y1 = (int(v) for v in box)
    _, gh, gw = dense.probs.shape
    h, w = gh * dense.stride, gw * dense.stride
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"box {box} lies outside the {h}x{w} image")
    cy, cx = (y0 + y1 - 1) // 2, (x0 + x1 - 1) // 2
    i, j = dense.grid_index(cy, cx)
    return int(np.argmax(dense.probs[:-1, i, j]))


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"TAOF"
FORMAT_VERSION = 1
DEFAULT_CLASSES = "0123456789-."


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: list[ConvKernel]
    classes: str = DEFAULT_CLASSES
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        r, stride = receptive_field(self.spec)
        header = {
            "spec": self.spec.to_dict(),
            "classes": self.classes,
            "branch_mode": self.spec.branch_mode,
            "seed": self.seed,
            "alignment": {"receptive_field": r, "stride": stride, "offset": [0, 0],
                          "pad_top_left": (r - 1) // 2},
            "meta": self.meta,
        }
        text = json.dumps(header, sort_keys=True).encode("utf-8")
        body = b"".join(a.astype("<f4").tobytes() for a in flat_params(self.params))
        return MAGIC + struct.pack("<II", FORMAT_VERSION, len(text)) + text + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise CheckpointError("not a TAOF checkpoint (bad magic)")
        if len(blob) < 12:
            raise CheckpointError("truncated checkpoint header")
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        try:
            header = json.loads(blob[12:12 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        spec = NetworkSpec.from_dict(header["spec"])
        offset = 12 + hlen
        params = []
        for shape in spec.kernel_shapes():
            arrays = []
            for shp in (shape, (shape[0],)):
                n = int(np.prod(shp))
                if offset + 4 * n > len(blob):
                    raise CheckpointError(f"truncated parameter data at byte {offset}")
                arrays.append(np.frombuffer(blob, "<f4", n, offset).astype(DTYPE).reshape(shp))
                offset += 4 * n
            params.append(ConvKernel(*arrays))
        if offset != len(blob):
            raise CheckpointError(f"{len(blob) - offset} trailing bytes after parameters")
        return cls(spec, params, header["classes"], header["seed"], header.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
