"""Deterministic float32 tensor kernels with matching backward passes.

Tensors are numpy arrays laid out channels x height x width. Every kernel
also accepts a leading batch axis ``(N, C, H, W)``; the dense network stacks
its branch leaves along that axis so one matmul serves all of them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class AlignmentError(ValueError):
    """A pooling/decimation step received an extent it cannot split evenly."""


class TrainingDivergence(RuntimeError):
    """A gradient or loss became non-finite."""


def floating(data) -> np.ndarray:
    """View ``data`` as float32, leaving float64 arrays alone (used by gradient checks)."""
    arr = np.asarray(data)
    return arr if arr.dtype == np.float64 else arr.astype(DTYPE, copy=False)


def as_tensor(data, channels: int | None = None) -> np.ndarray:
    """Coerce to a float32 ``(C, H, W)`` array, promoting 2-D input to one channel."""
    arr = floating(data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {arr.shape}")
    if channels is not None and arr.shape[0] != channels:
        raise ShapeError(f"expected {channels} channels, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected rank 3 or 4, got shape {x.shape}")


def _unbatch(x: np.ndarray, squeeze: bool) -> np.ndarray:
    return x[0] if squeeze else x


@dataclass
class ConvKernel:
    """Square convolution kernel: weights ``(out, in, k, k)`` and bias ``(out,)``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(floating(self.weights))
        self.bias = np.ascontiguousarray(floating(self.bias))
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"kernel weights must be (out, in, k, k), got {self.weights.shape}")
        if self.k % 2 != 1:
            raise ShapeError(f"kernel side must be odd, got {self.k}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.out_channels} outputs")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    def copy(self) -> "ConvKernel":
        return ConvKernel(self.weights.copy(), self.bias.copy())


def _check_conv(x: np.ndarray, kernel: ConvKernel) -> None:
    if x.shape[1] != kernel.in_channels or x.shape[2] < kernel.k or x.shape[3] < kernel.k:
        raise ShapeError(
            f"input shape {x.shape[1:]} incompatible with kernel shape {kernel.weights.shape}"
        )


def conv2d_valid_reference(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Direct valid convolution, one shifted multiply-add per kernel tap.

    This is the normative path; :func:`conv2d_valid` must agree with it.
    """
    xb, squeeze = _batched(floating(x))
    _check_conv(xb, kernel)
    k = kernel.k
    n, _, h, w = xb.shape
    ho, wo = h - k + 1, w - k + 1
    out = np.empty((n, kernel.out_channels, ho, wo), dtype=np.result_type(xb, kernel.weights))
    for o in range(kernel.out_channels):
        acc = np.full((n, ho, wo), kernel.bias[o], dtype=out.dtype)
        for c in range(kernel.in_channels):
            for dy in range(k):
                for dx in range(k):
                    acc += kernel.weights[o, c, dy, dx] * xb[:, c, dy:dy + ho, dx:dx + wo]
        out[:, o] = acc
    return _unbatch(out, squeeze)


def conv2d_valid(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Stride-1 convolution without padding (im2col + one matmul).

    Output side is ``input side - k + 1``. Raises :class:`ShapeError` on a
    channel mismatch or an input smaller than the kernel.
    """
    xb, squeeze = _batched(floating(x))
    _check_conv(xb, kernel)
    k = kernel.k
    n, c, h, w = xb.shape
    ho, wo = h - k + 1, w - k + 1
    wmat = kernel.weights.reshape(kernel.out_channels, -1)
    if k == 1:
        cols = xb.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        win = sliding_window_view(xb, (k, k), axis=(2, 3))  # n, c, ho, wo, k, k
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * k * k)
    out = cols @ wmat.T
    out += kernel.bias
    out = out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)
    return _unbatch(np.ascontiguousarray(out), squeeze)


def conv2d_valid_bwd(x: np.ndarray, kernel: ConvKernel, grad_out: np.ndarray):
    """Backward of :func:`conv2d_valid`.

    Returns ``(grad_input, grad_weights, grad_bias)``; parameter gradients are
    summed over the batch axis.
    """
    xb, squeeze = _batched(floating(x))
    gb, _ = _batched(floating(grad_out))
    k = kernel.k
    n, c, h, w = xb.shape
    ho, wo = h - k + 1, w - k + 1
    if gb.shape != (n, kernel.out_channels, ho, wo):
        raise ShapeError(f"grad shape {gb.shape} does not match forward output {(n, kernel.out_channels, ho, wo)}")
    o = kernel.out_channels
    g2 = gb.transpose(0, 2, 3, 1).reshape(-1, o)
    if k == 1:
        cols = xb.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        win = sliding_window_view(xb, (k, k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * k * k)
    grad_w = (g2.T @ cols).reshape(kernel.weights.shape)
    grad_b = g2.sum(axis=0)
    if k == 1:
        gx = (g2 @ kernel.weights.reshape(o, c)).reshape(n, h, w, c).transpose(0, 3, 1, 2)
    else:
        gp = np.pad(gb, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        gwin = sliding_window_view(gp, (k, k), axis=(2, 3))  # n, o, h, w, k, k
        gcols = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(-1, o * k * k)
        wflip = kernel.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
        gx = (gcols @ wflip.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
    return _unbatch(np.ascontiguousarray(gx), squeeze), grad_w, grad_b


def pad2d(x: np.ndarray, margin, value: float = 0.0) -> np.ndarray:
    """Pad the spatial axes with a constant.

    ``margin`` is an int (all sides) or ``(top, bottom, left, right)``.
    """
    if np.isscalar(margin):
        top = bottom = left = right = int(margin)
    else:
        top, bottom, left, right = (int(m) for m in margin)
    if min(top, bottom, left, right) < 0:
        raise ValueError(f"margins must be non-negative, got {margin}")
    x = floating(x)
    lead = [(0, 0)] * (x.ndim - 2)
    return np.pad(x, lead + [(top, bottom), (left, right)], constant_values=value)


def _check_even(x: np.ndarray, what: str) -> None:
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise AlignmentError(f"{what} needs even spatial extents, got {x.shape[-2:]}; pad or crop first")


def phase_decimate(x: np.ndarray, phase_y: int, phase_x: int) -> np.ndarray:
    """Keep the units at ``(2i + phase_y, 2j + phase_x)``."""
    x = floating(x)
    _check_even(x, "phase_decimate")
    return np.ascontiguousarray(x[..., phase_y::2, phase_x::2])


def phase_decimate_bwd(grad: np.ndarray, phase_y: int, phase_x: int, input_shape) -> np.ndarray:
    out = np.zeros(input_shape, dtype=floating(grad).dtype)
    if out[..., phase_y::2, phase_x::2].shape != grad.shape:
        raise ShapeError(f"grad shape {grad.shape} does not fit input shape {tuple(input_shape)}")
    out[..., phase_y::2, phase_x::2] = grad
    return out


PHASES = ((0, 0), (0, 1), (1, 0), (1, 1))


def split_phases(x: np.ndarray) -> np.ndarray:
    """All four decimation phases of a batch, stacked as ``(4N, C, H/2, W/2)``.

    Child ``4n + 2*py + px`` is phase ``(py, px)`` of parent ``n``.
    """
    xb, _ = _batched(floating(x))
    _check_even(xb, "split_phases")
    n, c, h, w = xb.shape
    out = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 3, 5, 1, 2, 4)
    return np.ascontiguousarray(out.reshape(4 * n, c, h // 2, w // 2))


def interleave_phases(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`split_phases`; also the exact backward of it."""
    x = floating(x)
    if x.ndim != 4 or x.shape[0] % 4:
        raise ShapeError(f"expected (4N, C, H, W) leaves, got {x.shape}")
    n4, c, h, w = x.shape
    out = x.reshape(n4 // 4, 2, 2, c, h, w).transpose(0, 3, 4, 1, 5, 2)
    return np.ascontiguousarray(out.reshape(n4 // 4, c, 2 * h, 2 * w))


def shifted_maxpool(x: np.ndarray, offset_y: int, offset_x: int, return_argmax: bool = False):
    """2x2 stride-2 max pooling over windows anchored at ``(2i + oy, 2j + ox)``."""
    xb, squeeze = _batched(floating(x))
    view = xb[..., offset_y:, offset_x:]
    _check_even(view, "shifted_maxpool")
    n, c, h, w = view.shape
    blocks = view.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    out = _unbatch(np.ascontiguousarray(out), squeeze)
    if return_argmax:
        return out, _unbatch(idx, squeeze)
    return out


def shifted_maxpool_bwd(grad: np.ndarray, argmax: np.ndarray, offset_y: int, offset_x: int, input_shape) -> np.ndarray:
    """Route each pooled gradient to the unit that won its window."""
    gb, squeeze = _batched(floating(grad))
    ab, _ = _batched(argmax)
    if gb.shape != ab.shape:
        raise ShapeError(f"grad shape {gb.shape} does not match retained argmax {ab.shape}")
    full = (1,) + tuple(input_shape) if squeeze else tuple(input_shape)
    out = np.zeros(full, dtype=gb.dtype)
    n, c, hh, wh = gb.shape
    onehot = np.zeros((n, c, hh, wh, 4), dtype=gb.dtype)
    np.put_along_axis(onehot, ab[..., None], gb[..., None], axis=-1)
    blocks = onehot.reshape(n, c, hh, wh, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * hh, 2 * wh)
    out[..., offset_y:offset_y + 2 * hh, offset_x:offset_x + 2 * wh] += blocks
    return _unbatch(out, squeeze)


def relu(x: np.ndarray) -> np.ndarray:
    x = floating(x)
    return np.maximum(x, x.dtype.type(0))


def relu_bwd(grad: np.ndarray, forward_input: np.ndarray) -> np.ndarray:
    if grad.shape != forward_input.shape:
        raise ShapeError(f"grad shape {grad.shape} does not match forward input {forward_input.shape}")
    return np.where(forward_input > 0, grad, 0).astype(grad.dtype)


def softmax_channels(x: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis at every spatial position."""
    x = floating(x)
    if x.shape[-3] < 2:
        raise ShapeError(f"softmax needs at least 2 channels, got {x.shape[-3]}")
    z = x - x.max(axis=-3, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-3, keepdims=True)


def softmax_xent_bwd(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of the weighted-mean cross entropy w.r.t. the pre-softmax logits.

    ``probs`` is ``(C, H, W)``; ``labels`` and ``weights`` are ``(H, W)``.
    """
    total = float(weights.sum())
    if total <= 0:
        raise ValueError("all positions are masked; the weighted mean is undefined")
    grad = probs.astype(np.float64)
    rows, cols = np.indices(labels.shape)
    grad[labels, rows, cols] -= 1.0
    grad *= weights[None] / total
    return grad.astype(probs.dtype)


def sgd_update(params: list[np.ndarray], grads: list[np.ndarray], lr: float, momentum: float,
               velocity: list[np.ndarray]) -> None:
    """In-place momentum SGD: ``v = momentum * v + g``; ``p -= lr * v``."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("params, grads and velocity lists differ in length")
    for i, (g, p, v) in enumerate(zip(grads, params, velocity)):
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"parameter {i}: shapes {p.shape}, {g.shape}, {v.shape} disagree")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in parameter {i}")
    for g, p, v in zip(grads, params, velocity):
        v *= v.dtype.type(momentum)
        v += g
        p -= v.dtype.type(lr) * v
