# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

"""
Differentiable operations.

Every operation takes an optional ``tape``. When a tape is given and at least one
input requires gradients, the operation records a gradient function on it;
otherwise it runs as a plain, gradient-free numpy computation.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from coreason_ising_pruning.engine.tensor import ComputationTape, GradFn, Tensor
from coreason_ising_pruning.exceptions import DimensionError, InputError


def _emit(
    name: str,
    inputs: Sequence[Tensor],
    data: np.ndarray,
    tape: Optional[ComputationTape],
    grad_fn: GradFn,
) -> Tensor:
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad)
    if tape is not None and requires_grad:
        tape.record(name, inputs, out, grad_fn)
    return out


def _expect_ndim(t: Tensor, ndim: int, what: str) -> None:
    if t.data.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-D, got shape {t.shape}")


# --- elementary ops -------------------------------------------------------


def add(a: Tensor, b: Tensor, tape: Optional[ComputationTape] = None) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit("add", (a, b), a.data + b.data, tape, lambda g: (g, g))


def mul(a: Tensor, b: Tensor, tape: Optional[ComputationTape] = None) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    a_data, b_data = a.data, b.data
    return _emit("mul", (a, b), a_data * b_data, tape, lambda g: (g * b_data, g * a_data))


def scale(a: Tensor, factor: float, tape: Optional[ComputationTape] = None) -> Tensor:
    return _emit("scale", (a,), a.data * factor, tape, lambda g: (g * factor,))


def sum_all(a: Tensor, tape: Optional[ComputationTape] = None) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), np.array(a.data.sum()), tape, lambda g: (np.broadcast_to(g, shape).copy(),))


def flatten(x: Tensor, tape: Optional[ComputationTape] = None) -> Tensor:
    shape = x.shape
    out = x.data.reshape(shape[0], -1)
    return _emit("flatten", (x,), out, tape, lambda g: (g.reshape(shape),))


# --- network layers -------------------------------------------------------


def relu(x: Tensor, tape: Optional[ComputationTape] = None) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0 and NaN passes through."""
    active = x.data > 0
    out = np.where(active | np.isnan(x.data), x.data, 0.0)
    return _emit("relu", (x,), out, tape, lambda g: (g * active,))


def unit_mask(x: Tensor, keep: np.ndarray, tape: Optional[ComputationTape] = None) -> Tensor:
    """
    Zero whole channels (conv maps) or columns (dense units) along axis 1.

    Args:
        x: Tensor of shape [B, U, ...].
        keep: 0/1 vector of length U.
    """
    keep = np.asarray(keep, dtype=np.float64)
    if x.data.ndim < 2 or keep.shape != (x.shape[1],):
        raise DimensionError(f"unit_mask: keep vector of shape {keep.shape} does not match axis 1 of {x.shape}")
    factor = keep.reshape((1, -1) + (1,) * (x.data.ndim - 2))
    return _emit("unit_mask", (x,), x.data * factor, tape, lambda g: (g * factor,))


def dense(x: Tensor, weights: Tensor, bias: Tensor, tape: Optional[ComputationTape] = None) -> Tensor:
    """Affine map ``x @ weights.T + bias`` for x [B,N], weights [M,N], bias [M]."""
    _expect_ndim(x, 2, "dense input")
    _expect_ndim(weights, 2, "dense weights")
    if x.shape[1] != weights.shape[1]:
        raise DimensionError(f"dense: input axis 1 ({x.shape[1]}) != weights axis 1 ({weights.shape[1]})")
    if bias.shape != (weights.shape[0],):
        raise DimensionError(f"dense: bias shape {bias.shape} != (weights axis 0 = {weights.shape[0]},)")
    x_data, w_data = x.data, weights.data

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return g @ w_data, g.T @ x_data, g.sum(axis=0)

    return _emit("dense", (x, weights, bias), x_data @ w_data.T + bias.data, tape, grad_fn)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent of a convolution along one axis, or 0 if the geometry does not fit exactly."""
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        return 0
    return span // stride + 1


def _im2col(xp: np.ndarray, k1: int, k2: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    batch, channels = xp.shape[:2]
    s_b, s_c, s_h, s_w = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, channels, k1, k2, h_out, w_out),
        strides=(s_b, s_c, s_h, s_w, stride * s_h, stride * s_w),
        writeable=False,
    )
    return patches.reshape(batch, channels * k1 * k2, h_out * w_out)


def _col2im(
    cols: np.ndarray, padded_shape: Tuple[int, ...], k1: int, k2: int, stride: int, h_out: int, w_out: int
) -> np.ndarray:
    batch, channels = padded_shape[:2]
    out = np.zeros(padded_shape, dtype=np.float64)
    cols = cols.reshape(batch, channels, k1, k2, h_out, w_out)
    for i in range(k1):
        for j in range(k2):
            out[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += cols[:, :, i, j]
    return out


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    tape: Optional[ComputationTape] = None,
) -> Tensor:
    """
    2-D cross-correlation (no kernel flip) of x [B,Cin,H,W] with kernel [Cout,Cin,K1,K2].

    Args:
        x: Input batch.
        kernel: One Cin x K1 x K2 kernel per output channel.
        bias: Optional per-kernel bias [Cout].
        stride: Positive step between windows.
        padding: Zero padding added to both sides of H and W.
        tape: Tape to record on.

    Returns:
        Tensor of shape [B, Cout, H', W'].
    """
    _expect_ndim(x, 4, "conv2d input")
    _expect_ndim(kernel, 4, "conv2d kernel")
    if stride < 1 or padding < 0:
        raise InputError(f"conv2d: stride must be >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    batch, c_in, height, width = x.shape
    c_out, k_in, k1, k2 = kernel.shape
    if c_in != k_in:
        raise DimensionError(f"conv2d: input axis 1 (Cin={c_in}) != kernel axis 1 (Cin={k_in})")
    h_out = conv_output_size(height, k1, stride, padding)
    w_out = conv_output_size(width, k2, stride, padding)
    if h_out == 0:
        raise DimensionError(f"conv2d: input axis 2 (H={height}) does not fit K1={k1}, stride={stride}, pad={padding}")
    if w_out == 0:
        raise DimensionError(f"conv2d: input axis 3 (W={width}) does not fit K2={k2}, stride={stride}, pad={padding}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != (kernel axis 0 = {c_out},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k1, k2, stride, h_out, w_out)
    w_mat = kernel.data.reshape(c_out, -1)
    out = (w_mat @ cols).reshape(batch, c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        g_flat = g.reshape(batch, c_out, h_out * w_out)
        grad_kernel = (g_flat @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        grad_cols = w_mat.T @ g_flat
        grad_xp = _col2im(grad_cols, xp.shape, k1, k2, stride, h_out, w_out)
        grad_x = grad_xp[:, :, padding : padding + height, padding : padding + width]
        if bias is None:
            return grad_x, grad_kernel
        return grad_x, grad_kernel, g.sum(axis=(0, 2, 3))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit("conv2d", inputs, out, tape, grad_fn)


def max_pool2d(x: Tensor, tape: Optional[ComputationTape] = None) -> Tensor:
    """2x2 max pool with stride 2; trailing odd rows/columns are dropped."""
    _expect_ndim(x, 4, "max_pool2d input")
    batch, channels, height, width = x.shape
    h_out, w_out = height // 2, width // 2
    if h_out == 0 or w_out == 0:
        raise DimensionError(f"max_pool2d: spatial axes {height}x{width} are smaller than the 2x2 window")
    windows = (
        x.data[:, :, : 2 * h_out, : 2 * w_out]
        .reshape(batch, channels, h_out, 2, w_out, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, h_out, w_out, 4)
    )
    winner = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        routed = np.zeros((batch, channels, h_out, w_out, 4))
        np.put_along_axis(routed, winner[..., None], g[..., None], axis=-1)
        grad = np.zeros(x.shape)
        grad[:, :, : 2 * h_out, : 2 * w_out] = (
            routed.reshape(batch, channels, h_out, w_out, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, channels, 2 * h_out, 2 * w_out)
        )
        return (grad,)

    return _emit("max_pool2d", (x,), out, tape, grad_fn)


def softmax_cross_entropy(
    logits: Tensor, labels: ArrayLike, tape: Optional[ComputationTape] = None
) -> Tensor:
    """
    Mean negative log-likelihood of ``labels`` under softmax(logits), max-subtracted for stability.

    Raises:
        InputError: If a label is outside [0, C).
    """
    _expect_ndim(logits, 2, "logits")
    batch, classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != batch:
        raise DimensionError(f"softmax_cross_entropy: {labels.shape[0]} labels for logits axis 0 of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InputError(
            f"softmax_cross_entropy: labels must lie in [0, {classes}), got {labels.min()}..{labels.max()}"
        )

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (float(g) / batch),)

    return _emit("softmax_cross_entropy", (logits,), np.array(loss), tape, grad_fn)
