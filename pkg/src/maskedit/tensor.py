"""Dense float32 array math used by every other module.

Tensors are plain C-contiguous ``numpy.float32`` arrays. No function here
mutates its arguments.

Layout notes
------------
Images and feature maps are channel-first, ``(C, H, W)``; batched variants
take ``(B, C, H, W)``.

``space_to_depth`` orders output channels channel-major over
(block-row, block-col): ``out[c*f*f + dy*f + dx, i, j] = x[c, i*f + dy, j*f + dx]``.
For a single-channel 2x2 input ``[[a, b], [c, d]]`` with ``f=2`` the result
has shape ``(4, 1, 1)`` and channels ``[a, b, c, d]``.

``nearest_downsample`` samples the top-left pixel of each block.
"""

from __future__ import annotations

import numpy as np

from ._backend import kernels

__all__ = [
    "DimensionError",
    "as_tensor",
    "matmul",
    "softmax_lastaxis",
    "conv2d_3x3",
    "conv2d_3x3_batch",
    "nearest_downsample",
    "space_to_depth",
    "depth_to_space",
    "group_norm",
    "group_norm_batch",
    "silu",
    "linear",
]


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_lastaxis(x) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax over empty last axis: shape {x.shape}")
    flat = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    return kernels.softmax_rows(flat).reshape(x.shape)


def conv2d_3x3_batch(x, weight, bias) -> np.ndarray:
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d_3x3 expects a (C_out, C_in, 3, 3) kernel, got {weight.shape}")
    if x.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d_3x3 channel mismatch: input {x.shape}, weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"conv2d_3x3 bias shape {bias.shape} != ({weight.shape[0]},)")
    return kernels.conv2d_3x3_batch(x, weight, bias)


def conv2d_3x3(x, weight, bias) -> np.ndarray:
    """Stride-1, zero-padded 3x3 cross-correlation of a (C_in, H, W) input."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"conv2d_3x3 expects (C, H, W), got {x.shape}")
    return conv2d_3x3_batch(x[None], weight, bias)[0]


def _check_divisible(x: np.ndarray, factor: int, op: str) -> None:
    if factor < 1:
        raise DimensionError(f"{op}: factor must be >= 1, got {factor}")
    if x.ndim != 3:
        raise DimensionError(f"{op} expects (C, H, W), got {x.shape}")
    if x.shape[1] % factor or x.shape[2] % factor:
        raise DimensionError(f"{op}: spatial dims {x.shape[1:]} not divisible by {factor}")


def nearest_downsample(x, factor: int) -> np.ndarray:
    x = as_tensor(x)
    _check_divisible(x, factor, "nearest_downsample")
    return np.ascontiguousarray(x[:, ::factor, ::factor])


def space_to_depth(x, f: int) -> np.ndarray:
    x = as_tensor(x)
    _check_divisible(x, f, "space_to_depth")
    c, h, w = x.shape
    blocks = x.reshape(c, h // f, f, w // f, f).transpose(0, 2, 4, 1, 3)
    return np.ascontiguousarray(blocks.reshape(c * f * f, h // f, w // f))


def depth_to_space(x, f: int) -> np.ndarray:
    x = as_tensor(x)
    if f < 1 or x.ndim != 3 or x.shape[0] % (f * f):
        raise DimensionError(f"depth_to_space: channels of {x.shape} not divisible by {f}^2")
    cf, h, w = x.shape
    c = cf // (f * f)
    blocks = x.reshape(c, f, f, h, w).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(blocks.reshape(c, h * f, w * f))


def group_norm_batch(x, groups: int, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"group_norm_batch expects (B, C, H, W), got {x.shape}")
    c = x.shape[1]
    if groups < 1 or c % groups:
        raise DimensionError(f"group_norm: {c} channels not divisible by {groups} groups")
    if eps <= 0:
        raise ValueError("group_norm: eps must be positive")
    gamma = as_tensor(np.broadcast_to(gamma, (c,)))
    beta = as_tensor(np.broadcast_to(beta, (c,)))
    return kernels.group_norm_batch(x, int(groups), gamma, beta, float(eps))


def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"group_norm expects (C, H, W), got {x.shape}")
    return group_norm_batch(x[None], groups, gamma, beta, eps)[0]


def silu(x) -> np.ndarray:
    x = as_tensor(x)
    # tanh form avoids exp overflow for large negative inputs
    return (x * (0.5 * (1.0 + np.tanh(0.5 * x)))).astype(np.float32)


def linear(x, weight, bias=None) -> np.ndarray:
    """Row-vector affine map ``x @ weight (+ bias)`` over the last axis."""
    out = as_tensor(x) @ as_tensor(weight)
    if bias is not None:
        out = out + bias
    return out.astype(np.float32, copy=False)
