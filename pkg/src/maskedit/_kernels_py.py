"""Pure-numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``MASKEDIT_PURE_PYTHON=1`` is set. Signatures mirror the Cython module.
"""

import numpy as np


def conv2d_3x3_batch(x, weight, bias):
    """3x3, stride 1, zero-pad 1 cross-correlation over a (B, C, H, W) batch."""
    b, c_in, h, w = x.shape
    c_out = weight.shape[0]
    padded = np.zeros((b, c_in, h + 2, w + 2), dtype=np.float32)
    padded[:, :, 1:-1, 1:-1] = x
    out = np.empty((b, c_out, h, w), dtype=np.float32)
    wmat = weight.reshape(c_out, c_in * 9)
    for i in range(b):
        cols = np.empty((c_in, 3, 3, h, w), dtype=np.float32)
        for dy in range(3):
            for dx in range(3):
                cols[:, dy, dx] = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = (wmat @ cols.reshape(c_in * 9, h * w)).reshape(c_out, h, w)
    out += bias[None, :, None, None]
    return out


def group_norm_batch(x, groups, gamma, beta, eps):
    b, c, h, w = x.shape
    g = x.reshape(b, groups, -1).astype(np.float64)
    mean = g.mean(axis=2, keepdims=True)
    var = ((g - mean) ** 2).mean(axis=2, keepdims=True)
    normed = ((g - mean) / np.sqrt(var + eps)).reshape(b, c, h, w)
    out = normed * gamma[None, :, None, None] + beta[None, :, None, None]
    return out.astype(np.float32)


def softmax_rows(x):
    """Max-subtracted softmax over the last axis of a 2-D float32 array."""
    shifted = x.astype(np.float64) - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)
