"""Scaled dot-product attention, per-frame and extended across frames.

In extended mode every frame's queries attend to the keys and values of all
frames in the batch, concatenated along the token axis. Weights are shared;
only the key/value set changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import DimensionError, as_tensor, softmax_lastaxis


@dataclass(frozen=True)
class AttentionProjections:
    """Row-vector projections: ``q = x @ wq``; ``out = attn @ wo + bo``."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    heads: int


def scaled_dot_attention(q, k, v) -> np.ndarray:
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2 or q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention shape mismatch: Q {q.shape}, K {k.shape}, V {v.shape}")
    logits = (q @ k.T) / np.float32(np.sqrt(q.shape[1]))
    return softmax_lastaxis(logits) @ v


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    # (..., n, heads*dh) -> (..., heads, n, dh)
    *lead, n, d = x.shape
    if d % heads:
        raise DimensionError(f"width {d} not divisible by {heads} heads")
    return np.swapaxes(x.reshape(*lead, n, heads, d // heads), -2, -3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    *lead, heads, n, dh = x.shape
    return np.ascontiguousarray(np.swapaxes(x, -2, -3)).reshape(*lead, n, heads * dh)


def self_attention(frames: Sequence[np.ndarray], proj: AttentionProjections) -> list[np.ndarray]:
    """Ordinary self-attention applied to each frame on its own."""
    out = []
    for x in frames:
        x = as_tensor(x)
        q = _split_heads(x @ proj.wq, proj.heads)
        k = _split_heads(x @ proj.wk, proj.heads)
        v = _split_heads(x @ proj.wv, proj.heads)
        per_head = np.stack([scaled_dot_attention(q[h], k[h], v[h]) for h in range(proj.heads)])
        out.append(_merge_heads(per_head) @ proj.wo + proj.bo)
    return out


def extended_attention(frames: Sequence[np.ndarray], proj: AttentionProjections) -> list[np.ndarray]:
    if not _consistent(frames):
        raise DimensionError("extended attention needs equal token count and width in every frame")
    tokens = as_tensor(np.stack([as_tensor(f) for f in frames]))
    return list(attention_batch(tokens, proj, extended=True))


def _consistent(frames: Sequence[np.ndarray]) -> bool:
    if len(frames) == 0:
        return False
    shape = np.shape(frames[0])
    return len(shape) == 2 and all(np.shape(f) == shape for f in frames)


def attention_batch(tokens: np.ndarray, proj: AttentionProjections, extended: bool,
                    context: np.ndarray | None = None) -> np.ndarray:
    """Batched attention over ``tokens`` of shape ``(B, n, d)``.

    With ``context`` (shape ``(m, d_ctx)``) keys and values come from it, as
    in cross-attention. Otherwise they come from the tokens themselves: the
    frame's own in per-frame mode, all ``B * n`` in extended mode.
    """
    b, n, _ = tokens.shape
    q = _split_heads(tokens @ proj.wq, proj.heads)                    # (B, H, n, dh)
    src = tokens if context is None else context
    k = _split_heads(src @ proj.wk, proj.heads)
    v = _split_heads(src @ proj.wv, proj.heads)
    if extended and context is None:
        # (B, H, n, dh) -> (H, B*n, dh), frame-major key order
        k = np.ascontiguousarray(np.swapaxes(k, 0, 1)).reshape(proj.heads, b * n, -1)
        v = np.ascontiguousarray(np.swapaxes(v, 0, 1)).reshape(proj.heads, b * n, -1)
    dh = q.shape[-1]
    logits = (q @ np.swapaxes(k, -1, -2)) / np.float32(np.sqrt(dh))
    out = softmax_lastaxis(logits) @ v
    return _merge_heads(out) @ proj.wo + proj.bo
