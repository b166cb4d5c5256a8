"""Synthetic clips with aligned masks.

``static``
    identical striped frames, fixed square mask.
``translating_square``
    a square moving 2 px/frame to the right over stripes; the mask follows it.
``two_objects``
    two overlapping moving squares; the mask covers the visible part of the
    one drawn behind (the object to remove while keeping the front one).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import write_frames, write_masks

KINDS = ("static", "translating_square", "two_objects")
SQUARE = 16
STEP_PX = 2
STRIPE = 4


def _background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    colors = rng.integers(40, 216, size=(2, 3), dtype=np.int64).astype(np.uint8)
    stripes = (np.arange(width) // STRIPE) % 2
    row = colors[stripes]
    return np.broadcast_to(row, (height, width, 3)).copy()


def _box(height, width, cy, cx, size=SQUARE):
    m = np.zeros((height, width), dtype=bool)
    y0, x0 = cy - size // 2, cx - size // 2
    m[max(y0, 0):max(y0 + size, 0), max(x0, 0):max(x0 + size, 0)] = True
    return m


def square_center(t: int, width: int) -> int:
    """x-centre of the moving square in frame ``t``."""
    return SQUARE // 2 + 2 + STEP_PX * t if width >= SQUARE + 4 else width // 2


def generate(kind: str, n_frames: int, width: int = 64, height: int = 64, seed: int = 0):
    """Return ``(frames, masks)``: uint8 (H, W, 3) frames and float (H, W) masks in {0, 1}."""
    if kind not in KINDS:
        raise ValueError(f"unknown synth kind {kind!r}; choose from {', '.join(KINDS)}")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    bg = _background(rng, height, width)
    obj_colors = rng.integers(0, 256, size=(2, 3), dtype=np.int64).astype(np.uint8)
    cy = height // 2
    frames, masks = [], []
    for t in range(n_frames):
        frame = bg.copy()
        if kind == "static":
            box = _box(height, width, cy, width // 2)
            frame[box] = obj_colors[0]
            mask = box
        elif kind == "translating_square":
            box = _box(height, width, cy, square_center(t, width))
            frame[box] = obj_colors[0]
            mask = box
        else:
            behind = _box(height, width, cy - 4, square_center(t, width))
            front = _box(height, width, cy + 4, width - 1 - square_center(t, width))
            frame[behind] = obj_colors[0]
            frame[front] = obj_colors[1]
            mask = behind & ~front
        frames.append(frame)
        masks.append(mask.astype(np.float32))
    return frames, masks


def synth_video(kind: str, n_frames: int, width: int, height: int, seed: int,
                frames_dir, masks_dir) -> tuple[list[Path], list[Path]]:
    frames, masks = generate(kind, n_frames, width, height, seed)
    return write_frames(frames_dir, frames), write_masks(masks_dir, masks)
