"""PSNR, SSIM and an unmasked-region temporal consistency score.

All functions take 8-bit images (``uint8`` or integer-valued arrays), shaped
``(H, W)`` or ``(H, W, C)``. Masks are ``(H, W)`` with 1 marking the edit region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * PEAK) ** 2
SSIM_C2 = (0.03 * PEAK) ** 2


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricRow:
    frame_index: int
    psnr_db: float
    ssim: float
    temporal_mse: float | None = None


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def compute_psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(PEAK / math.sqrt(mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    return np.einsum("ijkl,kl->ij", sliding_window_view(x, win.shape), win)


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x**2
    syy = _filter_valid(y * y, win) - mu_y**2
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def compute_ssim(a, b) -> float:
    """Single-scale SSIM, Gaussian 11x11 window (sigma 1.5), valid windows only."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise MetricError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = gaussian_window()
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], win) for c in range(a.shape[2])]))


def temporal_pair_errors(frames: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> tuple[list[float], list[int]]:
    """Per consecutive pair, MSE over pixels unmasked in both frames.

    Returns the errors and the indices of pairs with no such pixels (those
    pairs score 0).
    """
    if len(frames) != len(masks):
        raise MetricError(f"frame count {len(frames)} != mask count {len(masks)}")
    errors, flagged = [], []
    for i in range(1, len(frames)):
        a, b = _pair(frames[i - 1], frames[i])
        keep = (np.asarray(masks[i - 1]) < 0.5) & (np.asarray(masks[i]) < 0.5)
        if keep.shape != a.shape[:2]:
            raise MetricError(f"mask shape {keep.shape} does not match frame shape {a.shape[:2]}")
        if not keep.any():
            errors.append(0.0)
            flagged.append(i - 1)
            continue
        diff = (a - b) ** 2
        if diff.ndim == 3:
            diff = diff.mean(axis=2)
        errors.append(float(diff[keep].mean()))
    return errors, flagged


def compute_temporal_consistency(frames: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> float:
    if len(frames) < 2:
        raise MetricError("temporal consistency needs at least 2 frames")
    errors, _ = temporal_pair_errors(frames, masks)
    return float(np.mean(errors))


def metric_rows(reference: Sequence[np.ndarray], test: Sequence[np.ndarray],
                masks: Sequence[np.ndarray] | None = None) -> list[MetricRow]:
    """PSNR/SSIM of each test frame against its reference, plus the temporal
    error of each test frame against its predecessor (None for frame 0)."""
    if len(reference) != len(test):
        raise MetricError(f"reference count {len(reference)} != test count {len(test)}")
    if masks is None:
        masks = [np.zeros(np.shape(f)[:2]) for f in test]
    temporal, _ = temporal_pair_errors(test, masks)
    rows = []
    for i, (r, t) in enumerate(zip(reference, test)):
        rows.append(MetricRow(i, compute_psnr(r, t), compute_ssim(r, t), temporal[i - 1] if i else None))
    return rows
