"""Seeded linear stand-in for a latent-diffusion VAE.

Frames ``(3, H, W)`` in [0, 1] are folded into 192-channel 8x8 blocks with
``space_to_depth`` and projected per pixel onto 4 orthonormal directions,
giving latents of shape ``(4, H/8, W/8)``. Because the projection rows are
orthonormal, ``encode(decode(z)) == z`` and ``decode . encode`` is an
orthogonal projection on image space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, as_tensor, depth_to_space, space_to_depth

SPATIAL_FACTOR = 8
LATENT_CHANNELS = 4
IMAGE_CHANNELS = 3


def _gram_schmidt_rows(m: np.ndarray) -> np.ndarray:
    rows = []
    for v in m.astype(np.float64):
        for u in rows:
            v = v - (v @ u) * u
        rows.append(v / np.linalg.norm(v))
    return np.stack(rows)


@dataclass(frozen=True)
class ToyCodec:
    seed: int = 7
    spatial_factor: int = SPATIAL_FACTOR
    projection: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        depth = IMAGE_CHANNELS * self.spatial_factor**2
        raw = np.random.default_rng(self.seed).standard_normal((LATENT_CHANNELS, depth))
        proj = _gram_schmidt_rows(raw).astype(np.float32)
        proj.setflags(write=False)
        object.__setattr__(self, "projection", proj)

    def encode(self, image) -> np.ndarray:
        image = as_tensor(image)
        if image.ndim != 3 or image.shape[0] != IMAGE_CHANNELS:
            raise DimensionError(f"encode expects (3, H, W), got {image.shape}")
        blocks = space_to_depth(image, self.spatial_factor)
        _, h, w = blocks.shape
        z = self.projection @ blocks.reshape(blocks.shape[0], h * w)
        return z.reshape(LATENT_CHANNELS, h, w)

    def decode(self, latent) -> np.ndarray:
        """Map a latent back to image space; no clamping happens here."""
        latent = as_tensor(latent)
        if latent.ndim != 3 or latent.shape[0] != LATENT_CHANNELS:
            raise DimensionError(f"decode expects (4, h, w), got {latent.shape}")
        _, h, w = latent.shape
        blocks = self.projection.T @ latent.reshape(LATENT_CHANNELS, h * w)
        return depth_to_space(blocks.reshape(-1, h, w), self.spatial_factor)
