"""Everything the denoiser is conditioned on.

Mask convention: 1 marks the region to inpaint, 0 the region to keep.
The 9-channel U-Net input is ``[noisy latent (4) | masked-image latent (4) | mask latent (1)]``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .codec import SPATIAL_FACTOR, ToyCodec
from .tensor import DimensionError, as_tensor, nearest_downsample

TEXT_TOKENS = 16
TEXT_DIM = 64
VOCAB_SIZE = 4096
TEXT_SEED = 11
MASK_THRESHOLD = 0.5


@lru_cache(maxsize=4)
def _embedding_table(seed: int) -> np.ndarray:
    table = np.random.default_rng(seed).standard_normal((VOCAB_SIZE, TEXT_DIM)).astype(np.float32)
    table.setflags(write=False)
    return table


def _token_id(token: str, seed: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little") % VOCAB_SIZE


def embed_text(prompt: str, seed: int = TEXT_SEED) -> np.ndarray:
    """Toy text encoder: ``(16, 64)`` token embeddings, zero rows for padding.

    The empty prompt yields all zeros, which serves as the unconditional embedding.
    """
    tokens = prompt.lower().split()[:TEXT_TOKENS]
    out = np.zeros((TEXT_TOKENS, TEXT_DIM), dtype=np.float32)
    table = _embedding_table(seed)
    for i, tok in enumerate(tokens):
        out[i] = table[_token_id(tok, seed)]
    return out


def binarize_mask(mask) -> np.ndarray:
    mask = as_tensor(mask)
    return (mask >= MASK_THRESHOLD).astype(np.float32)


def make_masked_image(image, mask) -> np.ndarray:
    image = as_tensor(image)
    mask = as_tensor(mask)
    if mask.ndim != 3 or mask.shape[0] != 1 or image.ndim != 3 or image.shape[1:] != mask.shape[1:]:
        raise DimensionError(f"image {image.shape} and mask {mask.shape} are not spatially aligned")
    return image * (1.0 - mask)


@dataclass(frozen=True)
class ConditioningBundle:
    masked_latent: np.ndarray
    mask_latent: np.ndarray
    text: np.ndarray
    uncond_text: np.ndarray


def build_bundle(image, mask, prompt: str, codec: ToyCodec | None = None) -> ConditioningBundle:
    codec = codec or ToyCodec()
    binary = binarize_mask(mask)
    masked_latent = codec.encode(make_masked_image(image, binary))
    mask_latent = nearest_downsample(binary, SPATIAL_FACTOR)
    return ConditioningBundle(
        masked_latent=masked_latent,
        mask_latent=mask_latent,
        text=embed_text(prompt),
        uncond_text=embed_text(""),
    )


def assemble_unet_input(noisy_latent, bundle: ConditioningBundle) -> np.ndarray:
    noisy_latent = as_tensor(noisy_latent)
    if noisy_latent.shape[1:] != bundle.masked_latent.shape[1:] or noisy_latent.shape[1:] != bundle.mask_latent.shape[1:]:
        raise DimensionError(
            f"latent {noisy_latent.shape} does not match conditioning "
            f"{bundle.masked_latent.shape} / {bundle.mask_latent.shape}"
        )
    return np.concatenate([noisy_latent, bundle.masked_latent, bundle.mask_latent], axis=0)
