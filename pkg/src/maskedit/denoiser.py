"""Fixed-weight toy U-Net noise predictor.

Input ``(9, h, w)`` per frame, output a ``(4, h, w)`` noise estimate.
Resolution path for an 8x8 latent: 8x8 (32 ch) -> 4x4 (64 ch) -> 2x2 (64 ch)
and back, with skip connections. Downsampling is ``space_to_depth(2)``
followed by a per-pixel linear map; upsampling is the mirror image.
Self-attention and cross-attention blocks sit at 4x4 (encoder) and 2x2
(middle). Only the self-attention blocks change behaviour with the
attention mode; every other layer always runs per frame.
"""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from typing import Sequence

import numpy as np

from . import tensorfile
from .attention import AttentionProjections, attention_batch
from .conditioning import TEXT_DIM
from .tensor import (
    DimensionError,
    as_tensor,
    conv2d_3x3_batch,
    depth_to_space,
    group_norm_batch,
    silu,
    space_to_depth,
)

IN_CHANNELS = 9
OUT_CHANNELS = 4
BASE_WIDTH = 32
ATTN_WIDTH = 64
HEADS = 4
GROUPS = 8
TIME_DIM = 64
TIME_HIDDEN = 128
INIT_SCALE = 0.02


class AttentionMode(enum.Enum):
    SELF_PER_FRAME = "self"
    EXTENDED_ACROSS_BATCH = "extended"


def timestep_embedding(t: int, dim: int = TIME_DIM) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    return np.concatenate([np.sin(args), np.cos(args)]).astype(np.float32)


def _architecture() -> list[tuple[str, tuple[int, ...]]]:
    layers: list[tuple[str, tuple[int, ...]]] = [
        ("time.fc1.weight", (TIME_DIM, TIME_HIDDEN)),
        ("time.fc1.bias", (TIME_HIDDEN,)),
        ("time.fc2.weight", (TIME_HIDDEN, TIME_HIDDEN)),
        ("time.fc2.bias", (TIME_HIDDEN,)),
        ("conv_in.weight", (BASE_WIDTH, IN_CHANNELS, 3, 3)),
        ("conv_in.bias", (BASE_WIDTH,)),
    ]

    def res(prefix, cin, cout):
        layers.extend([
            (f"{prefix}.norm1.gamma", (cin,)),
            (f"{prefix}.norm1.beta", (cin,)),
            (f"{prefix}.conv1.weight", (cout, cin, 3, 3)),
            (f"{prefix}.conv1.bias", (cout,)),
            (f"{prefix}.time.weight", (TIME_HIDDEN, cout)),
            (f"{prefix}.time.bias", (cout,)),
            (f"{prefix}.norm2.gamma", (cout,)),
            (f"{prefix}.norm2.beta", (cout,)),
            (f"{prefix}.conv2.weight", (cout, cout, 3, 3)),
            (f"{prefix}.conv2.bias", (cout,)),
        ])
        if cin != cout:
            layers.extend([(f"{prefix}.skip.weight", (cin, cout)), (f"{prefix}.skip.bias", (cout,))])

    def attn(prefix, width, ctx_dim):
        layers.extend([
            (f"{prefix}.norm.gamma", (width,)),
            (f"{prefix}.norm.beta", (width,)),
            (f"{prefix}.to_q", (width, ATTN_WIDTH)),
            (f"{prefix}.to_k", (ctx_dim, ATTN_WIDTH)),
            (f"{prefix}.to_v", (ctx_dim, ATTN_WIDTH)),
            (f"{prefix}.to_out.weight", (ATTN_WIDTH, width)),
            (f"{prefix}.to_out.bias", (width,)),
        ])

    def resample(prefix, cin, cout):
        layers.extend([(f"{prefix}.weight", (cin, cout)), (f"{prefix}.bias", (cout,))])

    w0, w1 = BASE_WIDTH, 2 * BASE_WIDTH
    res("enc0", w0, w0)
    resample("down1", 4 * w0, w1)
    res("enc1", w1, w1)
    attn("enc1.self_attn", w1, w1)
    attn("enc1.cross_attn", w1, TEXT_DIM)
    resample("down2", 4 * w1, w1)
    res("mid", w1, w1)
    attn("mid.self_attn", w1, w1)
    attn("mid.cross_attn", w1, TEXT_DIM)
    resample("up1", w1, 4 * w1)
    res("dec1", 2 * w1, w1)
    resample("up0", w1, 4 * w0)
    res("dec0", 2 * w0, w0)
    layers.extend([
        ("out.norm.gamma", (w0,)),
        ("out.norm.beta", (w0,)),
        ("conv_out.weight", (OUT_CHANNELS, w0, 3, 3)),
        ("conv_out.bias", (OUT_CHANNELS,)),
    ])
    return layers


ARCHITECTURE = _architecture()


def _init_param(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=np.float32)
    if name.endswith((".beta", ".bias")):
        return np.zeros(shape, dtype=np.float32)
    return (rng.standard_normal(shape) * INIT_SCALE).astype(np.float32)


class DenoiserModel:
    """Immutable noise predictor; build with :meth:`from_seed` or :meth:`load`."""

    def __init__(self, params: "OrderedDict[str, np.ndarray]"):
        expected = dict(ARCHITECTURE)
        if list(params) != list(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(f"parameter set mismatch; missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in params.items():
            if tuple(arr.shape) != expected[name]:
                raise DimensionError(f"parameter {name}: shape {arr.shape} != {expected[name]}")
            arr = as_tensor(arr)
            arr.setflags(write=False)
            params[name] = arr
        self.params = params

    @classmethod
    def from_seed(cls, seed: int = 42) -> "DenoiserModel":
        rng = np.random.default_rng(seed)
        return cls(OrderedDict((n, _init_param(n, s, rng)) for n, s in ARCHITECTURE))

    @classmethod
    def load(cls, path) -> "DenoiserModel":
        return cls(OrderedDict(tensorfile.load_tensors(path)))

    def save(self, path) -> None:
        tensorfile.save_tensors(path, self.params)

    def projections(self, prefix: str) -> AttentionProjections:
        p = self.params
        return AttentionProjections(
            wq=p[f"{prefix}.to_q"], wk=p[f"{prefix}.to_k"], wv=p[f"{prefix}.to_v"],
            wo=p[f"{prefix}.to_out.weight"], bo=p[f"{prefix}.to_out.bias"], heads=HEADS,
        )

    # -- forward -----------------------------------------------------------

    def forward(self, xs, t: int, text, mode: AttentionMode = AttentionMode.SELF_PER_FRAME) -> np.ndarray:
        """Predict noise for a batch of frames sharing timestep ``t`` and ``text``.

        ``xs`` is a sequence of ``(9, h, w)`` inputs (or a ``(B, 9, h, w)``
        array); returns ``(B, 4, h, w)``. In per-frame mode each frame runs
        through the network alone, so results never depend on batch
        composition.
        """
        x = as_tensor(np.stack([as_tensor(f) for f in xs]))
        if x.ndim != 4 or x.shape[1] != IN_CHANNELS:
            raise DimensionError(f"denoiser expects (B, {IN_CHANNELS}, h, w) input, got {x.shape}")
        h, w = x.shape[2:]
        # two 2x downsamples: zero-pad bottom/right to a multiple of 4, crop after
        ph, pw = -h % 4, -w % 4
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
        text = as_tensor(text)
        temb = self._time_mlp(t)
        mode = AttentionMode(mode)
        if mode is AttentionMode.SELF_PER_FRAME:
            out = np.concatenate([self._unet(x[i:i + 1], temb, text, extended=False) for i in range(x.shape[0])])
        else:
            out = self._unet(x, temb, text, extended=True)
        return as_tensor(out[:, :, :h, :w])

    def _time_mlp(self, t: int) -> np.ndarray:
        p = self.params
        h = silu(timestep_embedding(t) @ p["time.fc1.weight"] + p["time.fc1.bias"])
        return (h @ p["time.fc2.weight"] + p["time.fc2.bias"]).astype(np.float32)

    def _norm(self, x, prefix):
        p = self.params
        return group_norm_batch(x, GROUPS, p[f"{prefix}.gamma"], p[f"{prefix}.beta"])

    def _conv(self, x, prefix):
        return conv2d_3x3_batch(x, self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"])

    def _pixel_linear(self, x, prefix):
        w, b = self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"]
        bsz, c, h, wd = x.shape
        y = w.T @ x.reshape(bsz, c, h * wd) + b[None, :, None]
        return as_tensor(y.reshape(bsz, -1, h, wd))

    def _res(self, x, temb, prefix):
        p = self.params
        h = self._conv(silu(self._norm(x, f"{prefix}.norm1")), f"{prefix}.conv1")
        h = h + (silu(temb) @ p[f"{prefix}.time.weight"] + p[f"{prefix}.time.bias"])[None, :, None, None]
        h = self._conv(silu(self._norm(h, f"{prefix}.norm2")), f"{prefix}.conv2")
        skip = self._pixel_linear(x, f"{prefix}.skip") if f"{prefix}.skip.weight" in p else x
        return as_tensor(skip + h)

    def _attn(self, x, prefix, extended, context=None):
        b, c, h, w = x.shape
        tokens = np.ascontiguousarray(self._norm(x, f"{prefix}.norm").reshape(b, c, h * w).transpose(0, 2, 1))
        out = attention_batch(tokens, self.projections(prefix), extended=extended, context=context)
        return as_tensor(x + out.transpose(0, 2, 1).reshape(b, c, h, w))

    def _down(self, x, prefix):
        y = np.stack([space_to_depth(f, 2) for f in x])
        return self._pixel_linear(y, prefix)

    def _up(self, x, prefix):
        y = self._pixel_linear(x, prefix)
        return as_tensor(np.stack([depth_to_space(f, 2) for f in y]))

    def _unet(self, x, temb, text, extended):
        h0 = self._res(self._conv(x, "conv_in"), temb, "enc0")
        h1 = self._res(self._down(h0, "down1"), temb, "enc1")
        h1 = self._attn(h1, "enc1.self_attn", extended)
        h1 = self._attn(h1, "enc1.cross_attn", False, context=text)
        h2 = self._res(self._down(h1, "down2"), temb, "mid")
        h2 = self._attn(h2, "mid.self_attn", extended)
        h2 = self._attn(h2, "mid.cross_attn", False, context=text)
        u1 = self._res(np.concatenate([self._up(h2, "up1"), h1], axis=1), temb, "dec1")
        u0 = self._res(np.concatenate([self._up(u1, "up0"), h0], axis=1), temb, "dec0")
        return self._conv(silu(self._norm(u0, "out.norm")), "conv_out")


def forward(model: DenoiserModel, xs: Sequence[np.ndarray], t: int, text, mode: AttentionMode) -> np.ndarray:
    return model.forward(xs, t, text, mode)
