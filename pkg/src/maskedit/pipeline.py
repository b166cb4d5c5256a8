"""End-to-end mask + text video editing.

Per run: build conditioning for every frame, encode frames, invert each
latent to the noisiest timestep, then denoise all frames for every inference
timestep. At each step the frames are randomly partitioned into batches; a
batch is denoised together so its extended-attention layers see every
frame in it. Guidance is the usual two-branch classifier-free combination.
"""

from __future__ import annotations

import contextlib
import dataclasses
import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codec import SPATIAL_FACTOR, ToyCodec
from .conditioning import assemble_unet_input, build_bundle
from .denoiser import AttentionMode, DenoiserModel
from .metrics import MetricRow, SSIM_WINDOW, metric_rows
from .scheduler import NoiseSchedule, ddim_step, invert_to_final, make_schedule
from .tensor import as_tensor

log = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid edit configuration; reported before any computation starts."""


class PipelineError(RuntimeError):
    """A stage of the pipeline failed; the message names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


class EditMode(enum.Enum):
    EATTN = "eattn"
    FRAME_BY_FRAME = "framebyframe"


class Task(enum.Enum):
    REMOVAL = "removal"
    REPLACEMENT = "replacement"
    RETARGETING = "retargeting"


REMOVAL_PROMPT = "background"
DEFAULT_GS = 7.5


@dataclass(frozen=True)
class EditRequest:
    """One editing run.

    ``frames`` are ``(H, W, 3)`` uint8 arrays; ``masks`` are ``(H, W)``
    arrays in [0, 1] where values >= 0.5 mark the edit region.
    ``workers`` only controls parallel execution and never changes results.
    """

    frames: Sequence[np.ndarray]
    masks: Sequence[np.ndarray]
    prompt: str = ""
    guidance_scale: float = DEFAULT_GS
    seed: int = 0
    num_steps: int = 50
    batch_size: int = 5
    mode: EditMode = EditMode.EATTN
    composite_unmasked: bool = False
    task: Task = Task.REPLACEMENT
    workers: int = 1
    with_metrics: bool = True


@dataclass
class EditResult:
    edited_frames: list[np.ndarray]
    per_frame_metrics: list[MetricRow] | None
    run_manifest: dict = field(default_factory=dict)


def plan_batches(n_frames: int, batch_size: int, step: int, seed: int) -> list[list[int]]:
    """Random partition of the frame indices for one diffusion step.

    The permutation comes from a Philox stream keyed by ``seed`` with the
    counter set by ``step``, so each step's draw is independent of how many
    draws earlier steps made.
    """
    if n_frames < 1 or batch_size < 1:
        raise ConfigError(f"need n_frames >= 1 and batch_size >= 1, got {n_frames}, {batch_size}")
    bitgen = np.random.Philox(key=seed & _SEED_MASK, counter=[0, 0, 0, step])
    order = np.random.Generator(bitgen).permutation(n_frames)
    return [order[i:i + batch_size].tolist() for i in range(0, n_frames, batch_size)]


def cfg_combine(eps_uncond, eps_cond, gs: float) -> np.ndarray:
    """``eps_u + gs * (eps_c - eps_u)``, evaluated as ``(1 - gs) * eps_u + gs * eps_c``
    so that gs = 0 and gs = 1 return the respective branch exactly."""
    u = np.asarray(eps_uncond)
    c = np.asarray(eps_cond)
    if u.shape != c.shape:
        raise ValueError(f"cfg shape mismatch: {u.shape} vs {c.shape}")
    gs = float(gs)
    out = (1.0 - gs) * u.astype(np.float64) + gs * c.astype(np.float64)
    return out.astype(np.result_type(u, c))


def apply_task_preset(task: Task, request: EditRequest) -> EditRequest:
    """Fill task defaults. Presets never change the algorithm itself."""
    task = Task(task)
    if task in (Task.REMOVAL, Task.RETARGETING):
        prompt = request.prompt if request.prompt.strip() else REMOVAL_PROMPT
        return dataclasses.replace(request, task=task, prompt=prompt)
    if not request.prompt.strip():
        raise ConfigError("replacement task requires a non-empty prompt")
    return dataclasses.replace(request, task=task)


def validate_request(request: EditRequest) -> None:
    frames, masks = request.frames, request.masks
    if len(frames) < 1:
        raise ConfigError("at least one frame is required")
    if len(masks) != len(frames):
        raise ConfigError(f"mask count {len(masks)} != frame count {len(frames)}")
    shape = np.shape(frames[0])
    if len(shape) != 3 or shape[2] != 3:
        raise ConfigError(f"frames must be (H, W, 3), got {shape}")
    if shape[0] % SPATIAL_FACTOR or shape[1] % SPATIAL_FACTOR:
        raise ConfigError(f"frame size {shape[1]}x{shape[0]} not divisible by {SPATIAL_FACTOR}")
    for i, (f, m) in enumerate(zip(frames, masks)):
        if np.shape(f) != shape:
            raise ConfigError(f"frame {i} has shape {np.shape(f)}, expected {shape}")
        if np.shape(m) != shape[:2]:
            raise ConfigError(f"mask {i} has shape {np.shape(m)}, expected {shape[:2]}")
    if request.guidance_scale < 0:
        raise ConfigError(f"guidance_scale must be >= 0, got {request.guidance_scale}")
    if request.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {request.batch_size}")
    if request.num_steps < 1:
        raise ConfigError(f"num_steps must be >= 1, got {request.num_steps}")
    if request.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {request.workers}")


def frame_to_tensor(frame: np.ndarray) -> np.ndarray:
    return as_tensor(np.transpose(np.asarray(frame, dtype=np.float32) / 255.0, (2, 0, 1)))


def quantize(image: np.ndarray) -> np.ndarray:
    """(3, H, W) float in any range -> (H, W, 3) uint8, clamped, round half away from zero."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.transpose(np.floor(x + 0.5).astype(np.uint8), (1, 2, 0)).copy()


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def run_edit(
    request: EditRequest,
    model: DenoiserModel | None = None,
    codec: ToyCodec | None = None,
    schedule: NoiseSchedule | None = None,
) -> EditResult:
    request = apply_task_preset(request.task, request)
    validate_request(request)
    model = model or DenoiserModel.from_seed()
    codec = codec or ToyCodec()
    schedule = schedule or make_schedule(num_inference=request.num_steps)
    if len(schedule.inference_timesteps) != request.num_steps:
        raise ConfigError(
            f"schedule has {len(schedule.inference_timesteps)} steps, request asks for {request.num_steps}"
        )
    attn_mode = (AttentionMode.EXTENDED_ACROSS_BATCH if request.mode is EditMode.EATTN
                 else AttentionMode.SELF_PER_FRAME)
    n = len(request.frames)
    timings: dict[str, float] = {}
    executor = ThreadPoolExecutor(request.workers) if request.workers > 1 else None
    map_fn = executor.map if executor else map

    try:
        t0 = time.perf_counter()
        with _stage("conditioning"):
            images = [frame_to_tensor(f) for f in request.frames]
            masks = [as_tensor(np.asarray(m)[None]) for m in request.masks]
            bundles = [build_bundle(img, m, request.prompt, codec) for img, m in zip(images, masks)]
            latents = [codec.encode(img) for img in images]
        timings["conditioning_s"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        with _stage("invert"):
            latents = invert_to_final(latents, model, bundles, schedule, map_fn=map_fn)
        timings["invert_s"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        timesteps = [int(t) for t in schedule.inference_timesteps][::-1]
        for step, t in enumerate(timesteps):
            t_prev = timesteps[step + 1] if step + 1 < len(timesteps) else -1
            with _stage(f"denoise step {step} (t={t})"):
                batches = plan_batches(n, request.batch_size, step, request.seed)

                def denoise(batch, t=t, t_prev=t_prev, current=latents):
                    xs = [assemble_unet_input(current[i], bundles[i]) for i in batch]
                    eps_u = model.forward(xs, t, bundles[batch[0]].uncond_text, attn_mode)
                    eps_c = model.forward(xs, t, bundles[batch[0]].text, attn_mode)
                    eps = cfg_combine(eps_u, eps_c, request.guidance_scale)
                    return [ddim_step(current[i], eps[k], t, t_prev, schedule) for k, i in enumerate(batch)]

                updated = list(latents)
                for batch, outs in zip(batches, map_fn(denoise, batches)):
                    for i, z in zip(batch, outs):
                        updated[i] = z
                latents = updated
        timings["denoise_s"] = time.perf_counter() - t0

        with _stage("decode"):
            decoded = [codec.decode(z) for z in latents]
            if request.composite_unmasked:
                decoded = [np.where(m >= 0.5, d, img) for d, m, img in zip(decoded, masks, images)]
            edited = [quantize(d) for d in decoded]
    finally:
        if executor:
            executor.shutdown()

    rows = None
    if request.with_metrics:
        h, w = edited[0].shape[:2]
        if min(h, w) >= SSIM_WINDOW:
            with _stage("metrics"):
                rows = metric_rows(request.frames, edited, request.masks)
        else:
            log.warning("frames %dx%d smaller than SSIM window; skipping metrics", w, h)

    manifest = {
        "seed": int(request.seed),
        "mode": request.mode.value,
        "guidance_scale": float(request.guidance_scale),
        "task": request.task.value,
        "prompt": request.prompt,
        "batch_size": int(request.batch_size),
        "num_steps": int(request.num_steps),
        "composite_unmasked": bool(request.composite_unmasked),
        "num_frames": n,
        "schedule_sha256": schedule.digest(),
        "timings": timings,
    }
    return EditResult(edited, rows, manifest)
