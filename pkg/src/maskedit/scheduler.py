"""Deterministic DDIM (eta = 0) schedule, sampling step and inversion step.

Index ``-1`` denotes the clean end of the chain, where alpha_bar is taken as 1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .conditioning import ConditioningBundle, assemble_unet_input
from .denoiser import AttentionMode
from .tensor import as_tensor

BETA_START = 0.00085
BETA_END = 0.012


class ParameterError(ValueError):
    """Raised for invalid schedule parameters or timestep indices."""


@dataclass(frozen=True)
class NoiseSchedule:
    num_train_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    inference_timesteps: np.ndarray

    def alpha_bar(self, t: int) -> float:
        if t == -1:
            return 1.0
        if not 0 <= t < self.num_train_steps:
            raise ParameterError(f"timestep {t} outside [-1, {self.num_train_steps - 1}]")
        return float(self.alpha_bars[t])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.betas.tobytes())
        h.update(self.inference_timesteps.astype("<i8").tobytes())
        return h.hexdigest()


def make_schedule(num_train: int = 1000, num_inference: int = 50) -> NoiseSchedule:
    """Scaled-linear betas and evenly spaced inference timesteps.

    ``t_i = (i + 1) * num_train / num_inference - 1``, so the default
    schedule visits 19, 39, ..., 999.
    """
    if num_train < 1 or not 1 <= num_inference <= num_train:
        raise ParameterError(f"need 1 <= num_inference ({num_inference}) <= num_train ({num_train})")
    if num_train == 1:
        betas = np.array([BETA_START], dtype=np.float64)
    else:
        betas = np.linspace(BETA_START**0.5, BETA_END**0.5, num_train, dtype=np.float64) ** 2
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    idx = np.arange(num_inference)
    timesteps = ((idx + 1) * num_train) // num_inference - 1
    for arr in (betas, alphas, alpha_bars, timesteps):
        arr.setflags(write=False)
    return NoiseSchedule(num_train, betas, alphas, alpha_bars, timesteps)


def ddim_step(x_t, eps, t: int, t_prev: int, schedule: NoiseSchedule) -> np.ndarray:
    """One deterministic DDIM update from ``t`` to ``t_prev`` (< t)."""
    if t_prev >= t:
        raise ParameterError(f"ddim_step requires t_prev < t, got t={t}, t_prev={t_prev}")
    a_t = schedule.alpha_bar(t)
    a_prev = schedule.alpha_bar(t_prev)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    x0 = (x_t - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
    return as_tensor(np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * eps)


def ddim_invert_step(x_prev, eps, t_prev: int, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Algebraic inverse of :func:`ddim_step` under the same ``eps``."""
    if t_prev >= t:
        raise ParameterError(f"ddim_invert_step requires t_prev < t, got t_prev={t_prev}, t={t}")
    a_t = schedule.alpha_bar(t)
    a_prev = schedule.alpha_bar(t_prev)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    x0 = (x_prev - np.sqrt(1.0 - a_prev) * eps) / np.sqrt(a_prev)
    return as_tensor(np.sqrt(a_t) * x0 + np.sqrt(1.0 - a_t) * eps)


def invert_to_final(
    latents: Sequence[np.ndarray],
    model,
    bundles: Sequence[ConditioningBundle],
    schedule: NoiseSchedule,
    map_fn: Callable = map,
    retention_hook: Callable[[int, int], None] | None = None,
) -> list[np.ndarray]:
    """Invert each clean frame latent to the noisiest timestep.

    The chain starts at the clean index ``-1`` and walks every inference
    timestep in increasing order. Only the current latent of each frame is
    held; intermediate latents are dropped as soon as the next one exists.
    ``retention_hook(step, n_retained)`` is called after every step with the
    number of latents held across all frames.

    Frames are inverted independently, in per-frame self-attention mode and
    with the unconditional embedding. ``map_fn`` may be a parallel map
    (e.g. ``ThreadPoolExecutor.map``); results do not depend on it.
    """
    if len(latents) != len(bundles):
        raise ParameterError(f"{len(latents)} latents but {len(bundles)} conditioning bundles")
    chain = [-1] + [int(t) for t in schedule.inference_timesteps]
    state = [as_tensor(z) for z in latents]

    def advance(args):
        z, bundle, t_prev, t = args
        x_in = assemble_unet_input(z, bundle)
        eps = model.forward([x_in], t, bundle.uncond_text, AttentionMode.SELF_PER_FRAME)[0]
        return ddim_invert_step(z, eps, t_prev, t, schedule)

    for step, (t_prev, t) in enumerate(zip(chain[:-1], chain[1:])):
        state = list(map_fn(advance, [(z, b, t_prev, t) for z, b in zip(state, bundles)]))
        if retention_hook is not None:
            retention_hook(step, len(state))
    return state
