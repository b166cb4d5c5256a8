"""Training-free mask + text video inpainting with cross-frame extended attention (toy scale)."""

from ._backend import NAME as BACKEND
from .codec import ToyCodec
from .conditioning import ConditioningBundle, build_bundle, embed_text
from .denoiser import AttentionMode, DenoiserModel
from .pipeline import EditMode, EditRequest, EditResult, Task, apply_task_preset, run_edit
from .scheduler import NoiseSchedule, make_schedule

__all__ = [
    "BACKEND",
    "AttentionMode",
    "ConditioningBundle",
    "DenoiserModel",
    "EditMode",
    "EditRequest",
    "EditResult",
    "NoiseSchedule",
    "Task",
    "ToyCodec",
    "apply_task_preset",
    "build_bundle",
    "embed_text",
    "make_schedule",
    "run_edit",
]

__version__ = "0.1.0"
