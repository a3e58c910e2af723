"""Image-space rigid-body dynamics with layered rendering and refinement.

The pipeline: a scene bundle (image + per-object masks and materials) is fit
with simple collision primitives, simulated as 2D rigid bodies, re-rendered
frame by frame with affine sprite warps, and optionally pushed through a
noise/denoise refinement loop against a pluggable denoiser.
"""

from .dynamics import BodyState, ExternalAction, Trajectory, sample_frames, simulate
from .errors import EngineError, ValidationError
from .refine import RefinePlan, default_plan, default_schedule, refine
from .render import FramePack, render_sequence
from .scene import (
    BoundarySegment,
    DirectionalLight,
    RenderConfig,
    SceneBundle,
    SceneObject,
    SimConfig,
    load_bundle,
    save_bundle,
    save_run,
)

__version__ = "0.1.0"

__all__ = [
    "BodyState",
    "BoundarySegment",
    "DirectionalLight",
    "EngineError",
    "ExternalAction",
    "FramePack",
    "RefinePlan",
    "RenderConfig",
    "SceneBundle",
    "SceneObject",
    "SimConfig",
    "Trajectory",
    "ValidationError",
    "default_plan",
    "default_schedule",
    "load_bundle",
    "refine",
    "render_sequence",
    "sample_frames",
    "save_bundle",
    "save_run",
    "simulate",
    "__version__",
]
