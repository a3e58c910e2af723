"""Noise-and-denoise refinement loop over an abstract denoiser.

The physics-rendered video enters as a "guidance" latent z0. It is pushed
part-way up a DDPM-style forward noising schedule (strength s picks how far),
then walked back down by an external denoiser. At each step below the fusion
cutoff, a freshly noised copy of the guidance is blended into the foreground
region with a weight that shifts linearly from guidance toward the denoiser's
own output as the walk approaches t=0; the background region always keeps the
raw denoiser output. The denoiser itself is a boundary: any callable
(z_t, t) -> z_{t-1}. This module ships small deterministic stand-ins for
testing and offline runs; a real model can attach over the wire protocol in
`denoiser_wire`.

Noise draws are keyed by (seed, t) so the same timestep always sees the same
epsilon regardless of call order, which is what makes an echo-style denoiser
an exact fixed point of the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError


# ------------------------------------------------------------------ schedule


@dataclass(slots=True)
class NoiseSchedule:
    """Variance schedule: betas[i] is beta for timestep t=i+1, and
    alpha_bars[i] the cumulative product of (1-beta) up to it."""

    betas: np.ndarray
    alpha_bars: np.ndarray

    def __len__(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """alpha-bar at timestep t, with alpha_bar(0) := 1 (no noise)."""
        if not 0 <= t <= len(self.betas):
            raise ValidationError("t", f"timestep {t} outside [0, {len(self.betas)}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def make_schedule(betas: np.ndarray) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) == 0:
        raise ValidationError("betas", "need a non-empty 1-D beta array")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValidationError("betas", "betas must lie strictly in (0, 1)")
    alpha_bars = np.cumprod(1.0 - betas)
    if np.any(np.diff(alpha_bars) >= 0.0):
        raise ValidationError("betas", "alpha-bar must be strictly decreasing")
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)


def default_schedule(
    total_steps: int = 50,
    base_steps: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
) -> NoiseSchedule:
    """Linear base schedule subsampled to ``total_steps`` by matching
    alpha-bar at evenly spaced base timesteps."""
    if not 1 <= total_steps <= base_steps:
        raise ValidationError("total_steps", "need 1 <= total_steps <= base_steps")
    base = np.linspace(beta_start, beta_end, base_steps)
    base_bars = np.cumprod(1.0 - base)
    picks = np.round(np.linspace(0, base_steps - 1, total_steps)).astype(int)
    bars = base_bars[picks]
    betas = np.empty(total_steps)
    prev = 1.0
    for i, bar in enumerate(bars):
        betas[i] = 1.0 - bar / prev
        prev = bar
    return make_schedule(betas)


# ------------------------------------------------------------------ plan


@dataclass(slots=True)
class RefinePlan:
    noise_strength: float = 0.5
    fusion_delta: int = 5
    total_steps: int = 50
    foreground_mask: np.ndarray | None = None  # (h, w) bool at latent size
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_strength <= 1.0:
            raise ValidationError("noise_strength", "must lie in [0, 1]")
        if self.fusion_delta < 0:
            raise ValidationError("fusion_delta", "must be >= 0")
        if self.total_steps < 1:
            raise ValidationError("total_steps", "must be >= 1")


def nearest_resize(array: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample to (h, w) using center-aligned sampling."""
    h, w = shape
    src_h, src_w = array.shape[:2]
    ys = np.minimum(((np.arange(h) + 0.5) * src_h / h).astype(int), src_h - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * src_w / w).astype(int), src_w - 1)
    return array[ys[:, None], xs[None, :]]


def default_plan(
    union_mask: np.ndarray | None = None,
    latent_shape: tuple[int, int] | None = None,
    seed: int = 0,
) -> RefinePlan:
    """Paper-default knobs: strength 0.5, fusion cutoff 5, 50 steps. The
    foreground mask is the union object mask resized to the latent grid."""
    mask = None
    if union_mask is not None:
        if latent_shape is None:
            latent_shape = (union_mask.shape[0] // 8, union_mask.shape[1] // 8)
        mask = nearest_resize(union_mask.astype(bool), latent_shape)
    return RefinePlan(
        noise_strength=0.5,
        fusion_delta=5,
        total_steps=50,
        foreground_mask=mask,
        rng_seed=seed,
    )


# ------------------------------------------------------------------ operations


def forward_noise(z0: np.ndarray, t: int, schedule: NoiseSchedule, seed: int = 0) -> np.ndarray:
    """Jump straight to timestep t: sqrt(abar_t) z0 + sqrt(1-abar_t) eps.

    The epsilon stream is keyed by (seed, t); t=0 returns z0 untouched.
    """
    z0 = np.asarray(z0, dtype=np.float32)
    bar = schedule.alpha_bar(t)  # validates range
    if t == 0:
        return z0.copy()
    rng = np.random.default_rng((seed, t))
    eps = rng.standard_normal(z0.shape, dtype=np.float32)
    return math.sqrt(bar) * z0 + math.sqrt(1.0 - bar) * eps


def fusion_weight(t: int, T: int) -> float:
    """Blend weight on the denoised term: 0 at t=T, approaching 1 at t=1."""
    return (T - t) / T


def executed_steps(total_steps: int, noise_strength: float) -> int:
    """Round-half-up count of denoising steps a strength buys."""
    return int(math.floor(total_steps * noise_strength + 0.5))


def refine(
    z0_guidance: np.ndarray,
    plan: RefinePlan,
    schedule: NoiseSchedule,
    denoiser,
) -> np.ndarray:
    """Run the masked-fusion denoising walk; returns the final latent video.

    Steps count down t = T..1 with T = round(total * strength). Steps with
    t > T - delta run the denoiser alone; at and below the cutoff the
    foreground region becomes w*denoised + (1-w)*noised_guidance with
    w = (T-t)/T, while the background keeps the denoiser output exactly.
    """
    z0 = np.asarray(z0_guidance, dtype=np.float32)
    if z0.ndim != 4:
        raise ShapeError(f"latent video must be 4-D (frames,h,w,c), got {z0.shape}")
    if plan.total_steps != len(schedule):
        raise ValidationError(
            "total_steps", f"plan says {plan.total_steps}, schedule has {len(schedule)}"
        )
    if plan.foreground_mask is not None:
        if plan.foreground_mask.shape != z0.shape[1:3]:
            raise ShapeError(
                f"mask {plan.foreground_mask.shape} does not match latent {z0.shape[1:3]}"
            )
        mask = plan.foreground_mask.astype(bool)[None, :, :, None]
    else:
        mask = np.ones((1, z0.shape[1], z0.shape[2], 1), dtype=bool)

    T = executed_steps(plan.total_steps, plan.noise_strength)
    z = forward_noise(z0, T, schedule, plan.rng_seed)
    for t in range(T, 0, -1):
        denoised = np.asarray(denoiser(z, t), dtype=np.float32)
        if denoised.shape != z.shape:
            raise ShapeError(
                f"denoiser changed shape {z.shape} -> {denoised.shape} at t={t}"
            )
        if t <= T - plan.fusion_delta:
            guidance = forward_noise(z0, t - 1, schedule, plan.rng_seed)
            w = fusion_weight(t, T)
            fused = w * denoised + (1.0 - w) * guidance
            z = np.where(mask, fused, denoised)
        else:
            z = denoised
    return z


# ------------------------------------------------------------------ stand-ins


class IdentityDenoiser:
    """Returns its input unchanged; records the timesteps it was called at."""

    def __init__(self):
        self.calls: list[int] = []

    def __call__(self, z: np.ndarray, t: int) -> np.ndarray:
        self.calls.append(t)
        return z


class EchoDenoiser:
    """Replays the guidance's own forward-noise stream: the output at step t
    is forward_noise(guidance, t-1) with the loop's seed, which makes the
    whole refinement collapse onto the guidance latent."""

    def __init__(self, guidance: np.ndarray, schedule: NoiseSchedule, seed: int = 0):
        self.guidance = np.asarray(guidance, dtype=np.float32)
        self.schedule = schedule
        self.seed = seed
        self.calls: list[int] = []

    def __call__(self, z: np.ndarray, t: int) -> np.ndarray:
        self.calls.append(t)
        return forward_noise(self.guidance, t - 1, self.schedule, self.seed)


class DampingDenoiser:
    """Shrinks the latent toward zero each step; deterministic and cheap,
    handy when a run just needs a non-identity denoiser."""

    def __init__(self, factor: float = 0.98):
        self.factor = factor
        self.calls: list[int] = []

    def __call__(self, z: np.ndarray, t: int) -> np.ndarray:
        self.calls.append(t)
        return z * np.float32(self.factor)
