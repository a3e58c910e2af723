"""Synthetic demo scene: a ball and a crate in a walled room.

Generates a complete 512x512 bundle from nothing -- image, background, masks,
albedo and normal maps, boundaries -- so the pipeline and the browser UI have
something to chew on without shipping binary fixtures in the repository.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .scene import (
    BoundarySegment,
    DirectionalLight,
    RenderConfig,
    SceneBundle,
    SceneObject,
    SimConfig,
    save_bundle,
)

SIZE = 512
BALL_CENTER = (140.0, 120.0)
BALL_RADIUS = 40.0
CRATE_CORNER = (290.0, 100.0)  # top-left
CRATE_SIDE = 90.0


def _grids(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def _disk_mask(h: int, w: int, cx: float, cy: float, r: float) -> np.ndarray:
    X, Y = _grids(h, w)
    return (X - cx) ** 2 + (Y - cy) ** 2 <= r * r


def _rect_mask(h: int, w: int, x0: float, y0: float, side: float) -> np.ndarray:
    X, Y = _grids(h, w)
    return (X >= x0) & (X < x0 + side) & (Y >= y0) & (Y < y0 + side)


def _sphere_normals(h: int, w: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Encoded normal map of a hemisphere bulging out of the screen."""
    X, Y = _grids(h, w)
    nx = (X - cx) / r
    ny = (Y - cy) / r
    rho2 = np.clip(nx * nx + ny * ny, 0.0, 1.0)
    nz = np.sqrt(1.0 - rho2)
    stack = np.stack([nx, ny, nz], axis=-1)
    length = np.linalg.norm(stack, axis=-1, keepdims=True)
    stack = stack / np.where(length > 0, length, 1.0)
    return np.clip(np.rint((stack + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _flat_normals(h: int, w: int) -> np.ndarray:
    out = np.empty((h, w, 3), dtype=np.uint8)
    out[...] = np.rint(np.array([1.0, 1.0, 2.0]) * 127.5).astype(np.uint8)
    return out


def _checker(h: int, w: int, cell: int, dark, light) -> np.ndarray:
    ys, xs = np.indices((h, w))
    tiles = ((ys // cell + xs // cell) % 2).astype(bool)
    out = np.where(tiles[..., None], np.array(light, np.uint8), np.array(dark, np.uint8))
    return out.astype(np.uint8)


def build_demo_bundle() -> SceneBundle:
    h = w = SIZE
    # soft vertical gradient background
    ramp = np.linspace(168, 214, h)[:, None]
    background = np.stack(
        [
            np.broadcast_to(ramp * 0.92, (h, w)),
            np.broadcast_to(ramp * 0.95, (h, w)),
            np.broadcast_to(ramp, (h, w)),
        ],
        axis=-1,
    ).astype(np.uint8)

    ball_mask = _disk_mask(h, w, *BALL_CENTER, BALL_RADIUS)
    crate_mask = _rect_mask(h, w, *CRATE_CORNER, CRATE_SIDE)

    # ball: warm orange with a ring; crate: two-tone checker
    X, Y = _grids(h, w)
    ring = (np.hypot(X - BALL_CENTER[0], Y - BALL_CENTER[1]) / BALL_RADIUS * 6).astype(int) % 2
    ball_albedo = np.where(
        ring[..., None].astype(bool),
        np.array([233, 140, 37], np.uint8),
        np.array([209, 82, 22], np.uint8),
    ).astype(np.uint8)
    crate_albedo = _checker(h, w, 15, (108, 72, 48), (156, 112, 72))

    image = background.copy()
    image[ball_mask] = ball_albedo[ball_mask]
    image[crate_mask] = crate_albedo[crate_mask]

    light_dir = np.array([0.25, -0.4, 0.88])
    light_dir = light_dir / np.linalg.norm(light_dir)

    ball = SceneObject(
        id=1,
        mask=ball_mask,
        albedo=ball_albedo,
        normal=_sphere_normals(h, w, *BALL_CENTER, BALL_RADIUS),
        mass=150.0,
        friction=0.4,
        elasticity=0.7,
        initial_velocity=(60.0, 0.0),
    )
    crate = SceneObject(
        id=2,
        mask=crate_mask,
        albedo=crate_albedo,
        normal=_flat_normals(h, w),
        mass=400.0,
        friction=0.6,
        elasticity=0.3,
        initial_angular_velocity=0.8,
    )

    margin = 8.0
    floor_y = 500.0
    boundaries = [
        BoundarySegment(p0=(margin, floor_y), p1=(w - margin, floor_y), friction=0.6, elasticity=0.5),
        BoundarySegment(p0=(margin, margin), p1=(margin, floor_y), friction=0.6, elasticity=0.5),
        BoundarySegment(p0=(w - margin, margin), p1=(w - margin, floor_y), friction=0.6, elasticity=0.5),
    ]

    return SceneBundle(
        width=w,
        height=h,
        image=image,
        background=background,
        objects=[ball, crate],
        boundaries=boundaries,
        light=DirectionalLight(
            direction=(float(light_dir[0]), float(light_dir[1]), float(light_dir[2])),
            intensity=0.25,
            ambient=0.85,
        ),
        sim=SimConfig(),
        render=RenderConfig(resolution=(w, h)),
    )


def write_demo_bundle(out: str | Path) -> Path:
    out = Path(out)
    save_bundle(build_demo_bundle(), out)
    return out
