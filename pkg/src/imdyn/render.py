"""Layered renderer: affine-warped sprites over a static background.

Every moving object is a Layer cut from the input image by its mask. A frame
is produced by warping each layer with that frame's affine transform,
over-compositing in ascending z_order onto the background, and optionally
re-shading foreground pixels with a Lambertian model driven by per-object
albedo and normal maps. Dense optical flow between consecutive frames falls
out analytically from the affines, so it is exact rather than estimated.

Raster conventions: images are float32 in [0, 1] inside this module (uint8 at
the edges), pixel (x, y) spans [x, x+1] x [y, y+1] with center (x+0.5, y+0.5),
and warps are inverse-mapped bilinear resamples with zero padding, which makes
the identity transform and integer translations bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SingularTransform
from .scene import DirectionalLight, SceneBundle


@dataclass(slots=True)
class Layer:
    """One movable sprite.

    ``rgba`` is premultiplied. ``albedo`` (plain RGB) and ``normal`` (unit
    vectors where alpha > 0, zero elsewhere) are optional; a layer without
    them still composites and occludes but cannot be relit.
    """

    rgba: np.ndarray  # (H, W, 4) float32, premultiplied
    albedo: np.ndarray | None  # (H, W, 3) float32
    normal: np.ndarray | None  # (H, W, 3) float32
    z_order: int = 0

    @property
    def alpha(self) -> np.ndarray:
        return self.rgba[..., 3]


@dataclass(slots=True)
class FramePack:
    """Everything rendered for one frame."""

    composited: np.ndarray  # (H, W, 3) uint8
    relit: np.ndarray  # (H, W, 3) uint8
    albedo: np.ndarray  # (H, W, 3) float32, unpremultiplied composite
    normal: np.ndarray  # (H, W, 3) float32, renormalized composite
    alpha: np.ndarray  # (H, W) float32 relightable coverage
    flow: np.ndarray | None = None  # (H, W, 2) float32 toward the next frame


# ------------------------------------------------------------------ affines


def _invert_affine(T: np.ndarray) -> tuple[float, float, float, float, float, float]:
    a, b, tx = float(T[0, 0]), float(T[0, 1]), float(T[0, 2])
    c, d, ty = float(T[1, 0]), float(T[1, 1]), float(T[1, 2])
    det = a * d - b * c
    if abs(det) < 1e-12:
        raise SingularTransform()
    ia, ib = d / det, -b / det
    ic, idd = -c / det, a / det
    return ia, ib, -(ia * tx + ib * ty), ic, idd, -(ic * tx + idd * ty)


def compose_affines(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Return the 2x3 affine equivalent to applying inner, then outer."""
    R = outer[:, :2] @ inner[:, :2]
    t = outer[:, :2] @ inner[:, 2] + outer[:, 2]
    return np.column_stack([R, t])


def invert_affine(T: np.ndarray) -> np.ndarray:
    ia, ib, itx, ic, idd, ity = _invert_affine(np.asarray(T, dtype=float))
    return np.array([[ia, ib, itx], [ic, idd, ity]])


def _rotation_of(T: np.ndarray) -> float:
    """In-plane rotation angle of an affine (exact for rotation+uniform scale)."""
    return math.atan2(float(T[1, 0] - T[0, 1]), float(T[0, 0] + T[1, 1]))


# ------------------------------------------------------------------ warping


def _support_bbox(alpha: np.ndarray) -> tuple[int, int, int, int] | None:
    """Half-open (x0, y0, x1, y1) pixel bounds of alpha > 0, or None."""
    rows = np.any(alpha > 0, axis=1)
    if not rows.any():
        return None
    cols = np.any(alpha > 0, axis=0)
    y0 = int(np.argmax(rows))
    y1 = int(len(rows) - np.argmax(rows[::-1]))
    x0 = int(np.argmax(cols))
    x1 = int(len(cols) - np.argmax(cols[::-1]))
    return x0, y0, x1, y1


def _forward_window(
    T: np.ndarray, bbox: tuple[int, int, int, int], out_shape: tuple[int, int], pad: int = 2
) -> tuple[int, int, int, int] | None:
    """Output-canvas window that can possibly receive content from bbox."""
    x0, y0, x1, y1 = bbox
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]], dtype=float)
    mapped = corners @ np.asarray(T, dtype=float)[:, :2].T + np.asarray(T, dtype=float)[:, 2]
    out_h, out_w = out_shape
    wx0 = max(int(np.floor(mapped[:, 0].min())) - pad, 0)
    wy0 = max(int(np.floor(mapped[:, 1].min())) - pad, 0)
    wx1 = min(int(np.ceil(mapped[:, 0].max())) + pad, out_w)
    wy1 = min(int(np.ceil(mapped[:, 1].max())) + pad, out_h)
    if wx0 >= wx1 or wy0 >= wy1:
        return None
    return wx0, wy0, wx1, wy1


def _warp_stack(
    stack: np.ndarray,
    T: np.ndarray,
    out_shape: tuple[int, int],
    window: tuple[int, int, int, int] | None = None,
) -> np.ndarray:
    """Inverse-mapped bilinear warp of an (H, W, C) float32 stack.

    ``window`` restricts evaluation to an output sub-rectangle (everything
    outside is exactly zero anyway when it covers the transformed support);
    the result is always the full out_shape canvas.
    """
    ia, ib, itx, ic, idd, ity = _invert_affine(np.asarray(T, dtype=float))
    out_h, out_w = out_shape
    h, w = stack.shape[:2]
    if window is None:
        wx0, wy0, wx1, wy1 = 0, 0, out_w, out_h
    else:
        wx0, wy0, wx1, wy1 = window
    xs = np.arange(wx0, wx1, dtype=np.float64) + 0.5
    ys = np.arange(wy0, wy1, dtype=np.float64) + 0.5
    sx = ia * xs[None, :] + ib * ys[:, None] + itx
    sy = ic * xs[None, :] + idd * ys[:, None] + ity
    fx = sx - 0.5
    fy = sy - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    wx = (fx - x0).astype(np.float32)[..., None]
    wy = (fy - y0).astype(np.float32)[..., None]

    patch = np.zeros((wy1 - wy0, wx1 - wx0, stack.shape[2]), dtype=np.float32)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            sample = stack[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            sample = np.where(valid[..., None], sample, np.float32(0.0))
            weight = (wx if dx else 1.0 - wx) * (wy if dy else 1.0 - wy)
            patch += sample * weight
    if window is None:
        return patch
    out = np.zeros((out_h, out_w, stack.shape[2]), dtype=np.float32)
    out[wy0:wy1, wx0:wx1] = patch
    return out


def warp_layer(layer: Layer, T: np.ndarray, out_shape: tuple[int, int] | None = None) -> Layer:
    """Warp a layer's rasters by T; normals also rotate in-plane.

    Intrinsics are premultiplied by alpha before resampling so edge pixels
    blend against nothing instead of against zero-color, then unpremultiplied
    and (for normals) renormalized afterwards.
    """
    if out_shape is None:
        out_shape = layer.rgba.shape[:2]
    channels = [layer.rgba]
    alpha = layer.alpha[..., None]
    if layer.albedo is not None:
        channels.append(layer.albedo * alpha)
    if layer.normal is not None:
        channels.append(layer.normal * alpha)
    bbox = _support_bbox(layer.alpha)
    window = None
    if bbox is not None:
        window = _forward_window(np.asarray(T, dtype=float), bbox, out_shape)
        if window is None:  # content entirely off-canvas
            _invert_affine(np.asarray(T, dtype=float))  # still reject singular T
            return Layer(
                rgba=np.zeros((*out_shape, 4), dtype=np.float32),
                albedo=np.zeros((*out_shape, 3), dtype=np.float32) if layer.albedo is not None else None,
                normal=np.zeros((*out_shape, 3), dtype=np.float32) if layer.normal is not None else None,
                z_order=layer.z_order,
            )
    warped = _warp_stack(np.concatenate(channels, axis=-1), T, out_shape, window)

    rgba = warped[..., :4]
    new_alpha = rgba[..., 3:4]
    safe = np.where(new_alpha > 0, new_alpha, np.float32(1.0))
    pos = 4
    albedo = None
    normal = None
    if layer.albedo is not None:
        albedo = warped[..., pos : pos + 3] / safe
        pos += 3
    if layer.normal is not None:
        normal = warped[..., pos : pos + 3] / safe
        angle = _rotation_of(np.asarray(T, dtype=float))
        c, s = math.cos(angle), math.sin(angle)
        nx = c * normal[..., 0] - s * normal[..., 1]
        ny = s * normal[..., 0] + c * normal[..., 1]
        normal = np.stack([nx, ny, normal[..., 2]], axis=-1).astype(np.float32)
        length = np.linalg.norm(normal, axis=-1, keepdims=True)
        normal = normal / np.where(length > 0, length, np.float32(1.0))
        normal = np.where(new_alpha > 0, normal, np.float32(0.0))
    return Layer(rgba=rgba, albedo=albedo, normal=normal, z_order=layer.z_order)


# ------------------------------------------------------------------ compositing


def composite_frame(background: np.ndarray, layers: list[Layer]) -> np.ndarray:
    """Over-composite layers onto the background in ascending z_order."""
    out = np.array(background, dtype=np.float32, copy=True)
    for layer in sorted(layers, key=lambda L: L.z_order):
        if layer.rgba.shape[:2] != out.shape[:2]:
            raise ShapeError(
                f"layer {layer.rgba.shape[:2]} does not match frame {out.shape[:2]}"
            )
        a = layer.alpha[..., None]
        out = layer.rgba[..., :3] + (1.0 - a) * out
    return out


def composite_intrinsics(layers: list[Layer]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Blend albedo/normal across layers that carry them.

    Layers without intrinsics still occlude: their coverage attenuates what is
    below so a plain sprite in front of a relit one masks the shading region.
    Returns (albedo, normal, alpha) with albedo unpremultiplied and normal
    renormalized where alpha > 0.
    """
    shape = layers[0].rgba.shape[:2] if layers else (0, 0)
    alb = np.zeros((*shape, 3), dtype=np.float32)
    nrm = np.zeros((*shape, 3), dtype=np.float32)
    cov = np.zeros((*shape, 1), dtype=np.float32)
    for layer in sorted(layers, key=lambda L: L.z_order):
        a = layer.alpha[..., None]
        if layer.albedo is not None and layer.normal is not None:
            alb = layer.albedo * a + (1.0 - a) * alb
            nrm = layer.normal * a + (1.0 - a) * nrm
            cov = a + (1.0 - a) * cov
        else:
            alb = (1.0 - a) * alb
            nrm = (1.0 - a) * nrm
            cov = (1.0 - a) * cov
    alpha = cov[..., 0]
    safe = np.where(cov > 0, cov, np.float32(1.0))
    alb = alb / safe
    nrm = nrm / safe
    length = np.linalg.norm(nrm, axis=-1, keepdims=True)
    nrm = nrm / np.where(length > 0, length, np.float32(1.0))
    return alb, nrm, alpha


def relight(
    frame: np.ndarray,
    albedo: np.ndarray,
    normal: np.ndarray,
    alpha: np.ndarray,
    light: DirectionalLight,
) -> np.ndarray:
    """Lambertian re-shade of foreground pixels; background passes through.

    shade = ambient + intensity * max(0, N . L) and the output foreground
    color is albedo * shade clamped to [0, 1]. ``light.direction`` points
    from the surface toward the light, in the same frame as the normals
    (+z out of the screen).
    """
    L = np.asarray(light.direction, dtype=np.float32)
    lambert = np.maximum(normal @ L, 0.0)
    shade = light.ambient + light.intensity * lambert
    lit = np.clip(albedo * shade[..., None], 0.0, 1.0)
    fg = (alpha > 0)[..., None]
    return np.where(fg, lit, frame).astype(np.float32)


# ------------------------------------------------------------------ flow


def _affine_delta(T_t: np.ndarray, T_next: np.ndarray) -> np.ndarray:
    return compose_affines(np.asarray(T_next, dtype=float), invert_affine(T_t))


def flow_field(mask: np.ndarray, T_t: np.ndarray, T_next: np.ndarray) -> np.ndarray:
    """Dense flow for one object: where its warped mask sits at frame t,
    flow(p) = (T_next o T_t^-1)(p) - p evaluated at pixel centers."""
    h, w = mask.shape
    D = _affine_delta(T_t, T_next)  # also rejects a singular T_t
    flow = np.zeros((h, w, 2), dtype=np.float32)
    bbox = _support_bbox(mask)
    if bbox is None:
        return flow
    window = _forward_window(np.asarray(T_t, dtype=float), bbox, (h, w))
    if window is None:
        return flow
    stack = mask.astype(np.float32)[..., None]
    warped = _warp_stack(stack, np.asarray(T_t, dtype=float), (h, w), window)[..., 0]
    x0, y0, x1, y1 = window
    inside = warped[y0:y1, x0:x1] >= 0.5
    xs = np.arange(x0, x1, dtype=np.float64) + 0.5
    ys = np.arange(y0, y1, dtype=np.float64) + 0.5
    px = xs[None, :]
    py = ys[:, None]
    u = D[0, 0] * px + D[0, 1] * py + D[0, 2] - px
    v = D[1, 0] * px + D[1, 1] * py + D[1, 2] - py
    flow[y0:y1, x0:x1, 0] = np.where(inside, u, 0.0)
    flow[y0:y1, x0:x1, 1] = np.where(inside, v, 0.0)
    return flow


# ------------------------------------------------------------------ pipeline


def layers_from_bundle(bundle: SceneBundle) -> list[Layer]:
    """Cut one layer per object from the scene image, in list order (later
    objects draw on top)."""
    image = bundle.image.astype(np.float32) / 255.0
    layers: list[Layer] = []
    for z, obj in enumerate(bundle.objects):
        alpha = obj.mask.astype(np.float32)
        rgba = np.empty((*alpha.shape, 4), dtype=np.float32)
        rgba[..., :3] = image * alpha[..., None]
        rgba[..., 3] = alpha
        albedo = None
        normal = None
        if obj.albedo is not None and obj.normal is not None:
            albedo = obj.albedo.astype(np.float32) / 255.0
            decoded = obj.normal.astype(np.float32) * (2.0 / 255.0) - 1.0
            length = np.linalg.norm(decoded, axis=-1, keepdims=True)
            decoded = decoded / np.where(length > 0, length, np.float32(1.0))
            normal = decoded * alpha[..., None]
        layers.append(Layer(rgba=rgba, albedo=albedo, normal=normal, z_order=z))
    return layers


def _to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_sequence(bundle: SceneBundle, samples: list[list[np.ndarray]]) -> list[FramePack]:
    """Warp, composite, relight, and differentiate flow for each sampled frame.

    ``samples`` is per-frame, per-object 2x3 affines (object order matching
    the bundle). The flow raster of frame i points to frame i+1; the last
    frame has none. Overlapping flow is resolved by z_order, topmost wins.
    """
    layers = layers_from_bundle(bundle)
    background = bundle.background.astype(np.float32) / 255.0
    out_shape = (bundle.height, bundle.width)
    n = len(samples)
    packs: list[FramePack] = []
    for i in range(n):
        if len(samples[i]) != len(layers):
            raise ShapeError(
                f"frame {i} carries {len(samples[i])} transforms for {len(layers)} objects"
            )
        warped = [warp_layer(layer, T, out_shape) for layer, T in zip(layers, samples[i])]
        composited = composite_frame(background, warped)
        albedo, normal, alpha = composite_intrinsics(warped)
        relit = relight(composited, albedo, normal, alpha, bundle.light)

        flow = None
        if i + 1 < n:
            flow = np.zeros((*out_shape, 2), dtype=np.float32)
            for k, layer in enumerate(layers):
                piece = flow_field(
                    bundle.objects[k].mask, samples[i][k], samples[i + 1][k]
                )
                # overwrite by coverage, not by nonzero flow, so zero-motion
                # pixels of an upper layer still occlude a mover below
                cover = warped[k].alpha >= 0.5
                flow = np.where(cover[..., None], piece, flow)
        packs.append(
            FramePack(
                composited=_to_uint8(composited),
                relit=_to_uint8(relit),
                albedo=albedo,
                normal=normal,
                alpha=alpha,
                flow=flow,
            )
        )
    return packs
