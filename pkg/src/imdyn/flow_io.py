"""Middlebury .flo flow file IO and the standard flow color wheel.

File format: float32 magic 202021.25, then int32 width, int32 height, then
height*width*2 float32 values interleaved (u, v), row-major, little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IoError, ShapeError

FLO_MAGIC = 202021.25


def write_flo(path: str | Path, flow: np.ndarray) -> None:
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
            fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_flo(path: str | Path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            header = fh.read(12)
            if len(header) != 12:
                raise IoError(f"{path}: truncated header")
            magic, w, h = struct.unpack("<fii", header)
            if abs(magic - FLO_MAGIC) > 1e-3:
                raise IoError(f"{path}: bad magic {magic}")
            data = np.frombuffer(fh.read(h * w * 2 * 4), dtype="<f4")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if data.size != h * w * 2:
        raise IoError(f"{path}: truncated payload")
    return data.reshape(h, w, 2).astype(np.float32)


def _color_wheel() -> np.ndarray:
    """55-entry RGB wheel: RY 15, YG 6, GC 4, CB 11, BM 13, MR 6."""
    transitions = (15, 6, 4, 11, 13, 6)
    ncols = sum(transitions)
    wheel = np.zeros((ncols, 3))
    col = 0
    ry, yg, gc, cb, bm, mr = transitions
    wheel[col : col + ry, 0] = 255
    wheel[col : col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col : col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col : col + yg, 1] = 255
    col += yg
    wheel[col : col + gc, 1] = 255
    wheel[col : col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col : col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col : col + cb, 2] = 255
    col += cb
    wheel[col : col + bm, 2] = 255
    wheel[col : col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col : col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col : col + mr, 0] = 255
    return wheel


_WHEEL = _color_wheel()


def flow_to_color(flow: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Colorize a flow field for inspection: hue = direction, saturation = speed."""
    u = flow[..., 0].astype(np.float64)
    v = flow[..., 1].astype(np.float64)
    mag = np.sqrt(u * u + v * v)
    if max_magnitude is None:
        max_magnitude = float(mag.max()) or 1.0
    u = u / max_magnitude
    v = v / max_magnitude
    mag = np.minimum(mag / max_magnitude, 1.0)

    ncols = _WHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi  # [-1, 1]
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = fk - k0

    out = np.zeros(flow.shape[:2] + (3,), dtype=np.uint8)
    for ch in range(3):
        c0 = _WHEEL[k0, ch] / 255.0
        c1 = _WHEEL[k1, ch] / 255.0
        c = (1 - f) * c0 + f * c1
        c = 1 - mag * (1 - c)  # desaturate toward white at low speed
        out[..., ch] = np.floor(255 * c).astype(np.uint8)
    return out
