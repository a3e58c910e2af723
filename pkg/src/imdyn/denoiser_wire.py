"""Length-prefixed binary protocol for talking to an out-of-process denoiser.

Everything is little-endian. A request frame is

    uint32  length of the rest of the frame in bytes
    int32   timestep t
    int32x4 latent shape (frames, height, width, channels)
    float32 payload, C-order

and a response frame is the same without the timestep. The transport is a
plain TCP socket (one frame per call, connection reused); `serve` runs the
matching server loop around any (z, t) -> z callable so a model living in a
different process or ecosystem can plug in.
"""

from __future__ import annotations

import socket
import struct
from typing import BinaryIO, Callable

import numpy as np

from .errors import IoError, ShapeError

_HEAD = struct.Struct("<I")
_REQ = struct.Struct("<i4i")
_RESP = struct.Struct("<4i")


def _check_latent(z: np.ndarray) -> np.ndarray:
    z = np.ascontiguousarray(z, dtype="<f4")
    if z.ndim != 4:
        raise ShapeError(f"latent must be 4-D, got {z.shape}")
    return z


def encode_request(z: np.ndarray, t: int) -> bytes:
    z = _check_latent(z)
    body = _REQ.pack(t, *z.shape) + z.tobytes()
    return _HEAD.pack(len(body)) + body


def encode_response(z: np.ndarray) -> bytes:
    z = _check_latent(z)
    body = _RESP.pack(*z.shape) + z.tobytes()
    return _HEAD.pack(len(body)) + body


def _unpack_payload(body: bytes, offset: int, shape: tuple[int, ...]) -> np.ndarray:
    if any(n < 0 for n in shape):
        raise IoError(f"negative dimension in wire shape {shape}")
    count = 1
    for n in shape:
        count *= n
    expected = offset + 4 * count
    if len(body) != expected:
        raise IoError(f"wire frame carries {len(body)} bytes, expected {expected}")
    flat = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
    return flat.reshape(shape).copy()


def decode_request(body: bytes) -> tuple[np.ndarray, int]:
    if len(body) < _REQ.size:
        raise IoError("request frame shorter than its header")
    t, *shape = _REQ.unpack_from(body, 0)
    return _unpack_payload(body, _REQ.size, tuple(shape)), t


def decode_response(body: bytes) -> np.ndarray:
    if len(body) < _RESP.size:
        raise IoError("response frame shorter than its header")
    shape = _RESP.unpack_from(body, 0)
    return _unpack_payload(body, _RESP.size, tuple(shape))


def read_frame(stream: BinaryIO) -> bytes | None:
    """Read one length-prefixed frame; None on clean EOF at a frame edge."""
    head = stream.read(_HEAD.size)
    if not head:
        return None
    if len(head) < _HEAD.size:
        raise IoError("truncated frame length prefix")
    (length,) = _HEAD.unpack(head)
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise IoError(f"stream ended {length - len(body)} bytes into a frame")
        body += chunk
    return body


class WireDenoiser:
    """Client side: a denoiser callable backed by a TCP endpoint."""

    def __init__(self, host: str = "127.0.0.1", port: int = 7763, timeout: float = 30.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._file: BinaryIO | None = None

    def _connect(self) -> BinaryIO:
        if self._file is None:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            self._sock = sock
            self._file = sock.makefile("rwb")
        return self._file

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __call__(self, z: np.ndarray, t: int) -> np.ndarray:
        stream = self._connect()
        try:
            stream.write(encode_request(z, t))
            stream.flush()
            body = read_frame(stream)
        except OSError as exc:
            self.close()
            raise IoError(f"denoiser endpoint failed: {exc}") from exc
        if body is None:
            self.close()
            raise IoError("denoiser endpoint closed the connection")
        return decode_response(body)


def serve(
    fn: Callable[[np.ndarray, int], np.ndarray],
    host: str = "127.0.0.1",
    port: int = 7763,
    *,
    ready: Callable[[int], None] | None = None,
    max_connections: int | None = None,
) -> None:
    """Serve ``fn`` over the protocol. Blocks; one client at a time.

    ``ready`` is called with the bound port once listening (port 0 picks a
    free one), which is how tests synchronize. ``max_connections`` bounds the
    accept loop so a test server can wind down on its own.
    """
    with socket.create_server((host, port)) as server:
        if ready is not None:
            ready(server.getsockname()[1])
        accepted = 0
        while max_connections is None or accepted < max_connections:
            conn, _ = server.accept()
            accepted += 1
            with conn, conn.makefile("rwb") as stream:
                while True:
                    body = read_frame(stream)
                    if body is None:
                        break
                    z, t = decode_request(body)
                    stream.write(encode_response(fn(z, t)))
                    stream.flush()
