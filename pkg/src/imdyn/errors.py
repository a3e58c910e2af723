"""Typed errors shared across the engine.

Every failure the engine raises on purpose derives from EngineError, so callers
(CLI, service) can catch one type and map it to an exit code / HTTP status.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all deliberate engine failures."""


class MissingAsset(EngineError):
    """A bundle references a file that does not exist."""

    def __init__(self, path: str):
        super().__init__(f"missing asset: {path}")
        self.path = path


class ShapeError(EngineError):
    """Raster dimensions disagree where they must match."""


class ValidationError(EngineError):
    """A field violates its invariant. Carries the field name."""

    def __init__(self, field: str, message: str = ""):
        detail = f"invalid field '{field}'"
        if message:
            detail += f": {message}"
        super().__init__(detail)
        self.field = field


class IoError(EngineError):
    """Filesystem read/write failure while loading or saving artifacts."""


class DegenerateMask(EngineError):
    """A mask is empty where content is required."""


class MultiComponentMask(EngineError):
    """A mask holds more than one connected component; splitting is upstream's job."""

    def __init__(self, count: int):
        super().__init__(f"mask has {count} connected components, expected 1")
        self.count = count


class NonFinite(EngineError):
    """Simulation state left the reals. Carries the step where it happened."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


class SingularTransform(EngineError):
    """An affine transform is not invertible."""
