"""
Typed errors raised across the pipeline.

Every error carries a stable ``code`` so the CLI and the reports can name the
failure without parsing messages.
"""
from __future__ import annotations
from typing import Optional


class GroundingError(Exception):
    code = "grounding-error"

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


# ---- scene_model ----

class DimensionMismatchError(GroundingError):
    code = "dimension-mismatch"


class OutOfRangeError(GroundingError):
    code = "out-of-range"


class DegenerateBoxError(GroundingError):
    code = "degenerate-box"


# ---- clustering ----

class InvalidKernelError(GroundingError):
    code = "invalid-kernel"


class InvariantViolationError(GroundingError):
    code = "invariant-violation"


# ---- evaluation ----

class ZeroMarginError(GroundingError):
    code = "zero-margin"


# ---- scene_io ----

class FormatError(GroundingError):
    """Raster or text payload could not be decoded. ``offset`` is a byte offset
    for PNM files and ``line:column`` for CSV files (a byte offset when the
    text is not valid UTF-8)."""
    code = "format-error"

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int | str] = None) -> None:
        where = []
        if path:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.path = path
        self.offset = offset


class MalformedHeaderError(FormatError):
    code = "malformed-header"


class TruncatedPayloadError(FormatError):
    code = "truncated-payload"


class ValueOutOfRangeError(FormatError):
    code = "value-out-of-range"


class SchemaViolationError(GroundingError):
    code = "schema-violation"

    def __init__(self, message: str, field_path: str = "") -> None:
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


class DuplicateSceneIdError(SchemaViolationError):
    code = "duplicate-scene-id"


class MissingInputError(GroundingError):
    code = "missing-input"

    def __init__(self, message: str, path: Optional[str] = None) -> None:
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path


# ---- synth ----

class InvalidSpecError(GroundingError):
    code = "invalid-spec"


class OverlayError(GroundingError):
    code = "io-failure"
