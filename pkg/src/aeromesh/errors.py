"""Exception types shared across the toolkit.

Parsing problems carry enough location information (file, byte offset,
record id) to point at the offending input; geometric failures name the
entity that could not be processed.
"""

from __future__ import annotations


class AeroMeshError(Exception):
    """Base class for all toolkit errors."""


# --- sparse model I/O ---------------------------------------------------


class MissingFile(AeroMeshError):
    """A required model file does not exist."""


class TruncatedRecord(AeroMeshError):
    """A binary model file ended mid-record.

    Args:
        path: file being parsed.
        offset: byte offset at which the read failed.
        detail: what was being read.
    """

    def __init__(self, path: str, offset: int, detail: str = "") -> None:
        self.path = str(path)
        self.offset = offset
        self.detail = detail
        msg = f"truncated record in {path} at byte {offset}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnknownCameraModel(AeroMeshError):
    """A camera row uses a model id/name this toolkit does not know."""

    def __init__(self, model: object, camera_id: int | None = None) -> None:
        self.model = model
        self.camera_id = camera_id
        where = f" (camera {camera_id})" if camera_id is not None else ""
        super().__init__(f"unknown camera model {model!r}{where}")


class MalformedLine(AeroMeshError):
    """A text model file contains a line that cannot be parsed."""

    def __init__(self, path: str, line_no: int, detail: str = "") -> None:
        self.path = str(path)
        self.line_no = line_no
        msg = f"malformed line {line_no} in {path}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IntegrityViolation(AeroMeshError):
    """A model fails referential integrity on write."""


class IoFailure(AeroMeshError):
    """An output file could not be written."""


# --- camera geometry ----------------------------------------------------


class UnsupportedCamera(AeroMeshError):
    """Geometric operation invoked on a camera model outside plain pinhole."""


class BehindCamera(AeroMeshError):
    """Point projects behind the camera (non-positive depth)."""


class DegenerateRay(AeroMeshError):
    """A viewing ray has zero length (point coincides with a camera center)."""


# --- partitioning -------------------------------------------------------


class EmptyAfterFilter(AeroMeshError):
    """No points survived a filtering step."""


class DegenerateBounds(AeroMeshError):
    """Scene bounds are empty or collapse to zero extent on a grid axis."""


# --- view selection -----------------------------------------------------


class NoVisibleGroup(AeroMeshError):
    """No candidate view group fully observes the point."""


# --- depth maps and fusion ----------------------------------------------


class OutOfSourceFrustum(AeroMeshError):
    """Reprojected pixel falls outside the source image or behind it."""


class InvalidSourceDepth(AeroMeshError):
    """All bilinear neighbors of the reprojected pixel are invalid."""


class ZeroNormal(AeroMeshError):
    """A normal vector with zero length was supplied."""


class NonFinite(AeroMeshError):
    """A loss term or input value is NaN or infinite."""


class DimensionMismatch(AeroMeshError):
    """Array shapes disagree (images, maps, or map pairs)."""


# --- TSDF and meshing ---------------------------------------------------


class EmptyVolume(AeroMeshError):
    """Mesh extraction requested from a volume with no observed voxel."""


class EmptyMesh(AeroMeshError):
    """An operation that needs triangles received a mesh without any."""


# --- evaluation ---------------------------------------------------------


class NoOverlap(AeroMeshError):
    """Two point sets have no overlapping axis-aligned bounding box."""


class DegenerateGeometry(AeroMeshError):
    """Too few or rank-deficient points for a rigid alignment."""


# --- synthetic scenes and CLI -------------------------------------------


class DegenerateSpec(AeroMeshError):
    """A synthetic scene specification is unusable (no primitives, no cameras)."""


class InvalidValue(AeroMeshError):
    """A flag or config entry holds a value outside its valid range."""
