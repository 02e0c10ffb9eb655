"""COLMAP sparse-model I/O: binary and text, parse and write."""

from __future__ import annotations

import logging
from pathlib import Path

from ..errors import IntegrityViolation, IoFailure, MissingFile
from .binary_io import read_model_binary, write_model_binary
from .model import (
    CAMERA_MODEL_IDS,
    CAMERA_MODELS,
    INVALID_POINT3D_ID,
    Camera,
    ImageRecord,
    Point3D,
    SparseModel,
    model_stats,
    validate_model,
)
from .text_io import read_model_text, write_model_text

__all__ = [
    "CAMERA_MODELS",
    "CAMERA_MODEL_IDS",
    "INVALID_POINT3D_ID",
    "Camera",
    "ImageRecord",
    "Point3D",
    "SparseModel",
    "model_stats",
    "validate_model",
    "parse_sparse_model",
    "write_sparse_model",
]

logger = logging.getLogger(__name__)


def detect_format(directory: Path | str) -> str:
    """Return 'binary' or 'text' depending on which model files exist.

    Binary wins when both are present.
    """
    directory = Path(directory)
    if (directory / "cameras.bin").exists():
        return "binary"
    if (directory / "cameras.txt").exists():
        return "text"
    raise MissingFile(f"no cameras.bin or cameras.txt in {directory}")


def parse_sparse_model(
    directory: Path | str, fmt: str | None = None, warn: bool = True
) -> SparseModel:
    """Read a sparse model from a directory.

    Args:
        directory: folder holding cameras/images/points3D files.
        fmt: 'binary', 'text', or None to auto-detect.
        warn: log one warning per referential-integrity problem found.

    Returns:
        The parsed model.  Dangling references are tolerated (real SfM
        output contains them); they surface as warnings only.
    """
    directory = Path(directory)
    fmt = fmt or detect_format(directory)
    suffix = {"binary": ".bin", "text": ".txt"}[fmt]
    for stem in ("cameras", "images", "points3D"):
        if not (directory / f"{stem}{suffix}").exists():
            raise MissingFile(str(directory / f"{stem}{suffix}"))
    reader = read_model_binary if fmt == "binary" else read_model_text
    model = reader(directory)
    if warn:
        for message in validate_model(model):
            logger.warning("model %s: %s", directory, message)
    return model


def write_sparse_model(
    model: SparseModel,
    directory: Path | str,
    fmt: str = "binary",
    strict: bool = True,
) -> None:
    """Write a sparse model to a directory.

    Args:
        model: the reconstruction to serialize.
        directory: output folder, created if missing.
        fmt: 'binary' or 'text'.
        strict: refuse models that fail referential integrity.  Disable
            to pass through models parsed from imperfect real-world
            output unchanged (byte-identical for binary).

    Raises:
        IntegrityViolation: strict is set and the model has dangling
            references.  Degenerate tracks stay warnings in either mode.
        IoFailure: the files could not be written.
    """
    if fmt not in ("binary", "text"):
        raise ValueError(f"unknown format {fmt!r}")
    if strict:
        problems = [
            w for w in validate_model(model) if "degenerate track" not in w
        ]
        if problems:
            raise IntegrityViolation("; ".join(problems))
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        writer = write_model_binary if fmt == "binary" else write_model_text
        writer(model, directory)
    except OSError as exc:
        raise IoFailure(f"cannot write model to {directory}: {exc}") from exc
