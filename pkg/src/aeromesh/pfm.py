"""Portable float map (PFM) reading and writing.

Header: ``PF`` (3-channel) or ``Pf`` (1-channel), then ``width height``,
then a scale whose sign encodes endianness (negative = little-endian,
the only variant written here).  Pixel rows are stored bottom-to-top.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedLine


def write_pfm(path: Path | str, data: np.ndarray) -> None:
    """Write a (h, w) or (h, w, 3) float array as little-endian PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM takes (h, w) or (h, w, 3), got {data.shape}")
    try:
        with open(path, "wb") as fid:
            fid.write(header + b"\n")
            fid.write(f"{data.shape[1]} {data.shape[0]}\n".encode("ascii"))
            fid.write(b"-1.0\n")
            np.flipud(data).astype("<f4").tofile(fid)
    except OSError as exc:
        raise IoFailure(f"cannot write PFM {path}: {exc}") from exc


def read_pfm(path: Path | str) -> np.ndarray:
    """Read a PFM file into a float32 array, top row first."""
    path = Path(path)
    with open(path, "rb") as fid:
        header = fid.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise MalformedLine(str(path), 1, f"bad PFM magic {header!r}")
        dims = fid.readline().split()
        if len(dims) != 2:
            raise MalformedLine(str(path), 2, "expected width and height")
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(fid.readline().strip())
        except ValueError as exc:
            raise MalformedLine(str(path), 2, str(exc)) from exc
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        raw = np.fromfile(fid, dtype=dtype, count=count)
        if raw.size != count:
            raise MalformedLine(str(path), 3, "pixel data shorter than header claims")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return np.flipud(raw.reshape(shape)).astype(np.float32)
