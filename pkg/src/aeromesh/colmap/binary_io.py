"""Binary COLMAP sparse-model files.

All values are little-endian.  Layout per file:

cameras.bin
    uint64 camera_count, then per camera: int32 camera_id, int32 model_id,
    uint64 width, uint64 height, float64 params[num_params(model)].

images.bin
    uint64 image_count, then per image: int32 image_id, float64 qw qx qy
    qz, float64 tx ty tz, int32 camera_id, null-terminated name, uint64
    observation_count, then per observation float64 x, float64 y, int64
    point3d_id (-1 when unmatched).

points3D.bin
    uint64 point_count, then per point: uint64 point3d_id, float64 x y z,
    uint8 r g b, float64 error, uint64 track_length, then per track entry
    int32 image_id, int32 point2d_idx.

Writing a parsed, unmodified model reproduces the input byte for byte:
record order, raw camera parameters, and track order are all preserved.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import TruncatedRecord, UnknownCameraModel
from .model import (
    CAMERA_MODEL_IDS,
    Camera,
    ImageRecord,
    Point3D,
    SparseModel,
)


def _read(fid: BinaryIO, path: Path, num_bytes: int, fmt: str, what: str):
    data = fid.read(num_bytes)
    if len(data) != num_bytes:
        raise TruncatedRecord(str(path), fid.tell() - len(data), what)
    return struct.unpack("<" + fmt, data)


def read_cameras_binary(path: Path) -> dict[int, Camera]:
    cameras: dict[int, Camera] = {}
    with open(path, "rb") as fid:
        (num_cameras,) = _read(fid, path, 8, "Q", "camera count")
        for _ in range(num_cameras):
            camera_id, model_id, width, height = _read(
                fid, path, 24, "iiQQ", "camera header"
            )
            if model_id not in CAMERA_MODEL_IDS:
                raise UnknownCameraModel(model_id, camera_id)
            model_name, num_params = CAMERA_MODEL_IDS[model_id]
            params = _read(fid, path, 8 * num_params, "d" * num_params, "camera params")
            cameras[camera_id] = Camera(
                camera_id=camera_id,
                model_name=model_name,
                width=int(width),
                height=int(height),
                params=np.array(params),
            )
    return cameras


def read_images_binary(path: Path) -> dict[int, ImageRecord]:
    images: dict[int, ImageRecord] = {}
    with open(path, "rb") as fid:
        (num_images,) = _read(fid, path, 8, "Q", "image count")
        for _ in range(num_images):
            header = _read(fid, path, 64, "idddddddi", "image header")
            image_id = header[0]
            qvec = np.array(header[1:5])
            tvec = np.array(header[5:8])
            camera_id = header[8]
            name_bytes = b""
            while True:
                char = fid.read(1)
                if len(char) != 1:
                    raise TruncatedRecord(str(path), fid.tell(), "image name")
                if char == b"\x00":
                    break
                name_bytes += char
            (num_obs,) = _read(fid, path, 8, "Q", "observation count")
            obs = _read(fid, path, 24 * num_obs, "ddq" * num_obs, "observations")
            obs = np.array(obs, dtype=np.float64).reshape(-1, 3)
            images[image_id] = ImageRecord(
                image_id=image_id,
                name=name_bytes.decode("utf-8"),
                camera_id=camera_id,
                qvec=qvec,
                tvec=tvec,
                xys=obs[:, :2],
                point3d_ids=obs[:, 2].astype(np.int64),
            )
    return images


def read_points3d_binary(path: Path) -> dict[int, Point3D]:
    points: dict[int, Point3D] = {}
    with open(path, "rb") as fid:
        (num_points,) = _read(fid, path, 8, "Q", "point count")
        for _ in range(num_points):
            rec = _read(fid, path, 43, "QdddBBBd", "point record")
            point3d_id = rec[0]
            (track_len,) = _read(fid, path, 8, "Q", "track length")
            track = _read(fid, path, 8 * track_len, "ii" * track_len, "track")
            points[point3d_id] = Point3D(
                point3d_id=point3d_id,
                xyz=np.array(rec[1:4]),
                rgb=np.array(rec[4:7], dtype=np.uint8),
                error=rec[7],
                track=np.array(track, dtype=np.int64).reshape(-1, 2),
            )
    return points


def write_cameras_binary(cameras: dict[int, Camera], path: Path) -> None:
    with open(path, "wb") as fid:
        fid.write(struct.pack("<Q", len(cameras)))
        for cam in cameras.values():
            fid.write(
                struct.pack(
                    "<iiQQ", cam.camera_id, cam.model_id, cam.width, cam.height
                )
            )
            fid.write(struct.pack("<" + "d" * cam.params.size, *cam.params))


def write_images_binary(images: dict[int, ImageRecord], path: Path) -> None:
    with open(path, "wb") as fid:
        fid.write(struct.pack("<Q", len(images)))
        for img in images.values():
            fid.write(
                struct.pack(
                    "<idddddddi",
                    img.image_id,
                    *img.qvec,
                    *img.tvec,
                    img.camera_id,
                )
            )
            fid.write(img.name.encode("utf-8") + b"\x00")
            n = img.point3d_ids.size
            fid.write(struct.pack("<Q", n))
            rows = struct.pack(
                "<" + "ddq" * n,
                *(
                    value
                    for x, y, pid in zip(img.xys[:, 0], img.xys[:, 1], img.point3d_ids)
                    for value in (x, y, int(pid))
                ),
            )
            fid.write(rows)


def write_points3d_binary(points: dict[int, Point3D], path: Path) -> None:
    with open(path, "wb") as fid:
        fid.write(struct.pack("<Q", len(points)))
        for pt in points.values():
            fid.write(
                struct.pack(
                    "<QdddBBBd",
                    pt.point3d_id,
                    *pt.xyz,
                    *pt.rgb,
                    pt.error,
                )
            )
            fid.write(struct.pack("<Q", pt.track.shape[0]))
            flat = [int(v) for row in pt.track for v in row]
            fid.write(struct.pack("<" + "ii" * pt.track.shape[0], *flat))


def read_model_binary(directory: Path) -> SparseModel:
    return SparseModel(
        cameras=read_cameras_binary(directory / "cameras.bin"),
        images=read_images_binary(directory / "images.bin"),
        points=read_points3d_binary(directory / "points3D.bin"),
    )


def write_model_binary(model: SparseModel, directory: Path) -> None:
    write_cameras_binary(model.cameras, directory / "cameras.bin")
    write_images_binary(model.images, directory / "images.bin")
    write_points3d_binary(model.points, directory / "points3D.bin")
