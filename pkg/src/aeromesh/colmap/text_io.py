"""Text COLMAP sparse-model files.

Same tables as the binary variant, one whitespace-delimited record per
line (two lines per image).  Lines starting with ``#`` are comments.
Floats are written in shortest round-trip form, so parsing a written
model reproduces the in-memory values exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import MalformedLine, UnknownCameraModel
from .model import CAMERA_MODELS, Camera, ImageRecord, Point3D, SparseModel


def _data_lines(path: Path):
    with open(path, "r", encoding="utf-8") as fid:
        for line_no, line in enumerate(fid, start=1):
            stripped = line.strip()
            if stripped.startswith("#"):
                continue
            yield line_no, stripped


def _fmt(value: float) -> str:
    return repr(float(value))


def read_cameras_text(path: Path) -> dict[int, Camera]:
    cameras: dict[int, Camera] = {}
    for line_no, line in _data_lines(path):
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4:
            raise MalformedLine(str(path), line_no, "expected id, model, width, height")
        try:
            camera_id = int(parts[0])
            model_name = parts[1]
            width, height = int(parts[2]), int(parts[3])
            params = np.array([float(p) for p in parts[4:]])
        except ValueError as exc:
            raise MalformedLine(str(path), line_no, str(exc)) from exc
        if model_name not in CAMERA_MODELS:
            raise UnknownCameraModel(model_name, camera_id)
        if params.size != CAMERA_MODELS[model_name][1]:
            raise MalformedLine(
                str(path),
                line_no,
                f"{model_name} takes {CAMERA_MODELS[model_name][1]} params, "
                f"got {params.size}",
            )
        cameras[camera_id] = Camera(camera_id, model_name, width, height, params)
    return cameras


def read_images_text(path: Path) -> dict[int, ImageRecord]:
    images: dict[int, ImageRecord] = {}
    header = None
    header_line = 0
    for line_no, line in _data_lines(path):
        if header is None:
            if not line:
                continue
            parts = line.split()
            if len(parts) < 10:
                raise MalformedLine(str(path), line_no, "short image header")
            try:
                header = (
                    int(parts[0]),
                    np.array([float(v) for v in parts[1:5]]),
                    np.array([float(v) for v in parts[5:8]]),
                    int(parts[8]),
                    " ".join(parts[9:]),
                )
            except ValueError as exc:
                raise MalformedLine(str(path), line_no, str(exc)) from exc
            header_line = line_no
        else:
            # Observation line; may legitimately be empty.
            parts = line.split()
            if len(parts) % 3 != 0:
                raise MalformedLine(
                    str(path), line_no, "observations not in (x, y, id) triples"
                )
            try:
                xys = np.array(
                    [[float(parts[i]), float(parts[i + 1])] for i in range(0, len(parts), 3)]
                ).reshape(-1, 2)
                ids = np.array(
                    [int(parts[i + 2]) for i in range(0, len(parts), 3)], dtype=np.int64
                )
            except ValueError as exc:
                raise MalformedLine(str(path), line_no, str(exc)) from exc
            image_id, qvec, tvec, camera_id, name = header
            images[image_id] = ImageRecord(
                image_id=image_id,
                name=name,
                camera_id=camera_id,
                qvec=qvec,
                tvec=tvec,
                xys=xys,
                point3d_ids=ids,
            )
            header = None
    if header is not None:
        raise MalformedLine(str(path), header_line, "image header without observation line")
    return images


def read_points3d_text(path: Path) -> dict[int, Point3D]:
    points: dict[int, Point3D] = {}
    for line_no, line in _data_lines(path):
        if not line:
            continue
        parts = line.split()
        if len(parts) < 8 or (len(parts) - 8) % 2 != 0:
            raise MalformedLine(str(path), line_no, "expected point row plus id pairs")
        try:
            point3d_id = int(parts[0])
            xyz = np.array([float(v) for v in parts[1:4]])
            rgb = np.array([int(v) for v in parts[4:7]], dtype=np.uint8)
            error = float(parts[7])
            track = np.array([int(v) for v in parts[8:]], dtype=np.int64).reshape(-1, 2)
        except ValueError as exc:
            raise MalformedLine(str(path), line_no, str(exc)) from exc
        points[point3d_id] = Point3D(point3d_id, xyz, rgb, error, track)
    return points


def write_cameras_text(cameras: dict[int, Camera], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fid:
        fid.write("# Camera list with one line of data per camera:\n")
        fid.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        fid.write(f"# Number of cameras: {len(cameras)}\n")
        for cam in cameras.values():
            params = " ".join(_fmt(p) for p in cam.params)
            fid.write(
                f"{cam.camera_id} {cam.model_name} {cam.width} {cam.height} {params}\n"
            )


def write_images_text(images: dict[int, ImageRecord], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fid:
        fid.write("# Image list with two lines of data per image:\n")
        fid.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fid.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        fid.write(f"# Number of images: {len(images)}\n")
        for img in images.values():
            pose = " ".join(_fmt(v) for v in (*img.qvec, *img.tvec))
            fid.write(f"{img.image_id} {pose} {img.camera_id} {img.name}\n")
            obs = " ".join(
                f"{_fmt(x)} {_fmt(y)} {int(pid)}"
                for x, y, pid in zip(img.xys[:, 0], img.xys[:, 1], img.point3d_ids)
            )
            fid.write(obs + "\n")


def write_points3d_text(points: dict[int, Point3D], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fid:
        fid.write("# 3D point list with one line of data per point:\n")
        fid.write(
            "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
        )
        fid.write(f"# Number of points: {len(points)}\n")
        for pt in points.values():
            xyz = " ".join(_fmt(v) for v in pt.xyz)
            rgb = " ".join(str(int(v)) for v in pt.rgb)
            track = " ".join(f"{int(i)} {int(j)}" for i, j in pt.track)
            row = f"{pt.point3d_id} {xyz} {rgb} {_fmt(pt.error)}"
            fid.write(row + (" " + track if track else "") + "\n")


def read_model_text(directory: Path) -> SparseModel:
    return SparseModel(
        cameras=read_cameras_text(directory / "cameras.txt"),
        images=read_images_text(directory / "images.txt"),
        points=read_points3d_text(directory / "points3D.txt"),
    )


def write_model_text(model: SparseModel, directory: Path) -> None:
    write_cameras_text(model.cameras, directory / "cameras.txt")
    write_images_text(model.images, directory / "images.txt")
    write_points3d_text(model.points, directory / "points3D.txt")
