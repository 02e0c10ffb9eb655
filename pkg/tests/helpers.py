"""Shared test utilities: consistent random sparse-model generation."""

from __future__ import annotations

import numpy as np

from aeromesh.colmap import Camera, ImageRecord, Point3D, SparseModel


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_model(
    rng: np.random.Generator,
    n_cameras: int = 2,
    n_images: int = 6,
    n_points: int = 40,
    model_names: tuple[str, ...] = ("PINHOLE", "SIMPLE_PINHOLE", "SIMPLE_RADIAL"),
    dangling: bool = False,
    id_offset: int | None = None,
) -> SparseModel:
    """Build a random sparse model with internally consistent tracks.

    Every point track references a real (image, observation) pair and
    every matched observation points back at its point.  With
    ``dangling`` set, one dangling observation and one dangling track
    entry are injected on top.
    """
    if id_offset is None:
        id_offset = int(rng.integers(1, 50))

    cameras: dict[int, Camera] = {}
    for k in range(n_cameras):
        cid = id_offset + k
        name = model_names[int(rng.integers(len(model_names)))]
        w, h = int(rng.integers(320, 2000)), int(rng.integers(240, 1500))
        f = float(rng.uniform(300, 1500))
        cx, cy = w / 2 + rng.uniform(-5, 5), h / 2 + rng.uniform(-5, 5)
        if name == "PINHOLE":
            params = [f, f * rng.uniform(0.95, 1.05), cx, cy]
        elif name == "SIMPLE_PINHOLE":
            params = [f, cx, cy]
        else:  # SIMPLE_RADIAL
            params = [f, cx, cy, float(rng.uniform(-0.1, 0.1))]
        cameras[cid] = Camera(cid, name, w, h, np.array(params))

    camera_ids = list(cameras)
    image_ids = [id_offset + 10 + k for k in range(n_images)]
    obs_xys: dict[int, list[list[float]]] = {i: [] for i in image_ids}
    obs_pids: dict[int, list[int]] = {i: [] for i in image_ids}

    points: dict[int, Point3D] = {}
    for k in range(n_points):
        pid = id_offset + 100 + k
        track_size = int(rng.integers(2, min(n_images, 4) + 1)) if n_images >= 2 else 1
        track_images = rng.choice(image_ids, size=min(track_size, n_images), replace=False)
        track = []
        for iid in track_images:
            iid = int(iid)
            obs_xys[iid].append([float(rng.uniform(0, 1000)), float(rng.uniform(0, 800))])
            obs_pids[iid].append(pid)
            track.append([iid, len(obs_pids[iid]) - 1])
        points[pid] = Point3D(
            point3d_id=pid,
            xyz=rng.uniform(-50, 50, size=3),
            rgb=rng.integers(0, 256, size=3).astype(np.uint8),
            error=float(rng.uniform(0, 2.0)),
            track=np.array(track, dtype=np.int64),
        )

    images: dict[int, ImageRecord] = {}
    for iid in image_ids:
        # Unmatched keypoints interleave with matched ones in real output.
        for _ in range(int(rng.integers(0, 4))):
            obs_xys[iid].append([float(rng.uniform(0, 1000)), float(rng.uniform(0, 800))])
            obs_pids[iid].append(-1)
        images[iid] = ImageRecord(
            image_id=iid,
            name=f"frame_{iid:05d}.jpg",
            camera_id=int(camera_ids[int(rng.integers(len(camera_ids)))]),
            qvec=random_quaternion(rng),
            tvec=rng.uniform(-10, 10, size=3),
            xys=np.array(obs_xys[iid]).reshape(-1, 2),
            point3d_ids=np.array(obs_pids[iid], dtype=np.int64),
        )

    model = SparseModel(cameras=cameras, images=images, points=points)
    if dangling and points and images:
        first_image = images[image_ids[0]]
        first_image.xys = np.vstack([first_image.xys, [[5.0, 6.0]]])
        first_image.point3d_ids = np.append(first_image.point3d_ids, id_offset + 99999)
        first_point = points[id_offset + 100]
        first_point.track = np.vstack([first_point.track, [[id_offset + 88888, 0]]])
    return model
