"""In-memory representation of a COLMAP sparse reconstruction.

A sparse model is three tables: cameras (intrinsics), images (poses plus
2D observations), and 3D points (positions plus tracks back into the
images).  Observations reference points by id, tracks reference images by
id and observation index; real SfM output routinely contains dangling
references in both directions, so integrity problems are reported as
warnings by :func:`validate_model` rather than rejected at parse time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UnknownCameraModel
from ..geometry import Pose

# Supported camera models: (model_id, name, parameter count).  Parameters
# are stored in COLMAP order: SIMPLE_PINHOLE f, cx, cy; PINHOLE fx, fy,
# cx, cy; SIMPLE_RADIAL f, cx, cy, k.
CAMERA_MODELS = {
    "SIMPLE_PINHOLE": (0, 3),
    "PINHOLE": (1, 4),
    "SIMPLE_RADIAL": (2, 4),
}
CAMERA_MODEL_IDS = {mid: (name, nparams) for name, (mid, nparams) in CAMERA_MODELS.items()}

# Camera models with plain pinhole projection geometry.  SIMPLE_RADIAL is
# parsed and carried through I/O, but geometric operations refuse it
# rather than silently dropping its distortion term.
_PINHOLE_GEOMETRY = {"SIMPLE_PINHOLE", "PINHOLE"}

INVALID_POINT3D_ID = -1


@dataclass
class Camera:
    """Intrinsics of one camera.

    ``params`` keeps the raw parameter vector in file order so that
    writing a parsed model reproduces it exactly; fx/fy/cx/cy expose the
    pinhole subset.
    """

    camera_id: int
    model_name: str
    width: int
    height: int
    params: np.ndarray

    def __post_init__(self) -> None:
        if self.model_name not in CAMERA_MODELS:
            raise UnknownCameraModel(self.model_name, self.camera_id)
        self.params = np.asarray(self.params, dtype=np.float64).reshape(-1)
        expected = CAMERA_MODELS[self.model_name][1]
        if self.params.size != expected:
            raise ValueError(
                f"camera {self.camera_id}: model {self.model_name} takes "
                f"{expected} params, got {self.params.size}"
            )

    @property
    def model_id(self) -> int:
        return CAMERA_MODELS[self.model_name][0]

    @property
    def is_pinhole(self) -> bool:
        return self.model_name in _PINHOLE_GEOMETRY

    @property
    def fx(self) -> float:
        return float(self.params[0])

    @property
    def fy(self) -> float:
        return float(self.params[1] if self.model_name == "PINHOLE" else self.params[0])

    @property
    def cx(self) -> float:
        return float(self.params[2] if self.model_name == "PINHOLE" else self.params[1])

    @property
    def cy(self) -> float:
        return float(self.params[3] if self.model_name == "PINHOLE" else self.params[2])


@dataclass
class ImageRecord:
    """One registered image: pose, camera reference, and 2D observations.

    ``xys`` has shape (n, 2); ``point3d_ids`` holds the matching 3D point
    id per observation, or INVALID_POINT3D_ID for unmatched keypoints.
    """

    image_id: int
    name: str
    camera_id: int
    qvec: np.ndarray  # (4,) scalar-first world-to-camera quaternion
    tvec: np.ndarray  # (3,)
    xys: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    point3d_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self) -> None:
        self.qvec = np.asarray(self.qvec, dtype=np.float64).reshape(4)
        self.tvec = np.asarray(self.tvec, dtype=np.float64).reshape(3)
        self.xys = np.asarray(self.xys, dtype=np.float64).reshape(-1, 2)
        self.point3d_ids = np.asarray(self.point3d_ids, dtype=np.int64).reshape(-1)
        if self.xys.shape[0] != self.point3d_ids.shape[0]:
            raise ValueError(
                f"image {self.image_id}: {self.xys.shape[0]} xys rows vs "
                f"{self.point3d_ids.shape[0]} point ids"
            )

    @property
    def pose(self) -> Pose:
        return Pose.from_quat(self.qvec, self.tvec)

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    def tracked_point_ids(self) -> np.ndarray:
        """Sorted unique 3D point ids this image observes."""
        ids = self.point3d_ids
        return np.unique(ids[ids != INVALID_POINT3D_ID])


@dataclass
class Point3D:
    """One triangulated point with its observation track."""

    point3d_id: int
    xyz: np.ndarray  # (3,)
    rgb: np.ndarray  # (3,) uint8
    error: float
    track: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    # track rows are (image_id, point2d_idx)

    def __post_init__(self) -> None:
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(3)
        self.rgb = np.asarray(self.rgb, dtype=np.uint8).reshape(3)
        self.error = float(self.error)
        self.track = np.asarray(self.track, dtype=np.int64).reshape(-1, 2)

    def track_image_ids(self) -> np.ndarray:
        return np.unique(self.track[:, 0])


@dataclass
class SparseModel:
    """A full sparse reconstruction keyed by integer ids."""

    cameras: dict[int, Camera] = field(default_factory=dict)
    images: dict[int, ImageRecord] = field(default_factory=dict)
    points: dict[int, Point3D] = field(default_factory=dict)

    def equals(self, other: "SparseModel") -> bool:
        """Exact field-by-field equality (bit-level on float arrays)."""
        if (
            set(self.cameras) != set(other.cameras)
            or set(self.images) != set(other.images)
            or set(self.points) != set(other.points)
        ):
            return False
        for cid, cam in self.cameras.items():
            oth = other.cameras[cid]
            if (
                cam.model_name != oth.model_name
                or cam.width != oth.width
                or cam.height != oth.height
                or not np.array_equal(cam.params, oth.params)
            ):
                return False
        for iid, img in self.images.items():
            oth = other.images[iid]
            if (
                img.name != oth.name
                or img.camera_id != oth.camera_id
                or not np.array_equal(img.qvec, oth.qvec)
                or not np.array_equal(img.tvec, oth.tvec)
                or not np.array_equal(img.xys, oth.xys)
                or not np.array_equal(img.point3d_ids, oth.point3d_ids)
            ):
                return False
        for pid, pt in self.points.items():
            oth = other.points[pid]
            if (
                not np.array_equal(pt.xyz, oth.xyz)
                or not np.array_equal(pt.rgb, oth.rgb)
                or pt.error != oth.error
                or not np.array_equal(pt.track, oth.track)
            ):
                return False
        return True


def validate_model(model: SparseModel) -> list[str]:
    """Referential integrity check.

    Returns one warning string per problem, each dangling reference
    reported exactly once.  Degenerate tracks (fewer than two entries)
    are flagged but never dropped.
    """
    warnings: list[str] = []
    seen: set[str] = set()

    def warn(msg: str) -> None:
        if msg not in seen:
            seen.add(msg)
            warnings.append(msg)

    for img in model.images.values():
        if img.camera_id not in model.cameras:
            warn(f"image {img.image_id} references missing camera {img.camera_id}")
        for pid in img.point3d_ids:
            if pid != INVALID_POINT3D_ID and int(pid) not in model.points:
                warn(f"image {img.image_id} observes missing point {int(pid)}")
    for pt in model.points.values():
        for image_id, obs_idx in pt.track:
            image_id = int(image_id)
            obs_idx = int(obs_idx)
            if image_id not in model.images:
                warn(f"point {pt.point3d_id} tracks missing image {image_id}")
            elif obs_idx >= model.images[image_id].point3d_ids.size:
                warn(
                    f"point {pt.point3d_id} tracks out-of-range observation "
                    f"{obs_idx} of image {image_id}"
                )
        if pt.track.shape[0] < 2:
            warn(f"point {pt.point3d_id} has a degenerate track of length {pt.track.shape[0]}")
    return warnings


def model_stats(model: SparseModel) -> dict:
    """Summary statistics of a sparse model.

    Returns counts, mean reprojection error, mean track length, and the
    axis-aligned bounding box of the points (None when there are none).
    """
    n_points = len(model.points)
    stats = {
        "num_cameras": len(model.cameras),
        "num_images": len(model.images),
        "num_points": n_points,
        "mean_reprojection_error": 0.0,
        "mean_track_length": 0.0,
        "bbox_min": None,
        "bbox_max": None,
    }
    if n_points == 0:
        return stats
    xyz = np.array([p.xyz for p in model.points.values()])
    stats["mean_reprojection_error"] = float(
        np.mean([p.error for p in model.points.values()])
    )
    stats["mean_track_length"] = float(
        np.mean([p.track.shape[0] for p in model.points.values()])
    )
    stats["bbox_min"] = xyz.min(axis=0).tolist()
    stats["bbox_max"] = xyz.max(axis=0).tolist()
    return stats
