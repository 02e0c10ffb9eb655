"""Pinhole camera geometry: rotations, poses, projection, back-projection.

Conventions used throughout the toolkit:

* Poses are world-to-camera: ``X_cam = R @ X_world + t``; the camera
  center in world coordinates is ``C = -R.T @ t``.
* Quaternions are scalar-first ``(qw, qx, qy, qz)``, Hamilton convention.
* Continuous pixel coordinates place the center of the pixel stored at
  ``values[row, col]`` at ``(u, v) = (col, row)``.  A point is inside the
  image rectangle when ``0 <= u <= width - 1`` and ``0 <= v <= height - 1``
  (every bilinear neighborhood fully supported) and its camera depth is
  positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateRay, UnsupportedCamera

__all__ = [
    "Pose",
    "quat_to_rotation",
    "rotation_to_quat",
    "look_at_pose",
    "project_point",
    "project_points",
    "backproject_pixels",
    "baseline_angle",
]


def quat_to_rotation(qvec: np.ndarray) -> np.ndarray:
    """Convert a scalar-first unit quaternion to a 3x3 rotation matrix."""
    w, x, y, z = np.asarray(qvec, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(rotation: np.ndarray) -> np.ndarray:
    """Convert a 3x3 rotation matrix to a scalar-first quaternion.

    Uses the eigenvector of the symmetric 4x4 quaternion matrix, which is
    stable for all rotation angles.  The sign is normalized so qw >= 0.
    """
    m = np.asarray(rotation, dtype=np.float64)
    rxx, ryx, rzx, rxy, ryy, rzy, rxz, ryz, rzz = m.flat
    k = (
        np.array(
            [
                [rxx - ryy - rzz, 0, 0, 0],
                [ryx + rxy, ryy - rxx - rzz, 0, 0],
                [rzx + rxz, rzy + ryz, rzz - rxx - ryy, 0],
                [ryz - rzy, rzx - rxz, rxy - ryx, rxx + ryy + rzz],
            ]
        )
        / 3.0
    )
    eigvals, eigvecs = np.linalg.eigh(k)
    x, y, z, w = eigvecs[:, np.argmax(eigvals)]
    qvec = np.array([w, x, y, z])
    if qvec[0] < 0:
        qvec *= -1
    return qvec


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        )
        object.__setattr__(
            self,
            "translation",
            np.asarray(self.translation, dtype=np.float64).reshape(3),
        )

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation

    @classmethod
    def from_quat(cls, qvec: np.ndarray, tvec: np.ndarray) -> "Pose":
        return cls(quat_to_rotation(qvec), np.asarray(tvec, dtype=np.float64))


def look_at_pose(eye: np.ndarray, target: np.ndarray, up: np.ndarray | None = None) -> Pose:
    """Build a world-to-camera pose for a camera at ``eye`` looking at ``target``.

    The camera frame follows the x-right / y-down / z-forward convention.
    ``up`` is the world up direction (+y by default); when the viewing
    direction is parallel to it, +z is used as a fallback.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up_world = np.array([0.0, 1.0, 0.0]) if up is None else np.asarray(up, dtype=np.float64)

    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise DegenerateRay("camera eye and target coincide")
    forward = forward / norm

    right = np.cross(forward, up_world)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)

    rotation = np.stack([right, down, forward])
    return Pose(rotation, -rotation @ eye)


def _require_pinhole(camera) -> None:
    if not getattr(camera, "is_pinhole", False):
        raise UnsupportedCamera(
            f"camera model {getattr(camera, 'model_name', '?')} has no plain "
            "pinhole geometry"
        )


def project_point(camera, pose: Pose, point: np.ndarray) -> tuple[float, float, float]:
    """Project a world point through a pinhole camera.

    Args:
        camera: intrinsics with fx, fy, cx, cy attributes.
        pose: world-to-camera transform.
        point: world coordinates, shape (3,).

    Returns:
        (u, v, depth) with continuous pixel coordinates and camera-frame depth.

    Raises:
        BehindCamera: the point has non-positive camera depth.
        UnsupportedCamera: the camera is not plain pinhole.
    """
    _require_pinhole(camera)
    cam = pose.world_to_camera(np.asarray(point, dtype=np.float64).reshape(3))
    z = float(cam[2])
    if z <= 0.0:
        raise BehindCamera(f"point depth {z:.6g} <= 0")
    u = camera.fx * cam[0] / z + camera.cx
    v = camera.fy * cam[1] / z + camera.cy
    return float(u), float(v), z


def project_points(
    camera, pose: Pose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of world points.

    Returns:
        (uv, depth, in_front) where uv has shape (n, 2), depth (n,), and
        in_front marks points with positive camera depth.  uv rows for
        points at or behind the camera are NaN.
    """
    _require_pinhole(camera)
    cam = pose.world_to_camera(np.atleast_2d(points))
    depth = cam[:, 2].copy()
    in_front = depth > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * cam[:, 0] / depth + camera.cx
        v = camera.fy * cam[:, 1] / depth + camera.cy
    uv = np.stack([u, v], axis=1)
    uv[~in_front] = np.nan
    return uv, depth, in_front


def inside_image(camera, uv: np.ndarray) -> np.ndarray:
    """Mask of pixel coordinates inside the sampling rectangle of ``camera``."""
    uv = np.atleast_2d(uv)
    with np.errstate(invalid="ignore"):
        return (
            (uv[:, 0] >= 0.0)
            & (uv[:, 0] <= camera.width - 1.0)
            & (uv[:, 1] >= 0.0)
            & (uv[:, 1] <= camera.height - 1.0)
        )


def backproject_pixels(
    camera, pose: Pose, uv: np.ndarray, depth: np.ndarray
) -> np.ndarray:
    """Lift pixels with known depth to world coordinates.

    ``uv`` holds continuous pixel coordinates, shape (n, 2); ``depth`` the
    positive camera-frame depths, shape (n,).  Inverse of project_points.
    """
    _require_pinhole(camera)
    uv = np.atleast_2d(uv).astype(np.float64)
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    x = (uv[:, 0] - camera.cx) / camera.fx * depth
    y = (uv[:, 1] - camera.cy) / camera.fy * depth
    cam = np.stack([x, y, depth], axis=1)
    return pose.camera_to_world(cam)


def baseline_angle(point: np.ndarray, center_i: np.ndarray, center_j: np.ndarray) -> float:
    """Angle in degrees at ``point`` between the rays to two camera centers.

    Raises:
        DegenerateRay: one of the rays has zero length.
    """
    point = np.asarray(point, dtype=np.float64)
    ray_i = np.asarray(center_i, dtype=np.float64) - point
    ray_j = np.asarray(center_j, dtype=np.float64) - point
    norm_i = np.linalg.norm(ray_i)
    norm_j = np.linalg.norm(ray_j)
    if norm_i == 0.0 or norm_j == 0.0:
        raise DegenerateRay("point coincides with a camera center")
    cos = np.dot(ray_i, ray_j) / (norm_i * norm_j)
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
