"""Depth and normal maps, ray-sample aggregation, and multi-view fusion.

A depth map stores camera-frame depth per pixel with an explicit
validity mask; non-positive or non-finite values are invalid.  Fusion
reprojects every valid reference pixel into each source view, compares
the reference depth against the bilinearly sampled source depth, and
averages the consistent sources with weights that fall off with the
depth discrepancy.  The adaptive window selects a centered densification
rectangle whose size shrinks as the depth field gets busier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colmap import Camera
from .errors import (
    DimensionMismatch,
    InvalidSourceDepth,
    NonFinite,
    OutOfSourceFrustum,
    ZeroNormal,
)
from .geometry import Pose, backproject_pixels, inside_image, project_points
from .pfm import read_pfm, write_pfm

MEAN_DEPTH_EPS = 1e-8


@dataclass
class DepthMap:
    """Per-pixel camera-frame depth with validity, intrinsics, and pose."""

    values: np.ndarray  # (h, w) float64
    camera: Camera
    pose: Pose
    valid: np.ndarray | None = None  # (h, w) bool

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatch(f"depth map must be 2D, got {self.values.shape}")
        finite_positive = np.isfinite(self.values) & (self.values > 0.0)
        if self.valid is None:
            self.valid = finite_positive
        else:
            self.valid = np.asarray(self.valid, dtype=bool) & finite_positive
        if self.valid.shape != self.values.shape:
            raise DimensionMismatch("valid mask shape differs from values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def write_pfm(self, path) -> None:
        """Store as 1-channel PFM; invalid pixels become 0."""
        out = np.where(self.valid, self.values, 0.0)
        write_pfm(path, out)

    @classmethod
    def from_pfm(cls, path, camera: Camera, pose: Pose) -> "DepthMap":
        return cls(read_pfm(path).astype(np.float64), camera, pose)


@dataclass
class NormalMap:
    """Per-pixel unit normals (camera frame) with validity."""

    values: np.ndarray  # (h, w, 3)
    valid: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise DimensionMismatch(
                f"normal map must be (h, w, 3), got {self.values.shape}"
            )
        norms = np.linalg.norm(self.values, axis=2)
        nonzero = norms > 0.0
        if self.valid is None:
            self.valid = nonzero
        else:
            self.valid = np.asarray(self.valid, dtype=bool) & nonzero
        # Valid normals are unit length; invalid pixels stay zero.
        safe = np.where(norms > 0.0, norms, 1.0)
        self.values = np.where(
            self.valid[..., None], self.values / safe[..., None], 0.0
        )

    def write_pfm(self, path) -> None:
        write_pfm(path, self.values)

    @classmethod
    def from_pfm(cls, path) -> "NormalMap":
        return cls(read_pfm(path).astype(np.float64))


@dataclass(frozen=True)
class RaySamples:
    """Weighted depth samples along one viewing ray."""

    weights: np.ndarray
    depths: np.ndarray
    transmittances: np.ndarray

    def __post_init__(self) -> None:
        for name in ("weights", "depths", "transmittances"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            )
        if not (
            self.weights.shape == self.depths.shape == self.transmittances.shape
        ):
            raise DimensionMismatch("ray sample arrays differ in length")


def ray_depth_mean(samples: RaySamples, eps: float = MEAN_DEPTH_EPS) -> float:
    """Weight-normalized expected depth along the ray."""
    return float(
        np.sum(samples.weights * samples.depths) / (np.sum(samples.weights) + eps)
    )


def ray_depth_median(samples: RaySamples, threshold: float = 0.5) -> float | None:
    """Depth of the farthest sample still carrying over half transmittance.

    Returns None when no sample's transmittance exceeds the threshold
    (the ray never meaningfully enters the scene).
    """
    mask = samples.transmittances > threshold
    if not mask.any():
        return None
    return float(np.max(samples.depths[mask]))


@dataclass(frozen=True)
class FusionConfig:
    """Settings for multi-view depth fusion and window densification."""

    sigma: float = 1.0
    max_error: float | None = None  # defaults to 3 * sigma
    squared_error: bool = False
    window_gain: float = 0.01
    window_eps: float = 1e-4

    @property
    def error_cap(self) -> float:
        return 3.0 * self.sigma if self.max_error is None else self.max_error


def _bilinear_sample(
    values: np.ndarray, valid: np.ndarray, u: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Validity-aware bilinear sampling at continuous pixel coordinates.

    Weights of invalid neighbors are dropped and the rest renormalized;
    a sample with no supporting valid neighbor is flagged invalid.
    Coordinates must already lie inside [0, w-1] x [0, h-1].
    """
    h, w = values.shape
    x0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = u - x0
    wy = v - y0

    total = np.zeros_like(u, dtype=np.float64)
    acc = np.zeros_like(u, dtype=np.float64)
    for yy, xx, wgt in (
        (y0, x0, (1 - wx) * (1 - wy)),
        (y0, x1, wx * (1 - wy)),
        (y1, x0, (1 - wx) * wy),
        (y1, x1, wx * wy),
    ):
        mask = valid[yy, xx]
        contribution = np.where(mask, wgt, 0.0)
        total += contribution
        acc += contribution * values[yy, xx]
    ok = total > 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        sampled = np.where(ok, acc / total, np.nan)
    return sampled, ok


def depth_reprojection_error(
    ref: DepthMap, src: DepthMap, pixel: tuple[int, int]
) -> tuple[tuple[float, float], float]:
    """Depth discrepancy of one reference pixel against a source view.

    Args:
        ref: reference depth map (pixel must be valid in it).
        src: source depth map.
        pixel: (row, col) in the reference map.

    Returns:
        ((u_src, v_src), error): the source-image coordinates and the
        absolute difference between the reference depth and the source
        depth sampled there.

    Raises:
        OutOfSourceFrustum: the point lands outside or behind the source.
        InvalidSourceDepth: every bilinear neighbor in the source is invalid.
    """
    row, col = pixel
    if not ref.valid[row, col]:
        raise ValueError(f"reference pixel {pixel} is invalid")
    depth = ref.values[row, col]
    world = backproject_pixels(
        ref.camera, ref.pose, np.array([[col, row]], dtype=np.float64), [depth]
    )
    uv, z, in_front = project_points(src.camera, src.pose, world)
    if not in_front[0] or not inside_image(src.camera, uv)[0]:
        raise OutOfSourceFrustum(
            f"reference pixel {pixel} reprojects outside the source view"
        )
    sampled, ok = _bilinear_sample(src.values, src.valid, uv[:, 0], uv[:, 1])
    if not ok[0]:
        raise InvalidSourceDepth(
            f"no valid source depth around ({uv[0, 0]:.2f}, {uv[0, 1]:.2f})"
        )
    error = float(abs(depth - sampled[0]))
    return (float(uv[0, 0]), float(uv[0, 1])), error


@dataclass
class FusedDepth:
    """Fusion output: final depth plus per-source diagnostics."""

    depth: DepthMap
    weight_sum: np.ndarray  # (h, w)
    source_errors: np.ndarray  # (n_src, h, w), NaN where a source was dropped
    num_sources: np.ndarray  # (h, w) surviving source count


def fuse_depth(ref: DepthMap, sources, cfg: FusionConfig) -> FusedDepth:
    """Geometric-consistency fusion of a reference view against its sources.

    Every valid reference pixel is lifted to world space, reprojected
    into each source, and compared against the source depth there.
    Sources outside their frustum, without valid depth, or with error
    above the cap are dropped per pixel; the rest average with weights
    exp(-error / sigma^2) (or squared error with ``squared_error``).
    Pixels with no surviving source are invalid in the result.
    """
    sources = list(sources)
    h, w = ref.values.shape
    rows, cols = np.nonzero(ref.valid)
    uv_ref = np.stack([cols, rows], axis=1).astype(np.float64)
    depth_ref = ref.values[rows, cols]
    world = backproject_pixels(ref.camera, ref.pose, uv_ref, depth_ref)

    numerator = np.zeros(rows.size)
    weight_sum = np.zeros(rows.size)
    survivors = np.zeros(rows.size, dtype=np.int64)
    source_errors = np.full((len(sources), h, w), np.nan)

    for s_idx, src in enumerate(sources):
        uv, z, in_front = project_points(src.camera, src.pose, world)
        usable = in_front & inside_image(src.camera, uv)
        if not usable.any():
            continue
        sampled = np.full(rows.size, np.nan)
        ok = np.zeros(rows.size, dtype=bool)
        sampled[usable], ok[usable] = _bilinear_sample(
            src.values, src.valid, uv[usable, 0], uv[usable, 1]
        )
        with np.errstate(invalid="ignore"):
            error = np.abs(depth_ref - sampled)
            keep = ok & (error <= cfg.error_cap)
        exponent = error**2 if cfg.squared_error else error
        weight = np.exp(-exponent / cfg.sigma**2)
        numerator += np.where(keep, weight * sampled, 0.0)
        weight_sum += np.where(keep, weight, 0.0)
        survivors += keep
        err_map = source_errors[s_idx]
        err_map[rows[keep], cols[keep]] = error[keep]

    fused = np.zeros((h, w))
    any_source = weight_sum > 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        fused[rows[any_source], cols[any_source]] = (
            numerator[any_source] / weight_sum[any_source]
        )
    weight_image = np.zeros((h, w))
    weight_image[rows, cols] = weight_sum
    count_image = np.zeros((h, w), dtype=np.int64)
    count_image[rows, cols] = survivors
    return FusedDepth(
        depth=DepthMap(fused, ref.camera, ref.pose),
        weight_sum=weight_image,
        source_errors=source_errors,
        num_sources=count_image,
    )


def mean_depth_gradient(depth_map: DepthMap) -> float:
    """Mean gradient magnitude over all pixels of the map.

    Differences skip invalid neighbors (central where both sides are
    valid, one-sided toward a valid side, zero otherwise); invalid
    pixels contribute zero but still count in the denominator.
    """
    values = depth_map.values
    valid = depth_map.valid
    h, w = values.shape

    def axis_gradient(vals, ok):
        prev_ok = np.zeros_like(ok)
        prev_ok[:, 1:] = ok[:, :-1]
        next_ok = np.zeros_like(ok)
        next_ok[:, :-1] = ok[:, 1:]
        prev = np.zeros_like(vals)
        prev[:, 1:] = vals[:, :-1]
        nxt = np.zeros_like(vals)
        nxt[:, :-1] = vals[:, 1:]
        central = (nxt - prev) / 2.0
        forward = nxt - vals
        backward = vals - prev
        grad = np.where(
            prev_ok & next_ok,
            central,
            np.where(next_ok, forward, np.where(prev_ok, backward, 0.0)),
        )
        return grad

    gx = axis_gradient(values, valid)
    gy = axis_gradient(values.T, valid.T).T
    magnitude = np.sqrt(gx**2 + gy**2)
    return float(np.sum(magnitude[valid]) / (h * w))


def adaptive_window(
    depth_map: DepthMap, cfg: FusionConfig
) -> tuple[int, int, np.ndarray]:
    """Centered densification window scaled by depth busyness.

    The window spans half the image at gain / mean-gradient = 1 and is
    clamped to [1, h] x [1, w]; a flat depth field opens it to the full
    image.  Returns (win_h, win_w, boolean mask).
    """
    h, w = depth_map.values.shape
    gradient = mean_depth_gradient(depth_map)
    scale = cfg.window_gain / (gradient + cfg.window_eps)

    def round_half_up(x: float) -> int:
        return int(np.floor(x + 0.5))

    win_h = min(max(round_half_up(scale * h / 2.0), 1), h)
    win_w = min(max(round_half_up(scale * w / 2.0), 1), w)
    top = (h - win_h) // 2
    left = (w - win_w) // 2
    mask = np.zeros((h, w), dtype=bool)
    mask[top : top + win_h, left : left + win_w] = True
    return win_h, win_w, mask


def backproject_window(
    depth_map: DepthMap, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """World points of the valid pixels selected by ``mask``.

    Returns (points (n, 3), pixels (n, 2) as (row, col)).
    """
    if mask.shape != depth_map.values.shape:
        raise DimensionMismatch("mask shape differs from depth map")
    rows, cols = np.nonzero(depth_map.valid & mask)
    uv = np.stack([cols, rows], axis=1).astype(np.float64)
    points = backproject_pixels(
        depth_map.camera, depth_map.pose, uv, depth_map.values[rows, cols]
    )
    return points, np.stack([rows, cols], axis=1)


def normal_consistency_error(normal_ref, normal_src):
    """1 - cosine similarity; 0 for parallel, 2 for opposite normals.

    Accepts single vectors or broadcastable (..., 3) arrays.

    Raises:
        ZeroNormal: any input normal has zero length.
    """
    a = np.asarray(normal_ref, dtype=np.float64)
    b = np.asarray(normal_src, dtype=np.float64)
    norm_a = np.linalg.norm(a, axis=-1)
    norm_b = np.linalg.norm(b, axis=-1)
    if np.any(norm_a == 0.0) or np.any(norm_b == 0.0):
        raise ZeroNormal("zero-length normal")
    cos = np.sum(a * b, axis=-1) / (norm_a * norm_b)
    result = 1.0 - np.clip(cos, -1.0, 1.0)
    if result.ndim == 0:
        return float(result)
    return result


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the depth and normal terms in the training loss."""

    depth_weight: float = 0.01
    normal_weight: float = 0.1


def compose_loss(
    depth_error: float,
    normal_error: float,
    geometric_term: float,
    photometric_term: float,
    weights: LossWeights = LossWeights(),
) -> float:
    """Weighted total loss of one training step.

    Raises:
        NonFinite: any term is NaN or infinite.
    """
    terms = (depth_error, normal_error, geometric_term, photometric_term)
    if not all(np.isfinite(t) for t in terms):
        raise NonFinite(f"non-finite loss term in {terms}")
    return float(
        weights.depth_weight * depth_error
        + weights.normal_weight * normal_error
        + geometric_term
        + photometric_term
    )
