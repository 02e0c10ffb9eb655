"""Reconstruction and rendering quality metrics.

The geometric protocol crops reconstruction and reference point sets to
their overlapping box, rigidly aligns them with point-to-point ICP,
and scores threshold precision, recall, and F1 through exact
nearest-neighbor queries.  Image quality uses PSNR with a 99 dB cap and
windowed SSIM (11x11 Gaussian, sigma 1.5).  A DSM rasterizer reduces a
point set to a top-surface height grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    EmptyMesh,
    InvalidValue,
    NoOverlap,
)
from .meshing import Mesh
from .partition import SceneBounds

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol settings."""

    thresholds: tuple[float, ...] = (0.5, 1.0)
    relative_threshold: float | None = None  # fraction of crop box diagonal
    sample_count: int = 500_000
    icp_max_iter: int = 50
    icp_tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if any(t <= 0 for t in self.thresholds):
            raise InvalidValue(f"thresholds must be positive: {self.thresholds}")
        if self.relative_threshold is not None and self.relative_threshold <= 0:
            raise InvalidValue("relative threshold must be positive")
        if self.sample_count <= 0:
            raise InvalidValue("sample count must be positive")


@dataclass
class EvalReport:
    """Per-threshold scores plus the alignment that produced them."""

    metrics: list[dict]
    transform: np.ndarray  # (4, 4) rigid, reconstruction -> reference
    rec_count: int
    gt_count: int
    crop_box: SceneBounds

    def to_json(self) -> dict:
        return {
            "metrics": self.metrics,
            "alignment": self.transform.tolist(),
            "reconstruction_points": self.rec_count,
            "reference_points": self.gt_count,
            "crop_box": self.crop_box.to_json(),
        }


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionMismatch(f"expected (n, 3) points, got {pts.shape}")
    return pts


def overlap_crop(rec, gt):
    """Restrict both point sets to the intersection of their AABBs.

    Returns (rec cropped, gt cropped, box).

    Raises:
        NoOverlap: the bounding boxes do not intersect.
    """
    rec = _as_points(rec)
    gt = _as_points(gt)
    if not len(rec) or not len(gt):
        raise InvalidValue("overlap_crop needs non-empty point sets")
    lo = np.maximum(rec.min(axis=0), gt.min(axis=0))
    hi = np.minimum(rec.max(axis=0), gt.max(axis=0))
    if np.any(lo > hi):
        raise NoOverlap("point set bounding boxes do not intersect")
    box = SceneBounds(lo, hi)
    return rec[box.contains(rec)], gt[box.contains(gt)], box


def apply_transform(transform: np.ndarray, points) -> np.ndarray:
    pts = _as_points(points)
    return pts @ transform[:3, :3].T + transform[:3, 3]


def _require_well_spread(points: np.ndarray, name: str) -> None:
    if len(points) < 3:
        raise DegenerateGeometry(f"{name} has fewer than 3 points")
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] <= 1e-12 * max(s[0], 1.0):
        raise DegenerateGeometry(f"{name} points are collinear")


def _kabsch(src: np.ndarray, tgt: np.ndarray):
    """Least-squares rigid transform src -> tgt for paired points."""
    c_src = src.mean(axis=0)
    c_tgt = tgt.mean(axis=0)
    h = (src - c_src).T @ (tgt - c_tgt)
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    translation = c_tgt - rotation @ c_src
    return rotation, translation


def icp_align(src, tgt, cfg: EvalConfig = EvalConfig()) -> np.ndarray:
    """Point-to-point ICP returning a 4x4 rigid src -> tgt transform.

    Each iteration pairs every source point with its nearest target,
    drops pairs beyond 3x the median distance, and applies the
    closed-form rigid update.  The best transform seen (by RMS nearest
    distance) is returned, so alignment never ends worse than it began.

    Raises:
        DegenerateGeometry: fewer than 3 points or a collinear set.
    """
    src = _as_points(src)
    tgt = _as_points(tgt)
    _require_well_spread(src, "source")
    _require_well_spread(tgt, "target")
    tree = cKDTree(tgt)
    transform = np.eye(4)
    current = src.copy()
    dist, index = tree.query(current)
    best_rms = float(np.sqrt(np.mean(dist**2)))
    best_transform = transform.copy()
    prev_rms = best_rms
    for _ in range(cfg.icp_max_iter):
        median = float(np.median(dist))
        keep = dist <= 3.0 * median if median > 0 else np.ones(len(dist), bool)
        if keep.sum() < 3:
            break
        rotation, translation = _kabsch(current[keep], tgt[index[keep]])
        step = np.eye(4)
        step[:3, :3] = rotation
        step[:3, 3] = translation
        transform = step @ transform
        current = current @ rotation.T + translation
        dist, index = tree.query(current)
        rms = float(np.sqrt(np.mean(dist**2)))
        if rms < best_rms:
            best_rms = rms
            best_transform = transform.copy()
        if rms == 0.0 or (prev_rms > 0 and abs(prev_rms - rms) / prev_rms < cfg.icp_tolerance):
            break
        prev_rms = rms
    return best_transform


def sample_mesh_points(mesh: Mesh, n: int, seed: int = 0) -> np.ndarray:
    """Uniform area-weighted surface samples, deterministic per seed.

    Triangles are drawn proportionally to area, positions uniformly
    within each via square-root barycentric sampling.

    Raises:
        EmptyMesh: the mesh has no faces or only zero-area faces.
    """
    if n < 0:
        raise InvalidValue(f"sample count must be non-negative, got {n}")
    areas = mesh.triangle_areas() if mesh.num_faces else np.zeros(0)
    total = float(areas.sum())
    if not mesh.num_faces or total <= 0.0:
        raise EmptyMesh("cannot sample a mesh without surface area")
    if n == 0:
        return np.zeros((0, 3))
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(mesh.num_faces, size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    sqrt_r1 = np.sqrt(r1)
    u = 1.0 - sqrt_r1
    v = sqrt_r1 * (1.0 - r2)
    w = sqrt_r1 * r2
    tri = mesh.vertices[mesh.faces[face_idx]]
    return (
        u[:, None] * tri[:, 0] + v[:, None] * tri[:, 1] + w[:, None] * tri[:, 2]
    )


def precision_recall_f1(rec, gt, tau: float):
    """Threshold accuracy, completeness, and their harmonic mean.

    A reconstructed point counts as precise when its nearest reference
    point lies strictly closer than tau; recall mirrors this for the
    reference set.  F1 is 0 when both parts are 0.
    """
    rec = _as_points(rec)
    gt = _as_points(gt)
    if not len(rec) or not len(gt):
        raise InvalidValue("precision_recall_f1 needs non-empty point sets")
    d_rec, _ = cKDTree(gt).query(rec)
    d_gt, _ = cKDTree(rec).query(gt)
    precision = float(np.mean(d_rec < tau))
    recall = float(np.mean(d_gt < tau))
    if precision + recall == 0.0:
        return 0.0, 0.0, 0.0
    f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def relative_threshold(fraction: float, box: SceneBounds) -> float:
    """Scene-unit threshold as a fraction of the crop box diagonal."""
    return float(fraction * np.linalg.norm(box.extent))


def evaluate_point_sets(rec, gt, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Full geometric protocol: crop, align, score all thresholds."""
    rec_c, gt_c, box = overlap_crop(rec, gt)
    transform = icp_align(rec_c, gt_c, cfg)
    aligned = apply_transform(transform, rec_c)
    taus = [(f"{t:g}", float(t)) for t in cfg.thresholds]
    if cfg.relative_threshold is not None:
        value = relative_threshold(cfg.relative_threshold, box)
        taus.append((f"relative {cfg.relative_threshold:g}", value))
    metrics = []
    for label, tau in taus:
        p, r, f1 = precision_recall_f1(aligned, gt_c, tau)
        metrics.append(
            {
                "label": label,
                "threshold": tau,
                "precision": p,
                "recall": r,
                "f1": f1,
            }
        )
    return EvalReport(metrics, transform, len(rec_c), len(gt_c), box)


# ---------------------------------------------------------------------------
# Image metrics


def _check_images(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise DimensionMismatch(f"images must be 2D or (h, w, c), got {a.shape}")
    return a, b


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in decibels, capped at 99 dB."""
    a, b = _check_images(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(max_value**2 / mse)))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_single(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = convolve2d(a, kernel, mode="valid")
    mu_b = convolve2d(b, kernel, mode="valid")
    mu_aa = convolve2d(a * a, kernel, mode="valid")
    mu_bb = convolve2d(b * b, kernel, mode="valid")
    mu_ab = convolve2d(a * b, kernel, mode="valid")
    var_a = mu_aa - mu_a**2
    var_b = mu_bb - mu_b**2
    cov = mu_ab - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


def ssim(a, b, max_value: float = 1.0) -> float:
    """Mean structural similarity over 11x11 Gaussian windows.

    Tri-channel images score as the mean of their per-channel values.
    Images must be at least 11 pixels in both dimensions.
    """
    a, b = _check_images(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise InvalidValue(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    if a.ndim == 2:
        return _ssim_single(a, b, c1, c2)
    channels = [
        _ssim_single(a[:, :, k], b[:, :, k], c1, c2) for k in range(a.shape[2])
    ]
    return float(np.mean(channels))


# ---------------------------------------------------------------------------
# Digital surface model


@dataclass
class DsmGrid:
    """Top-surface height raster over the xz plane.

    ``heights[row, col]`` covers the cell with x in
    [min_x + col*cell, ...) and z in [min_z + row*cell, ...); empty
    cells hold NaN.
    """

    heights: np.ndarray
    min_x: float
    min_z: float
    cell: float

    @property
    def nodata_mask(self) -> np.ndarray:
        return ~np.isfinite(self.heights)


def generate_dsm(points, cell: float) -> DsmGrid:
    """Maximum-height rasterization of a point set onto the xz plane."""
    if cell <= 0:
        raise InvalidValue(f"cell size must be positive, got {cell}")
    pts = _as_points(points)
    if not len(pts):
        raise InvalidValue("generate_dsm needs a non-empty point set")
    min_x = float(pts[:, 0].min())
    min_z = float(pts[:, 2].min())
    cols = np.floor((pts[:, 0] - min_x) / cell).astype(np.int64)
    rows = np.floor((pts[:, 2] - min_z) / cell).astype(np.int64)
    heights = np.full((rows.max() + 1, cols.max() + 1), -np.inf)
    np.maximum.at(heights, (rows, cols), pts[:, 1])
    heights[~np.isfinite(heights)] = np.nan
    return DsmGrid(heights, min_x, min_z, cell)
