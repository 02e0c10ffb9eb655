"""View selection: pair scoring and per-point optimal view groups.

Image pairs are scored by summing a piecewise Gaussian of the baseline
angle over their common track points, with wide tolerance toward large
angles and a sharp falloff below the peak.  Pairs whose camera centers
lie farther apart than a region-derived distance cap score zero.  Each
image gets a group (itself plus its best source views); each point then
picks the group that observes it closest to the principal points, and a
region keeps exactly the images appearing in some winning group.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .colmap import SparseModel
from .errors import NoVisibleGroup
from .geometry import baseline_angle, inside_image, project_points
from .partition import SubRegion

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairScoreConfig:
    """Settings for baseline-angle pair scoring.

    theta_peak is the preferred baseline angle in degrees; sigma_below /
    sigma_above shape the Gaussian on each side of it.  Angles above
    theta_max are dropped entirely while enforce_theta_cutoff is set;
    otherwise they contribute through the wide upper branch.
    max_center_distance of None disables the distance gate (region
    assignment fills it from the region footprint).
    """

    theta_peak: float = 5.0
    sigma_below: float = 1.0
    sigma_above: float = 10.0
    theta_max: float = 90.0
    enforce_theta_cutoff: bool = True
    max_center_distance: float | None = None
    max_sources: int = 3


def angle_weight(theta_degrees, cfg: PairScoreConfig):
    """Piecewise Gaussian of the baseline angle, peaking at theta_peak."""
    theta = np.asarray(theta_degrees, dtype=np.float64)
    sigma = np.where(theta <= cfg.theta_peak, cfg.sigma_below, cfg.sigma_above)
    weight = np.exp(-((theta - cfg.theta_peak) ** 2) / (2.0 * sigma**2))
    if theta.ndim == 0:
        return float(weight)
    return weight


def _common_point_ids(model: SparseModel, image_i: int, image_j: int) -> np.ndarray:
    ids_i = model.images[image_i].tracked_point_ids()
    ids_j = model.images[image_j].tracked_point_ids()
    common = np.intersect1d(ids_i, ids_j, assume_unique=True)
    return common[np.isin(common, list(model.points))] if common.size else common


def pair_score(
    image_i: int, image_j: int, model: SparseModel, cfg: PairScoreConfig
) -> float:
    """Support score of an image pair.

    Sum of angle_weight over the baseline angles at all common track
    points, or 0 when the camera centers are farther apart than
    max_center_distance.
    """
    center_i = model.images[image_i].center
    center_j = model.images[image_j].center
    if (
        cfg.max_center_distance is not None
        and np.linalg.norm(center_i - center_j) > cfg.max_center_distance
    ):
        return 0.0
    common = _common_point_ids(model, image_i, image_j)
    if common.size == 0:
        return 0.0
    positions = np.array([model.points[int(p)].xyz for p in common])
    angles = _baseline_angles(positions, center_i, center_j)
    if cfg.enforce_theta_cutoff:
        angles = angles[angles <= cfg.theta_max]
    return float(np.sum(angle_weight(angles, cfg)))


def _baseline_angles(
    positions: np.ndarray, center_i: np.ndarray, center_j: np.ndarray
) -> np.ndarray:
    rays_i = center_i - positions
    rays_j = center_j - positions
    norms = np.linalg.norm(rays_i, axis=1) * np.linalg.norm(rays_j, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("ij,ij->i", rays_i, rays_j) / norms
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


@dataclass(frozen=True)
class ViewGroup:
    """A reference image together with its selected source images."""

    ref_image_id: int
    source_image_ids: tuple[int, ...]
    source_scores: tuple[float, ...] = ()

    @property
    def member_ids(self) -> tuple[int, ...]:
        return (self.ref_image_id, *self.source_image_ids)


def _pick_top_sources(
    candidate_ids: np.ndarray, scores: np.ndarray, max_sources: int
) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Highest-scoring candidates, ties broken by ascending image id."""
    positive = scores > 0.0
    ids = candidate_ids[positive]
    vals = scores[positive]
    order = np.lexsort((ids, -vals))[:max_sources]
    return tuple(int(i) for i in ids[order]), tuple(float(v) for v in vals[order])


def select_source_views(
    ref_image_id: int,
    candidate_ids,
    model: SparseModel,
    cfg: PairScoreConfig,
) -> ViewGroup:
    """Group the reference with its best-scoring source views.

    Fewer than max_sources candidates may qualify; none at all yields an
    empty source list (logged, not an error).
    """
    candidates = np.array(
        [int(c) for c in candidate_ids if int(c) != ref_image_id], dtype=np.int64
    )
    scores = np.array(
        [pair_score(ref_image_id, int(c), model, cfg) for c in candidates]
    )
    source_ids, source_scores = _pick_top_sources(
        candidates, scores, cfg.max_sources
    ) if candidates.size else ((), ())
    if not source_ids:
        logger.warning("image %d: no positive-score source candidates", ref_image_id)
    return ViewGroup(ref_image_id, source_ids, source_scores)


def _member_pixel_distances(point, group: ViewGroup, model: SparseModel):
    """Per-member principal-point pixel distance, or None when unobserved."""
    distances = []
    for member_id in group.member_ids:
        image = model.images[member_id]
        camera = model.cameras[image.camera_id]
        uv, depth, in_front = project_points(camera, image.pose, np.asarray(point)[None])
        if not in_front[0] or not inside_image(camera, uv)[0]:
            return None
        du = uv[0, 0] - camera.cx
        dv = uv[0, 1] - camera.cy
        distances.append(np.sqrt(du * du + dv * dv))
    return distances


def optimal_group_for_point(
    point, candidate_groups, model: SparseModel
) -> ViewGroup:
    """The candidate group observing the point closest to image centers.

    Groups are ranked by the mean pixel distance of the point's
    projection to each member's principal point; a group qualifies only
    when every member sees the point in front of the camera and inside
    the image.  Ties go to the lowest reference image id.

    Raises:
        NoVisibleGroup: no candidate group fully observes the point.
    """
    best: tuple[float, int] | None = None
    best_group: ViewGroup | None = None
    for group in sorted(candidate_groups, key=lambda g: g.ref_image_id):
        distances = _member_pixel_distances(point, group, model)
        if distances is None:
            continue
        mean_distance = float(np.mean(distances))
        key = (mean_distance, group.ref_image_id)
        if best is None or key < best:
            best = key
            best_group = group
    if best_group is None:
        raise NoVisibleGroup("no candidate group fully observes the point")
    return best_group


@dataclass
class RegionViewAssignment:
    """Per-region outcome of view selection."""

    grid_index: tuple[int, int]
    point_groups: dict[int, ViewGroup]
    used_image_ids: np.ndarray
    excluded_image_ids: np.ndarray
    num_skipped_points: int
    groups_by_ref: dict[int, ViewGroup]


def region_distance_cap(region: SubRegion) -> float:
    """Geometric mean of the region's ground-plane edge lengths."""
    extent = region.bounds.extent
    return float(np.sqrt(extent[0] * extent[2]))


def assign_views_to_region(
    region: SubRegion, model: SparseModel, cfg: PairScoreConfig
) -> RegionViewAssignment:
    """Select the used image set of one region.

    Builds a view group for every matched image, lets each region point
    pick its optimal group, and returns the union of the winning groups
    as the region's used images.  Points that no group fully observes
    are skipped with a tally.
    """
    if cfg.max_center_distance is None:
        cfg = replace(cfg, max_center_distance=region_distance_cap(region))

    image_ids = sorted(
        int(i) for i in region.matched_image_ids if int(i) in model.images
    )
    point_ids = [int(p) for p in region.point_ids if int(p) in model.points]
    if not image_ids or not point_ids:
        return RegionViewAssignment(
            region.grid_index,
            {},
            np.empty(0, dtype=np.int64),
            np.array(sorted(image_ids), dtype=np.int64),
            len(point_ids),
            {},
        )

    positions = np.array([model.points[p].xyz for p in point_ids])
    id_to_col = {pid: k for k, pid in enumerate(point_ids)}

    # Pairwise scores over the region's matched images (symmetric).
    n_img = len(image_ids)
    tracked = {i: model.images[i].tracked_point_ids() for i in image_ids}
    centers = {i: model.images[i].center for i in image_ids}
    known_points = np.array(sorted(model.points), dtype=np.int64)
    score = np.zeros((n_img, n_img))
    for a in range(n_img):
        for b in range(a + 1, n_img):
            ia, ib = image_ids[a], image_ids[b]
            if (
                np.linalg.norm(centers[ia] - centers[ib])
                > cfg.max_center_distance
            ):
                continue
            common = np.intersect1d(tracked[ia], tracked[ib], assume_unique=True)
            if common.size:
                common = common[np.isin(common, known_points, assume_unique=True)]
            if common.size == 0:
                continue
            pts = np.array([model.points[int(p)].xyz for p in common])
            angles = _baseline_angles(pts, centers[ia], centers[ib])
            if cfg.enforce_theta_cutoff:
                angles = angles[angles <= cfg.theta_max]
            score[a, b] = score[b, a] = float(np.sum(angle_weight(angles, cfg)))

    groups_by_ref: dict[int, ViewGroup] = {}
    image_id_arr = np.array(image_ids, dtype=np.int64)
    for a, ref_id in enumerate(image_ids):
        others = np.delete(np.arange(n_img), a)
        source_ids, source_scores = _pick_top_sources(
            image_id_arr[others], score[a, others], cfg.max_sources
        )
        if not source_ids:
            logger.warning(
                "region %s image %d: no positive-score sources",
                region.grid_index,
                ref_id,
            )
        groups_by_ref[ref_id] = ViewGroup(ref_id, source_ids, source_scores)

    # Projection tables: pixel distance to the principal point and
    # visibility, per (image, point).
    distance = np.full((n_img, len(point_ids)), np.nan)
    visible = np.zeros((n_img, len(point_ids)), dtype=bool)
    for a, image_id in enumerate(image_ids):
        image = model.images[image_id]
        camera = model.cameras[image.camera_id]
        uv, depth, in_front = project_points(camera, image.pose, positions)
        ok = in_front & inside_image(camera, uv)
        du = uv[:, 0] - camera.cx
        dv = uv[:, 1] - camera.cy
        distance[a] = np.sqrt(du * du + dv * dv)
        visible[a] = ok

    row_of = {image_id: a for a, image_id in enumerate(image_ids)}
    candidate_groups = [
        groups_by_ref[i] for i in image_ids if groups_by_ref[i].source_image_ids
    ]
    group_rows = [
        np.array([row_of[m] for m in g.member_ids], dtype=np.int64)
        for g in candidate_groups
    ]

    point_groups: dict[int, ViewGroup] = {}
    num_skipped = 0
    if candidate_groups:
        n_groups = len(candidate_groups)
        avg = np.full((n_groups, len(point_ids)), np.inf)
        ok_all = np.zeros((n_groups, len(point_ids)), dtype=bool)
        for g, rows in enumerate(group_rows):
            mask = visible[rows].all(axis=0)
            ok_all[g] = mask
            with np.errstate(invalid="ignore"):
                avg[g, mask] = distance[rows][:, mask].mean(axis=0)
        # A group is a candidate for a point only when its ref tracks it.
        ref_tracks = np.zeros((n_groups, len(point_ids)), dtype=bool)
        for g, group in enumerate(candidate_groups):
            for pid in tracked[group.ref_image_id]:
                col = id_to_col.get(int(pid))
                if col is not None:
                    ref_tracks[g, col] = True
        eligible = ok_all & ref_tracks
        avg = np.where(eligible, avg, np.inf)
        has_any = eligible.any(axis=0)
        # Groups are ordered by ascending ref id, so argmin's first-hit
        # rule realizes the lowest-ref-id tie-break.
        winner = np.argmin(avg, axis=0)
        for col, pid in enumerate(point_ids):
            if has_any[col]:
                point_groups[pid] = candidate_groups[int(winner[col])]
            else:
                num_skipped += 1
    else:
        num_skipped = len(point_ids)

    used: set[int] = set()
    for group in point_groups.values():
        used.update(group.member_ids)
    used_arr = np.array(sorted(used), dtype=np.int64)
    excluded_arr = np.array(sorted(set(image_ids) - used), dtype=np.int64)
    if num_skipped:
        logger.warning(
            "region %s: %d points observed by no candidate group",
            region.grid_index,
            num_skipped,
        )
    return RegionViewAssignment(
        grid_index=region.grid_index,
        point_groups=point_groups,
        used_image_ids=used_arr,
        excluded_image_ids=excluded_arr,
        num_skipped_points=num_skipped,
        groups_by_ref=groups_by_ref,
    )
