"""Scene partitioning: density-refined bounds and an n-by-n ground grid.

The scene is split on the xz-plane (y is the vertical axis).  Bounds are
first tightened by dropping low-reprojection-quality points and
low-occupancy voxels, whose stragglers otherwise inflate the grid far
beyond the built-up area.  Cells are half-open ``[lo, hi)`` on each grid
axis, except the last cell which closes at the scene boundary, so every
in-bounds point lands in exactly one cell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .colmap import Point3D
from .errors import DegenerateBounds, EmptyAfterFilter

logger = logging.getLogger(__name__)

# Ground-plane grid axes: x and z of the world frame.
GRID_AXES = (0, 2)


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned bounding box."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "min_corner", np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        )
        object.__setattr__(
            self, "max_corner", np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        )

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def contains(self, positions: np.ndarray) -> np.ndarray:
        """Inclusive containment mask for (n, 3) positions."""
        pts = np.atleast_2d(positions)
        return np.all(pts >= self.min_corner, axis=1) & np.all(
            pts <= self.max_corner, axis=1
        )

    def to_json(self) -> dict:
        return {
            "min": self.min_corner.tolist(),
            "max": self.max_corner.tolist(),
        }


@dataclass(frozen=True)
class DensityFilterConfig:
    """Settings for reprojection-error and voxel-occupancy filtering."""

    max_reproj_error: float = 1.5
    voxel_size: float = 2.0
    occupancy_fraction: float = 1.0 / 3.0


@dataclass(frozen=True)
class PartitionConfig:
    """Settings for the full partitioning stage."""

    density: DensityFilterConfig = field(default_factory=DensityFilterConfig)
    grid_size: int | None = None  # None selects from the image count
    min_region_fraction: float = 0.10
    expand_factor: float = 2.0


@dataclass
class SubRegion:
    """One grid cell with its points and the images that observe them."""

    grid_index: tuple[int, int]  # (x cell, z cell)
    bounds: SceneBounds
    point_ids: np.ndarray
    matched_image_ids: np.ndarray
    init_bounds: SceneBounds | None = None  # expanded optimization bounds

    @property
    def num_points(self) -> int:
        return int(self.point_ids.size)

    @property
    def num_images(self) -> int:
        return int(self.matched_image_ids.size)


@dataclass
class DroppedRegion:
    grid_index: tuple[int, int]
    reason: str
    num_points: int
    num_images: int


@dataclass
class PartitionResult:
    grid_size: int
    bounds: SceneBounds
    regions: list[SubRegion]
    dropped: list[DroppedRegion]
    num_discarded_points: int


def filter_points_by_error(
    points: dict[int, Point3D], max_error: float
) -> list[int]:
    """Ids of points whose reprojection error does not exceed ``max_error``."""
    return [pid for pid, pt in points.items() if pt.error <= max_error]


def voxel_indices(positions: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel index per point: componentwise floor(p / voxel_size)."""
    if voxel_size <= 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    return np.floor(np.atleast_2d(positions) / voxel_size).astype(np.int64)


def voxel_occupancy(
    positions: np.ndarray, voxel_size: float
) -> dict[tuple[int, int, int], int]:
    """Point count per occupied voxel."""
    idx = voxel_indices(positions, voxel_size)
    unique, counts = np.unique(idx, axis=0, return_counts=True)
    return {tuple(int(v) for v in key): int(c) for key, c in zip(unique, counts)}


def refine_scene_bounds(positions: np.ndarray, cfg: DensityFilterConfig) -> SceneBounds:
    """Bounds of the points that live in sufficiently occupied voxels.

    A voxel survives when its count strictly exceeds ``occupancy_fraction``
    times the maximum voxel count.

    Raises:
        EmptyAfterFilter: no point survives (e.g. occupancy_fraction >= 1).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    if positions.shape[0] == 0:
        raise EmptyAfterFilter("no points to refine bounds from")
    idx = voxel_indices(positions, cfg.voxel_size)
    unique, inverse, counts = np.unique(
        idx, axis=0, return_inverse=True, return_counts=True
    )
    threshold = cfg.occupancy_fraction * counts.max()
    keep = counts[inverse] > threshold
    if not keep.any():
        raise EmptyAfterFilter(
            f"no voxel count exceeds {threshold:.3g} "
            f"(occupancy_fraction={cfg.occupancy_fraction})"
        )
    survivors = positions[keep]
    return SceneBounds(survivors.min(axis=0), survivors.max(axis=0))


def choose_grid_size(num_images: int) -> int:
    """Grid edge length n from the scene's image count."""
    if num_images < 1000:
        return 4
    if num_images < 3000:
        return 6
    return 8


def partition_points(
    points: dict[int, Point3D],
    point_ids: list[int],
    bounds: SceneBounds,
    grid_size: int,
) -> PartitionResult:
    """Assign points to an n-by-n xz grid over ``bounds``.

    Points outside the (inclusive) bounds are discarded and tallied.
    Empty cells are recorded as dropped with reason "empty".  Each
    region's matched images are the union of its points' track images.
    """
    if grid_size < 1:
        raise ValueError(f"grid size must be >= 1, got {grid_size}")
    extent = bounds.extent
    if np.any(extent < 0):
        raise DegenerateBounds("bounds have negative extent")
    if any(extent[a] <= 0 for a in GRID_AXES):
        raise DegenerateBounds("zero extent on a grid axis")

    ids = np.asarray(sorted(point_ids), dtype=np.int64)
    positions = np.array([points[int(p)].xyz for p in ids]).reshape(-1, 3)
    inside = bounds.contains(positions) if ids.size else np.zeros(0, dtype=bool)
    num_discarded = int(ids.size - inside.sum())
    ids = ids[inside]
    positions = positions[inside]

    cell_extent = extent[list(GRID_AXES)] / grid_size
    # Half-open cells; the final cell absorbs the closing boundary.
    rel = positions[:, list(GRID_AXES)] - bounds.min_corner[list(GRID_AXES)]
    cells = np.floor(rel / cell_extent).astype(np.int64)
    np.clip(cells, 0, grid_size - 1, out=cells)

    regions: list[SubRegion] = []
    dropped: list[DroppedRegion] = []
    for ix in range(grid_size):
        for iz in range(grid_size):
            mask = (cells[:, 0] == ix) & (cells[:, 1] == iz)
            if not mask.any():
                dropped.append(DroppedRegion((ix, iz), "empty", 0, 0))
                continue
            cell_ids = ids[mask]
            image_union: set[int] = set()
            for pid in cell_ids:
                image_union.update(int(i) for i in points[int(pid)].track[:, 0])
            lo = bounds.min_corner.copy()
            hi = bounds.max_corner.copy()
            for axis, cell, width in zip(GRID_AXES, (ix, iz), cell_extent):
                lo[axis] = bounds.min_corner[axis] + cell * width
                hi[axis] = lo[axis] + width
            regions.append(
                SubRegion(
                    grid_index=(ix, iz),
                    bounds=SceneBounds(lo, hi),
                    point_ids=cell_ids,
                    matched_image_ids=np.array(sorted(image_union), dtype=np.int64),
                )
            )
    return PartitionResult(
        grid_size=grid_size,
        bounds=bounds,
        regions=regions,
        dropped=dropped,
        num_discarded_points=num_discarded,
    )


def retain_subregions(
    result: PartitionResult,
    total_points: int,
    total_images: int,
    min_fraction: float = 0.10,
) -> PartitionResult:
    """Drop under-populated regions.

    A region is kept when both its point count and its matched-image
    count reach ``min_fraction`` of the per-cell average (the respective
    total divided by the number of grid cells).
    """
    cells = result.grid_size * result.grid_size
    point_threshold = min_fraction * total_points / cells
    image_threshold = min_fraction * total_images / cells
    kept: list[SubRegion] = []
    dropped = list(result.dropped)
    for region in result.regions:
        reasons = []
        if region.num_points < point_threshold:
            reasons.append("points")
        if region.num_images < image_threshold:
            reasons.append("images")
        if reasons:
            dropped.append(
                DroppedRegion(
                    region.grid_index,
                    "+".join(reasons),
                    region.num_points,
                    region.num_images,
                )
            )
            logger.info(
                "dropping region %s: %s below %.3g/%.3g",
                region.grid_index,
                "+".join(reasons),
                point_threshold,
                image_threshold,
            )
        else:
            kept.append(region)
    return PartitionResult(
        grid_size=result.grid_size,
        bounds=result.bounds,
        regions=kept,
        dropped=dropped,
        num_discarded_points=result.num_discarded_points,
    )


def expand_region_bounds(bounds: SceneBounds, factor: float = 2.0) -> SceneBounds:
    """Scale the xz footprint about its center; the vertical axis is kept.

    The expanded box is the optimization extent of a region: content just
    outside the cell still influences it, so each region trains against a
    footprint ``factor`` times its cell on each ground axis.
    """
    lo = bounds.min_corner.copy()
    hi = bounds.max_corner.copy()
    center = bounds.center
    half = 0.5 * bounds.extent
    for axis in GRID_AXES:
        lo[axis] = center[axis] - factor * half[axis]
        hi[axis] = center[axis] + factor * half[axis]
    return SceneBounds(lo, hi)


def attach_init_bounds(result: PartitionResult, factor: float = 2.0) -> None:
    """Store expanded bounds on every kept region in place."""
    for region in result.regions:
        region.init_bounds = expand_region_bounds(region.bounds, factor)


def run_partition(
    points: dict[int, Point3D],
    num_images: int,
    cfg: PartitionConfig,
) -> PartitionResult:
    """Full stage: error filter, bounds refinement, grid, retention, expansion."""
    kept_ids = filter_points_by_error(points, cfg.density.max_reproj_error)
    if not kept_ids:
        raise EmptyAfterFilter(
            f"no point has reprojection error <= {cfg.density.max_reproj_error}"
        )
    positions = np.array([points[pid].xyz for pid in kept_ids])
    bounds = refine_scene_bounds(positions, cfg.density)
    grid_size = cfg.grid_size or choose_grid_size(num_images)
    result = partition_points(points, kept_ids, bounds, grid_size)
    in_grid_points = sum(r.num_points for r in result.regions)
    result = retain_subregions(
        result, in_grid_points, num_images, cfg.min_region_fraction
    )
    attach_init_bounds(result, cfg.expand_factor)
    return result
