"""Partitioning tests: density filtering, grid assignment, retention."""

import numpy as np
import pytest

from aeromesh.colmap import Point3D
from aeromesh.errors import DegenerateBounds, EmptyAfterFilter
from aeromesh.partition import (
    DensityFilterConfig,
    PartitionConfig,
    PartitionResult,
    SceneBounds,
    SubRegion,
    choose_grid_size,
    expand_region_bounds,
    filter_points_by_error,
    partition_points,
    refine_scene_bounds,
    retain_subregions,
    run_partition,
    voxel_occupancy,
)


def make_point(pid, xyz, error=0.5, track_images=(1, 2)):
    track = np.array([[i, 0] for i in track_images], dtype=np.int64)
    return Point3D(pid, np.asarray(xyz, float), [0, 0, 0], error, track)


class TestErrorFilter:
    def test_threshold_is_inclusive(self):
        points = {
            1: make_point(1, [0, 0, 0], error=0.5),
            2: make_point(2, [0, 0, 0], error=1.5),
            3: make_point(3, [0, 0, 0], error=1.5000001),
            4: make_point(4, [0, 0, 0], error=3.0),
        }
        assert sorted(filter_points_by_error(points, 1.5)) == [1, 2]


class TestVoxelOccupancy:
    def test_floor_indexing(self):
        positions = np.array(
            [[0.1, 0.1, 0.1], [1.9, 0.5, 0.3], [2.1, 0.0, 0.0], [-0.1, 0.0, 0.0]]
        )
        occ = voxel_occupancy(positions, 2.0)
        assert occ == {(0, 0, 0): 2, (1, 0, 0): 1, (-1, 0, 0): 1}


class TestRefineBounds:
    def cfg(self, tau=1.0 / 3.0):
        return DensityFilterConfig(voxel_size=2.0, occupancy_fraction=tau)

    def test_sparse_voxels_dropped(self):
        cluster_a = np.array([[0.2 + 0.1 * k, 0.5, 0.4] for k in range(10)])
        cluster_b = np.array([[10.1 + 0.2 * k, 1.0, 0.6] for k in range(4)])
        cluster_c = np.array([[20.1 + 0.1 * k, 0.2, 0.2] for k in range(3)])
        positions = np.vstack([cluster_a, cluster_b, cluster_c])
        bounds = refine_scene_bounds(positions, self.cfg())
        # Max occupancy 10, threshold 10/3: the 3-point voxel is dropped.
        np.testing.assert_allclose(bounds.min_corner, [0.2, 0.5, 0.4])
        np.testing.assert_allclose(bounds.max_corner, [10.7, 1.0, 0.6])

    def test_threshold_is_strict(self):
        # Max occupancy 9, threshold exactly 3: a count of 3 does not survive.
        cluster_a = np.array([[0.1 + 0.05 * k, 0.0, 0.0] for k in range(9)])
        cluster_c = np.array([[20.1 + 0.1 * k, 0.0, 0.0] for k in range(3)])
        bounds = refine_scene_bounds(np.vstack([cluster_a, cluster_c]), self.cfg())
        assert bounds.max_corner[0] < 20.0

    def test_all_filtered_raises(self):
        positions = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
        with pytest.raises(EmptyAfterFilter):
            refine_scene_bounds(positions, self.cfg(tau=1.0))

    def test_extent_shrinks_as_fraction_grows(self):
        rng = np.random.default_rng(5)
        positions = np.vstack(
            [
                rng.normal(scale=3.0, size=(400, 3)),
                rng.uniform(-40, 40, size=(60, 3)),
            ]
        )
        extents = []
        for tau in (0.0, 0.2, 0.4, 0.6, 0.8):
            bounds = refine_scene_bounds(positions, self.cfg(tau=tau))
            extents.append(bounds.extent)
        for small, large in zip(extents[1:], extents[:-1]):
            assert np.all(small <= large + 1e-12)


class TestGridSize:
    def test_image_count_breakpoints(self):
        assert choose_grid_size(670) == 4
        assert choose_grid_size(999) == 4
        assert choose_grid_size(1000) == 6
        assert choose_grid_size(1500) == 6
        assert choose_grid_size(2582) == 6
        assert choose_grid_size(2999) == 6
        assert choose_grid_size(3000) == 8
        assert choose_grid_size(5871) == 8


class TestPartitionPoints:
    def setup_method(self):
        self.bounds = SceneBounds([0.0, 0.0, 0.0], [4.0, 2.0, 4.0])
        self.points = {
            1: make_point(1, [1, 1, 1], track_images=(1, 2)),
            2: make_point(2, [3, 1, 1], track_images=(4,)),
            3: make_point(3, [1, 1, 3], track_images=(1,)),
            4: make_point(4, [3, 1, 3], track_images=(5, 6)),
            5: make_point(5, [2, 1, 1], track_images=(2, 3)),  # on internal boundary
            6: make_point(6, [4, 1, 4], track_images=(6,)),  # on closing boundary
            7: make_point(7, [5, 1, 1], track_images=(1,)),  # outside x
            8: make_point(8, [1, 5, 1], track_images=(1,)),  # outside y
        }

    def test_cell_assignment(self):
        result = partition_points(self.points, list(self.points), self.bounds, 2)
        by_cell = {r.grid_index: r for r in result.regions}
        assert set(by_cell) == {(0, 0), (1, 0), (0, 1), (1, 1)}
        np.testing.assert_array_equal(by_cell[(0, 0)].point_ids, [1])
        # Half-open cells: the boundary point at x = 2 goes to the upper cell.
        np.testing.assert_array_equal(by_cell[(1, 0)].point_ids, [2, 5])
        np.testing.assert_array_equal(by_cell[(0, 1)].point_ids, [3])
        # The grid's closing boundary stays inside the last cell.
        np.testing.assert_array_equal(by_cell[(1, 1)].point_ids, [4, 6])
        assert result.num_discarded_points == 2

    def test_matched_images_are_track_union(self):
        result = partition_points(self.points, list(self.points), self.bounds, 2)
        by_cell = {r.grid_index: r for r in result.regions}
        np.testing.assert_array_equal(by_cell[(1, 0)].matched_image_ids, [2, 3, 4])
        np.testing.assert_array_equal(by_cell[(1, 1)].matched_image_ids, [5, 6])

    def test_cell_bounds_tile_the_scene(self):
        result = partition_points(self.points, list(self.points), self.bounds, 2)
        for region in result.regions:
            ix, iz = region.grid_index
            np.testing.assert_allclose(region.bounds.min_corner[0], ix * 2.0)
            np.testing.assert_allclose(region.bounds.min_corner[2], iz * 2.0)
            np.testing.assert_allclose(region.bounds.extent[[0, 2]], [2.0, 2.0])
            # Vertical extent is the full scene slab.
            np.testing.assert_allclose(region.bounds.min_corner[1], 0.0)
            np.testing.assert_allclose(region.bounds.max_corner[1], 2.0)

    def test_empty_cells_recorded(self):
        points = {1: make_point(1, [0.5, 1, 0.5])}
        result = partition_points(points, [1], self.bounds, 2)
        assert len(result.regions) == 1
        assert len(result.dropped) == 3
        assert all(d.reason == "empty" for d in result.dropped)

    def test_every_inbounds_point_in_exactly_one_cell(self):
        rng = np.random.default_rng(9)
        points = {
            pid: make_point(pid, rng.uniform(-1, 5, size=3))
            for pid in range(1, 400)
        }
        result = partition_points(points, list(points), self.bounds, 3)
        seen = np.concatenate([r.point_ids for r in result.regions])
        assert len(seen) == len(set(seen))
        inside = [
            pid
            for pid, pt in points.items()
            if bool(self.bounds.contains(pt.xyz[None])[0])
        ]
        assert sorted(seen) == sorted(inside)
        assert result.num_discarded_points == len(points) - len(inside)

    def test_zero_extent_axis_raises(self):
        flat = SceneBounds([0, 0, 0], [4, 2, 0])
        with pytest.raises(DegenerateBounds):
            partition_points(self.points, list(self.points), flat, 2)


class TestRetention:
    def region(self, index, n_points, n_images):
        return SubRegion(
            grid_index=index,
            bounds=SceneBounds([0, 0, 0], [1, 1, 1]),
            point_ids=np.arange(n_points, dtype=np.int64),
            matched_image_ids=np.arange(n_images, dtype=np.int64),
        )

    def test_ten_percent_of_average_rule(self):
        result = PartitionResult(
            grid_size=2,
            bounds=SceneBounds([0, 0, 0], [1, 1, 1]),
            regions=[
                self.region((0, 0), 50, 10),
                self.region((0, 1), 45, 10),
                self.region((1, 0), 3, 10),
                self.region((1, 1), 2, 10),
            ],
            dropped=[],
            num_discarded_points=0,
        )
        # Thresholds: points 0.1 * 100 / 4 = 2.5, images 0.1 * 16 / 4 = 0.4.
        retained = retain_subregions(result, total_points=100, total_images=16)
        kept = {r.grid_index for r in retained.regions}
        assert kept == {(0, 0), (0, 1), (1, 0)}
        dropped = {d.grid_index: d.reason for d in retained.dropped}
        assert dropped == {(1, 1): "points"}

    def test_image_criterion_alone_drops(self):
        result = PartitionResult(
            grid_size=2,
            bounds=SceneBounds([0, 0, 0], [1, 1, 1]),
            regions=[self.region((0, 0), 50, 1), self.region((0, 1), 50, 10)],
            dropped=[],
            num_discarded_points=0,
        )
        # Image threshold 0.1 * 80 / 4 = 2: one image is not enough.
        retained = retain_subregions(result, total_points=100, total_images=80)
        dropped = {d.grid_index: d.reason for d in retained.dropped}
        assert dropped == {(0, 0): "images"}

    def test_both_criteria_reported(self):
        result = PartitionResult(
            grid_size=2,
            bounds=SceneBounds([0, 0, 0], [1, 1, 1]),
            regions=[self.region((0, 0), 1, 1)],
            dropped=[],
            num_discarded_points=0,
        )
        retained = retain_subregions(result, total_points=400, total_images=400)
        assert retained.dropped[0].reason == "points+images"


class TestExpandBounds:
    def test_doubles_footprint_keeps_height(self):
        bounds = SceneBounds([0.0, 1.0, 2.0], [10.0, 3.0, 6.0])
        expanded = expand_region_bounds(bounds, factor=2.0)
        np.testing.assert_allclose(expanded.min_corner, [-5.0, 1.0, 0.0])
        np.testing.assert_allclose(expanded.max_corner, [15.0, 3.0, 8.0])

    def test_factor_one_is_identity(self):
        bounds = SceneBounds([-3.0, 0.0, 1.0], [4.0, 2.0, 9.0])
        expanded = expand_region_bounds(bounds, factor=1.0)
        np.testing.assert_allclose(expanded.min_corner, bounds.min_corner)
        np.testing.assert_allclose(expanded.max_corner, bounds.max_corner)


class TestRunPartition:
    def test_full_stage(self):
        rng = np.random.default_rng(17)
        points = {}
        pid = 1
        # Dense core plus far outliers with poor reprojection quality.
        for _ in range(500):
            points[pid] = make_point(
                pid,
                rng.normal(scale=4.0, size=3) + [10, 0, 10],
                error=float(rng.uniform(0, 1.4)),
                track_images=tuple(rng.choice(30, size=2, replace=False) + 1),
            )
            pid += 1
        for _ in range(30):
            points[pid] = make_point(
                pid, rng.uniform(-200, 200, size=3), error=float(rng.uniform(2, 9))
            )
            pid += 1
        result = run_partition(points, num_images=30, cfg=PartitionConfig())
        assert result.grid_size == 4
        assert result.regions
        for region in result.regions:
            assert region.init_bounds is not None
            np.testing.assert_allclose(
                region.init_bounds.extent[[0, 2]], 2.0 * region.bounds.extent[[0, 2]]
            )
            np.testing.assert_allclose(
                region.init_bounds.extent[1], region.bounds.extent[1]
            )
        # High-error outliers never partition.
        for region in result.regions:
            for point_id in region.point_ids:
                assert points[int(point_id)].error <= 1.5
