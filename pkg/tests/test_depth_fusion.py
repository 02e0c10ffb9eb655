"""Depth-map aggregation, reprojection, fusion, and window tests."""

import numpy as np
import pytest

from aeromesh.colmap import Camera
from aeromesh.depth_fusion import (
    DepthMap,
    FusionConfig,
    LossWeights,
    NormalMap,
    RaySamples,
    adaptive_window,
    backproject_window,
    compose_loss,
    depth_reprojection_error,
    fuse_depth,
    mean_depth_gradient,
    normal_consistency_error,
    ray_depth_mean,
    ray_depth_median,
)
from aeromesh.errors import (
    InvalidSourceDepth,
    NonFinite,
    OutOfSourceFrustum,
    ZeroNormal,
)
from aeromesh.geometry import Pose, project_points
from aeromesh.pfm import read_pfm, write_pfm


def camera(fx=100.0, fy=100.0, cx=16.0, cy=12.0, w=33, h=25):
    return Camera(1, "PINHOLE", w, h, np.array([fx, fy, cx, cy]))


def shifted_pose(dx=0.0, dy=0.0, dz=0.0):
    """Identity-rotation pose whose center sits at (dx, dy, dz)."""
    return Pose(np.eye(3), -np.array([dx, dy, dz]))


class TestRayAggregation:
    def test_weighted_mean(self):
        samples = RaySamples([0.5, 0.25], [2.0, 4.0], [1.0, 1.0])
        expected = 2.0 / (0.75 + 1e-8)
        assert ray_depth_mean(samples) == pytest.approx(expected, rel=1e-15)

    def test_mean_of_empty_is_zero(self):
        samples = RaySamples([], [], [])
        assert ray_depth_mean(samples) == 0.0

    def test_median_takes_farthest_over_half_transmittance(self):
        samples = RaySamples(
            [1, 1, 1, 1], [1.0, 2.0, 3.0, 4.0], [0.9, 0.7, 0.55, 0.3]
        )
        assert ray_depth_median(samples) == 3.0

    def test_median_threshold_is_strict(self):
        samples = RaySamples([1, 1], [1.0, 2.0], [0.9, 0.5])
        assert ray_depth_median(samples) == 1.0

    def test_median_invalid_marker(self):
        samples = RaySamples([1, 1], [1.0, 2.0], [0.5, 0.2])
        assert ray_depth_median(samples) is None


class TestReprojectionError:
    def test_identical_views_zero_error(self):
        cam = camera()
        depth = DepthMap(np.full((25, 33), 2.0), cam, shifted_pose())
        (u, v), err = depth_reprojection_error(depth, depth, (12, 16))
        assert (u, v) == pytest.approx((16.0, 12.0))
        assert err == pytest.approx(0.0, abs=1e-12)

    def test_translated_fronto_parallel_plane(self):
        cam = camera()
        d = 2.0
        baseline = 0.1
        ref = DepthMap(np.full((25, 33), d), cam, shifted_pose())
        src = DepthMap(np.full((25, 33), d), cam, shifted_pose(dx=baseline))
        (u, v), err = depth_reprojection_error(ref, src, (12, 16))
        # Disparity: fx * baseline / depth = 100 * 0.1 / 2 = 5 pixels.
        assert u == pytest.approx(16.0 - 5.0)
        assert v == pytest.approx(12.0)
        assert err == pytest.approx(0.0, abs=1e-12)

    def test_depth_difference_measured(self):
        cam = camera()
        ref = DepthMap(np.full((25, 33), 2.0), cam, shifted_pose())
        src = DepthMap(np.full((25, 33), 2.3), cam, shifted_pose())
        _, err = depth_reprojection_error(ref, src, (5, 7))
        assert err == pytest.approx(0.3, rel=1e-12)

    def test_out_of_frustum(self):
        cam = camera()
        ref = DepthMap(np.full((25, 33), 2.0), cam, shifted_pose())
        src = DepthMap(np.full((25, 33), 2.0), cam, shifted_pose(dx=5.0))
        with pytest.raises(OutOfSourceFrustum):
            depth_reprojection_error(ref, src, (12, 16))

    def test_behind_source(self):
        cam = camera()
        ref = DepthMap(np.full((25, 33), 2.0), cam, shifted_pose())
        src = DepthMap(np.full((25, 33), 2.0), cam, shifted_pose(dz=10.0))
        with pytest.raises(OutOfSourceFrustum):
            depth_reprojection_error(ref, src, (12, 16))

    def test_invalid_source_neighborhood(self):
        cam = camera()
        ref = DepthMap(np.full((25, 33), 2.0), cam, shifted_pose())
        src_values = np.full((25, 33), 2.0)
        src_values[11:14, 15:18] = 0.0  # invalid hole around the target
        src = DepthMap(src_values, cam, shifted_pose())
        with pytest.raises(InvalidSourceDepth):
            depth_reprojection_error(ref, src, (12, 16))

    def test_subpixel_bilinear_sample(self):
        cam = Camera(1, "PINHOLE", 4, 4, np.array([1.0, 1.0, 0.0, 0.0]))
        ref = DepthMap(np.full((4, 4), 1.5), cam, shifted_pose())
        src_vals = np.array(
            [
                [2.0, 4.0, 1.0, 1.0],
                [0.0, 8.0, 1.0, 1.0],
                [1.0, 1.0, 1.0, 1.0],
                [1.0, 1.0, 1.0, 1.0],
            ]
        )
        # Shift the source so ref pixel (0, 0) lands at u = 0.5, v = 0.
        src = DepthMap(src_vals, cam, shifted_pose(dx=-0.75))
        (u, v), err = depth_reprojection_error(ref, src, (0, 0))
        assert (u, v) == pytest.approx((0.5, 0.0))
        # Only row 0 carries weight: sample = (2 + 4) / 2 = 3.
        assert err == pytest.approx(abs(1.5 - 3.0))


class TestBilinearSample:
    def sample(self, values, valid, u, v):
        from aeromesh.depth_fusion import _bilinear_sample

        out, ok = _bilinear_sample(
            np.asarray(values, dtype=float),
            np.asarray(valid, dtype=bool),
            np.array([float(u)]),
            np.array([float(v)]),
        )
        return out[0], ok[0]

    def test_all_valid_center(self):
        values = [[1.0, 3.0], [5.0, 7.0]]
        valid = [[True, True], [True, True]]
        out, ok = self.sample(values, valid, 0.5, 0.5)
        assert ok and out == pytest.approx(4.0)

    def test_invalid_neighbor_renormalizes(self):
        values = [[1.0, 3.0], [5.0, 7.0]]
        valid = [[False, True], [True, True]]
        out, ok = self.sample(values, valid, 0.5, 0.5)
        assert ok
        assert out == pytest.approx((3.0 + 5.0 + 7.0) / 3.0)

    def test_all_invalid_flags_sample(self):
        values = [[1.0, 3.0], [5.0, 7.0]]
        valid = [[False, False], [False, False]]
        out, ok = self.sample(values, valid, 0.5, 0.5)
        assert not ok and np.isnan(out)

    def test_integer_coordinate_hits_pixel(self):
        values = [[1.0, 3.0], [5.0, 7.0]]
        valid = [[True, False], [False, False]]
        out, ok = self.sample(values, valid, 0.0, 0.0)
        assert ok and out == 1.0


def plane_maps(n_sources=3, noise=0.0, seed=0, h=16, w=16, depth=2.0):
    """Fronto-parallel plane seen by a ref and laterally shifted sources."""
    rng = np.random.default_rng(seed)
    cam = Camera(1, "PINHOLE", w, h, np.array([50.0, 50.0, (w - 1) / 2, (h - 1) / 2]))
    ref = DepthMap(np.full((h, w), depth), cam, shifted_pose())
    sources = []
    for k in range(n_sources):
        vals = np.full((h, w), depth)
        if noise:
            vals = vals + rng.normal(scale=noise, size=(h, w))
        dx = 0.02 * (k + 1) * (-1) ** k
        sources.append(DepthMap(vals, cam, shifted_pose(dx=dx)))
    return ref, sources


class TestFusion:
    def test_perfect_sources_reproduce_depth(self):
        ref, sources = plane_maps()
        fused = fuse_depth(ref, sources, FusionConfig())
        inner = fused.depth.valid
        assert inner.any()
        np.testing.assert_allclose(fused.depth.values[inner], 2.0, atol=1e-9)

    def test_matches_scalar_oracle(self):
        from aeromesh.depth_fusion import _bilinear_sample

        ref, sources = plane_maps(n_sources=2, noise=0.05, seed=3)
        cfg = FusionConfig()
        fused = fuse_depth(ref, sources, cfg)
        for row in range(ref.height):
            for col in range(ref.width):
                num = den = 0.0
                for src in sources:
                    try:
                        (u, v), err = depth_reprojection_error(ref, src, (row, col))
                    except (OutOfSourceFrustum, InvalidSourceDepth):
                        continue
                    if err > cfg.error_cap:
                        continue
                    weight = np.exp(-err / cfg.sigma**2)
                    sampled, _ = _bilinear_sample(
                        src.values, src.valid, np.array([u]), np.array([v])
                    )
                    num += weight * sampled[0]
                    den += weight
                if den > 0:
                    assert fused.depth.values[row, col] == pytest.approx(
                        num / den, rel=1e-9
                    )
                else:
                    assert not fused.depth.valid[row, col]

    def test_fusion_beats_every_single_source(self):
        ref, sources = plane_maps(n_sources=3, noise=0.02, seed=11)
        fused = fuse_depth(ref, sources, FusionConfig())
        ok = fused.depth.valid
        fused_err = np.abs(fused.depth.values - 2.0)[ok].mean()
        for src in sources:
            src_err = np.abs(src.values - 2.0).mean()
            assert fused_err < src_err

    def test_error_cap_drops_outlier_source(self):
        ref, sources = plane_maps(n_sources=2)
        sources[1] = DepthMap(
            np.full_like(sources[1].values, 50.0), sources[1].camera, sources[1].pose
        )
        fused = fuse_depth(ref, sources, FusionConfig())
        ok = fused.depth.valid
        np.testing.assert_allclose(fused.depth.values[ok], 2.0, atol=1e-9)
        # The outlier source never survives anywhere.
        assert np.all(np.isnan(fused.source_errors[1]))
        assert np.all(fused.num_sources[ok] == 1)

    def test_no_surviving_source_invalidates_pixel(self):
        ref, sources = plane_maps(n_sources=1)
        sources[0] = DepthMap(
            np.zeros_like(sources[0].values), sources[0].camera, sources[0].pose
        )
        fused = fuse_depth(ref, sources, FusionConfig())
        assert not fused.depth.valid.any()

    def test_squared_error_flag_changes_weights(self):
        cfg_linear = FusionConfig()
        cfg_squared = FusionConfig(squared_error=True)
        e = 0.5
        assert np.exp(-e / 1.0) != np.exp(-(e**2) / 1.0)
        ref, sources = plane_maps(n_sources=2, noise=0.3, seed=9)
        a = fuse_depth(ref, sources, cfg_linear).depth.values
        b = fuse_depth(ref, sources, cfg_squared).depth.values
        assert not np.allclose(a, b)

    def test_fused_is_convex_combination_of_sources(self):
        ref, sources = plane_maps(n_sources=3, noise=0.05, seed=13)
        fused = fuse_depth(ref, sources, FusionConfig())
        ok = fused.depth.valid
        lo = min(src.values.min() for src in sources)
        hi = max(src.values.max() for src in sources)
        assert np.all(fused.depth.values[ok] >= lo - 1e-12)
        assert np.all(fused.depth.values[ok] <= hi + 1e-12)


class TestMeanGradientAndWindow:
    def map_from(self, values, valid=None):
        values = np.asarray(values, dtype=float)
        h, w = values.shape
        cam = Camera(1, "PINHOLE", w, h, np.array([10.0, 10.0, w / 2, h / 2]))
        return DepthMap(values, cam, shifted_pose(), valid)

    def test_linear_ramp_gradient(self):
        cols = np.arange(6, dtype=float)
        values = np.tile(2.0 * cols, (5, 1)) + 1.0
        assert mean_depth_gradient(self.map_from(values)) == pytest.approx(2.0)

    def test_flat_map_gradient_zero(self):
        assert mean_depth_gradient(self.map_from(np.full((7, 9), 3.0))) == 0.0

    def test_invalid_pixels_count_in_denominator(self):
        cols = np.arange(6, dtype=float)
        values = np.tile(2.0 * cols, (5, 1)) + 1.0
        valid = np.ones((5, 6), dtype=bool)
        valid[2, 3] = False
        result = mean_depth_gradient(self.map_from(values, valid))
        # Scalar re-derivation with the documented neighbor rules.
        expected = 0.0
        for r in range(5):
            for c in range(6):
                if not valid[r, c]:
                    continue
                def diff(axis):
                    if axis == 0:
                        prev = (r, c - 1) if c - 1 >= 0 else None
                        nxt = (r, c + 1) if c + 1 < 6 else None
                    else:
                        prev = (r - 1, c) if r - 1 >= 0 else None
                        nxt = (r + 1, c) if r + 1 < 5 else None
                    p_ok = prev is not None and valid[prev]
                    n_ok = nxt is not None and valid[nxt]
                    if p_ok and n_ok:
                        return (values[nxt] - values[prev]) / 2
                    if n_ok:
                        return values[nxt] - values[r, c]
                    if p_ok:
                        return values[r, c] - values[prev]
                    return 0.0
                expected += np.hypot(diff(0), diff(1))
        expected /= 30
        assert result == pytest.approx(expected, rel=1e-12)

    def test_window_half_size_at_unit_scale(self):
        # Mean gradient 0.0099 makes gain / (g + eps) = 1: half-size window.
        cols = np.arange(100, dtype=float)
        values = np.tile(0.0099 * cols, (100, 1)) + 5.0
        win_h, win_w, mask = adaptive_window(self.map_from(values), FusionConfig())
        assert (win_h, win_w) == (50, 50)
        assert mask.sum() == 2500
        rows, cols_idx = np.nonzero(mask)
        assert rows.min() == 25 and rows.max() == 74
        assert cols_idx.min() == 25 and cols_idx.max() == 74

    def test_flat_map_opens_full_window(self):
        values = np.full((40, 60), 7.0)
        win_h, win_w, mask = adaptive_window(self.map_from(values), FusionConfig())
        assert (win_h, win_w) == (40, 60)
        assert mask.all()

    def test_rounding_is_half_up_and_clamped(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            h = int(rng.integers(4, 30))
            w = int(rng.integers(4, 30))
            slope = float(rng.uniform(0, 0.3))
            values = np.tile(slope * np.arange(w, dtype=float), (h, 1)) + 1.0
            dm = self.map_from(values)
            cfg = FusionConfig()
            win_h, win_w, mask = adaptive_window(dm, cfg)
            g = mean_depth_gradient(dm)
            scale = cfg.window_gain / (g + cfg.window_eps)
            exp_h = min(max(int(np.floor(scale * h / 2 + 0.5)), 1), h)
            exp_w = min(max(int(np.floor(scale * w / 2 + 0.5)), 1), w)
            assert (win_h, win_w) == (exp_h, exp_w)
            assert mask.sum() == exp_h * exp_w


class TestBackprojectWindow:
    def test_round_trip_and_mask_filtering(self):
        rng = np.random.default_rng(8)
        cam = camera(w=12, h=10, cx=5.5, cy=4.5, fx=20.0, fy=20.0)
        values = rng.uniform(1.0, 5.0, size=(10, 12))
        values[0, 0] = 0.0  # invalid
        pose = Pose(np.eye(3), np.array([0.3, -0.2, 0.1]))
        dm = DepthMap(values, cam, pose)
        mask = np.zeros((10, 12), dtype=bool)
        mask[:5] = True
        points, pixels = backproject_window(dm, mask)
        assert len(points) == int((dm.valid & mask).sum())
        uv, depth, in_front = project_points(cam, pose, points)
        np.testing.assert_allclose(uv[:, 0], pixels[:, 1], atol=1e-9)
        np.testing.assert_allclose(uv[:, 1], pixels[:, 0], atol=1e-9)
        np.testing.assert_allclose(depth, values[pixels[:, 0], pixels[:, 1]], atol=1e-12)


class TestNormalConsistency:
    def test_parallel_orthogonal_opposite(self):
        assert normal_consistency_error([0, 0, 1], [0, 0, 2.5]) == pytest.approx(0.0)
        assert normal_consistency_error([1, 0, 0], [0, 1, 0]) == pytest.approx(1.0)
        assert normal_consistency_error([0, 0, 1], [0, 0, -1]) == pytest.approx(2.0)

    def test_range(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(100, 3))
        b = rng.normal(size=(100, 3))
        err = normal_consistency_error(a, b)
        assert np.all(err >= 0.0) and np.all(err <= 2.0)

    def test_zero_normal_raises(self):
        with pytest.raises(ZeroNormal):
            normal_consistency_error([0, 0, 0], [0, 0, 1])


class TestComposeLoss:
    def test_weighted_sum(self):
        value = compose_loss(2.0, 1.0, 0.3, 0.4)
        assert value == pytest.approx(0.01 * 2.0 + 0.1 * 1.0 + 0.3 + 0.4, rel=1e-15)

    def test_custom_weights(self):
        weights = LossWeights(depth_weight=0.5, normal_weight=0.25)
        assert compose_loss(1.0, 1.0, 0.0, 0.0, weights) == pytest.approx(0.75)

    def test_non_finite_raises(self):
        with pytest.raises(NonFinite):
            compose_loss(np.nan, 0.0, 0.0, 0.0)
        with pytest.raises(NonFinite):
            compose_loss(0.0, np.inf, 0.0, 0.0)


class TestPfm:
    def test_depth_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        data = rng.uniform(0.5, 9.0, size=(7, 11)).astype(np.float32)
        data[2, 3] = 0.0
        path = tmp_path / "depth.pfm"
        write_pfm(path, data)
        np.testing.assert_array_equal(read_pfm(path), data)

    def test_normal_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(5, 6, 3)).astype(np.float32)
        path = tmp_path / "normals.pfm"
        write_pfm(path, data)
        np.testing.assert_array_equal(read_pfm(path), data)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "map.pfm"
        write_pfm(path, np.zeros((3, 4), dtype=np.float32))
        raw = path.read_bytes()
        assert raw.startswith(b"Pf\n4 3\n-1.0\n")
        assert len(raw) == len(b"Pf\n4 3\n-1.0\n") + 3 * 4 * 4

    def test_bottom_up_row_order(self, tmp_path):
        # The first stored row is the bottom image row.
        data = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        path = tmp_path / "rows.pfm"
        write_pfm(path, data)
        raw = path.read_bytes()
        pixels = np.frombuffer(raw[len(b"Pf\n2 2\n-1.0\n") :], dtype="<f4")
        np.testing.assert_array_equal(pixels, [3.0, 4.0, 1.0, 2.0])

    def test_depth_map_pfm_round_trip(self, tmp_path):
        cam = camera(w=11, h=7)
        values = np.random.default_rng(6).uniform(1, 4, size=(7, 11))
        values[0, 0] = -2.0  # invalid by sign
        dm = DepthMap(values, cam, shifted_pose())
        path = tmp_path / "dm.pfm"
        dm.write_pfm(path)
        loaded = DepthMap.from_pfm(path, cam, shifted_pose())
        assert not loaded.valid[0, 0]
        np.testing.assert_allclose(
            loaded.values[dm.valid], values[dm.valid].astype(np.float32), rtol=1e-7
        )

    def test_normal_map_zero_is_invalid(self):
        values = np.zeros((2, 2, 3))
        values[0, 0] = [0, 0, 5.0]
        nm = NormalMap(values)
        assert nm.valid[0, 0]
        assert not nm.valid[1, 1]
        np.testing.assert_allclose(nm.values[0, 0], [0, 0, 1.0])
