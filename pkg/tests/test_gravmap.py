import numpy as np
import pytest

from gravkit.demos import SubGoal
from gravkit.gravmap import (DegenerateWorkspace, GravMapParams, Workspace, augment_offset,
                             build_avoidance_map, build_cost_map, build_gripper_map,
                             distance_field, downsample, farthest_point_sampling,
                             gaussian_smooth, generate_gravmap, gmap_to_json, load_gmap,
                             save_field_slice_pgm, save_gmap, voxel_center, world_to_voxel)

from oracles import fps_oracle, gaussian3d_oracle

WS = Workspace()
SUB = SubGoal(g_pos=[0.5, 0.5, 0.5], g_open=1, g_rot=[1, 0, 0, 0, 1, 0])


def small_params(map_size=20, num_points=32, **kw):
    return GravMapParams(map_size=map_size, downsample=kw.pop("downsample", 4),
                         num_points=num_points, **kw)


def empty_occ(s):
    return np.zeros((s, s, s), dtype=bool)


class TestWorldToVoxel:
    def test_center(self):
        assert world_to_voxel((0.5, 0.5, 0.5), WS, 100) == (50, 50, 50)

    def test_min_corner(self):
        assert world_to_voxel(WS.min, WS, 100) == (0, 0, 0)

    def test_max_clamps_to_last_voxel(self):
        assert world_to_voxel(WS.max, WS, 100) == (99, 99, 99)

    def test_out_of_bounds_clamped(self):
        assert world_to_voxel((-3.0, 0.5, 7.0), WS, 100) == (0, 50, 99)

    def test_degenerate_workspace(self):
        with pytest.raises(DegenerateWorkspace):
            Workspace((0, 0, 0), (1, 0, 1))


class TestDistanceField:
    def test_zero_at_center(self):
        d = distance_field(10, (3, 4, 5))
        assert d[3, 4, 5] == 0.0

    def test_analytic_corner_3cube(self):
        d = distance_field(3, (1, 1, 1))
        assert d[0, 0, 0] == pytest.approx(np.sqrt(3.0), abs=1e-12)

    def test_max_corner_100cube(self):
        d = distance_field(100, (0, 0, 0))
        assert d.max() == pytest.approx(np.sqrt(3 * 99**2), abs=1e-9)
        assert d.max() == pytest.approx(171.473, abs=1e-3)


class TestGaussianSmooth:
    def test_constant_field_unchanged(self):
        field = np.full((12, 12, 12), 0.7)
        out = gaussian_smooth(field, 2.0)
        np.testing.assert_allclose(out, field, atol=1e-6)

    def test_sigma_zero_identity(self):
        field = np.random.default_rng(0).random((8, 8, 8))
        np.testing.assert_array_equal(gaussian_smooth(field, 0.0), field)

    def test_impulse_matches_direct_convolution(self):
        field = np.zeros((15, 15, 15))
        field[7, 7, 7] = 1.0
        out = gaussian_smooth(field, 2.0)
        assert out.sum() == pytest.approx(1.0, abs=1e-3)
        np.testing.assert_allclose(out, gaussian3d_oracle(field, 2.0), atol=1e-6)

    def test_random_field_with_edges_matches_oracle(self, rng):
        field = rng.random((9, 9, 9))
        np.testing.assert_allclose(gaussian_smooth(field, 1.0),
                                   gaussian3d_oracle(field, 1.0), atol=1e-6)


class TestAvoidanceMap:
    def test_empty_occupancy(self):
        params = small_params()
        out = build_avoidance_map(empty_occ(20), (10, 10, 10), params)
        assert not out.any()

    def test_occupied_voxel_inside_clear_radius_cleared(self):
        # distance 10 < 0.15 * 100 = 15 from the sub-goal voxel
        params = GravMapParams()
        occ = empty_occ(100)
        occ[60, 50, 50] = True
        out = build_avoidance_map(occ, (50, 50, 50), params)
        assert not out.any()

    def test_far_voxel_smoothed_bump(self):
        params = small_params(sigma_avoid=1.5, avoid_clear_frac=0.15)
        occ = empty_occ(20)
        occ[16, 16, 16] = True
        out = build_avoidance_map(occ, (2, 2, 2), params)
        raw = empty_occ(20).astype(float)
        raw[16, 16, 16] = 1.0
        np.testing.assert_allclose(out, gaussian3d_oracle(raw, 1.5), atol=1e-6)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.max() > 0.0


class TestCostMap:
    def test_empty_scene_extremes(self):
        d = distance_field(20, (5, 5, 5))
        cost = build_cost_map(d, np.zeros_like(d))
        assert cost[5, 5, 5] == 0.0
        assert cost.max() == 1.0
        assert np.argmax(cost == 1.0) == np.argmax(d == d.max())

    def test_monotone_in_distance(self):
        d = distance_field(20, (5, 5, 5))
        cost = build_cost_map(d, np.zeros_like(d))
        order = np.argsort(d.ravel())
        assert np.all(np.diff(cost.ravel()[order]) >= -1e-12)

    def test_obstacle_raises_cost_at_equal_distance(self):
        d = distance_field(30, (15, 15, 15))
        m_a = np.zeros_like(d)
        m_a[25, 15, 15] = 0.8  # bump at distance 10 on +x
        cost = build_cost_map(d, m_a)
        assert cost[25, 15, 15] > cost[5, 15, 15]  # same distance, no bump at -x

    def test_degenerate_returns_zeros(self):
        d = np.zeros((4, 4, 4))
        out = build_cost_map(d, np.zeros_like(d))
        assert not out.any()


class TestGripperMap:
    def test_radius_region_carries_goal_state(self):
        d = distance_field(20, (10, 10, 10))
        out = build_gripper_map(d, g_open=0, g_open_init=1, params=small_params())
        inside = d <= 3.0
        assert np.all(out[inside] == 0.0)
        assert np.all(out[~inside] == 1.0)

    def test_equal_states_constant(self):
        d = distance_field(10, (5, 5, 5))
        out = build_gripper_map(d, 1, 1, small_params(map_size=10, num_points=8, downsample=2))
        assert np.all(out == 1.0)

    def test_closed_value_variant(self):
        params = small_params(closed_value=-1.0)
        d = distance_field(20, (10, 10, 10))
        out = build_gripper_map(d, g_open=0, g_open_init=1, params=params)
        assert np.all(out[d <= 3.0] == -1.0)


class TestDownsample:
    def test_shape_100_to_25(self):
        out = downsample(np.zeros((100, 100, 100)), 4)
        assert out.shape == (25, 25, 25)

    def test_constant_stays_constant(self):
        out = downsample(np.full((20, 20, 20), 3.5), 4)
        assert np.all(out == 3.5)

    def test_index_arithmetic(self, rng):
        field = rng.random((20, 20, 20))
        out = downsample(field, 4)
        assert out[1, 2, 3] == field[4, 8, 12]


class TestFPS:
    def test_colinear_three_points(self):
        idx = farthest_point_sampling([(0, 0, 0), (1, 0, 0), (2, 0, 0)], 2)
        assert list(idx) == [1, 0]  # centroid-nearest, then lowest-index tie

    def test_identity_when_budget_covers_all(self):
        pts = np.random.default_rng(0).random((10, 3))
        assert list(farthest_point_sampling(pts, 10)) == list(range(10))
        assert list(farthest_point_sampling(pts, 20)) == list(range(10))

    def test_matches_bruteforce_oracle(self, rng):
        pts = rng.random((512, 3))
        assert list(farthest_point_sampling(pts, 32)) == fps_oracle(pts, 32)

    def test_greedy_certificate(self, rng):
        pts = rng.random((200, 3))
        sel = list(farthest_point_sampling(pts, 24))
        for t in range(1, len(sel)):
            chosen = sel[:t]
            d2 = ((pts[:, None, :] - pts[chosen][None, :, :]) ** 2).sum(-1).min(axis=1)
            assert d2[sel[t]] >= d2.max() - 1e-12


class TestAugment:
    def test_zero_range_identity(self, rng):
        assert augment_offset((5, 6, 7), 0, 100, rng) == (5, 6, 7)

    def test_offsets_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            out = augment_offset((50, 50, 50), 3, 100, rng)
            assert all(abs(o - 50) <= 3 for o in out)

    def test_clamped_into_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            out = augment_offset((0, 0, 99), 3, 100, rng)
            assert all(0 <= v <= 99 for v in out)

    def test_seeded_reproducible(self):
        a = augment_offset((50, 50, 50), 3, 100, np.random.default_rng(9))
        b = augment_offset((50, 50, 50), 3, 100, np.random.default_rng(9))
        assert a == b


class TestGenerate:
    def test_infer_min_cost_point_near_subgoal(self):
        params = GravMapParams()
        gmap = generate_gravmap(SUB, empty_occ(100), 1, WS, params, "infer")
        cell = WS.extent[0] / params.map_size
        best = gmap.points[np.argmin(gmap.points[:, 3]), :3]
        assert np.all(np.abs(best - SUB.g_pos) <= params.downsample * cell + 1e-9)

    def test_point_count_and_cost_range(self):
        gmap = generate_gravmap(SUB, empty_occ(100), 1, WS, GravMapParams(), "infer")
        assert len(gmap) == 1024
        assert gmap.points[:, 3].min() >= 0.0 and gmap.points[:, 3].max() <= 1.0
        assert np.all(gmap.points[:, :3] >= WS.min) and np.all(gmap.points[:, :3] <= WS.max)

    def test_train_mode_displaces_center_within_range(self):
        params = GravMapParams()
        _, fields = generate_gravmap(SUB, empty_occ(100), 1, WS, params, "train",
                                     seed=5, with_fields=True)
        base = world_to_voxel(SUB.g_pos, WS, params.map_size)
        delta = np.array(fields["center"]) - np.array(base)
        assert np.all(np.abs(delta) <= params.offset_range)

    def test_train_seed_reproducible_and_infer_unperturbed(self):
        params = GravMapParams()
        a = generate_gravmap(SUB, empty_occ(100), 1, WS, params, "train", seed=3)
        b = generate_gravmap(SUB, empty_occ(100), 1, WS, params, "train", seed=3)
        np.testing.assert_array_equal(a.points, b.points)
        _, f1 = generate_gravmap(SUB, empty_occ(100), 1, WS, params, "infer", with_fields=True)
        assert tuple(f1["center"]) == world_to_voxel(SUB.g_pos, WS, params.map_size)

    def test_gripper_dichotomy_on_sampled_points(self):
        params = GravMapParams()
        sub = SubGoal(g_pos=[0.31, 0.62, 0.18], g_open=0, g_rot=[1, 0, 0, 0, 1, 0])
        gmap, fields = generate_gravmap(sub, empty_occ(100), 1, WS, params, "infer",
                                        with_fields=True)
        center = np.array(fields["center"], dtype=float)
        cell = WS.extent / params.map_size
        vox = np.floor((gmap.points[:, :3] - WS.min) / cell)
        d = np.sqrt(((vox - center) ** 2).sum(axis=1))
        grip = gmap.points[:, 4]
        assert set(np.unique(grip)) <= {0.0, 1.0}
        np.testing.assert_array_equal(grip == 0.0, d <= params.gripper_radius)

    def test_occupancy_shape_checked(self):
        with pytest.raises(ValueError):
            generate_gravmap(SUB, empty_occ(50), 1, WS, GravMapParams(), "infer")


class TestSerialization:
    def test_gmap_round_trip(self, tmp_path):
        gmap = generate_gravmap(SUB, empty_occ(100), 1, WS, GravMapParams(), "infer")
        path = tmp_path / "m.gmap"
        save_gmap(gmap, path)
        loaded = load_gmap(path)
        assert len(loaded) == len(gmap)
        np.testing.assert_allclose(loaded.points, gmap.points, atol=1e-6)
        assert loaded.workspace.min == WS.min

    def test_gmap_bytes_deterministic(self, tmp_path):
        gmap = generate_gravmap(SUB, empty_occ(100), 1, WS, GravMapParams(), "infer")
        p1, p2 = tmp_path / "a.gmap", tmp_path / "b.gmap"
        save_gmap(gmap, p1)
        save_gmap(generate_gravmap(SUB, empty_occ(100), 1, WS, GravMapParams(), "infer"), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_json_mirror_parses(self):
        import json
        gmap = generate_gravmap(SUB, empty_occ(100), 1, WS, GravMapParams(), "infer")
        rec = json.loads(gmap_to_json(gmap))
        assert len(rec["points"]) == 1024

    def test_pgm_slice_darkest_at_subgoal(self, tmp_path):
        params = GravMapParams()
        _, fields = generate_gravmap(SUB, empty_occ(100), 1, WS, params, "infer",
                                     with_fields=True)
        ci, cj, ck = fields["center"]
        path = tmp_path / "slice.pgm"
        save_field_slice_pgm(fields["cost"], axis=2, index=ck, path=path)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n100 100\n255\n")
        img = np.frombuffer(blob.split(b"\n255\n", 1)[1], dtype=np.uint8).reshape(100, 100)
        assert divmod(int(np.argmin(img)), 100) == (ci, cj)


def test_voxel_center_round_trip():
    for idx in [(0, 0, 0), (50, 50, 50), (99, 10, 42)]:
        c = voxel_center(idx, WS, 100)
        assert world_to_voxel(c, WS, 100) == idx
