import math

import numpy as np
import pytest

from firesim.geometry import Pose2D, camera_pose
from firesim.sensors import (OdometryState, SceneGeometry, render_depth,
                             render_thermal, simulate_scan2d, simulate_scan3d,
                             step_odometry, stream_rng)
from firesim.world import (DriftParams, WallSegment, apparent_temperature,
                           default_scenario)


@pytest.fixture(scope="module")
def scenario():
    return default_scenario()


@pytest.fixture(scope="module")
def scene(scenario):
    return SceneGeometry(scenario)


def on_axis_camera(scenario, range_m=1.5):
    """Camera looking straight at the default target from range_m."""
    t = scenario.targets[0].element_center.translation
    return camera_pose((t[0], t[1] - range_m, t[2]), math.pi / 2)


class TestRenderThermal:
    def test_hot_blob_size_and_temperature(self, scenario, scene):
        img = render_thermal(scenario, on_axis_camera(scenario), 0, scene=scene)
        hot = img.values >= 50.0
        cols = np.flatnonzero(hot.any(axis=0))
        rows = np.flatnonzero(hot.any(axis=1))
        assert 3 <= len(cols) <= 4          # angular-size oracle: 3.44 px
        expected = apparent_temperature(120.0, 0.55)
        assert img.values[hot].mean() == pytest.approx(expected, abs=1.0)
        assert np.median(img.values[~hot]) == pytest.approx(scenario.ambient_temp, abs=0.5)

    def test_no_target_in_frustum_is_cold(self, scenario, scene):
        cam = camera_pose((0.0, 5.0, 1.0), -math.pi / 2)   # facing south wall
        img = render_thermal(scenario, cam, 1, scene=scene)
        sigma = scenario.sensors.thermal_noise_c
        assert img.values.max() < scenario.ambient_temp + 5 * sigma

    def test_extinguished_target_matches_cold_statistics(self, scenario, scene):
        import copy
        sc = copy.deepcopy(scenario)
        sc.targets[0].extinguished = True
        img = render_thermal(sc, on_axis_camera(sc), 2, scene=SceneGeometry(sc))
        sigma = sc.sensors.thermal_noise_c
        assert img.values.max() < sc.ambient_temp + 5 * sigma

    def test_floor_clamp(self, scenario, scene):
        img = render_thermal(scenario, on_axis_camera(scenario), 3, scene=scene)
        sigma = scenario.sensors.thermal_noise_c
        assert img.values.min() >= scenario.ambient_temp - 3 * sigma

    def test_deterministic_per_frame_and_seed(self, scenario, scene):
        cam = on_axis_camera(scenario)
        a = render_thermal(scenario, cam, 5, scene=scene)
        b = render_thermal(scenario, cam, 5, scene=scene)
        c = render_thermal(scenario, cam, 6, scene=scene)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_opacity_no_hot_pixels_without_aperture_los(self, scenario, scene):
        # camera behind the target wall: no line of sight through the disc
        t = scenario.targets[0].element_center.translation
        cam = camera_pose((t[0], t[1] + 1.5, t[2]), -math.pi / 2)
        img = render_thermal(scenario, cam, 7, scene=scene)
        assert (img.values >= 50.0).sum() == 0


class TestRenderDepth:
    def test_flat_wall_range(self, scenario, scene):
        cam = camera_pose((0.0, 8.0, 1.0), math.pi / 2)    # north wall at 2 m
        img = render_depth(scenario, cam, 0, scene=scene)
        cy, cx = img.values.shape[0] // 2, img.values.shape[1] // 2
        assert img.values[cy, cx] == pytest.approx(2.0, abs=0.03)

    def test_plexiglass_ambiguity_band(self, scenario, scene):
        # on-axis pixels below the aperture hit the plate at 1.35 m
        t = scenario.targets[0].element_center.translation
        cam = camera_pose((t[0], t[1] - 1.5, t[2] - 0.2), math.pi / 2)
        img = render_depth(scenario, cam, 1, scene=scene)
        cy, cx = img.values.shape[0] // 2, img.values.shape[1] // 2
        v = img.values[cy, cx]
        gap = scenario.targets[0].front_plate_offset
        assert 1.35 <= v <= 1.35 + gap

    def test_long_range_is_no_return(self, scenario, scene):
        cam = camera_pose((0.0, -15.0, 1.0), -math.pi / 2)  # open field south
        img = render_depth(scenario, cam, 2, scene=scene)
        cy, cx = img.values.shape[0] // 2, img.values.shape[1] // 2
        assert img.values[cy, cx] == 0.0

    def test_value_domain(self, scenario, scene):
        cam = camera_pose((0.0, 8.0, 1.0), math.pi / 2)
        img = render_depth(scenario, cam, 3, scene=scene)
        v = img.values
        sn = scenario.sensors
        assert np.all((v == 0.0) | ((v > sn.depth_min_range) & (v <= sn.depth_max_range)))

    def test_roi_render_matches_geometry(self, scenario, scene):
        cam = camera_pose((0.0, 8.0, 1.0), math.pi / 2)
        roi = (230, 251, 310, 331)
        img = render_depth(scenario, cam, 4, scene=scene, roi=roi)
        assert img.values.shape == (21, 21)
        assert img.origin == (230, 310)
        assert np.median(img.values) == pytest.approx(2.0, abs=0.05)


class TestScan:
    def test_ranges_from_room_center(self, scenario):
        pose = Pose2D(0.0, 8.0, math.pi / 2)
        scan = simulate_scan2d(scenario, pose, 0)
        ahead = scan.ranges[np.argmin(np.abs(scan.angles))]
        assert ahead == pytest.approx(2.0, abs=0.09)       # 3 sigma
        left = scan.ranges[np.argmin(np.abs(scan.angles - math.pi / 2))]
        assert left == pytest.approx(5.0, abs=0.09)

    def test_beam_through_door_gap_no_return(self):
        import copy
        sc = copy.deepcopy(default_scenario())
        # looking out the door from just inside: nothing beyond for 120 m
        pose = Pose2D(0.0, 1.0, -math.pi / 2)
        scan = simulate_scan2d(sc, pose, 0)
        ahead = scan.ranges[np.argmin(np.abs(scan.angles))]
        assert ahead == 0.0

    def test_scan3d_wall_points_coplanar(self, scenario, scene):
        pose = Pose2D(0.0, 8.0, math.pi / 2)
        cloud = simulate_scan3d(scenario, pose, 0, scene=scene)
        north = cloud[np.abs(cloud[:, 1] - 10.0) < 0.2]
        assert north.shape[0] > 100
        sigma = scenario.sensors.scan3d_noise_m
        assert np.abs(north[:, 1] - 10.0).max() < 5 * sigma

    def test_scan3d_ring_structure(self, scenario, scene):
        pose = Pose2D(0.0, 8.0, math.pi / 2)
        cloud = simulate_scan3d(scenario, pose, 0, scene=scene,
                                noise_sigma=0.0)
        # all points on the north wall lie between floor and wall top
        north = cloud[np.abs(cloud[:, 1] - 10.0) < 1e-6]
        assert north[:, 2].min() >= -1e-9
        assert north[:, 2].max() <= 2.5 + 1e-9


class TestOdometry:
    def test_zero_noise_straight_line(self):
        drift = DriftParams(sigma_t=0.0, sigma_r=0.0, bias=(0.0, 0.0))
        rng = stream_rng(0, 99)
        st = OdometryState(true_pose=Pose2D(0, 0, 0), est_pose=Pose2D(0, 0, 0))
        st = step_odometry(st, (1.0, 0.0), 1.0, drift, rng)
        assert st.true_pose.x == pytest.approx(1.0)
        assert st.est_pose.x == pytest.approx(1.0)
        assert st.est_pose.y == pytest.approx(0.0)
        assert st.distance_travelled == pytest.approx(1.0)

    def test_exact_arc_integration(self):
        drift = DriftParams(sigma_t=0.0, sigma_r=0.0, bias=(0.0, 0.0))
        rng = stream_rng(0, 99)
        st = OdometryState()
        # quarter circle of radius 2: v = 1, omega = 0.5, t = pi
        n = 3141
        for _ in range(n):
            st = step_odometry(st, (1.0, 0.5), math.pi / n, drift, rng)
        assert st.true_pose.x == pytest.approx(2.0, abs=1e-6)
        assert st.true_pose.y == pytest.approx(2.0, abs=1e-6)

    def test_pure_rotation_keeps_position(self):
        drift = DriftParams(sigma_t=0.05, sigma_r=0.01, bias=(0.0, 0.0))
        rng = stream_rng(1, 99)
        st = OdometryState()
        for _ in range(100):
            st = step_odometry(st, (0.0, 1.0), 0.01, drift, rng)
        assert st.est_pose.x == pytest.approx(0.0)
        assert st.est_pose.y == pytest.approx(0.0)
        assert st.true_pose.x == pytest.approx(0.0)

    def test_distance_travelled_monotone(self):
        drift = DriftParams()
        rng = stream_rng(2, 99)
        st = OdometryState()
        last = 0.0
        for k in range(50):
            st = step_odometry(st, ((-1.0) ** k * 0.5, 0.1), 0.05, drift, rng)
            assert st.distance_travelled >= last
            last = st.distance_travelled

    def test_drift_band_over_30m_monte_carlo(self):
        # frozen oracle band: median 2D error in [0.10, 0.30] m across 100 seeds
        drift = DriftParams(sigma_t=0.03, sigma_r=0.0, bias=(0.0, 0.0))
        errs = []
        for seed in range(100):
            rng = stream_rng(seed, 99)
            st = OdometryState()
            for _ in range(600):           # 30 m at 0.5 m per step
                st = step_odometry(st, (1.0, 0.0), 0.05, drift, rng)
            errs.append(math.hypot(st.est_pose.x - st.true_pose.x,
                                   st.est_pose.y - st.true_pose.y))
        median = sorted(errs)[50]
        assert 0.10 <= median <= 0.30

    def test_dt_must_be_positive(self):
        with pytest.raises(ValueError):
            step_odometry(OdometryState(), (1.0, 0.0), 0.0, DriftParams(),
                          stream_rng(0, 99))
