import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firesim.geometry import (BehindCameraError, FovOutOfRangeError,
                              PixelOutOfBoundsError, Pose2D, Transform3D,
                              UnitRay, apply, apply_ray, backproject_pixel,
                              camera_pose, compose, intrinsics_from_fov,
                              invert, normalize_angle, project_point, vec3)


def test_intrinsics_thermal_fx():
    # fx = 80 / tan(28.5 deg), evaluated independently
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    assert intr.fx == pytest.approx(80.0 / math.tan(math.radians(28.5)), rel=1e-12)
    assert intr.fx == pytest.approx(147.3, abs=0.1)
    assert intr.cx == pytest.approx(79.5)
    assert intr.cy == pytest.approx(59.5)


def test_intrinsics_unit_case():
    intr = intrinsics_from_fov(2, 2, math.radians(90.0), math.radians(90.0))
    assert intr.fx == pytest.approx(1.0)
    assert intr.fy == pytest.approx(1.0)


def test_intrinsics_depth_camera():
    intr = intrinsics_from_fov(640, 480, math.radians(87.0), math.radians(58.0))
    assert intr.fx == pytest.approx(320.0 / math.tan(math.radians(43.5)), rel=1e-12)
    assert intr.fx == pytest.approx(337.2, abs=0.1)


def test_intrinsics_fov_out_of_range():
    with pytest.raises(FovOutOfRangeError):
        intrinsics_from_fov(160, 120, math.pi, math.radians(45))
    with pytest.raises(FovOutOfRangeError):
        intrinsics_from_fov(160, 120, 0.0, math.radians(45))


def test_intrinsics_monotone_in_fov():
    fovs = [math.radians(d) for d in (30, 57, 90, 120)]
    fx = [intrinsics_from_fov(160, 120, f, f).fx for f in fovs]
    assert all(a > b for a, b in zip(fx, fx[1:]))


def test_backproject_center_is_principal_axis():
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    ray = backproject_pixel(intr, intr.cx, intr.cy)
    assert np.allclose(ray.direction, [0.0, 0.0, 1.0])
    assert np.allclose(ray.origin, 0.0)


def test_backproject_45_degrees_off_axis():
    # at u = cx + fx the ray is one focal length off axis, i.e. 45 degrees
    intr = intrinsics_from_fov(4, 4, math.radians(90.0), math.radians(90.0))
    ray = backproject_pixel(intr, intr.cx + intr.fx, intr.cy)
    expected = np.array([1.0, 0.0, 1.0]) / math.sqrt(2.0)
    assert np.allclose(ray.direction, expected)


def test_backproject_corner_pixel():
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    ray = backproject_pixel(intr, 0, 0)
    d = np.array([-79.5 / intr.fx, -59.5 / intr.fy, 1.0])
    assert np.allclose(ray.direction, d / np.linalg.norm(d))


def test_backproject_out_of_bounds():
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    with pytest.raises(PixelOutOfBoundsError):
        backproject_pixel(intr, 160, 0)
    with pytest.raises(PixelOutOfBoundsError):
        backproject_pixel(intr, 0, -1)


def test_project_on_axis():
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    u, v = project_point(intr, (0.0, 0.0, 2.0))
    assert u == pytest.approx(intr.cx)
    assert v == pytest.approx(intr.cy)


def test_project_behind_camera():
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    with pytest.raises(BehindCameraError):
        project_point(intr, (0.0, 0.0, -1.0))


def test_project_element_angular_size():
    # a 3.5 cm offset at 1.5 m under fx = 147.3 spans about 3.44 px
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    u, _ = project_point(intr, (0.035, 0.0, 1.5))
    assert u - intr.cx == pytest.approx(3.44, abs=0.01)


def test_project_backproject_roundtrip_100_random_pixels():
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    rng = np.random.default_rng(42)
    for _ in range(100):
        u = rng.uniform(0, intr.width - 1e-9)
        v = rng.uniform(0, intr.height - 1e-9)
        d = rng.uniform(0.3, 8.0)
        ray = backproject_pixel(intr, u, v)
        u2, v2 = project_point(intr, ray.direction * d)
        assert u2 == pytest.approx(u, abs=1e-6)
        assert v2 == pytest.approx(v, abs=1e-6)


def test_compose_invert_identity():
    t = Transform3D.from_yaw(0.7, (1.0, -2.0, 0.5))
    ident = compose(t, invert(t))
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(ident.translation, 0.0, atol=1e-9)


def test_apply_identity():
    p = vec3(1.0, 2.0, 3.0)
    assert np.allclose(apply(Transform3D.identity(), p), p)


def test_extrinsic_baseline_translation():
    t = Transform3D.from_translation(0.05, 0.0, 0.0)
    assert np.allclose(apply(t, vec3(0, 0, 0)), [0.05, 0.0, 0.0])


def test_apply_ray_preserves_unit_norm():
    t = Transform3D.from_yaw(1.2, (0.3, 0.4, 0.0))
    r = UnitRay(origin=[0, 0, 0], direction=[1.0, 2.0, 2.0])
    out = apply_ray(t, r)
    assert np.linalg.norm(out.direction) == pytest.approx(1.0, abs=1e-12)


def test_rotation_orthonormal_after_1000_compositions():
    rng = np.random.default_rng(3)
    t = Transform3D.identity()
    for _ in range(1000):
        t = compose(t, Transform3D.from_yaw(rng.uniform(-math.pi, math.pi)))
    err = np.abs(t.rotation.T @ t.rotation - np.eye(3)).max()
    assert err < 1e-6


@settings(max_examples=100, deadline=None)
@given(
    u=st.floats(0.0, 159.0),
    v=st.floats(0.0, 119.0),
    d=st.floats(0.2, 9.5),
)
def test_backproject_project_identity_property(u, v, d):
    intr = intrinsics_from_fov(160, 120, math.radians(57.0), math.radians(43.6))
    ray = backproject_pixel(intr, u, v)
    u2, v2 = project_point(intr, ray.direction * d)
    assert abs(u2 - u) < 1e-6
    assert abs(v2 - v) < 1e-6


@given(st.floats(-50.0, 50.0))
def test_normalize_angle_range(a):
    out = normalize_angle(a)
    assert -math.pi < out <= math.pi
    assert math.isclose(math.sin(out), math.sin(a), abs_tol=1e-9)
    assert math.isclose(math.cos(out), math.cos(a), abs_tol=1e-9)


def test_pose2d_normalizes_heading():
    p = Pose2D(0.0, 0.0, 3 * math.pi)
    assert p.heading == pytest.approx(math.pi)


def test_camera_pose_axes():
    cam = camera_pose((0, 0, 1.0), math.pi / 2)
    assert np.allclose(cam.rotation[:, 2], [0, 1, 0], atol=1e-12)   # boresight north
    assert np.allclose(cam.rotation[:, 0], [1, 0, 0], atol=1e-12)   # image right = east
    assert np.allclose(cam.rotation[:, 1], [0, 0, -1], atol=1e-12)  # image down


def test_vec3_rejects_nonfinite():
    with pytest.raises(ValueError):
        vec3(float("nan"), 0, 0)
