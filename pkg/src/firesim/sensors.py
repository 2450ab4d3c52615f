"""Sensor simulation: thermal / depth image rendering, planar and 3D laser
scans, and integration of commanded motion into a drifting pose estimate.

All renders are deterministic functions of (scenario, pose, frame_index, seed):
per-frame RNG streams are derived from a seed sequence keyed by sensor id and
frame index, so frames can be rendered lazily and in any order without
changing their content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2D, intrinsics_from_fov, normalize_angle, pixel_ray_grid
from .world import apparent_temperature

# surface kinds
WALL = 0
PLATE = 1     # front plexiglass, opaque to LWIR, ambiguous to the depth camera
ELEMENT = 2   # heating element behind the aperture

# RNG stream ids
STREAM_THERMAL = 1
STREAM_DEPTH = 2
STREAM_SCAN = 3
STREAM_SCAN3D = 4
STREAM_ODOM = 5
STREAM_MAPPING = 6
STREAM_MISSION = 7

_T_MIN = 0.05  # ignore self-intersections closer than this


def stream_rng(seed, stream_id, frame_index=0):
    """Independent generator for one sensor frame (or one module stream)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id), int(frame_index)))
    return np.random.default_rng(ss)


@dataclass
class ThermalImage:
    values: np.ndarray      # (H, W) apparent temperature, deg C
    timestamp: float = 0.0


@dataclass
class DepthImage:
    values: np.ndarray      # (H, W) range along ray, m; 0 = no return
    timestamp: float = 0.0
    origin: tuple = (0, 0)  # (v0, u0) of a windowed render in full-image pixels


@dataclass
class Scan2D:
    angles: np.ndarray      # robot-frame bearing of each beam, rad
    ranges: np.ndarray      # m, 0 = no return
    timestamp: float = 0.0


@dataclass
class OdometryState:
    true_pose: Pose2D = field(default_factory=Pose2D)
    est_pose: Pose2D = field(default_factory=Pose2D)
    distance_travelled: float = 0.0

    def copy(self):
        return OdometryState(self.true_pose.copy(), self.est_pose.copy(),
                             self.distance_travelled)


class SceneGeometry:
    """Scenario surfaces compiled to quad arrays for vectorized ray casting."""

    def __init__(self, scenario):
        self.scenario = scenario
        origins, eu, ev, lu, lv, normals, kinds, tidx = [], [], [], [], [], [], [], []

        for (p0, p1, height) in scenario.layout.solid_segments():
            o = np.array([p0[0], p0[1], 0.0])
            u = np.array([p1[0] - p0[0], p1[1] - p0[1], 0.0])
            ulen = np.linalg.norm(u)
            u = u / ulen
            v = np.array([0.0, 0.0, 1.0])
            origins.append(o); eu.append(u); ev.append(v)
            lu.append(ulen); lv.append(height)
            normals.append(np.cross(u, v)); kinds.append(WALL); tidx.append(-1)

        for i, t in enumerate(scenario.targets):
            frame = t.element_center
            x, y, z = frame.rotation[:, 0], frame.rotation[:, 1], frame.rotation[:, 2]
            # element quad, slightly proud of the wall plane
            ec = frame.translation + 0.005 * z
            o = ec - x * t.element_width / 2 - y * t.element_height / 2
            origins.append(o); eu.append(x); ev.append(y)
            lu.append(t.element_width); lv.append(t.element_height)
            normals.append(z); kinds.append(ELEMENT); tidx.append(i)
            # front plate with circular aperture
            pc = frame.translation + t.front_plate_offset * z
            o = pc - x * t.plate_half_extent - y * t.plate_half_extent
            origins.append(o); eu.append(x); ev.append(y)
            lu.append(2 * t.plate_half_extent); lv.append(2 * t.plate_half_extent)
            normals.append(z); kinds.append(PLATE); tidx.append(i)

        self.origins = np.array(origins).reshape(-1, 3)
        self.edge_u = np.array(eu).reshape(-1, 3)
        self.edge_v = np.array(ev).reshape(-1, 3)
        self.len_u = np.array(lu)
        self.len_v = np.array(lv)
        self.normals = np.array(normals).reshape(-1, 3)
        self.kinds = np.array(kinds, dtype=int)
        self.target_idx = np.array(tidx, dtype=int)
        self.hole_r = np.array([
            scenario.targets[i].aperture_diameter / 2 if k == PLATE else 0.0
            for i, k in zip(tidx, kinds)
        ])
        self.plate_center = np.array([
            (scenario.targets[i].element_center.translation
             + scenario.targets[i].front_plate_offset
             * scenario.targets[i].element_center.rotation[:, 2])
            if k == PLATE else np.zeros(3)
            for i, k in zip(tidx, kinds)
        ]).reshape(-1, 3)

    def cast(self, origin, dirs, skip_plates_as_transparent=False):
        """Nearest-hit ray cast. dirs is (M, 3) of unit directions.

        Returns (t, quad_index): np.inf / -1 where nothing is hit. Rays passing
        inside a plate's aperture hole continue through the plate. When
        skip_plates_as_transparent is set, plates are ignored entirely.

        Everything is evaluated as (M, Q) matrices: with P = origin + t*dir,
        the in-quad coordinates expand to a = (origin-q0)@eu + t*(dir@eu) and
        likewise for b, so no (M, Q, 3) intermediates are needed. Large ray
        batches are processed in chunks to keep the intermediates in cache.
        """
        m = dirs.shape[0]
        chunk = 32768
        if m > chunk:
            ts = np.empty(m)
            qs = np.empty(m, dtype=int)
            for lo in range(0, m, chunk):
                hi = min(m, lo + chunk)
                ts[lo:hi], qs[lo:hi] = self.cast(origin, dirs[lo:hi],
                                                 skip_plates_as_transparent)
            return ts, qs
        rel = self.origins - origin                      # (Q, 3)
        rel_n = np.einsum("qk,qk->q", rel, self.normals)  # (Q,)
        dn = dirs @ self.normals.T                       # (M, Q)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = rel_n / dn
        o_eu = -np.einsum("qk,qk->q", rel, self.edge_u)
        o_ev = -np.einsum("qk,qk->q", rel, self.edge_v)
        a = o_eu + t * (dirs @ self.edge_u.T)
        b = o_ev + t * (dirs @ self.edge_v.T)
        inside = (
            (np.abs(dn) > 1e-12) & (t > _T_MIN)
            & (a >= 0.0) & (a <= self.len_u)
            & (b >= 0.0) & (b <= self.len_v)
        )
        plates = self.kinds == PLATE
        if plates.any():
            if skip_plates_as_transparent:
                inside[:, plates] = False
            else:
                oc = origin - self.plate_center[plates]          # (P, 3)
                oc2 = np.einsum("pk,pk->p", oc, oc)
                d_oc = dirs @ oc.T                               # (M, P)
                tp = t[:, plates]
                r2 = oc2 + 2.0 * tp * d_oc + tp * tp
                inside[:, plates] &= r2 > self.hole_r[plates] ** 2
        t = np.where(inside, t, np.inf)
        best_q = np.argmin(t, axis=1)
        best_t = t[np.arange(t.shape[0]), best_q]
        best_q = np.where(np.isfinite(best_t), best_q, -1)
        return best_t, best_q


_intr_cache = {}


def _cached_rays(width, height, hfov, vfov):
    key = (width, height, round(hfov, 12), round(vfov, 12))
    if key not in _intr_cache:
        intr = intrinsics_from_fov(width, height, hfov, vfov)
        _intr_cache[key] = (intr, pixel_ray_grid(intr))
    return _intr_cache[key]


def thermal_intrinsics(sensors):
    intr, _ = _cached_rays(sensors.thermal_width, sensors.thermal_height,
                           math.radians(sensors.thermal_hfov_deg),
                           math.radians(sensors.thermal_vfov_deg))
    return intr


def depth_intrinsics(sensors):
    intr, _ = _cached_rays(sensors.depth_width, sensors.depth_height,
                           math.radians(sensors.depth_hfov_deg),
                           math.radians(sensors.depth_vfov_deg))
    return intr


def render_thermal(scenario, camera_pose, frame_index=0, seed=None, scene=None):
    """Thermal frame from a camera-to-world pose.

    Rays hitting a live heating element (necessarily through the aperture:
    the plexiglass front plate is opaque in LWIR) read the element's apparent
    temperature; everything else reads ambient. Zero-mean Gaussian noise is
    added and the image floor is clamped to ambient - 3 sigma.
    """
    sn = scenario.sensors
    if scene is None:
        scene = SceneGeometry(scenario)
    if seed is None:
        seed = scenario.seed
    _, rays = _cached_rays(sn.thermal_width, sn.thermal_height,
                           math.radians(sn.thermal_hfov_deg),
                           math.radians(sn.thermal_vfov_deg))
    h, w, _ = rays.shape
    dirs = (camera_pose.rotation @ rays.reshape(-1, 3).T).T
    t, q = scene.cast(camera_pose.translation, dirs)

    img = np.full(h * w, scenario.ambient_temp)
    hot = (q >= 0) & (scene.kinds[np.maximum(q, 0)] == ELEMENT)
    if hot.any():
        for ti in np.unique(scene.target_idx[q[hot]]):
            tgt = scenario.targets[ti]
            if tgt.extinguished:
                continue
            sel = hot & (scene.target_idx[np.maximum(q, 0)] == ti)
            img[sel] = apparent_temperature(tgt.setpoint_temp, tgt.emissivity)

    rng = stream_rng(seed, STREAM_THERMAL, frame_index)
    sigma = sn.thermal_noise_c
    img = img + sigma * rng.standard_normal(h * w)
    np.maximum(img, scenario.ambient_temp - 3.0 * sigma, out=img)
    return ThermalImage(values=img.reshape(h, w), timestamp=frame_index / sn.thermal_rate_hz)


def render_depth(scenario, camera_pose, frame_index=0, seed=None, scene=None, roi=None):
    """Depth frame: per-pixel range along the ray, 0 where there is no return.

    Opaque surfaces return true range plus Gaussian noise. The transparent
    front plexiglass is ambiguous to the depth camera: those pixels read
    front-plate range plus a per-frame uniform fraction of the plate gap.
    roi=(v0, v1, u0, u1) restricts rendering to a window; windowed pixels use
    an RNG stream keyed by the window position, full frames use the frame
    stream (both deterministic per (scenario, pose, frame, seed)).
    """
    sn = scenario.sensors
    if scene is None:
        scene = SceneGeometry(scenario)
    if seed is None:
        seed = scenario.seed
    _, rays = _cached_rays(sn.depth_width, sn.depth_height,
                           math.radians(sn.depth_hfov_deg),
                           math.radians(sn.depth_vfov_deg))
    full_h, full_w, _ = rays.shape
    rng_frame = stream_rng(seed, STREAM_DEPTH, frame_index)
    u_plate = rng_frame.uniform(0.0, 1.0)

    if roi is None:
        v0, v1, u0, u1 = 0, full_h, 0, full_w
        noise_rng = rng_frame
    else:
        v0, v1, u0, u1 = roi
        v0, u0 = max(0, v0), max(0, u0)
        v1, u1 = min(full_h, v1), min(full_w, u1)
        ss = np.random.SeedSequence(entropy=int(seed),
                                    spawn_key=(STREAM_DEPTH, int(frame_index), v0, u0))
        noise_rng = np.random.default_rng(ss)

    sub = rays[v0:v1, u0:u1].reshape(-1, 3)
    dirs = (camera_pose.rotation @ sub.T).T
    t, q = scene.cast(camera_pose.translation, dirs)

    vals = np.zeros(dirs.shape[0])
    hit = q >= 0
    kinds = scene.kinds[np.maximum(q, 0)]
    opaque = hit & (kinds != PLATE)
    plate = hit & (kinds == PLATE)
    noise = sn.depth_noise_m * noise_rng.standard_normal(dirs.shape[0])
    vals[opaque] = t[opaque] + noise[opaque]
    if plate.any():
        gaps = np.array([scenario.targets[i].front_plate_offset
                         for i in scene.target_idx[q[plate]]])
        vals[plate] = t[plate] + u_plate * gaps
    out_of_range = (vals <= sn.depth_min_range) | (vals > sn.depth_max_range)
    vals[out_of_range] = 0.0
    return DepthImage(values=vals.reshape(v1 - v0, u1 - u0),
                      timestamp=frame_index / sn.depth_rate_hz,
                      origin=(v0, u0))


def _segments_array(scenario):
    segs = scenario.layout.solid_segments()
    a = np.array([[s[0][0], s[0][1]] for s in segs])
    b = np.array([[s[1][0], s[1][1]] for s in segs])
    return a, b


def cast_rays_2d(origin, angles, seg_a, seg_b, max_range):
    """Planar ray cast against segments. Returns range per angle, inf = miss."""
    ox, oy = origin
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)       # (M, 2)
    best = np.full(len(angles), np.inf)
    for k in range(seg_a.shape[0]):
        ax, ay = seg_a[k]
        ex, ey = seg_b[k] - seg_a[k]
        denom = d[:, 0] * ey - d[:, 1] * ex
        rel = np.array([ax - ox, ay - oy])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rel[0] * ey - rel[1] * ex) / denom
            s = (rel[0] * d[:, 1] - rel[1] * d[:, 0]) / denom
        ok = (np.abs(denom) > 1e-12) & (t > _T_MIN) & (s >= 0.0) & (s <= 1.0) & (t < best)
        best[ok] = t[ok]
    best[best > max_range] = np.inf
    return best


def simulate_scan2d(scenario, pose, frame_index=0, seed=None):
    """360 deg planar scan from the robot pose; angles are robot-frame bearings."""
    sn = scenario.sensors
    if seed is None:
        seed = scenario.seed
    n = sn.scan_beams
    bearings = -math.pi + 2 * math.pi * np.arange(n) / n
    world_angles = bearings + pose.heading
    seg_a, seg_b = _segments_array(scenario)
    r = cast_rays_2d((pose.x, pose.y), world_angles, seg_a, seg_b, sn.scan_max_range)
    rng = stream_rng(seed, STREAM_SCAN, frame_index)
    noise = sn.scan_noise_m * rng.standard_normal(n)
    hit = np.isfinite(r)
    ranges = np.zeros(n)
    ranges[hit] = np.maximum(r[hit] + noise[hit], 0.0)
    return Scan2D(angles=bearings, ranges=ranges,
                  timestamp=frame_index / sn.scan_rate_hz)


def simulate_scan3d(scenario, pose, frame_index=0, seed=None, scene=None,
                    noise_sigma=None):
    """3D point cloud: `scan3d_rings` elevation rings over the vertical FOV.

    Returns an (N, 3) array of world-frame hit points (walls, pedestal,
    ground plane); misses and returns beyond range are dropped.
    """
    sn = scenario.sensors
    if seed is None:
        seed = scenario.seed
    if scene is None:
        scene = SceneGeometry(scenario)
    if noise_sigma is None:
        noise_sigma = sn.scan3d_noise_m
    half_v = math.radians(sn.scan3d_vfov_deg) / 2.0
    elevs = np.linspace(-half_v, half_v, sn.scan3d_rings)
    azims = pose.heading + 2 * math.pi * np.arange(sn.scan3d_azimuths) / sn.scan3d_azimuths
    el, az = np.meshgrid(elevs, azims, indexing="ij")
    dirs = np.stack([np.cos(el) * np.cos(az),
                     np.cos(el) * np.sin(az),
                     np.sin(el)], axis=-1).reshape(-1, 3)
    origin = np.array([pose.x, pose.y, sn.lidar_height])

    t, q = scene.cast(origin, dirs, skip_plates_as_transparent=True)
    # ground plane
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -origin[2] / dz
    ground = (dz < -1e-12) & (tg > _T_MIN) & (tg < t)
    t = np.where(ground, tg, t)

    hit = np.isfinite(t) & (t <= sn.scan_max_range)
    t = t[hit]
    dirs = dirs[hit]
    if noise_sigma > 0:
        rng = stream_rng(seed, STREAM_SCAN3D, frame_index)
        t = t + noise_sigma * rng.standard_normal(t.shape[0])
    return origin + dirs * t[:, None]


def step_odometry(state, cmd, dt, drift, rng):
    """Advance true and estimated pose one control step.

    The true pose integrates unicycle kinematics exactly (arc model). The
    estimate integrates the same command plus the systematic slip bias and
    random-walk noise scaled by sqrt of the distance / rotation increments.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v, omega = cmd
    new = state.copy()
    _integrate_unicycle(new.true_pose, v, omega, dt)
    ds = abs(v) * dt
    dth = omega * dt
    new.distance_travelled = state.distance_travelled + ds

    if ds > 0.0 or dth != 0.0:
        bias_f, bias_l = drift.bias
        n_f = n_l = n_r = 0.0
        if drift.sigma_t > 0.0 or drift.sigma_r > 0.0:
            n_f, n_l, n_r = rng.standard_normal(3)
        err_f = drift.sigma_t * math.sqrt(ds) * n_f + bias_f * ds
        err_l = drift.sigma_t * math.sqrt(ds) * n_l + bias_l * ds
        err_th = drift.sigma_r * math.sqrt(abs(dth)) * n_r
        _integrate_unicycle(new.est_pose, v, omega, dt)
        h = new.est_pose.heading
        new.est_pose.x += err_f * math.cos(h) - err_l * math.sin(h)
        new.est_pose.y += err_f * math.sin(h) + err_l * math.cos(h)
        new.est_pose.heading = normalize_angle(h + err_th)
    return new


def _integrate_unicycle(pose, v, omega, dt):
    if abs(omega) < 1e-12:
        pose.x += v * dt * math.cos(pose.heading)
        pose.y += v * dt * math.sin(pose.heading)
    else:
        th0 = pose.heading
        th1 = th0 + omega * dt
        r = v / omega
        pose.x += r * (math.sin(th1) - math.sin(th0))
        pose.y += r * (-math.cos(th1) + math.cos(th0))
        pose.heading = normalize_angle(th1)


def target_plausibly_visible(scenario, camera_pose, target, pad_rad=0.18):
    """Cheap conservative test used to skip whole-frame thermal renders.

    True when the element center lies inside the camera frustum padded by
    `pad_rad` on every side, in front of its wall, within 15 m. A hot pixel
    requires element rays through the aperture, which implies this test.
    """
    sn = scenario.sensors
    rel = target.element_center.translation - camera_pose.translation
    dist = np.linalg.norm(rel)
    if dist > 15.0 or dist < 1e-6:
        return False
    outward = target.element_center.rotation[:, 2]
    if rel @ outward > 0:
        return False          # camera behind the wall plane
    cam = camera_pose.rotation.T @ rel
    if cam[2] <= 0.0:
        return False
    half_h = math.radians(sn.thermal_hfov_deg) / 2 + pad_rad
    half_v = math.radians(sn.thermal_vfov_deg) / 2 + pad_rad
    return (abs(math.atan2(cam[0], cam[2])) <= half_h
            and abs(math.atan2(cam[1], cam[2])) <= half_v)
