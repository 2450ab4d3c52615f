"""Wall alignment, the two closed-loop aiming axes, pump control, ballistic
stream simulation and liters-through-aperture accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .world import aperture_disc

G = 9.81
RHO_WATER = 1000.0


class NoWallError(RuntimeError):
    pass


class TargetLostError(RuntimeError):
    pass


@dataclass
class AlignmentStatus:
    wall_aligned: bool = False
    lateral_error: float = float("nan")
    elevation_error: float = float("nan")
    converged: bool = False


@dataclass
class PumpState:
    on: bool = False
    elapsed_on: float = 0.0
    flow_rate: float = 0.0          # L/s while on
    tank_remaining: float = 15.0


@dataclass
class DeliveryLedger:
    liters_ejected: float = 0.0
    liters_through: dict = field(default_factory=dict)     # target index -> L
    extinguish_events: list = field(default_factory=list)  # (t, target index)

    def through_total(self):
        return sum(self.liters_through.values())

    def through_for(self, idx):
        return self.liters_through.get(idx, 0.0)


def exit_velocity(params):
    """Bernoulli jet exit speed for the pump pressure, m/s."""
    if params.pump_pressure_pa < 0:
        raise ValueError("pressure must be >= 0")
    return math.sqrt(2.0 * params.pump_pressure_pa / RHO_WATER)


def flow_rate(params):
    """Volumetric flow through the nozzle, L/s."""
    v = exit_velocity(params)
    area = math.pi * (params.nozzle_diameter_m / 2.0) ** 2
    return v * area * 1000.0


def drop_compensation(rng_m, v_exit):
    """Ballistic drop of the jet over a horizontal range, m."""
    if v_exit <= 0:
        raise ValueError("v_exit must be > 0")
    return 0.5 * G * (rng_m / v_exit) ** 2


@dataclass
class WallAlignCommand:
    v: float
    omega: float
    aligned: bool
    heading_error: float     # bearing of the wall normal in the robot frame
    distance: float          # perpendicular distance to the fitted wall


def fit_scan_line(scan, sector_half=math.radians(60.0), min_points=10):
    """Total-least-squares line through the frontal-sector scan returns.

    Returns (center, direction, normal, distance): robot-frame fit with the
    normal oriented from the robot toward the wall.
    """
    sel = (np.abs(scan.angles) <= sector_half) & (scan.ranges > 0.0)
    if int(sel.sum()) < min_points:
        raise NoWallError(f"{int(sel.sum())} returns in frontal sector, need {min_points}")
    r = scan.ranges[sel]
    a = scan.angles[sel]
    pts = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    center = pts.mean(axis=0)
    cov = np.cov((pts - center).T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    direction = eigvecs[:, int(np.argmax(eigvals))]
    normal = np.array([-direction[1], direction[0]])
    if center @ normal < 0:
        normal = -normal
    distance = float(center @ normal)
    return center, direction, normal, distance


def align_to_wall(scan, standoff, heading_tol=math.radians(1.0), dist_tol=0.03,
                  k_omega=2.0, k_v=1.0, max_omega=0.8, max_v=0.3):
    """One wall-alignment control step from a planar scan.

    Rotates the robot until its heading is perpendicular to the fitted wall,
    then regulates the perpendicular distance to `standoff`. Raises
    NoWallError when the frontal sector holds no wall returns.
    """
    _, _, normal, distance = fit_scan_line(scan)
    heading_error = math.atan2(normal[1], normal[0])
    omega = max(-max_omega, min(max_omega, k_omega * heading_error))
    v = 0.0
    if abs(heading_error) < math.radians(5.0):
        v = max(-max_v, min(max_v, k_v * (distance - standoff)))
    aligned = abs(heading_error) <= heading_tol and abs(distance - standoff) <= dist_tol
    if aligned:
        v, omega = 0.0, 0.0
    return WallAlignCommand(v=v, omega=omega, aligned=aligned,
                            heading_error=heading_error, distance=distance)


def horizontal_align_step(est, gain=2.0, max_v=0.1):
    """Base fore/aft command (m/s) that nulls the target's along-wall offset.

    The estimate is in the camera frame; camera x is the along-wall axis when
    the nozzle faces the wall. The mission maps the sign onto the drive axis.
    """
    lateral_error = float(est.position[0])
    return max(-max_v, min(max_v, -gain * lateral_error))


def vertical_elevation_error(est, v_exit, nozzle_offset_y=0.04):
    """Angular error of the nozzle axis vs the drop-compensated aim point.

    Positive means the aim point is above the current axis (pitch up needed).
    The aim point is the target raised by the ballistic drop over its range.
    """
    x, y, z = est.position
    drop = drop_compensation(est.range, v_exit)
    aim_up = (nozzle_offset_y - y) + drop      # camera y points down
    return math.atan2(aim_up, z)


def vertical_align_step(est, v_exit, nozzle_offset_y=0.04, gain=0.8,
                        max_step=math.radians(2.0)):
    """Joint-3 pitch delta (rad/step) toward the drop-compensated aim point."""
    err = vertical_elevation_error(est, v_exit, nozzle_offset_y)
    return max(-max_step, min(max_step, gain * err))


class FineAlignTracker:
    """Convergence bookkeeping for the two concurrent alignment loops."""

    def __init__(self, tol_lat=0.02, tol_elev=math.radians(0.3),
                 consecutive=3, lost_after_s=2.0):
        self.tol_lat = tol_lat
        self.tol_elev = tol_elev
        self.consecutive = consecutive
        self.lost_after_s = lost_after_s
        self.lat_ok_count = 0
        self.status = AlignmentStatus()
        self.last_estimate_t = None

    def update(self, lateral_error, elevation_error, t):
        self.last_estimate_t = t
        self.status.lateral_error = lateral_error
        self.status.elevation_error = elevation_error
        if abs(lateral_error) <= self.tol_lat:
            self.lat_ok_count += 1
        else:
            self.lat_ok_count = 0
        self.status.converged = (self.lat_ok_count >= self.consecutive
                                 and abs(elevation_error) <= self.tol_elev)
        return self.status

    def lost(self, t):
        return (self.last_estimate_t is not None
                and t - self.last_estimate_t > self.lost_after_s)


def stream_impact(nozzle_pose, v_exit, scene, dt=0.001, t_max=3.0):
    """Integrate the drag-free water jet and test aperture crossings.

    nozzle_pose is camera-convention (boresight +z) in world coordinates.
    Returns (impact_point or None, crossed target indices, impact_time).
    Crossings are counted only up to the first opaque surface hit; passing
    through a plate's hole counts as crossing that target's aperture.
    """
    if v_exit <= 0:
        raise ValueError("v_exit must be > 0")
    p0 = nozzle_pose.translation
    d = nozzle_pose.rotation[:, 2]
    n = int(t_max / dt) + 1
    t = np.arange(n) * dt
    pts = p0[None, :] + d[None, :] * (v_exit * t)[:, None]
    pts[:, 2] -= 0.5 * G * t * t

    first_idx = n
    impact = None
    # ground plane
    below = np.flatnonzero(pts[:, 2] < 0.0)
    if below.size:
        i = int(below[0])
        if i > 0 and i < first_idx:
            first_idx = i
            f = pts[i - 1, 2] / (pts[i - 1, 2] - pts[i, 2])
            impact = pts[i - 1] + f * (pts[i] - pts[i - 1])

    crossings = {}           # target idx -> sample index of aperture crossing
    geo = scene
    for q in range(geo.origins.shape[0]):
        nrm = geo.normals[q]
        s = (pts - geo.origins[q]) @ nrm
        sign_change = np.flatnonzero((s[:-1] > 0.0) != (s[1:] > 0.0))
        hit_i = None
        hit_p = None
        for i in sign_change:
            f = s[i] / (s[i] - s[i + 1])
            p = pts[i] + f * (pts[i + 1] - pts[i])
            local = p - geo.origins[q]
            a = local @ geo.edge_u[q]
            b = local @ geo.edge_v[q]
            if not (0.0 <= a <= geo.len_u[q] and 0.0 <= b <= geo.len_v[q]):
                continue
            if geo.kinds[q] == 1:     # PLATE: hole passes, records a crossing
                r2 = float(np.sum((p - geo.plate_center[q]) ** 2))
                if r2 <= geo.hole_r[q] ** 2:
                    ti = int(geo.target_idx[q])
                    if ti not in crossings or i < crossings[ti]:
                        crossings[ti] = i
                    continue
            hit_i, hit_p = int(i), p
            break
        if hit_i is not None and hit_i < first_idx:
            first_idx = hit_i
            impact = hit_p

    crossed = {ti for ti, i in crossings.items() if i <= first_idx}
    impact_time = first_idx * dt if impact is not None else None
    return impact, crossed, impact_time


def pump_step(pump, ledger, dt, crossing_targets, targets, t_now):
    """Advance pump/tank/ledger bookkeeping one tick.

    While on with water remaining, Q*dt liters leave the tank; if the stream
    currently crosses an aperture the same volume is credited to that target,
    and a target whose credited volume reaches its requirement is marked
    extinguished (its thermal signature drops to ambient immediately).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if pump.on and pump.tank_remaining > 0.0:
        dv = min(pump.flow_rate * dt, pump.tank_remaining)
        pump.tank_remaining -= dv
        pump.elapsed_on += dt
        ledger.liters_ejected += dv
        if crossing_targets:
            ti = min(crossing_targets)
            ledger.liters_through[ti] = ledger.liters_through.get(ti, 0.0) + dv
            target = targets[ti]
            if (not target.extinguished
                    and ledger.liters_through[ti] >= target.liters_required):
                target.extinguished = True
                ledger.extinguish_events.append((t_now, ti))
    elif pump.on:
        pump.elapsed_on += dt
    return pump, ledger
