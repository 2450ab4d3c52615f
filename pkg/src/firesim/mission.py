"""The firefight mission: shared context (robot + world state), the concrete
states of the navigation / extinguish pipeline, and the transition table.

Navigation runs on the *estimated* pose (drifting odometry); all sensing is
rendered from the *true* pose, so scan- and camera-based steps are accurate
relative measurements while waypoint tracking inherits the accumulated drift,
reproducing the field behavior of the modeled system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import arm as arm_mod
from . import mapping
from . import suppression as sup
from .fsm import StateDef, TransitionTable
from .geometry import (Pose2D, Transform3D, apply as tf_apply, compose,
                       invert, normalize_angle, project_point)
from .perception import (NoDepthError, OutOfFrustumError, detect_hotspots,
                         localize_target, select_target)
from .sensors import (STREAM_MAPPING, STREAM_MISSION, STREAM_ODOM, OdometryState,
                      SceneGeometry, depth_intrinsics, render_depth,
                      render_thermal, simulate_scan2d, simulate_scan3d,
                      step_odometry, stream_rng, target_plausibly_visible,
                      thermal_intrinsics)

MAX_OMEGA = 1.2
DOOR_MIN_WIDTH = 0.8
SURVEY_RANGE = 12.0          # distance from the facade where the layout scan is taken
PRE_DOOR_RANGE = 2.5
DOOR_INSIDE_RANGE = 1.2
CENTER_STOP_DEG = 15.0       # keep driving until the hotspot is this close to boresight


@dataclass
class TrajectorySample:
    t: float
    true_pose: Pose2D
    est_pose: Pose2D


class MissionContext:
    """Mutable blackboard flowing through state-machine execution."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.scene = SceneGeometry(scenario)
        self.arm = arm_mod.arm_model_from_robot(scenario.robot)
        self.side = scenario.mission.camera_side
        self.side_sign = 1.0 if self.side == "left" else -1.0
        self.odom = OdometryState(true_pose=scenario.start_pose.copy(),
                                  est_pose=scenario.start_pose.copy())
        self.odom_rng = stream_rng(scenario.seed, STREAM_ODOM)
        self.mission_rng = stream_rng(scenario.seed, STREAM_MISSION)
        self.mapping_rng = stream_rng(scenario.seed, STREAM_MAPPING)

        self.q = arm_mod.named_pose("folded", self.side)
        self.arm_traj = None
        self.arm_traj_t0 = 0.0
        self.wiggle_target = None
        self.wiggle_pattern = arm_mod.WigglePattern()

        self.cmd = (0.0, 0.0)
        self.speed_cap = scenario.robot.max_speed_outdoor
        self.collided = False
        self.t = 0.0
        self.tick = 0

        self.thermal_intr = thermal_intrinsics(scenario.sensors)
        self.depth_intr = depth_intrinsics(scenario.sensors)
        self.last_thermal = -1
        self.last_scan = -1
        self.scan3d_count = 0

        self.pump = sup.PumpState(tank_remaining=scenario.water.tank_volume_l)
        self.ledger = sup.DeliveryLedger()
        self.v_exit = sup.exit_velocity(scenario.water)
        self.flow = sup.flow_rate(scenario.water)

        self.latest_estimate = None
        self.estimate_log = []
        self.detections = 0
        self.waypoints_completed = {"outdoor": 0, "door": 0, "indoor_search": 0}
        self.trajectory = []
        self.collision_segments = [
            (np.array(a), np.array(b)) for (a, b, _h) in scenario.layout.solid_segments()
        ]

        # navigation scratch
        self.outdoor_path = None
        self.outdoor_progress = 0
        self.door_goal = None
        self.search_waypoints = None
        self.search_progress = 0
        self.search_scanned = False
        self.apriori_stop = None
        self.apriori_handled = False
        self.stop_detection = None

        # suppression scratch
        self.engaged_heading = None
        self.wall_align = None
        self.fine = None
        self.fine_retry = 0
        self.pump_cycles = 0
        self.pump_start = None
        self.q_aligned = None
        self.recheck_until = None
        self.recheck_hot = False
        self.suppression_attempts = 0

        if scenario.waypoint_source == "hand_set":
            ang = self.mission_rng.uniform(0.0, 2.0 * math.pi)
            m = scenario.mission.hand_offset_m
            self.hand_offset = np.array([m * math.cos(ang), m * math.sin(ang)])
        else:
            self.hand_offset = np.zeros(2)

    # ------------------------------------------------------------------
    # frames and sensing

    def base_tf(self, pose):
        return Transform3D.from_yaw(pose.heading, (pose.x, pose.y, 0.0))

    def camera_pose_world(self):
        cam_in_base = arm_mod.camera_pose_in_base(self.arm, self.q)
        return compose(self.base_tf(self.odom.true_pose), cam_in_base)

    def nozzle_pose_world(self):
        cam = self.camera_pose_world()
        return compose(cam, self.scenario.robot.nozzle_offset)

    def perceived_cloud(self, cloud):
        """Re-anchor true-world points at the estimated pose (what SLAM sees)."""
        tp, ep = self.odom.true_pose, self.odom.est_pose
        rel = cloud[:, :2] - np.array([tp.x, tp.y])
        c, s = math.cos(-tp.heading), math.sin(-tp.heading)
        rx = c * rel[:, 0] - s * rel[:, 1]
        ry = s * rel[:, 0] + c * rel[:, 1]
        c2, s2 = math.cos(ep.heading), math.sin(ep.heading)
        out = cloud.copy()
        out[:, 0] = ep.x + c2 * rx - s2 * ry
        out[:, 1] = ep.y + s2 * rx + c2 * ry
        return out

    def take_scan3d(self):
        cloud = simulate_scan3d(self.scenario, self.odom.true_pose,
                                frame_index=self.scan3d_count, scene=self.scene)
        self.scan3d_count += 1
        return self.perceived_cloud(cloud)

    def next_scan(self):
        idx = int(self.t * self.scenario.sensors.scan_rate_hz)
        if idx <= self.last_scan:
            return None
        self.last_scan = idx
        return simulate_scan2d(self.scenario, self.odom.true_pose, frame_index=idx)

    def next_thermal_index(self):
        idx = int(self.t * self.scenario.sensors.thermal_rate_hz)
        if idx <= self.last_thermal:
            return None
        self.last_thermal = idx
        return idx

    def thermal_detection(self, frame_index):
        """Render the due thermal frame (if any live target could show) and
        return the strongest detection, or None for a provably cold frame."""
        cam = self.camera_pose_world()
        visible = any(
            not t.extinguished and target_plausibly_visible(self.scenario, cam, t)
            for t in self.scenario.targets
        )
        if not visible:
            return None
        img = render_thermal(self.scenario, cam, frame_index=frame_index,
                             scene=self.scene)
        dets = detect_hotspots(img, self.scenario.mission.detect_threshold_c,
                               self.thermal_intr,
                               self.scenario.mission.min_blob_pixels)
        det = select_target(dets)
        if det is not None:
            self.detections += 1
        return det

    def localize(self, det, thermal_index):
        """Depth-fused 3D estimate for a detection, rendered as a window."""
        rate = self.scenario.sensors.depth_rate_hz
        depth_index = int(self.t * rate)
        cam = self.camera_pose_world()
        depth_cam = compose(cam, invert(self.scenario.robot.thermal_to_depth))
        guess = (self.latest_estimate.range if self.latest_estimate else 2.0)
        p = guess * det.ray.direction
        pd = tf_apply(self.scenario.robot.thermal_to_depth, p)
        if pd[2] <= 0:
            return None
        u, v = project_point(self.depth_intr, pd)
        half = 24
        v0, u0 = int(round(v)) - half, int(round(u)) - half
        depth = render_depth(self.scenario, depth_cam, frame_index=depth_index,
                             scene=self.scene,
                             roi=(v0, v0 + 2 * half + 1, u0, u0 + 2 * half + 1))
        thermal_t = thermal_index / self.scenario.sensors.thermal_rate_hz
        try:
            est = localize_target(det, depth, self.scenario.robot.thermal_to_depth,
                                  self.depth_intr, initial_range=guess,
                                  det_timestamp=thermal_t)
        except (NoDepthError, OutOfFrustumError):
            return None
        self.latest_estimate = est
        self.estimate_log.append(est.timestamp)
        return est

    # ------------------------------------------------------------------
    # actuation

    def start_arm_trajectory(self, q_to):
        self.arm_traj = arm_mod.plan_joint_trajectory(self.arm, self.q, q_to)
        self.arm_traj_t0 = self.t

    def arm_done(self):
        return (self.arm_traj is None
                or self.t - self.arm_traj_t0 >= self.arm_traj.duration)

    def drive(self, v, omega):
        omega = max(-MAX_OMEGA, min(MAX_OMEGA, omega))
        v = max(-self.speed_cap, min(self.speed_cap, v))
        self.cmd = (v, omega)

    def stop(self):
        self.cmd = (0.0, 0.0)

    def rotate_to_relative(self, err):
        """Angular command toward zeroing a relative heading error."""
        return max(-MAX_OMEGA, min(MAX_OMEGA, 2.0 * err))

    # ------------------------------------------------------------------
    # physics step

    def step(self, dt):
        if self.arm_traj is not None:
            if self.t - self.arm_traj_t0 >= self.arm_traj.duration:
                self.q = self.arm_traj.points[-1].copy()
                self.arm_traj = None
            else:
                self.q = self.arm_traj.sample(self.t - self.arm_traj_t0)
        elif self.wiggle_target is not None:
            rate = self.arm.max_joint_speed * dt
            dq = np.clip(self.wiggle_target - self.q, -rate, rate)
            self.q = self.q + dq

        v, omega = self.cmd
        if v != 0.0 and self._would_collide(v, omega, dt):
            v = 0.0
            self.collided = True
        self.odom = step_odometry(self.odom, (v, omega), dt,
                                  self.scenario.drift, self.odom_rng)
        self.tick += 1
        self.t = self.tick * dt
        if self.tick % 10 == 0:
            self.trajectory.append(TrajectorySample(
                t=self.t, true_pose=self.odom.true_pose.copy(),
                est_pose=self.odom.est_pose.copy()))

    def _would_collide(self, v, omega, dt):
        p = self.odom.true_pose
        nx = p.x + v * dt * math.cos(p.heading)
        ny = p.y + v * dt * math.sin(p.heading)
        r = self.scenario.robot.collision_radius
        for a, b in self.collision_segments:
            d = _point_segment_distance(nx, ny, a, b)
            if d < r:
                return True
        return False


def _point_segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 <= 0.0:
        return math.hypot(px - ax, py - ay)
    s = ((px - ax) * dx + (py - ay) * dy) / L2
    s = max(0.0, min(1.0, s))
    return math.hypot(px - (ax + s * dx), py - (ay + s * dy))


# ---------------------------------------------------------------------------
# layout perception helpers


def _collinear_groups(segments, angle_tol=math.radians(10.0), offset_tol=0.3):
    n = len(segments)
    used = [False] * n
    groups = []
    for i in range(n):
        if used[i]:
            continue
        group = [i]
        used[i] = True
        di = segments[i].direction
        for j in range(i + 1, n):
            if used[j]:
                continue
            if abs(di @ segments[j].direction) < math.cos(angle_tol):
                continue
            rel = segments[j].midpoint - segments[i].p0
            if abs(rel[0] * di[1] - rel[1] * di[0]) <= offset_tol:
                group.append(j)
                used[j] = True
        groups.append(group)
    return groups


def _room_polygon(segments):
    """Intersect the fitted outer wall lines into an ordered convex loop."""
    groups = _collinear_groups(segments)
    lines = []
    for group in groups:
        longest = max(group, key=lambda k: segments[k].length)
        lines.append((segments[longest].midpoint, segments[longest].direction))
    if len(lines) < 3:
        raise mapping.InsufficientPointsError(
            f"only {len(lines)} wall lines found, need >= 3")
    centroid = np.mean([p for p, _ in lines], axis=0)
    def angle(entry):
        p, d = entry
        nrm = np.array([-d[1], d[0]])
        if (p - centroid) @ nrm < 0:
            nrm = -nrm
        return math.atan2(nrm[1], nrm[0])
    lines.sort(key=angle)
    poly = []
    m = len(lines)
    for i in range(m):
        (p1, d1) = lines[i]
        (p2, d2) = lines[(i + 1) % m]
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(denom) < 1e-9:
            raise mapping.InsufficientPointsError("parallel adjacent wall lines")
        t = ((p2 - p1)[0] * d2[1] - (p2 - p1)[1] * d2[0]) / denom
        poly.append(p1 + t * d1)
    return poly


def _split_outer_pedestal(segments, inner_radius=2.3):
    mids = np.array([s.midpoint for s in segments])
    centroid = mids.mean(axis=0)
    outer, pedestal = [], []
    for s, m in zip(segments, mids):
        (pedestal if np.linalg.norm(m - centroid) <= inner_radius else outer).append(s)
    return outer, pedestal


def _find_door(ctx, cloud):
    """Facade segments + the door gap nearest the robot, in the est frame."""
    segments = mapping.extract_vertical_planes(cloud, rng=ctx.mapping_rng)
    gaps = mapping.find_door_gaps(segments, DOOR_MIN_WIDTH)
    if not gaps:
        raise mapping.InsufficientPointsError("no door-sized gap found")
    ep = ctx.odom.est_pose
    robot = np.array([ep.x, ep.y])
    gap = min(gaps, key=lambda g: np.linalg.norm(g.center - robot))
    seg = segments[gap.segment_index]
    d = seg.direction
    outward = np.array([-d[1], d[0]])
    if (robot - gap.center) @ outward < 0:
        outward = -outward
    return gap, outward


# ---------------------------------------------------------------------------
# states


def _apriori_stop_pose(ctx, target):
    n3 = target.element_center.rotation[:, 2]
    n = np.array([n3[0], n3[1]])
    n = n / np.linalg.norm(n)
    pos = target.element_center.translation[:2] + n * ctx.scenario.mission.wall_standoff
    pos = pos + ctx.hand_offset
    boresight = math.atan2(-n[1], -n[0])
    heading = normalize_angle(boresight - ctx.side_sign * math.pi / 2.0)
    return Pose2D(pos[0], pos[1], heading)


def _enter_outdoor(ctx):
    ctx.speed_cap = ctx.scenario.robot.max_speed_outdoor
    ctx.stop()
    ctx.outdoor_progress = 0
    if not np.array_equal(ctx.q, arm_mod.named_pose("folded", ctx.side)):
        ctx.start_arm_trajectory(arm_mod.named_pose("folded", ctx.side))
    sc = ctx.scenario
    start = ctx.odom.est_pose
    if sc.waypoint_source == "hand_set":
        # open-loop route from hand-measured geometry with its survey error
        door = _true_door_center(sc)
        outward = _true_door_outward(sc, start)
        pre = door + outward * PRE_DOOR_RANGE + ctx.hand_offset
        ctx.outdoor_path = _straight_path(start, Pose2D(pre[0], pre[1], 0.0))
        ctx.door_goal = None
        ctx._survey_pending = False
    else:
        # leg 1: drive to a survey point near the roughly-known building front,
        # scan, extract the facade and door, then head for the pre-door pose
        door = _true_door_center(sc)
        outward = _true_door_outward(sc, start)
        survey = door + outward * SURVEY_RANGE
        ctx.outdoor_path = _straight_path(start, Pose2D(survey[0], survey[1], 0.0))
        ctx._survey_pending = True


def _true_door_center(sc):
    g = sc.layout.door_gaps[0]
    wall = sc.layout.outer_walls[g.wall_index]
    d = wall.direction
    p0 = np.array(wall.p0)
    return p0 + d * (g.offset + g.width / 2.0)


def _true_door_outward(sc, from_pose):
    g = sc.layout.door_gaps[0]
    wall = sc.layout.outer_walls[g.wall_index]
    d = wall.direction
    outward = np.array([-d[1], d[0]])
    center = _true_door_center(sc)
    if (np.array([from_pose.x, from_pose.y]) - center) @ outward < 0:
        outward = -outward
    return outward


def _straight_path(start, goal, spacing=0.5):
    dx, dy = goal.x - start.x, goal.y - start.y
    dist = math.hypot(dx, dy)
    n = max(1, int(dist / spacing))
    poses = []
    for i in range(n + 1):
        f = i / n
        poses.append(Pose2D(start.x + f * dx, start.y + f * dy,
                            math.atan2(dy, dx)))
    return poses


def _tick_outdoor(ctx):
    if not ctx.arm_done():
        ctx.stop()
        return None
    goal = ctx.outdoor_path[-1]
    if mapping.goal_reached(ctx.odom.est_pose, goal):
        if getattr(ctx, "_survey_pending", False):
            ctx.stop()
            cloud = ctx.take_scan3d()
            try:
                gap, outward = _find_door(ctx, cloud)
            except mapping.InsufficientPointsError:
                # facade too sparse from here: close in and rescan
                ep = ctx.odom.est_pose
                step = Pose2D(ep.x + 3.0 * math.cos(ep.heading),
                              ep.y + 3.0 * math.sin(ep.heading), ep.heading)
                ctx.outdoor_path = _straight_path(ep, step)
                ctx.outdoor_progress = 0
                return None
            pre = gap.center + outward * PRE_DOOR_RANGE
            ctx.outdoor_path = _straight_path(
                ctx.odom.est_pose, Pose2D(pre[0], pre[1], 0.0))
            ctx.outdoor_progress = 0
            ctx._survey_pending = False
            return None
        ctx.stop()
        ctx.waypoints_completed["outdoor"] += 1
        return "at_door"
    v, w, idx = mapping.pure_pursuit_step(
        ctx.odom.est_pose, ctx.outdoor_path, lookahead=0.8,
        speed_cap=ctx.speed_cap, min_index=ctx.outdoor_progress)
    ctx.outdoor_progress = idx
    ctx.drive(v, w)
    return None


def _enter_door(ctx):
    ctx.speed_cap = ctx.scenario.robot.max_speed_indoor
    ctx.stop()
    sc = ctx.scenario
    if sc.waypoint_source == "hand_set":
        door = _true_door_center(sc)
        outward = _true_door_outward(sc, ctx.odom.est_pose)
        inside = door - outward * DOOR_INSIDE_RANGE + ctx.hand_offset
        ctx.door_goal = Pose2D(inside[0], inside[1], 0.0)
        ctx.outdoor_path = _straight_path(ctx.odom.est_pose, ctx.door_goal, 0.4)
    else:
        cloud = ctx.take_scan3d()
        gap, outward = _find_door(ctx, cloud)
        inside = gap.center - outward * DOOR_INSIDE_RANGE
        ctx.door_goal = Pose2D(inside[0], inside[1], 0.0)
        ctx.outdoor_path = _straight_path(ctx.odom.est_pose, ctx.door_goal, 0.4)
    ctx.outdoor_progress = 0


def _tick_door(ctx):
    if mapping.goal_reached(ctx.odom.est_pose, ctx.door_goal):
        ctx.stop()
        ctx.waypoints_completed["door"] += 1
        return "entered"
    v, w, idx = mapping.pure_pursuit_step(
        ctx.odom.est_pose, ctx.outdoor_path, lookahead=0.6,
        speed_cap=ctx.speed_cap, min_index=ctx.outdoor_progress)
    ctx.outdoor_progress = idx
    ctx.drive(v, w)
    return None


def _enter_search(ctx):
    ctx.speed_cap = ctx.scenario.robot.max_speed_indoor
    ctx.stop()
    ctx.stop_detection = None
    if not np.array_equal(ctx.q, arm_mod.named_pose("raised", ctx.side)):
        ctx.start_arm_trajectory(arm_mod.named_pose("raised", ctx.side))
    sc = ctx.scenario
    if ctx.search_waypoints is None:
        if sc.waypoint_source == "hand_set":
            poly = [np.array(p) + ctx.hand_offset for p in sc.layout.outer_polygon()]
            wl = mapping.generate_wall_following_waypoints(
                poly, sc.mission.wall_standoff, ctx.side, sc.mission.waypoint_spacing)
        else:
            cloud = ctx.take_scan3d()
            segments = mapping.extract_vertical_planes(cloud, rng=ctx.mapping_rng)
            outer, _pedestal = _split_outer_pedestal(segments)
            poly = _room_polygon(outer)
            wl = mapping.generate_wall_following_waypoints(
                poly, sc.mission.wall_standoff, ctx.side, sc.mission.waypoint_spacing)
        loop = wl.poses[:-1]                  # drop the duplicated closing pose
        start_i = mapping.nearest_path_index(ctx.odom.est_pose, loop)
        loop = loop[start_i:] + loop[:start_i]
        loop.append(loop[0].copy())           # close the loop on the new start
        wl.poses = loop
        wl.contexts = [wl.contexts[0]] * len(loop)
        ctx.search_waypoints = wl
        ctx.search_progress = 0
        if not sc.fine_alignment_enabled and sc.targets:
            ctx.apriori_stop = _apriori_stop_pose(ctx, sc.targets[0])


def _tick_search(ctx):
    if not ctx.arm_done():
        ctx.stop()
        return None
    sc = ctx.scenario
    poses = ctx.search_waypoints.poses

    if ctx.apriori_stop is not None and not ctx.apriori_handled:
        stop = ctx.apriori_stop
        d = math.hypot(stop.x - ctx.odom.est_pose.x, stop.y - ctx.odom.est_pose.y)
        if d <= 0.15:
            # settle onto the surveyed shooting heading before engaging
            err = normalize_angle(stop.heading - ctx.odom.est_pose.heading)
            if abs(err) > math.radians(2.0):
                ctx.drive(0.0, ctx.rotate_to_relative(err))
                return None
            ctx.stop()
            ctx.engaged_heading = stop.heading
            return "at_apriori_target"
        if d <= 1.2:
            # leave the loop and drive straight at the a-priori stop pose
            v, w, _ = mapping.pure_pursuit_step(
                ctx.odom.est_pose, [stop], lookahead=0.4,
                speed_cap=ctx.speed_cap)
            ctx.drive(v, w)
            return None

    if sc.fine_alignment_enabled and ctx.suppression_attempts < 6:
        idx = ctx.next_thermal_index()
        if idx is not None:
            det = ctx.thermal_detection(idx)
            if det is not None:
                ctx.stop_detection = det
                u_err = abs(det.centroid[0] - ctx.thermal_intr.cx)
                if u_err <= ctx.thermal_intr.fx * math.tan(math.radians(CENTER_STOP_DEG)):
                    ctx.stop()
                    ctx.engaged_heading = ctx.odom.est_pose.heading
                    return "hotspot"

    if ctx.search_progress >= len(poses) - 1 and mapping.goal_reached(
            ctx.odom.est_pose, poses[-1], tol=0.2):
        ctx.stop()
        return "search_complete"
    v, w, idx = mapping.pure_pursuit_step(
        ctx.odom.est_pose, poses, lookahead=0.6,
        speed_cap=ctx.speed_cap, min_index=ctx.search_progress)
    if idx > ctx.search_progress:
        ctx.waypoints_completed["indoor_search"] += idx - ctx.search_progress
        ctx.search_progress = idx
    ctx.drive(v, w)
    return None


def _enter_abate(ctx):
    ctx.stop()
    ctx.start_arm_trajectory(arm_mod.named_pose("abate", ctx.side))
    ctx.fine_retry = 0
    ctx.pump_cycles = 0
    ctx.suppression_attempts += 1


def _tick_abate(ctx):
    return "posed" if ctx.arm_done() else None


def _enter_wall_align(ctx):
    ctx.stop()
    if not ctx.scenario.fine_alignment_enabled:
        ctx.wall_align = {"phase": "skip"}
        return
    ctx.wall_align = {
        "phase": "face",
        "start_heading": ctx.odom.est_pose.heading,
        "target_delta": ctx.side_sign * math.pi / 2.0,
    }


def _tick_wall_align(ctx):
    wa = ctx.wall_align
    if wa["phase"] == "skip":
        return "aligned"
    if wa["phase"] in ("face", "restore"):
        err = normalize_angle(wa["start_heading"] + wa["target_delta"]
                              - ctx.odom.est_pose.heading)
        if abs(err) <= math.radians(1.0):
            ctx.stop()
            if wa["phase"] == "face":
                wa["phase"] = "align"
            else:
                return "aligned"
        else:
            ctx.drive(0.0, ctx.rotate_to_relative(err))
        return None
    # align: regulate perpendicular heading and standoff from live scans
    scan = ctx.next_scan()
    if scan is not None:
        try:
            cmd = sup.align_to_wall(scan, ctx.scenario.mission.wall_standoff)
        except sup.NoWallError:
            ctx.stop()
            return "no_wall"
        if cmd.aligned:
            ctx.stop()
            wa["phase"] = "restore"
            wa["start_heading"] = ctx.odom.est_pose.heading
            wa["target_delta"] = -ctx.side_sign * math.pi / 2.0
            return None
        ctx.drive(cmd.v, cmd.omega)
    return None


def _enter_fine(ctx):
    ctx.stop()
    ctx.fine = {
        "tracker": sup.FineAlignTracker(),
        "t0": ctx.t,
        "v": 0.0,
    }
    ctx.latest_estimate = None
    if not ctx.scenario.fine_alignment_enabled:
        _apply_apriori_pitch(ctx)


def _apply_apriori_pitch(ctx):
    """Open-loop vertical aim from the a-priori target location."""
    sc = ctx.scenario
    if not sc.targets:
        return
    target = sc.targets[0]
    noz = compose(ctx.base_tf(ctx.odom.est_pose),
                  compose(arm_mod.camera_pose_in_base(ctx.arm, ctx.q),
                          sc.robot.nozzle_offset))
    tp = target.element_center.translation
    horiz = math.hypot(tp[0] - noz.translation[0], tp[1] - noz.translation[1])
    drop = sup.drop_compensation(horiz, ctx.v_exit)
    want = math.atan2(tp[2] + drop - noz.translation[2], horiz)
    have = arm_mod.nozzle_pitch(ctx.arm, ctx.q)
    try:
        ctx.q = arm_mod.pitch_adjust(ctx.arm, ctx.q, want - have)
    except arm_mod.JointLimitError:
        pass


def _tick_fine(ctx):
    sc = ctx.scenario
    if not sc.fine_alignment_enabled:
        return "fine_aligned"
    fine = ctx.fine
    tracker = fine["tracker"]
    idx = ctx.next_thermal_index()
    if idx is not None:
        det = ctx.thermal_detection(idx)
        if det is not None:
            est = ctx.localize(det, idx)
            if est is not None:
                noz_y = float(sc.robot.nozzle_offset.translation[1])
                elev = sup.vertical_elevation_error(est, ctx.v_exit,
                                                    nozzle_offset_y=noz_y)
                # left-side camera: image-right is the base forward axis, so
                # the fore/aft drive sign flips with the camera side
                fine["v"] = -ctx.side_sign * sup.horizontal_align_step(est)
                tracker.update(float(est.position[0]), elev, ctx.t)
                if tracker.status.converged:
                    ctx.stop()
                    return "fine_aligned"
                delta = sup.vertical_align_step(est, ctx.v_exit,
                                                nozzle_offset_y=noz_y)
                try:
                    ctx.q = arm_mod.pitch_adjust(ctx.arm, ctx.q, delta)
                except arm_mod.JointLimitError:
                    pass
    if tracker.last_estimate_t is None and ctx.t - fine["t0"] > tracker.lost_after_s:
        return _fine_fail(ctx)
    if tracker.last_estimate_t is not None and tracker.lost(ctx.t):
        return _fine_fail(ctx)
    if ctx.t - fine["t0"] > 30.0:
        return _fine_fail(ctx)
    ctx.drive(fine["v"], 0.0)
    return None


def _fine_fail(ctx):
    ctx.stop()
    if ctx.fine_retry == 0:
        ctx.fine_retry = 1
        return "retry"
    return "abort_target"


def _enter_pump(ctx):
    ctx.stop()
    ctx.pump.on = True
    ctx.pump.flow_rate = ctx.flow
    ctx.pump_start = ctx.t
    ctx.q_aligned = ctx.q.copy()
    ctx.pump_cycles += 1


def _tick_pump(ctx):
    sc = ctx.scenario
    if sc.fine_alignment_enabled:
        pat = ctx.wiggle_pattern
        da, db = arm_mod.wiggle_offsets(pat, ctx.t - ctx.pump_start)
        target = ctx.q_aligned.copy()
        target[pat.joints[0]] += da
        target[pat.joints[1]] += db
        ctx.wiggle_target = target
    impact, crossed, _ = sup.stream_impact(
        ctx.nozzle_pose_world(), ctx.v_exit, ctx.scene, t_max=0.5)
    sup.pump_step(ctx.pump, ctx.ledger, 0.01, crossed, sc.targets, ctx.t)
    if ctx.t - ctx.pump_start >= sc.mission.pump_cycle_s:
        ctx.pump.on = False
        ctx.wiggle_target = None
        return "cycled"
    return None


def _enter_recheck(ctx):
    ctx.stop()
    ctx.recheck_until = ctx.t + 0.45
    ctx.recheck_hot = False
    if ctx.q_aligned is not None:
        ctx.wiggle_target = ctx.q_aligned.copy()


def _tick_recheck(ctx):
    idx = ctx.next_thermal_index()
    if idx is not None and ctx.thermal_detection(idx) is not None:
        ctx.recheck_hot = True
    if ctx.t < ctx.recheck_until:
        return None
    ctx.wiggle_target = None
    sc = ctx.scenario
    if ctx.recheck_hot:
        if ctx.pump_cycles >= sc.mission.max_pump_cycles_per_target:
            _mark_handled(ctx)
            return "give_up"
        if (sc.mission.refill_enabled
                and ctx.pump.tank_remaining < ctx.flow * sc.mission.pump_cycle_s * 0.25):
            return "refill"
        return "still_hot"
    _mark_handled(ctx)
    return "clear"


def _mark_handled(ctx):
    if ctx.apriori_stop is not None:
        ctx.apriori_handled = True


def _enter_refill(ctx):
    sc = ctx.scenario
    start = sc.start_pose
    ctx.odom = OdometryState(true_pose=start.copy(), est_pose=start.copy())
    ctx.pump.tank_remaining = sc.water.tank_volume_l
    ctx.search_waypoints = None
    ctx.search_progress = 0
    ctx.stop()


def _tick_refill(ctx):
    return "refilled"


def build_firefight_mission(scenario):
    """Transition table of the firefight pipeline.

    Top (navigation): OutdoorNav -> DoorTraverse -> IndoorSearch. Bottom
    (extinguish): AbatePose -> WallAlign -> FineAlign -> PumpCycle -> Recheck,
    looping back to FineAlign while heat persists and to IndoorSearch when the
    spot clears or the attempt budget is spent.
    """
    states = {
        "OutdoorNav": StateDef("OutdoorNav", _tick_outdoor, _enter_outdoor,
                               outcomes=("at_door",), timeout_s=240.0),
        "DoorTraverse": StateDef("DoorTraverse", _tick_door, _enter_door,
                                 outcomes=("entered",), timeout_s=30.0),
        "IndoorSearch": StateDef("IndoorSearch", _tick_search, _enter_search,
                                 outcomes=("hotspot", "at_apriori_target",
                                           "search_complete"), timeout_s=300.0),
        "AbatePose": StateDef("AbatePose", _tick_abate, _enter_abate,
                              outcomes=("posed",)),
        "WallAlign": StateDef("WallAlign", _tick_wall_align, _enter_wall_align,
                              outcomes=("aligned", "no_wall"), timeout_s=40.0),
        "FineAlign": StateDef("FineAlign", _tick_fine, _enter_fine,
                              outcomes=("fine_aligned", "retry", "abort_target")),
        "PumpCycle": StateDef("PumpCycle", _tick_pump, _enter_pump,
                              outcomes=("cycled",)),
        "Recheck": StateDef("Recheck", _tick_recheck, _enter_recheck,
                            outcomes=("clear", "still_hot", "give_up", "refill")),
        "Refill": StateDef("Refill", _tick_refill, _enter_refill,
                           outcomes=("refilled",)),
        "MissionDone": StateDef("MissionDone", lambda ctx: None),
        "MissionAborted": StateDef("MissionAborted", lambda ctx: None),
    }
    transitions = {
        ("OutdoorNav", "at_door"): "DoorTraverse",
        ("OutdoorNav", "timeout"): "MissionAborted",
        ("DoorTraverse", "entered"): "IndoorSearch",
        ("DoorTraverse", "timeout"): "MissionAborted",
        ("IndoorSearch", "hotspot"): "AbatePose",
        ("IndoorSearch", "at_apriori_target"): "AbatePose",
        ("IndoorSearch", "search_complete"): "MissionDone",
        ("IndoorSearch", "timeout"): "MissionAborted",
        ("AbatePose", "posed"): "WallAlign",
        ("WallAlign", "aligned"): "FineAlign",
        ("WallAlign", "no_wall"): "IndoorSearch",
        ("WallAlign", "timeout"): "IndoorSearch",
        ("FineAlign", "fine_aligned"): "PumpCycle",
        ("FineAlign", "retry"): "WallAlign",
        ("FineAlign", "abort_target"): "IndoorSearch",
        ("PumpCycle", "cycled"): "Recheck",
        ("Recheck", "clear"): "IndoorSearch",
        ("Recheck", "still_hot"): "FineAlign",
        ("Recheck", "give_up"): "IndoorSearch",
        ("Recheck", "refill"): "Refill",
        ("Refill", "refilled"): "OutdoorNav",
    }
    return TransitionTable(states=states, transitions=transitions,
                           initial="OutdoorNav",
                           terminals=frozenset({"MissionDone", "MissionAborted"}))
