"""Simplified 6-DoF arm: forward kinematics, named poses, joint-space
trajectories with a base-box self-collision check, joint-3 pitch control and
the cyclic two-joint spray wiggle.

Chain convention (all angles radians, zero configuration = arm stretched
along base +x at mount height):

    J1 yaw(z) -> J2 pitch(y,up+) -> L1 -> J3 pitch -> L2 -> J4 pitch -> L3
       -> J5 yaw(z) -> J6 roll(x) -> L4 -> end effector

The end-effector x axis is the camera/nozzle boresight; the camera frame is
the usual +z forward, +x right, +y down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Transform3D, compose

N_JOINTS = 6


class JointLimitError(ValueError):
    pass


class CollisionError(RuntimeError):
    pass


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


# camera axes expressed in the end-effector frame: z fwd = EE x, x right = -EE y
CAMERA_IN_EE = Transform3D(rotation=np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
]))


@dataclass
class ArmModel:
    link_lengths: tuple = (0.28, 0.28, 0.21, 0.13)
    mount: Transform3D = field(
        default_factory=lambda: Transform3D.from_translation(0.0, 0.0, 0.30))
    max_linear_speed: float = 0.20
    joint_limits: tuple = ((-math.pi, math.pi),) * N_JOINTS
    base_box: tuple = (0.75, 0.43, 0.25)    # collision body under the mount

    @property
    def reach(self):
        return float(sum(self.link_lengths))

    @property
    def max_joint_speed(self):
        """Per-joint rate cap so the tool speed at full reach stays within
        the linear limit."""
        return self.max_linear_speed / self.reach

    def check_limits(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (N_JOINTS,):
            raise ValueError(f"expected {N_JOINTS} joint angles")
        for i, (lo, hi) in enumerate(self.joint_limits):
            if not (lo - 1e-12 <= q[i] <= hi + 1e-12):
                raise JointLimitError(f"joint {i + 1} = {q[i]:.3f} outside [{lo:.3f}, {hi:.3f}]")
        return q


def arm_model_from_robot(robot):
    return ArmModel(
        link_lengths=tuple(robot.arm_link_lengths),
        mount=robot.arm_mount,
        max_linear_speed=robot.max_arm_linear_speed,
        base_box=(robot.footprint_length, robot.footprint_width, 0.25),
    )


NAMED_POSES = {
    # tucked above the deck so the base can accelerate without tipping
    "folded": np.array([0.0, 1.45, -2.75, 1.45, 0.0, 0.0]),
    # camera held high, boresight horizontal, to sweep wall surfaces
    "raised": np.array([math.pi / 2, math.pi / 2, 0.0, -math.pi / 2, 0.0, 0.0]),
    # spray configuration: nozzle lower, still side-facing and level
    "abate": np.array([math.pi / 2, math.radians(70.0), math.radians(-20.0),
                       math.radians(-50.0), 0.0, 0.0]),
}


def named_pose(name, camera_side="left"):
    """Joint state for a named arm pose; right-side camera mirrors joint 1."""
    q = NAMED_POSES[name].copy()
    if camera_side == "right":
        q[0] = -q[0]
    return q


def fk_points(model, q):
    """Positions of the mount and each link endpoint, base frame, (5, 3)."""
    q = np.asarray(q, dtype=float)
    l1, l2, l3, l4 = model.link_lengths
    rot = model.mount.rotation @ _rz(q[0]) @ _ry(-q[1])
    p = model.mount.translation.copy()
    pts = [p.copy()]
    for length, post in ((l1, lambda r: r @ _ry(-q[2])),
                         (l2, lambda r: r @ _ry(-q[3])),
                         (l3, lambda r: r @ _rz(q[4]) @ _rx(q[5])),
                         (l4, None)):
        p = p + rot[:, 0] * length
        pts.append(p.copy())
        if post is not None:
            rot = post(rot)
    return np.array(pts), rot


def forward_kinematics(model, q):
    """End-effector pose in the base frame."""
    model.check_limits(q)
    pts, rot = fk_points(model, q)
    return Transform3D(translation=pts[-1], rotation=rot)


def camera_pose_in_base(model, q):
    return compose(forward_kinematics(model, q), CAMERA_IN_EE)


def nozzle_pitch(model, q):
    """Upward elevation angle of the boresight; monotone in joint 3."""
    _, rot = fk_points(model, q)
    bore = rot[:, 0]
    return math.asin(max(-1.0, min(1.0, bore[2])))


def in_collision(model, q, margin=0.02):
    """True if any sampled arm point enters the base box (or the ground)."""
    pts, _ = fk_points(model, q)
    samples = [pts[0]]
    for i in range(len(pts) - 1):
        samples.append(0.5 * (pts[i] + pts[i + 1]))
        samples.append(pts[i + 1])
    lx, ly, lz = model.base_box
    for p in samples[1:]:       # the mount itself sits on the box top
        if p[2] < margin:
            return True
        if (abs(p[0]) <= lx / 2 + margin and abs(p[1]) <= ly / 2 + margin
                and p[2] <= lz + margin):
            return True
    return False


@dataclass
class JointTrajectory:
    times: np.ndarray            # (K,)
    points: np.ndarray           # (K, 6)

    @property
    def duration(self):
        return float(self.times[-1])

    def sample(self, t):
        if t <= self.times[0]:
            return self.points[0]
        if t >= self.times[-1]:
            return self.points[-1]
        i = int(np.searchsorted(self.times, t))
        t0, t1 = self.times[i - 1], self.times[i]
        f = (t - t0) / (t1 - t0)
        return self.points[i - 1] * (1 - f) + self.points[i] * f


def plan_joint_trajectory(model, q_from, q_to, max_joint_speed=None, dt=0.02,
                          check_collision=True):
    """Linear joint-space interpolation at the joint speed limit.

    Duration is max |dq| / speed; intermediate states are checked against the
    base collision box and the joint limits.
    """
    q_from = model.check_limits(q_from)
    q_to = model.check_limits(q_to)
    if max_joint_speed is None:
        max_joint_speed = model.max_joint_speed
    dq = q_to - q_from
    duration = float(np.max(np.abs(dq))) / max_joint_speed
    if duration < 1e-12:
        traj = JointTrajectory(times=np.array([0.0]), points=q_from[None, :].copy())
    else:
        n = max(2, int(math.ceil(duration / dt)) + 1)
        times = np.linspace(0.0, duration, n)
        points = q_from[None, :] + (times / duration)[:, None] * dq[None, :]
        traj = JointTrajectory(times=times, points=points)
    if check_collision:
        for q in traj.points:
            if in_collision(model, q):
                raise CollisionError("trajectory sweeps through the base box")
    return traj


def pitch_adjust(model, q, delta):
    """Move only joint 3 by delta, validating the joint limit."""
    q2 = np.asarray(q, dtype=float).copy()
    q2[2] += delta
    model.check_limits(q2)
    return q2


@dataclass
class WigglePattern:
    joints: tuple = (0, 2)               # yaw-like and pitch-like joints
    amplitude: float = math.atan2(0.045, 1.5)
    period: float = 2.0
    shape: str = "square"                # "square" | "circle"

    def __post_init__(self):
        if self.amplitude < 0 or self.period <= 0:
            raise ValueError("amplitude must be >= 0 and period > 0")


def _square_wave(x):
    return 1.0 if (x - math.floor(x)) < 0.5 else -1.0


def wiggle_offsets(pattern, t):
    """Joint offsets (delta_a, delta_b) of the spray wiggle at time t.

    The default quadrature square-wave pair parks the nozzle direction on the
    four corners of a square patch overlapping the fire aperture; the circle
    shape traces the same patch continuously.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    x = t / pattern.period
    a = pattern.amplitude
    if pattern.shape == "square":
        return a * _square_wave(x), a * _square_wave(x + 0.25)
    return a * math.cos(2 * math.pi * x), a * math.sin(2 * math.pi * x)
