"""Ground-truth world description: building, fire targets, robot and water
system parameters, plus the radiometric apparent-temperature model.

Scenario files are JSON; all lengths in meters, temperatures in degrees C,
pressures in Pa, angles in the *_deg keys in degrees. Missing keys fall back
to the defaults below, which model a 10 m x 10 m single-room building with a
1.2 m door gap, a 2 m x 2 m central pedestal and one wall-mounted heat source.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2D, Transform3D

KELVIN = 273.15


class ScenarioParseError(ValueError):
    pass


class ScenarioValidationError(ValueError):
    def __init__(self, field_name, message):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class WallSegment:
    p0: tuple
    p1: tuple
    height: float = 2.5

    def __post_init__(self):
        self.p0 = (float(self.p0[0]), float(self.p0[1]))
        self.p1 = (float(self.p1[0]), float(self.p1[1]))
        if self.p0 == self.p1:
            raise ScenarioValidationError("wall", "p0 and p1 must differ")
        if self.height <= 0:
            raise ScenarioValidationError("wall.height", "must be > 0")

    @property
    def length(self):
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    @property
    def direction(self):
        d = np.array([self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]])
        return d / np.linalg.norm(d)


@dataclass
class DoorGap:
    wall_index: int
    offset: float           # distance from wall p0 to the gap start, along the wall
    width: float


@dataclass
class BuildingLayout:
    outer_walls: list
    door_gaps: list
    pedestal: list          # closed 2D polygon vertices, empty list = no pedestal
    pedestal_height: float = 2.0

    def outer_polygon(self):
        """Ordered loop vertices; walls are assumed to chain p1 -> next p0."""
        return [w.p0 for w in self.outer_walls]

    def solid_segments(self):
        """Wall segments with door gaps cut out, plus pedestal edges.

        Returns a list of (p0, p1, height) tuples used by ray casting,
        scan simulation and collision checks.
        """
        segs = []
        for i, wall in enumerate(self.outer_walls):
            gaps = sorted(
                [g for g in self.door_gaps if g.wall_index == i], key=lambda g: g.offset
            )
            d = wall.direction
            p0 = np.array(wall.p0)
            pos = 0.0
            for g in gaps:
                if g.offset > pos:
                    a = p0 + d * pos
                    b = p0 + d * g.offset
                    segs.append(((a[0], a[1]), (b[0], b[1]), wall.height))
                pos = g.offset + g.width
            if pos < wall.length:
                a = p0 + d * pos
                b = p0 + d * wall.length
                segs.append(((a[0], a[1]), (b[0], b[1]), wall.height))
        n = len(self.pedestal)
        for i in range(n):
            a, b = self.pedestal[i], self.pedestal[(i + 1) % n]
            segs.append((tuple(a), tuple(b), self.pedestal_height))
        return segs


@dataclass
class FireTarget:
    element_center: Transform3D        # +z outward wall normal, +x along wall, +y up
    element_width: float = 0.035
    element_height: float = 0.060
    setpoint_temp: float = 120.0
    emissivity: float = 0.55
    front_plate_offset: float = 0.15
    aperture_diameter: float = 0.15
    liters_required: float = 1.0
    plate_half_extent: float = 0.30    # square front plexiglass half-size
    extinguished: bool = False

    def __post_init__(self):
        if not (0.0 < self.emissivity <= 1.0):
            raise ScenarioValidationError("emissivity", f"must be in (0, 1], got {self.emissivity}")
        if self.aperture_diameter <= 0:
            raise ScenarioValidationError("aperture_diameter", "must be > 0")
        if self.front_plate_offset <= 0:
            raise ScenarioValidationError("front_plate_offset", "must be > 0")
        if self.liters_required <= 0:
            raise ScenarioValidationError("liters_required", "must be > 0")


@dataclass
class RobotParams:
    footprint_length: float = 0.75     # along base x, includes rear tank overhang
    footprint_width: float = 0.43
    max_speed_outdoor: float = 2.0
    max_speed_indoor: float = 0.6
    arm_mount: Transform3D = field(
        default_factory=lambda: Transform3D.from_translation(0.0, 0.0, 0.30)
    )
    arm_link_lengths: tuple = (0.28, 0.28, 0.21, 0.13)
    max_arm_linear_speed: float = 0.20
    thermal_to_depth: Transform3D = field(
        default_factory=lambda: Transform3D.from_translation(0.05, 0.0, 0.0)
    )
    nozzle_offset: Transform3D = field(
        default_factory=lambda: Transform3D.from_translation(0.0, 0.04, 0.0)
    )

    def __post_init__(self):
        if self.max_speed_outdoor <= 0 or self.max_speed_indoor <= 0:
            raise ScenarioValidationError("robot.max_speed", "speeds must be > 0")
        if self.footprint_length <= 0 or self.footprint_width <= 0:
            raise ScenarioValidationError("robot.footprint", "must be > 0")

    @property
    def reach(self):
        return float(sum(self.arm_link_lengths))

    @property
    def collision_radius(self):
        """Circumscribed disc of the base footprint, used for collision tests."""
        return 0.5 * math.hypot(self.footprint_length, self.footprint_width)


@dataclass
class WaterSystemParams:
    tank_volume_l: float = 15.0
    pump_pressure_pa: float = 1.0e5
    nozzle_diameter_m: float = 0.00381   # 0.15 in
    min_reach_m: float = 1.5

    def __post_init__(self):
        if self.tank_volume_l <= 0:
            raise ScenarioValidationError("water.tank_volume_l", "must be > 0")
        if self.pump_pressure_pa <= 0:
            raise ScenarioValidationError("water.pump_pressure_pa", "must be > 0")


@dataclass
class DriftParams:
    sigma_t: float = 0.03              # translational noise, m per sqrt(m) travelled
    sigma_r: float = 0.01              # rotational noise, rad per sqrt(rad) turned
    bias: tuple = (0.0, 0.005)         # systematic slip per meter, robot frame (fwd, left)

    def __post_init__(self):
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ScenarioValidationError("drift.sigma", "must be >= 0")


@dataclass
class SensorConfig:
    thermal_width: int = 160
    thermal_height: int = 120
    thermal_hfov_deg: float = 57.0
    thermal_vfov_deg: float = 43.6
    thermal_rate_hz: float = 8.7
    thermal_noise_c: float = 0.1
    depth_width: int = 640
    depth_height: int = 480
    depth_hfov_deg: float = 87.0
    depth_vfov_deg: float = 58.0
    depth_rate_hz: float = 30.0
    depth_noise_m: float = 0.01
    depth_min_range: float = 0.1
    depth_max_range: float = 10.0
    scan_beams: int = 720
    scan_rate_hz: float = 10.0
    scan_noise_m: float = 0.03
    scan_max_range: float = 120.0
    scan3d_rings: int = 32
    scan3d_azimuths: int = 1024
    scan3d_vfov_deg: float = 45.0
    scan3d_noise_m: float = 0.015
    lidar_height: float = 0.5


@dataclass
class MissionConfig:
    wall_standoff: float = 1.5
    waypoint_spacing: float = 0.5
    detect_threshold_c: float = 50.0
    min_blob_pixels: int = 2
    camera_side: str = "left"          # side of the base the end-effector camera faces
    hand_offset_m: float = 0.4         # hand-set waypoint survey error magnitude
    refill_enabled: bool = False
    max_pump_cycles_per_target: int = 2
    pump_cycle_s: float = 20.0
    global_timeout_s: float = 900.0

    def __post_init__(self):
        if self.camera_side not in ("left", "right"):
            raise ScenarioValidationError("mission.camera_side", "must be 'left' or 'right'")


@dataclass
class Scenario:
    layout: BuildingLayout
    targets: list
    robot: RobotParams
    water: WaterSystemParams
    drift: DriftParams
    sensors: SensorConfig
    mission: MissionConfig
    start_pose: Pose2D
    ambient_temp: float = 25.0
    seed: int = 0
    waypoint_source: str = "extracted"   # "extracted" | "hand_set"
    fine_alignment_enabled: bool = True


def apparent_temperature(true_temp, emissivity):
    """Radiometric apparent temperature of a gray body, in degrees C.

    T_app = emissivity^(1/4) * T_true[K], converted back to Celsius. A 120 C
    anodized-aluminium element (eps 0.55) reads about 65 C.
    """
    if not (0.0 < emissivity <= 1.0):
        raise ValueError(f"emissivity must be in (0, 1], got {emissivity}")
    if true_temp < -KELVIN:
        raise ValueError(f"temperature below absolute zero: {true_temp}")
    return emissivity ** 0.25 * (true_temp + KELVIN) - KELVIN


def aperture_disc(target):
    """Center, outward unit normal and radius of the front-plate hole."""
    frame = target.element_center
    normal = frame.rotation[:, 2]
    center = frame.translation + normal * target.front_plate_offset
    return center, normal, target.aperture_diameter / 2.0


def wall_mounted_target(position, normal_2d, **kwargs):
    """FireTarget on a vertical wall: +z outward horizontal normal, +y up."""
    nx, ny = normal_2d
    n = math.hypot(nx, ny)
    z_axis = np.array([nx / n, ny / n, 0.0])
    y_axis = np.array([0.0, 0.0, 1.0])
    x_axis = np.cross(y_axis, z_axis)
    rot = np.column_stack([x_axis, y_axis, z_axis])
    frame = Transform3D(translation=np.asarray(position, dtype=float), rotation=rot)
    return FireTarget(element_center=frame, **kwargs)


def _point_in_polygon(pt, poly):
    x, y = pt
    inside = False
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xi:
                inside = not inside
    return inside


def _validate_scenario(sc):
    if sc.waypoint_source not in ("extracted", "hand_set"):
        raise ScenarioValidationError("waypoint_source", f"unknown value {sc.waypoint_source!r}")
    if sc.seed < 0:
        raise ScenarioValidationError("seed", "must be >= 0")
    poly = sc.layout.outer_polygon()
    for i, v in enumerate(sc.layout.pedestal):
        if not _point_in_polygon(v, poly):
            raise ScenarioValidationError("pedestal", f"vertex {i} not inside the outer walls")
    for g in sc.layout.door_gaps:
        if not (0 <= g.wall_index < len(sc.layout.outer_walls)):
            raise ScenarioValidationError("door_gaps", f"wall index {g.wall_index} out of range")
        if g.width <= sc.robot.footprint_width:
            raise ScenarioValidationError("door_gaps", "door width must exceed robot width")
        wall = sc.layout.outer_walls[g.wall_index]
        if g.offset < 0 or g.offset + g.width > wall.length + 1e-9:
            raise ScenarioValidationError("door_gaps", "gap extends past the wall")
    reach = sc.robot.reach
    if abs(reach - sum(sc.robot.arm_link_lengths)) > 1e-6:
        raise ScenarioValidationError("robot.arm_link_lengths", "reach mismatch")
    return sc


def default_scenario():
    """The nominal mission world.

    Start 60 m south of a 10 x 10 m building with a south-facing 1.2 m door,
    one 120 C heat source mid north wall. The long approach matches the scale
    of the outdoor leg driven in the field runs this simulator reproduces.
    """
    walls = [
        WallSegment((-5.0, 0.0), (5.0, 0.0)),
        WallSegment((5.0, 0.0), (5.0, 10.0)),
        WallSegment((5.0, 10.0), (-5.0, 10.0)),
        WallSegment((-5.0, 10.0), (-5.0, 0.0)),
    ]
    layout = BuildingLayout(
        outer_walls=walls,
        door_gaps=[DoorGap(wall_index=0, offset=4.4, width=1.2)],
        pedestal=[(-1.0, 4.0), (1.0, 4.0), (1.0, 6.0), (-1.0, 6.0)],
    )
    target = wall_mounted_target((1.5, 10.0, 1.0), (0.0, -1.0))
    return Scenario(
        layout=layout,
        targets=[target],
        robot=RobotParams(),
        water=WaterSystemParams(),
        drift=DriftParams(),
        sensors=SensorConfig(),
        mission=MissionConfig(),
        start_pose=Pose2D(0.0, -70.0, math.pi / 2.0),
    )


# ---------------------------------------------------------------------------
# JSON (de)serialization


def _take(d, key, default, caster, errors_as="validation"):
    if key not in d:
        return default
    try:
        return caster(d.pop(key))
    except (TypeError, ValueError) as e:
        if errors_as == "parse":
            raise ScenarioParseError(f"{key}: {e}") from e
        raise ScenarioValidationError(key, str(e)) from e


def _reject_unknown(d, context):
    if d:
        raise ScenarioParseError(f"unknown keys in {context}: {sorted(d)}")


def _layout_from_dict(d):
    walls = [
        WallSegment(tuple(w["p0"]), tuple(w["p1"]), float(w.get("height", 2.5)))
        for w in d.pop("outer_walls")
    ]
    gaps = [
        DoorGap(int(g["wall_index"]), float(g["offset"]), float(g["width"]))
        for g in d.pop("door_gaps", [])
    ]
    pedestal = [tuple(map(float, v)) for v in d.pop("pedestal", [])]
    height = float(d.pop("pedestal_height", 2.0))
    _reject_unknown(d, "layout")
    return BuildingLayout(walls, gaps, pedestal, height)


def _layout_to_dict(layout):
    return {
        "outer_walls": [
            {"p0": list(w.p0), "p1": list(w.p1), "height": w.height}
            for w in layout.outer_walls
        ],
        "door_gaps": [
            {"wall_index": g.wall_index, "offset": g.offset, "width": g.width}
            for g in layout.door_gaps
        ],
        "pedestal": [list(v) for v in layout.pedestal],
        "pedestal_height": layout.pedestal_height,
    }


def _target_from_dict(d):
    position = tuple(map(float, d.pop("position")))
    normal = tuple(map(float, d.pop("normal")))
    kwargs = {}
    for key in (
        "element_width", "element_height", "setpoint_temp", "emissivity",
        "front_plate_offset", "aperture_diameter", "liters_required",
        "plate_half_extent",
    ):
        if key in d:
            kwargs[key] = float(d.pop(key))
    _reject_unknown(d, "target")
    return wall_mounted_target(position, normal, **kwargs)


def _target_to_dict(t):
    n = t.element_center.rotation[:, 2]
    return {
        "position": [float(v) for v in t.element_center.translation],
        "normal": [float(n[0]), float(n[1])],
        "element_width": t.element_width,
        "element_height": t.element_height,
        "setpoint_temp": t.setpoint_temp,
        "emissivity": t.emissivity,
        "front_plate_offset": t.front_plate_offset,
        "aperture_diameter": t.aperture_diameter,
        "liters_required": t.liters_required,
        "plate_half_extent": t.plate_half_extent,
    }


def _simple_from_dict(cls, d, context, float_fields=(), int_fields=(), other=()):
    kwargs = {}
    for key in float_fields:
        if key in d:
            kwargs[key] = _take(d, key, None, float)
    for key in int_fields:
        if key in d:
            kwargs[key] = _take(d, key, None, int)
    for key, caster in other:
        if key in d:
            kwargs[key] = _take(d, key, None, caster)
    _reject_unknown(d, context)
    return cls(**kwargs)


_ROBOT_FLOATS = (
    "footprint_length", "footprint_width", "max_speed_outdoor", "max_speed_indoor",
    "max_arm_linear_speed",
)
_WATER_FLOATS = ("tank_volume_l", "pump_pressure_pa", "nozzle_diameter_m", "min_reach_m")
_DRIFT_FLOATS = ("sigma_t", "sigma_r")
_SENSOR_FLOATS = (
    "thermal_hfov_deg", "thermal_vfov_deg", "thermal_rate_hz", "thermal_noise_c",
    "depth_hfov_deg", "depth_vfov_deg", "depth_rate_hz", "depth_noise_m",
    "depth_min_range", "depth_max_range", "scan_rate_hz", "scan_noise_m",
    "scan_max_range", "scan3d_vfov_deg", "scan3d_noise_m", "lidar_height",
)
_SENSOR_INTS = (
    "thermal_width", "thermal_height", "depth_width", "depth_height",
    "scan_beams", "scan3d_rings", "scan3d_azimuths",
)
_MISSION_FLOATS = (
    "wall_standoff", "waypoint_spacing", "detect_threshold_c", "hand_offset_m",
    "pump_cycle_s", "global_timeout_s",
)


def _robot_from_dict(d):
    floats = {k: float(d.pop(k)) for k in list(d) if k in _ROBOT_FLOATS}
    kwargs = dict(floats)
    if "arm_mount_xyz" in d:
        kwargs["arm_mount"] = Transform3D.from_translation(*map(float, d.pop("arm_mount_xyz")))
    if "arm_link_lengths" in d:
        kwargs["arm_link_lengths"] = tuple(map(float, d.pop("arm_link_lengths")))
    if "thermal_to_depth_xyz" in d:
        kwargs["thermal_to_depth"] = Transform3D.from_translation(
            *map(float, d.pop("thermal_to_depth_xyz"))
        )
    if "nozzle_offset_xyz" in d:
        kwargs["nozzle_offset"] = Transform3D.from_translation(
            *map(float, d.pop("nozzle_offset_xyz"))
        )
    _reject_unknown(d, "robot")
    return RobotParams(**kwargs)


def _robot_to_dict(r):
    return {
        "footprint_length": r.footprint_length,
        "footprint_width": r.footprint_width,
        "max_speed_outdoor": r.max_speed_outdoor,
        "max_speed_indoor": r.max_speed_indoor,
        "max_arm_linear_speed": r.max_arm_linear_speed,
        "arm_mount_xyz": [float(v) for v in r.arm_mount.translation],
        "arm_link_lengths": list(r.arm_link_lengths),
        "thermal_to_depth_xyz": [float(v) for v in r.thermal_to_depth.translation],
        "nozzle_offset_xyz": [float(v) for v in r.nozzle_offset.translation],
    }


def scenario_from_dict(doc):
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario document must be a JSON object")
    d = dict(doc)
    base = default_scenario()

    layout = _layout_from_dict(dict(d.pop("layout"))) if "layout" in d else base.layout
    targets = (
        [_target_from_dict(dict(t)) for t in d.pop("targets")]
        if "targets" in d else base.targets
    )
    robot = _robot_from_dict(dict(d.pop("robot"))) if "robot" in d else base.robot
    water = (
        _simple_from_dict(WaterSystemParams, dict(d.pop("water")), "water",
                          float_fields=_WATER_FLOATS)
        if "water" in d else base.water
    )
    if "drift" in d:
        dd = dict(d.pop("drift"))
        bias = tuple(map(float, dd.pop("bias"))) if "bias" in dd else DriftParams().bias
        drift = _simple_from_dict(DriftParams, dd, "drift", float_fields=_DRIFT_FLOATS)
        drift.bias = bias
    else:
        drift = base.drift
    sensors = (
        _simple_from_dict(SensorConfig, dict(d.pop("sensors")), "sensors",
                          float_fields=_SENSOR_FLOATS, int_fields=_SENSOR_INTS)
        if "sensors" in d else base.sensors
    )
    mission = (
        _simple_from_dict(
            MissionConfig, dict(d.pop("mission")), "mission",
            float_fields=_MISSION_FLOATS,
            int_fields=("min_blob_pixels", "max_pump_cycles_per_target"),
            other=(("camera_side", str), ("refill_enabled", bool)),
        )
        if "mission" in d else base.mission
    )
    if "start_pose" in d:
        sp = d.pop("start_pose")
        start = Pose2D(float(sp[0]), float(sp[1]), float(sp[2]))
    else:
        start = base.start_pose

    sc = Scenario(
        layout=layout,
        targets=targets,
        robot=robot,
        water=water,
        drift=drift,
        sensors=sensors,
        mission=mission,
        start_pose=start,
        ambient_temp=_take(d, "ambient_temp", base.ambient_temp, float),
        seed=_take(d, "seed", 0, int),
        waypoint_source=_take(d, "waypoint_source", base.waypoint_source, str),
        fine_alignment_enabled=_take(d, "fine_alignment_enabled", True, bool),
    )
    _reject_unknown(d, "scenario")
    return _validate_scenario(sc)


def scenario_to_dict(sc):
    return {
        "layout": _layout_to_dict(sc.layout),
        "targets": [_target_to_dict(t) for t in sc.targets],
        "robot": _robot_to_dict(sc.robot),
        "water": {
            "tank_volume_l": sc.water.tank_volume_l,
            "pump_pressure_pa": sc.water.pump_pressure_pa,
            "nozzle_diameter_m": sc.water.nozzle_diameter_m,
            "min_reach_m": sc.water.min_reach_m,
        },
        "drift": {
            "sigma_t": sc.drift.sigma_t,
            "sigma_r": sc.drift.sigma_r,
            "bias": list(sc.drift.bias),
        },
        "sensors": {k: getattr(sc.sensors, k) for k in
                    list(_SENSOR_INTS) + list(_SENSOR_FLOATS)},
        "mission": {
            "wall_standoff": sc.mission.wall_standoff,
            "waypoint_spacing": sc.mission.waypoint_spacing,
            "detect_threshold_c": sc.mission.detect_threshold_c,
            "min_blob_pixels": sc.mission.min_blob_pixels,
            "camera_side": sc.mission.camera_side,
            "hand_offset_m": sc.mission.hand_offset_m,
            "refill_enabled": sc.mission.refill_enabled,
            "max_pump_cycles_per_target": sc.mission.max_pump_cycles_per_target,
            "pump_cycle_s": sc.mission.pump_cycle_s,
            "global_timeout_s": sc.mission.global_timeout_s,
        },
        "start_pose": [sc.start_pose.x, sc.start_pose.y, sc.start_pose.heading],
        "ambient_temp": sc.ambient_temp,
        "seed": sc.seed,
        "waypoint_source": sc.waypoint_source,
        "fine_alignment_enabled": sc.fine_alignment_enabled,
    }


def load_scenario(text):
    """Parse and validate a scenario JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"invalid JSON: {e}") from e
    return scenario_from_dict(doc)


def dump_scenario(sc):
    return json.dumps(scenario_to_dict(sc), indent=2, sort_keys=True)
