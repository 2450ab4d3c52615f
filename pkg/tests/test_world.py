import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from firesim.world import (ScenarioParseError, ScenarioValidationError,
                           apparent_temperature, aperture_disc, default_scenario,
                           dump_scenario, load_scenario, scenario_to_dict,
                           wall_mounted_target)


def test_apparent_temperature_anodized_element():
    # eps^(1/4) * 393.15 K = 338.57 K = 65.42 C, within 5 C of the reported ~70 C
    t = apparent_temperature(120.0, 0.55)
    assert t == pytest.approx(0.55 ** 0.25 * 393.15 - 273.15, abs=1e-9)
    assert t == pytest.approx(65.4, abs=0.1)
    assert abs(t - 70.0) < 5.0


def test_apparent_temperature_blackbody_identity():
    assert apparent_temperature(120.0, 1.0) == pytest.approx(120.0)


def test_apparent_temperature_absolute_zero_fixed_point():
    assert apparent_temperature(-273.15, 0.55) == pytest.approx(-273.15)


def test_apparent_temperature_domain_errors():
    with pytest.raises(ValueError):
        apparent_temperature(20.0, 0.0)
    with pytest.raises(ValueError):
        apparent_temperature(20.0, 1.5)
    with pytest.raises(ValueError):
        apparent_temperature(-300.0, 0.5)


@given(st.floats(-200.0, 1000.0), st.floats(0.01, 1.0))
def test_apparent_temperature_never_exceeds_truth(t, eps):
    assert apparent_temperature(t, eps) <= t + 1e-9


@given(st.floats(-200.0, 1000.0), st.floats(0.01, 0.99))
def test_apparent_temperature_monotone_in_both_args(t, eps):
    assert apparent_temperature(t + 1.0, eps) > apparent_temperature(t, eps)
    assert apparent_temperature(t, eps + 0.01) > apparent_temperature(t, eps)


def test_aperture_disc_geometry():
    tgt = wall_mounted_target((1.5, 10.0, 1.0), (0.0, -1.0))
    center, normal, radius = aperture_disc(tgt)
    assert radius == pytest.approx(0.075)
    assert np.linalg.norm(center - tgt.element_center.translation) == pytest.approx(0.15)
    assert np.linalg.norm(normal) == pytest.approx(1.0)
    assert np.allclose(normal, [0.0, -1.0, 0.0])


def test_default_scenario_paper_parameters():
    sc = default_scenario()
    assert sc.water.tank_volume_l == 15.0
    assert sc.water.pump_pressure_pa == 1.0e5
    assert sc.water.nozzle_diameter_m == pytest.approx(0.00381)
    assert sc.robot.max_speed_outdoor == 2.0
    assert sc.robot.max_speed_indoor == 0.6
    assert sc.robot.reach == pytest.approx(0.90)
    assert np.linalg.norm(sc.robot.thermal_to_depth.translation) == pytest.approx(0.05)
    assert sc.targets[0].setpoint_temp == 120.0
    assert sc.targets[0].emissivity == 0.55
    assert sc.targets[0].aperture_diameter == pytest.approx(0.15)
    assert sc.targets[0].front_plate_offset == pytest.approx(0.15)
    assert sc.targets[0].liters_required == 1.0


def test_load_minimal_document_fills_defaults():
    sc = load_scenario("{}")
    assert sc.water.tank_volume_l == 15.0
    assert sc.water.pump_pressure_pa == 1.0e5
    assert sc.water.nozzle_diameter_m == pytest.approx(0.00381)
    assert sc.seed == 0


def test_load_rejects_bad_emissivity_naming_field():
    doc = {"targets": [{"position": [0, 10, 1], "normal": [0, -1], "emissivity": 1.3}]}
    with pytest.raises(ScenarioValidationError) as exc:
        load_scenario(json.dumps(doc))
    assert "emissivity" in str(exc.value)


def test_load_rejects_malformed_json():
    with pytest.raises(ScenarioParseError):
        load_scenario("{not json")


def test_load_rejects_unknown_keys():
    with pytest.raises(ScenarioParseError):
        load_scenario('{"bogus_key": 1}')


def test_missing_seed_defaults_to_zero():
    sc = load_scenario("{}")
    assert sc.seed == 0


def test_scenario_roundtrip_identical():
    sc = default_scenario()
    text = dump_scenario(sc)
    sc2 = load_scenario(text)
    assert scenario_to_dict(sc2) == scenario_to_dict(sc)
    assert dump_scenario(sc2) == text


def test_roundtrip_preserves_overrides():
    doc = {"seed": 9, "waypoint_source": "hand_set",
           "fine_alignment_enabled": False,
           "drift": {"sigma_t": 0.05, "bias": [0.001, 0.002]}}
    sc = load_scenario(json.dumps(doc))
    assert sc.seed == 9
    assert sc.waypoint_source == "hand_set"
    assert not sc.fine_alignment_enabled
    assert sc.drift.sigma_t == 0.05
    assert sc.drift.bias == (0.001, 0.002)
    sc2 = load_scenario(dump_scenario(sc))
    assert scenario_to_dict(sc2) == scenario_to_dict(sc)


def test_pedestal_outside_walls_rejected():
    doc = {"layout": {
        "outer_walls": [
            {"p0": [-5, 0], "p1": [5, 0]}, {"p0": [5, 0], "p1": [5, 10]},
            {"p0": [5, 10], "p1": [-5, 10]}, {"p0": [-5, 10], "p1": [-5, 0]},
        ],
        "door_gaps": [{"wall_index": 0, "offset": 4.4, "width": 1.2}],
        "pedestal": [[20, 20], [21, 20], [21, 21], [20, 21]],
    }}
    with pytest.raises(ScenarioValidationError) as exc:
        load_scenario(json.dumps(doc))
    assert "pedestal" in str(exc.value)


def test_door_narrower_than_robot_rejected():
    doc = {"layout": {
        "outer_walls": [
            {"p0": [-5, 0], "p1": [5, 0]}, {"p0": [5, 0], "p1": [5, 10]},
            {"p0": [5, 10], "p1": [-5, 10]}, {"p0": [-5, 10], "p1": [-5, 0]},
        ],
        "door_gaps": [{"wall_index": 0, "offset": 4.4, "width": 0.3}],
        "pedestal": [],
    }}
    with pytest.raises(ScenarioValidationError) as exc:
        load_scenario(json.dumps(doc))
    assert "door" in str(exc.value)


def test_solid_segments_cut_door_gap():
    sc = default_scenario()
    segs = sc.layout.solid_segments()
    # south wall split into two pieces around the gap, 4 other outer walls
    # stay whole, pedestal adds 4 edges
    assert len(segs) == 2 + 3 + 4
    south = [s for s in segs if s[0][1] == 0.0 and s[1][1] == 0.0]
    assert len(south) == 2
    lengths = sorted(round(math.hypot(s[1][0] - s[0][0], s[1][1] - s[0][1]), 6)
                     for s in south)
    assert lengths == [4.4, 4.4]
