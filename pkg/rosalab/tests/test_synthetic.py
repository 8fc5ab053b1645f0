import os

import pytest

from rosalab.config import load_config_file
from rosalab.resources.data import AgentClass
from rosalab.resources.errors import InvalidSpec
from rosalab.resources.synthetic import (ArmFlow, TrafficSpec, VehicleTrip,
                                         VruCrossing,
                                         generate_synthetic_dataset,
                                         generate_synthetic_scenario)
from rosalab.resources.zones import zone_occupied

DEMO_TRAFFIC_FILE = os.path.join(
    os.path.dirname(__file__), '..', 'seed', 'demo_traffic.yaml'
)


def test_vru_crossing_occupies_its_zone_exactly(geo, crosswalk):
    spec = TrafficSpec(duration=30, crossings=(VruCrossing(0, 10, 4),))
    series = generate_synthetic_scenario(geo, spec, seed=0)
    occupied = [t for t in range(30) if zone_occupied(series.frame_at(t).states, crosswalk)]
    assert occupied == [10, 11, 12, 13, 14]


def test_empty_spec_gives_empty_frames(geo):
    series = generate_synthetic_scenario(geo, TrafficSpec(duration=5), seed=0)
    assert [frame.timestamp for frame in series.frames] == [0, 1, 2, 3, 4]
    assert all(not frame.states for frame in series.frames)


def test_constant_speed_vehicle_on_the_approach(geo):
    spec = TrafficSpec(duration=40, trips=(VehicleTrip(0, 2, 0, 8.0),))
    series = generate_synthetic_scenario(geo, spec, seed=0)
    for t in range(1, 7):
        state = series.frame_at(t).by_id['veh-0000']
        assert state.v == pytest.approx(8.0)
        assert state.a_tan == pytest.approx(0.0, abs=1e-9)
        assert state.exit == 2


def test_generation_is_deterministic(geo):
    spec = TrafficSpec(
        duration=60,
        flows=tuple(ArmFlow(arm.arm_id, 0.1) for arm in geo.arms),
        speed_jitter=1.0,
    )
    first = generate_synthetic_scenario(geo, spec, seed=11)
    second = generate_synthetic_scenario(geo, spec, seed=11)
    assert first == second
    assert first.agent_ids


def test_vru_speeds_stay_in_walking_range(geo):
    spec = TrafficSpec(duration=30, crossings=(VruCrossing(1, 8, 6, reverse=True),))
    series = generate_synthetic_scenario(geo, spec, seed=0)
    speeds = [
        s.v for frame in series.frames for s in frame.states if s.agent_class is AgentClass.VRU
    ]
    assert speeds and all(1.0 - 1e-9 <= v <= 1.5 + 1e-9 for v in speeds)


@pytest.mark.parametrize(
    'spec',
    [
        TrafficSpec(duration=10, crossings=(VruCrossing(0, 2, 2),)),
        TrafficSpec(duration=10, crossings=(VruCrossing(3, 2, 5),)),
        TrafficSpec(duration=10, trips=(VehicleTrip(0, 9, 0),)),
        TrafficSpec(duration=10, speed=4.0, speed_jitter=4.0),
    ],
)
def test_invalid_traffic_specs(geo, spec):
    with pytest.raises(InvalidSpec):
        generate_synthetic_scenario(geo, spec, seed=0)


def test_malformed_traffic_mapping():
    with pytest.raises(InvalidSpec):
        TrafficSpec.from_dict({'flows': []})


def test_bundled_demo_traffic(geo):
    spec = TrafficSpec.from_dict(load_config_file(DEMO_TRAFFIC_FILE))
    series = generate_synthetic_scenario(geo, spec, seed=5)
    assert len(series.frames) == 600
    assert series.name == 'demo'
    assert series.has_vru
    assert TrafficSpec.from_dict(spec.to_dict()) == spec


def test_synthetic_dataset(geo):
    recordings = generate_synthetic_dataset(geo, 3, seed=2, duration=20)
    assert [r.name for r in recordings] == ['synthetic-0000', 'synthetic-0001', 'synthetic-0002']
    assert all(len(r.frames) == 20 for r in recordings)
