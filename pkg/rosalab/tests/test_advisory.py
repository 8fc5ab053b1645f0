import numpy as np
import pytest

from rosalab.resources.advisory import (V_MAX, AdvisoryConfig, AdvisoryInput,
                                        Stage, apply_decel_limit,
                                        optimal_speed, rosa_step,
                                        time_to_arrival)
from rosalab.resources.errors import (HorizonMismatch, InvalidAdvisoryInput,
                                      InvalidSpec, NegativeDistance,
                                      NonPositiveTime)
from rosalab.resources.zones import OccupancyMatrix

CROSSWALK, ENTRY = 0, 3


def occupancy(crosswalk_steps=(), entry_steps=(), m=5):
    values = np.zeros((2, m), dtype=bool)
    for step in crosswalk_steps:
        values[0, step - 1] = True
    for step in entry_steps:
        values[1, step - 1] = True
    return OccupancyMatrix((CROSSWALK, ENTRY), values)


def advisory_input(v=12.0, d_c=36.0, d_e=48.0, grid=None, m=5):
    return AdvisoryInput(
        v=v,
        d_c=d_c,
        d_e=d_e,
        occupancy=occupancy(m=m) if grid is None else grid,
        m=m,
        crosswalk_zone=CROSSWALK,
        entry_zone=ENTRY,
    )


@pytest.mark.parametrize(
    'd, v, expected',
    [(45.0, 15.0, 3), (44.0, 15.0, 3), (0.0, 5.0, 0), (46.0, 15.0, 4), (10.0, 0.0, None), (10.0, 0.1, None)],
)
def test_time_to_arrival(d, v, expected):
    assert time_to_arrival(d, v) == expected


def test_time_to_arrival_negative_distance():
    with pytest.raises(NegativeDistance):
        time_to_arrival(-1.0, 5.0)


@pytest.mark.parametrize(
    'd, t, v, v_max, expected',
    [
        (45.0, 3.0, 10.0, 25.0, 20.0),
        (45.0, 3.0, 10.0, V_MAX, V_MAX),
        (20.0, 4.0, 10.0, V_MAX, 0.0),
        (0.0, 1.0, 5.0, V_MAX, 0.0),
    ],
)
def test_optimal_speed(d, t, v, v_max, expected):
    assert optimal_speed(d, t, v, v_max) == pytest.approx(expected)


def test_optimal_speed_rejects_bad_arguments():
    with pytest.raises(NonPositiveTime):
        optimal_speed(10.0, 0.0, 5.0)
    with pytest.raises(NegativeDistance):
        optimal_speed(-10.0, 2.0, 5.0)


def test_clear_zones_keep_the_current_speed():
    output = rosa_step(advisory_input())
    assert output.stage is Stage.CROSSWALK_AND_ENTRY
    assert output.advised_speed == 12.0
    assert not output.adjusted
    assert [trace.arrival_step for trace in output.rationale] == [3, 4]


def test_occupied_crosswalk_shifts_arrival_one_second():
    output = rosa_step(advisory_input(grid=occupancy(crosswalk_steps=[3])))
    assert output.advised_speed == pytest.approx(optimal_speed(36.0, 4, 12.0))
    assert output.advised_speed == pytest.approx(6.0)
    assert output.stage is Stage.CROSSWALK_AND_ENTRY
    assert output.adjusted
    assert output.rationale[0].occupied


def test_occupied_entry_shifts_arrival_one_second():
    output = rosa_step(advisory_input(grid=occupancy(entry_steps=[4])))
    assert output.advised_speed == pytest.approx(optimal_speed(48.0, 5, 12.0))
    assert output.rationale[1].occupied and not output.rationale[0].occupied


def test_occupancy_at_other_steps_is_ignored():
    output = rosa_step(advisory_input(grid=occupancy(crosswalk_steps=[1, 2, 4, 5], entry_steps=[1, 2, 3, 5])))
    assert output.advised_speed == 12.0
    assert not output.adjusted


def test_crosswalk_beyond_the_horizon_is_not_triggered():
    output = rosa_step(advisory_input(d_c=84.0, d_e=96.0, grid=occupancy(crosswalk_steps=[5])))
    assert output.stage is Stage.NOT_TRIGGERED
    assert output.advised_speed is None
    assert output.rationale[0].beyond_horizon


def test_standstill_is_not_triggered():
    output = rosa_step(advisory_input(v=0.0))
    assert output.stage is Stage.NOT_TRIGGERED
    assert output.rationale[0].arrival_step is None


def test_entry_beyond_the_horizon_stops_after_the_crosswalk():
    output = rosa_step(advisory_input(d_c=36.0, d_e=80.0))
    assert output.stage is Stage.CROSSWALK_ONLY
    assert output.advised_speed == 12.0
    assert output.rationale[1].beyond_horizon


def test_entry_arrival_from_the_crosswalk_speed():
    grid = occupancy(crosswalk_steps=[3])
    current = rosa_step(advisory_input(grid=grid))
    slowed = rosa_step(advisory_input(grid=grid), AdvisoryConfig(entry_arrival_basis='crosswalk_speed'))
    assert current.stage is Stage.CROSSWALK_AND_ENTRY
    # 48 m at 6 m/s takes 8 s, past the horizon
    assert slowed.stage is Stage.CROSSWALK_ONLY
    assert slowed.advised_speed == pytest.approx(6.0)


def test_speed_above_the_limit_is_capped():
    output = rosa_step(advisory_input(v=15.0, d_c=45.0, d_e=60.0))
    assert output.advised_speed == V_MAX


def test_advised_speed_stays_in_range():
    rng = np.random.default_rng(0)
    for _ in range(300):
        v = float(rng.uniform(0.0, 16.0))
        d_c = float(rng.uniform(0.0, 80.0))
        d_e = d_c + float(rng.uniform(0.0, 20.0))
        grid = OccupancyMatrix((CROSSWALK, ENTRY), rng.uniform(size=(2, 5)) < 0.4)
        output = rosa_step(advisory_input(v, d_c, d_e, grid))
        if output.advised_speed is not None:
            assert 0.0 <= output.advised_speed <= V_MAX


def test_horizon_mismatch():
    with pytest.raises(HorizonMismatch):
        rosa_step(advisory_input(grid=occupancy(m=4)))


@pytest.mark.parametrize('v, d_c, d_e', [(-1.0, 10.0, 20.0), (5.0, 20.0, 10.0), (5.0, -1.0, 10.0)])
def test_invalid_advisory_input(v, d_c, d_e):
    with pytest.raises(InvalidAdvisoryInput):
        advisory_input(v, d_c, d_e)


def test_unknown_arrival_basis():
    with pytest.raises(InvalidSpec):
        AdvisoryConfig(entry_arrival_basis='guess')


def test_output_serializes_its_rationale():
    data = rosa_step(advisory_input(grid=occupancy(crosswalk_steps=[3]))).to_dict()
    assert data['stage'] == 'CrosswalkAndEntry'
    assert data['rationale'][0] == {
        'zone_id': CROSSWALK,
        'stage': 'crosswalk',
        'arrival_step': 3,
        'occupied': True,
        'beyond_horizon': False,
    }


@pytest.mark.parametrize(
    'v_now, v_advised, kwargs, expected',
    [
        (14.0, 10.0, {}, 12.0),
        (10.0, 10.0, {}, 10.0),
        (5.0, 20.0, {'a_acc_max': 2.5}, 7.5),
        (1.0, 0.0, {}, 0.0),
        (13.0, 20.0, {}, V_MAX),
        (8.0, 0.0, {'dt': 0.5}, 7.0),
    ],
)
def test_apply_decel_limit(v_now, v_advised, kwargs, expected):
    assert apply_decel_limit(v_now, v_advised, **kwargs) == pytest.approx(expected)


def test_apply_decel_limit_needs_positive_step():
    with pytest.raises(NonPositiveTime):
        apply_decel_limit(5.0, 5.0, dt=0.0)
