import numpy as np
import pytest

from rosalab.resources.data import Frame
from rosalab.resources.errors import (HorizonMismatch, InvalidGeometry,
                                      LengthMismatch)
from rosalab.resources.zones import (ClassificationReport, ConflictZone,
                                     OccupancyMatrix, OccupancySource,
                                     ZoneKind, occupancy_from_frame,
                                     occupancy_metrics, occupancy_series,
                                     point_in_zone, points_in_zone)
from rosalab.tests.helpers import (CROSSWALK_0_POINT, ENTRY_3_POINT, vehicle,
                                   vru)


@pytest.mark.parametrize(
    'point, expected',
    [
        ((20.0, 0.0), True),
        ((1000.0, 1000.0), False),
        ((18.0, 0.0), True),
        ((22.0, 3.0), True),
        ((22.5, 0.0), False),
    ],
)
def test_point_in_crosswalk(crosswalk, point, expected):
    assert point_in_zone(point, crosswalk) is expected


def test_vectorized_test_agrees_with_scalar_test(geo):
    rng = np.random.default_rng(0)
    points = rng.uniform(-30.0, 30.0, size=(500, 2))
    for zone in geo.zones:
        expected = [point_in_zone(p, zone) for p in points]
        assert points_in_zone(points, zone).tolist() == expected


def test_zone_needs_positive_area():
    with pytest.raises(InvalidGeometry):
        ConflictZone(9, ZoneKind.CROSSWALK, ((0, 0), (1, 1), (2, 2)))


def test_vru_occupies_only_its_crosswalk(geo):
    occupied = occupancy_from_frame(Frame(0, (vru('p', *CROSSWALK_0_POINT),)), geo.zones)
    assert occupied.tolist() == [True, False, False, False, False, False]


def test_vehicle_on_crosswalk_is_ignored(geo):
    occupied = occupancy_from_frame(Frame(0, (vehicle('v', *CROSSWALK_0_POINT),)), geo.zones)
    assert not occupied[:3].any()


def test_vehicle_occupies_entry_and_vru_does_not(geo):
    with_vehicle = occupancy_from_frame(Frame(0, (vehicle('v', *ENTRY_3_POINT),)), geo.zones)
    with_vru = occupancy_from_frame(Frame(0, (vru('p', *ENTRY_3_POINT),)), geo.zones)
    assert with_vehicle.tolist() == [False, False, False, True, False, False]
    assert not with_vru.any()


def test_empty_frame_is_clear(geo):
    assert not occupancy_from_frame(Frame(0), geo.zones).any()


def random_frame(rng, n_agents, timestamp=0):
    states = []
    for i in range(n_agents):
        x, y = rng.uniform(-25.0, 25.0, size=2)
        make = vru if rng.uniform() < 0.5 else vehicle
        states.append(make(f'a{i}', float(x), float(y)))
    return Frame(timestamp, tuple(states))


def test_occupancy_is_monotone_in_agents(geo):
    rng = np.random.default_rng(1)
    for _ in range(50):
        frame = random_frame(rng, 6)
        fewer = Frame(0, frame.states[:3])
        assert np.all(occupancy_from_frame(fewer, geo.zones) <= occupancy_from_frame(frame, geo.zones))


def test_zone_kinds_only_see_their_class(geo):
    rng = np.random.default_rng(2)
    for _ in range(50):
        frame = random_frame(rng, 8)
        vrus = Frame(0, tuple(s for s in frame.states if s.agent_class.value == 'VRU'))
        vehicles = Frame(0, tuple(s for s in frame.states if s.agent_class.value == 'Vehicle'))
        full = occupancy_from_frame(frame, geo.zones)
        assert full[:3].tolist() == occupancy_from_frame(vrus, geo.zones)[:3].tolist()
        assert full[3:].tolist() == occupancy_from_frame(vehicles, geo.zones)[3:].tolist()


def test_occupancy_series_shape_and_source(geo):
    frames = [Frame(t, (vru('p', *CROSSWALK_0_POINT),)) if t == 2 else Frame(t) for t in range(1, 6)]
    matrix = occupancy_series(frames, geo.zones, 5)
    assert matrix.values.shape == (6, 5)
    assert matrix.source is OccupancySource.PREDICTED
    assert matrix.occupied(0, 2) and not matrix.occupied(0, 1)


def test_occupancy_series_horizon_mismatch(geo):
    with pytest.raises(HorizonMismatch):
        occupancy_series([Frame(t) for t in range(4)], geo.zones, 5)


@pytest.mark.parametrize('step', [0, -1, 6])
def test_steps_outside_the_horizon_are_clear(step):
    matrix = OccupancyMatrix((0,), np.ones((1, 5), dtype=bool))
    assert matrix.occupied(0, step) is False


def grid(values):
    return OccupancyMatrix((0, 1), np.asarray(values, dtype=bool))


def test_perfect_prediction_scores_one():
    truth = [grid([[1, 0], [0, 1]]), grid([[0, 0], [1, 1]])]
    report = occupancy_metrics(truth, truth, step=1)
    assert report.precision == 1.0 and report.recall == 1.0
    assert report.fp == 0 and report.fn == 0


def test_all_false_prediction_scores_zero():
    truth = [grid([[1, 0], [0, 1]])]
    pred = [grid([[0, 0], [0, 0]])]
    report = occupancy_metrics(pred, truth, step=1)
    assert report.recall == 0.0 and report.precision == 0.0
    assert report.accuracy == 0.5


def test_metrics_restricted_to_zones():
    truth = [grid([[1, 1], [0, 0]])]
    pred = [grid([[1, 1], [1, 1]])]
    report = occupancy_metrics(pred, truth, step=2, zone_ids=[1])
    assert (report.tp, report.fp, report.tn, report.fn) == (0, 1, 0, 0)


def test_self_comparison_has_no_errors():
    rng = np.random.default_rng(3)
    stream = [grid(rng.uniform(size=(2, 3)) < 0.3) for _ in range(20)]
    for step in (1, 2, 3):
        report = occupancy_metrics(stream, stream, step)
        assert report.fp == report.fn == 0
        assert report.tp + report.tn == report.total == 40


def test_metrics_length_mismatch():
    with pytest.raises(LengthMismatch):
        occupancy_metrics([grid([[0], [0]])], [], step=1)


def test_report_ratios():
    report = ClassificationReport(tp=3, fp=1, tn=5, fn=1)
    assert report.precision == 0.75
    assert report.recall == 0.75
    assert report.f1 == pytest.approx(0.75)
    assert report.accuracy == 0.8


@pytest.mark.parametrize('step', [0, -1, 3])
def test_metrics_step_outside_the_horizon(step):
    stream = [grid([[1, 0], [0, 1]])]
    with pytest.raises(HorizonMismatch):
        occupancy_metrics(stream, stream, step)
