"""
Synthetic roundabout traffic: Poisson vehicle arrivals per arm, explicit
vehicle trips and pedestrians crossing the crosswalks, sampled at 1 Hz.
"""
import math
from dataclasses import dataclass

import numpy as np

from rosalab.config import setup_custom_logger
from rosalab.resources.data import (AgentClass, AgentState, Frame,
                                    FrameSeries, infer_exit_labels,
                                    wrap_angle)
from rosalab.resources.errors import (InvalidGeometry, InvalidSpec,
                                      validate_count, validate_non_negative,
                                      validate_positive)
from rosalab.resources.geometry import (RoundaboutGeometry, normal_vector,
                                        unit_vector)

VRU_SPEED_RANGE = (1.0, 1.5)
VRU_LEAD_IN = 3
MIN_HEADWAY = 2.0

logger = setup_custom_logger()


@dataclass(frozen=True)
class ArmFlow:
    """Poisson arrivals on one arm, ``rate`` vehicles per second."""

    arm_id: int
    rate: float
    exits: tuple[int, ...] = ()


@dataclass(frozen=True)
class VehicleTrip:
    entry_arm: int
    exit_arm: int
    depart: int
    speed: float | None = None


@dataclass(frozen=True)
class VruCrossing:
    """
    A pedestrian crossing one crosswalk.

    The VRU sits on the crosswalk edge at ``start`` and on the opposite
    edge at ``start + duration``; it walks ``VRU_LEAD_IN`` seconds on the
    pavement before and after.
    """

    zone_id: int
    start: int
    duration: int
    reverse: bool = False


@dataclass(frozen=True)
class TrafficSpec:
    """
    Everything needed to generate one synthetic recording.

    Arguments and Attributes:
        - ``duration (int):`` Number of 1 Hz frames.
        - ``flows (tuple[ArmFlow]):`` Random arrivals per arm.
        - ``trips (tuple[VehicleTrip]):`` Deterministic vehicle trips.
        - ``crossings (tuple[VruCrossing]):`` Pedestrian crossings.
        - ``speed (float):`` Default vehicle speed in m/s.
        - ``speed_jitter (float):`` Half-width of the uniform speed noise
        applied to Poisson vehicles.
        - ``approach, departure (float):`` Metres of arm travelled before
        the entry line and after the exit.
    """

    duration: int
    flows: tuple[ArmFlow, ...] = ()
    trips: tuple[VehicleTrip, ...] = ()
    crossings: tuple[VruCrossing, ...] = ()
    speed: float = 8.0
    speed_jitter: float = 0.0
    approach: float = 60.0
    departure: float = 60.0
    name: str = 'synthetic'

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'duration': self.duration,
            'speed': self.speed,
            'speed_jitter': self.speed_jitter,
            'approach': self.approach,
            'departure': self.departure,
            'flows': [
                {'arm_id': f.arm_id, 'rate': f.rate, 'exits': list(f.exits)}
                for f in self.flows
            ],
            'trips': [
                {
                    'entry_arm': t.entry_arm,
                    'exit_arm': t.exit_arm,
                    'depart': t.depart,
                    'speed': t.speed,
                }
                for t in self.trips
            ],
            'crossings': [
                {
                    'zone_id': c.zone_id,
                    'start': c.start,
                    'duration': c.duration,
                    'reverse': c.reverse,
                }
                for c in self.crossings
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'TrafficSpec':
        try:
            return cls(
                duration=int(data['duration']),
                flows=tuple(
                    ArmFlow(
                        int(f['arm_id']),
                        float(f['rate']),
                        tuple(int(e) for e in f.get('exits', ())),
                    )
                    for f in data.get('flows', ())
                ),
                trips=tuple(
                    VehicleTrip(
                        int(t['entry_arm']),
                        int(t['exit_arm']),
                        int(t['depart']),
                        None if t.get('speed') is None else float(t['speed']),
                    )
                    for t in data.get('trips', ())
                ),
                crossings=tuple(
                    VruCrossing(
                        int(c['zone_id']),
                        int(c['start']),
                        int(c['duration']),
                        bool(c.get('reverse', False)),
                    )
                    for c in data.get('crossings', ())
                ),
                speed=float(data.get('speed', 8.0)),
                speed_jitter=float(data.get('speed_jitter', 0.0)),
                approach=float(data.get('approach', 60.0)),
                departure=float(data.get('departure', 60.0)),
                name=str(data.get('name', 'synthetic')),
            )
        except (KeyError, TypeError, ValueError) as error:
            raise InvalidSpec(
                f'✗ MALFORMED TRAFFIC SPEC: {error}', reason=str(error)
            )


def _validate_spec(geo: RoundaboutGeometry, spec: TrafficSpec) -> None:
    validate_count(spec.duration, 'duration', minimum=0)
    validate_positive(spec.speed, 'speed')
    validate_non_negative(spec.speed_jitter, 'speed_jitter')
    if spec.speed_jitter >= spec.speed:
        raise InvalidSpec(
            '✗ SPEED JITTER MUST STAY BELOW THE BASE SPEED',
            speed=spec.speed,
            speed_jitter=spec.speed_jitter,
        )
    arm_ids = {arm.arm_id for arm in geo.arms}
    try:
        for flow in spec.flows:
            validate_non_negative(flow.rate, 'rate')
            geo.arm(flow.arm_id)
            for exit_arm in flow.exits:
                geo.arm(exit_arm)
        for trip in spec.trips:
            geo.arm(trip.entry_arm)
            geo.arm(trip.exit_arm)
            if trip.speed is not None:
                validate_positive(trip.speed, 'speed')
    except InvalidGeometry as error:
        raise InvalidSpec(error.message, arms=sorted(arm_ids))
    crosswalk_ids = {z.zone_id for z in geo.crosswalks}
    for crossing in spec.crossings:
        if crossing.zone_id not in crosswalk_ids:
            raise InvalidSpec(
                f'✗ ZONE {crossing.zone_id} IS NOT A CROSSWALK',
                zone_id=crossing.zone_id,
            )
        validate_count(crossing.duration, 'duration')


def _crosswalk_frame(geo: RoundaboutGeometry, zone_id: int):
    """Radial centre, lateral extent and axis vectors of a crosswalk."""
    zone = geo.zone(zone_id)
    angle = geo.arm(zone.arm_id).center_angle
    center = np.asarray(geo.center)
    u, n = unit_vector(angle), normal_vector(angle)
    polygon = np.asarray(zone.polygon) - center
    radial = polygon @ u
    lateral = polygon @ n
    return (
        float((radial.min() + radial.max()) / 2.0),
        float(lateral.min()),
        float(lateral.max()),
        center,
        u,
        n,
    )


def _vru_positions(
    geo: RoundaboutGeometry, crossing: VruCrossing
) -> dict[int, np.ndarray]:
    radial, low, high, center, u, n = _crosswalk_frame(geo, crossing.zone_id)
    span = high - low
    speed = span / crossing.duration
    if not VRU_SPEED_RANGE[0] - 1e-9 <= speed <= VRU_SPEED_RANGE[1] + 1e-9:
        raise InvalidSpec(
            f'✗ CROSSING ZONE {crossing.zone_id} IN {crossing.duration} S '
            f'NEEDS {speed:.2f} M/S, OUTSIDE {VRU_SPEED_RANGE}',
            zone_id=crossing.zone_id,
            speed=speed,
        )
    start_lateral, direction = (high, -1.0) if crossing.reverse else (low, 1.0)
    positions = {}
    first = crossing.start - VRU_LEAD_IN
    last = crossing.start + crossing.duration + VRU_LEAD_IN
    for t in range(first, last + 1):
        lateral = start_lateral + direction * speed * (t - crossing.start)
        positions[t] = center + radial * u + lateral * n
    return positions


def _vehicle_positions(
    geo: RoundaboutGeometry,
    trip: VehicleTrip,
    speed: float,
    spec: TrafficSpec,
) -> dict[int, np.ndarray]:
    route = geo.vehicle_route(
        trip.entry_arm, trip.exit_arm, spec.approach, spec.departure
    )
    positions = {}
    t = trip.depart
    while True:
        s = speed * (t - trip.depart)
        if s > route.length:
            break
        positions[t] = np.asarray(route.position_at(s))
        t += 1
    return positions


def kinematics_from_positions(
    positions: dict[int, np.ndarray], fallback_heading: float = 0.0
) -> dict[int, tuple[float, float, float, float]]:
    """
    Finite-difference kinematics of a 1 Hz track.

    Returns:
        - ``dict``: frame -> ``(v, a_tan, a_lat, theta)``. Speed is the
        displacement over the past second (the next second for the first
        frame); the first frame carries zero accelerations.
    """
    frames = sorted(positions)
    if len(frames) == 1:
        return {frames[0]: (0.0, 0.0, 0.0, wrap_angle(fallback_heading))}
    result = {}
    previous = None
    for index, t in enumerate(frames):
        if index == 0:
            delta = positions[frames[1]] - positions[t]
        else:
            delta = positions[t] - positions[frames[index - 1]]
        v = float(np.hypot(*delta))
        if v > 0:
            theta = math.atan2(delta[1], delta[0])
        elif previous is not None:
            theta = previous[3]
        else:
            theta = fallback_heading
        if previous is None:
            a_tan = a_lat = 0.0
        else:
            a_tan = v - previous[0]
            a_lat = v * wrap_angle(theta - previous[3])
        previous = (v, a_tan, a_lat, wrap_angle(theta))
        result[t] = previous
    return result


def _arrival_trips(
    spec: TrafficSpec, geo: RoundaboutGeometry, rng: np.random.Generator
) -> list[tuple[VehicleTrip, float]]:
    trips = []
    for flow in sorted(spec.flows, key=lambda f: f.arm_id):
        if flow.rate <= 0:
            continue
        exits = flow.exits or tuple(
            arm.arm_id for arm in geo.arms if arm.arm_id != flow.arm_id
        )
        t, last = 0.0, -math.inf
        while True:
            t += rng.exponential(1.0 / flow.rate)
            t = max(t, last + MIN_HEADWAY)
            if t >= spec.duration:
                break
            last = t
            exit_arm = int(exits[rng.integers(len(exits))])
            jitter = rng.uniform(-spec.speed_jitter, spec.speed_jitter)
            trips.append(
                (
                    VehicleTrip(flow.arm_id, exit_arm, int(math.floor(t))),
                    spec.speed + jitter,
                )
            )
    for trip in spec.trips:
        trips.append((trip, spec.speed if trip.speed is None else trip.speed))
    trips.sort(key=lambda item: (item[0].depart, item[0].entry_arm))
    return trips


def generate_synthetic_scenario(
    geo: RoundaboutGeometry, spec: TrafficSpec, seed: int = 0
) -> FrameSeries:
    """
    Generate a 1 Hz recording from a traffic specification.

    Args:
        - ``geo (RoundaboutGeometry):`` Layout the agents move through.
        - ``spec (TrafficSpec):`` Flows, explicit trips and crossings.
        - ``seed (int, optional):`` Seed of the arrival process.

    Returns:
        - ``FrameSeries``: frames ``0 .. duration - 1`` (empty ones
        included) with kinematics derived from positions and exit labels
        inferred from the geometry.
    """
    _validate_spec(geo, spec)
    rng = np.random.default_rng(seed)

    tracks: list[tuple[str, AgentClass, dict, float]] = []
    for index, (trip, speed) in enumerate(_arrival_trips(spec, geo, rng)):
        positions = _vehicle_positions(geo, trip, speed, spec)
        heading = geo.arm(trip.entry_arm).center_angle + math.pi
        tracks.append((f'veh-{index:04d}', AgentClass.VEHICLE, positions, heading))
    for index, crossing in enumerate(spec.crossings):
        positions = _vru_positions(geo, crossing)
        tracks.append((f'vru-{index:03d}', AgentClass.VRU, positions, 0.0))

    per_frame: dict[int, list[AgentState]] = {t: [] for t in range(spec.duration)}
    for agent_id, agent_class, positions, heading in tracks:
        kinematics = kinematics_from_positions(positions, heading)
        for t, (v, a_tan, a_lat, theta) in kinematics.items():
            if t not in per_frame:
                continue
            x, y = positions[t]
            per_frame[t].append(
                AgentState(
                    agent_id=agent_id,
                    agent_class=agent_class,
                    x=float(x),
                    y=float(y),
                    v=v,
                    a_tan=a_tan,
                    a_lat=a_lat,
                    theta=theta,
                )
            )

    series = FrameSeries(
        frames=tuple(Frame(t, tuple(per_frame[t])) for t in range(spec.duration)),
        frequency_hz=1,
        geometry_ref=geo.name,
        name=spec.name,
    )
    logger.debug(
        f'SYNTHETIC SCENARIO [{spec.name} - agents: {len(tracks)}, frames: {spec.duration}]'
    )
    return infer_exit_labels(series, geo)


def random_traffic_spec(
    geo: RoundaboutGeometry,
    rng: np.random.Generator,
    duration: int = 60,
    name: str = 'synthetic',
    vru_probability: float = 0.5,
) -> TrafficSpec:
    """Draw a busy but plausible traffic mix for training data."""
    flows = tuple(
        ArmFlow(arm.arm_id, float(rng.uniform(0.03, 0.12)))
        for arm in geo.arms
    )
    crossings = []
    for zone in geo.crosswalks:
        if rng.uniform() >= vru_probability:
            continue
        crossing_time = int(rng.integers(4, 7))
        start = int(rng.integers(0, max(1, duration - crossing_time)))
        crossings.append(
            VruCrossing(zone.zone_id, start, crossing_time, bool(rng.integers(2)))
        )
    return TrafficSpec(
        duration=duration,
        flows=flows,
        crossings=tuple(crossings),
        speed=float(rng.uniform(6.0, 9.0)),
        speed_jitter=1.0,
        name=name,
    )


def generate_synthetic_dataset(
    geo: RoundaboutGeometry, n_scenarios: int, seed: int = 0, duration: int = 60
) -> list[FrameSeries]:
    """
    ``n_scenarios`` independent recordings, each its own segment.

    The crosswalk spans 6 m in the bundled geometry, so the drawn crossing
    times of 4-6 s keep the walking speed inside the VRU range.
    """
    validate_count(n_scenarios, 'n_scenarios')
    rng = np.random.default_rng(seed)
    recordings = []
    for index in range(n_scenarios):
        spec = random_traffic_spec(geo, rng, duration, name=f'synthetic-{index:04d}')
        recordings.append(
            generate_synthetic_scenario(geo, spec, int(rng.integers(2**31)))
        )
    return recordings
