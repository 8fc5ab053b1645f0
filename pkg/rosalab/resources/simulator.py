"""
Deterministic 1 Hz simulation of one advisory-equipped ego vehicle
approaching the roundabout through replayed background traffic.

The ego moves along its lane-level route with constant acceleration inside
each second. Background agents are replayed verbatim, so baseline and
advised runs of one scenario see the same traffic.
"""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from rosalab.config import derive_seed, dump_json, setup_custom_logger
from rosalab.resources.advisory import (V_MAX, AdvisoryConfig, AdvisoryInput,
                                        Stage, apply_decel_limit,
                                        optimal_speed, rosa_step,
                                        time_to_arrival)
from rosalab.resources.data import Frame, FrameSeries, read_series, write_series
from rosalab.resources.errors import (BackgroundExhausted, EmptyInput,
                                      InvalidSpec, RosaError, validate_count,
                                      validate_positive)
from rosalab.resources.geometry import RoundaboutGeometry, default_geometry
from rosalab.resources.predictor.features import Variant
from rosalab.resources.predictor.inference import (TrajectoryPredictor,
                                                   TransformerModel)
from rosalab.resources.predictor.storage import load_parameters
from rosalab.resources.synthetic import (ArmFlow, TrafficSpec, VehicleTrip,
                                         VruCrossing,
                                         generate_synthetic_scenario)
from rosalab.resources.zones import (ConflictZone, OccupancySource, ZoneKind,
                                     occupancy_series, zone_occupied)

SUITE_DURATION = 90
SUITE_OPTIMIZABLE_SHARE = 0.2
PLATOON_SIZE = 3
PLATOON_SPEED = 7.0
MANIFEST_FILE = 'manifest.json'

logger = setup_custom_logger()


class PredictorMode(Enum):
    NONE = 'none'
    GROUND_TRUTH = 'ground-truth'
    MODEL = 'model'

    @classmethod
    def from_label(cls, label: str) -> 'PredictorMode':
        for mode in cls:
            if mode.value == label:
                return mode
        raise InvalidSpec(
            f'✗ UNKNOWN PREDICTOR MODE "{label}"',
            allowed=[mode.value for mode in cls],
        )


@dataclass(frozen=True)
class SimulatorConfig:
    """
    Arguments and Attributes:
        - ``v_cruise (float):`` Approach speed held far from the entry.
        - ``v_negotiation (float):`` Speed reached at the entry line.
        - ``decel_distance (float):`` Distance before the entry where the
        comfort ramp from ``v_cruise`` to ``v_negotiation`` starts.
        - ``a_dec_max, a_acc_max (float):`` Actuator limits in m/s².
        - ``run_out (float):`` Metres driven past the entry line before the
        episode ends.
        - ``entry_length (float):`` Length of the merge interval the ego
        occupies after the entry line.
        - ``horizon (int):`` Prediction horizon ``m`` in seconds.
        - ``stop_gap (float):`` Margin kept before a blocked zone.
        - ``min_clear_speed (float):`` Floor speed used to estimate how long
        the ego needs to clear a zone.
        - ``candidate_step (float):`` Resolution of the safe-speed search.
        - ``departure (float):`` Metres of exit arm in the ego route.
    """

    v_cruise: float = V_MAX
    v_negotiation: float = 8.0
    decel_distance: float = 100.0
    a_dec_max: float = 2.0
    a_acc_max: float = 2.5
    run_out: float = 20.0
    entry_length: float = 6.0
    horizon: int = 5
    stop_gap: float = 0.5
    min_clear_speed: float = 1.0
    candidate_step: float = 0.25
    departure: float = 40.0

    def __post_init__(self):
        for name in (
            'v_cruise',
            'v_negotiation',
            'decel_distance',
            'a_dec_max',
            'a_acc_max',
            'run_out',
            'entry_length',
            'min_clear_speed',
            'candidate_step',
            'departure',
        ):
            validate_positive(getattr(self, name), name)
        validate_count(self.horizon, 'horizon')

    def to_dict(self) -> dict:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> 'SimulatorConfig':
        known = {item.name for item in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(
                f'✗ UNKNOWN SIMULATOR SETTINGS {unknown}', unknown=unknown
            )
        return cls(**data)


@dataclass(frozen=True)
class EgoRoute:
    approach_arm: int
    crosswalk_zone: int
    entry_zone: int
    exit_arm: int

    def to_dict(self) -> dict:
        return {
            'approach_arm': self.approach_arm,
            'crosswalk_zone': self.crosswalk_zone,
            'entry_zone': self.entry_zone,
            'exit_arm': self.exit_arm,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'EgoRoute':
        return cls(
            int(data['approach_arm']),
            int(data['crosswalk_zone']),
            int(data['entry_zone']),
            int(data['exit_arm']),
        )


@dataclass(frozen=True)
class ScenarioSpec:
    """
    One ego trip through a replayed background.

    Arguments and Attributes:
        - ``name (str):`` Scenario identifier.
        - ``background (FrameSeries):`` Replayed traffic, never modified.
        - ``route (EgoRoute):`` Approach arm, its crosswalk and entry zones,
        and the exit arm.
        - ``ego_start_distance (float):`` Metres before the entry line where
        the ego starts.
        - ``ego_initial_speed (float):`` Speed at the first second.
        - ``predictor_mode (PredictorMode):`` ``NONE`` is the baseline,
        ``GROUND_TRUTH`` reads the future background, ``MODEL`` rolls out a
        trained transformer.
        - ``parameters_path (str | None):`` Parameter file for ``MODEL``.
        - ``variant (Variant | None):`` Expected feature variant of that file.
    """

    name: str
    background: FrameSeries
    route: EgoRoute
    ego_start_distance: float = 250.0
    ego_initial_speed: float = V_MAX
    predictor_mode: PredictorMode = PredictorMode.NONE
    parameters_path: str | None = None
    variant: Variant | None = None

    def __post_init__(self):
        validate_positive(self.ego_start_distance, 'ego_start_distance')
        if not self.ego_initial_speed >= 0:
            raise InvalidSpec(
                '✗ THE EGO INITIAL SPEED MUST BE NON-NEGATIVE',
                ego_initial_speed=self.ego_initial_speed,
            )
        if self.predictor_mode is PredictorMode.MODEL and not self.parameters_path:
            raise InvalidSpec(
                f'✗ SCENARIO "{self.name}" USES A MODEL WITHOUT PARAMETER FILE',
                name=self.name,
            )

    def baseline(self) -> 'ScenarioSpec':
        return replace(
            self,
            predictor_mode=PredictorMode.NONE,
            parameters_path=None,
            variant=None,
        )

    def advised(
        self,
        mode: PredictorMode,
        parameters_path: str | None = None,
        variant: Variant | None = None,
    ) -> 'ScenarioSpec':
        return replace(
            self,
            predictor_mode=mode,
            parameters_path=parameters_path,
            variant=variant,
        )

    def to_dict(self, background_file: str) -> dict:
        return {
            'name': self.name,
            'background': background_file,
            'route': self.route.to_dict(),
            'ego_start_distance': self.ego_start_distance,
            'ego_initial_speed': self.ego_initial_speed,
            'predictor': self.predictor_mode.value,
            'parameters': self.parameters_path,
            'variant': None if self.variant is None else self.variant.label,
        }


@dataclass(frozen=True)
class EgoState:
    time: int
    s: float
    v: float
    a: float = 0.0


@dataclass(frozen=True)
class TripRecord:
    """One logged second of an ego trip."""

    time: int
    s: float
    x: float
    y: float
    v: float
    a: float
    advised: float | None
    d_c: float
    d_e: float
    stage: str | None
    occupancy: dict | None
    limited: bool
    crosswalk_occupied: bool
    entry_occupied: bool

    def to_dict(self) -> dict:
        return {item.name: getattr(self, item.name) for item in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> 'TripRecord':
        return cls(**{item.name: data[item.name] for item in fields(cls)})


@dataclass(frozen=True)
class TripLog:
    """
    Per-second ego records of one run plus its outcome flags.

    ``conflict_encountered`` is set when the safety layer had to lower the
    ego speed because a zone on its route was occupied.
    """

    scenario: str
    mode: str
    records: tuple[TripRecord, ...]
    crosswalk_interval: tuple[float, float]
    entry_interval: tuple[float, float]
    conflict_encountered: bool = False
    optimizable: bool | None = None
    dt: float = 1.0

    @property
    def speeds(self) -> np.ndarray:
        return np.array([r.v for r in self.records], dtype=float)

    @property
    def accelerations(self) -> np.ndarray:
        return np.array([r.a for r in self.records], dtype=float)

    def with_optimizable(self, flag: bool) -> 'TripLog':
        return replace(self, optimizable=flag)

    def header(self) -> dict:
        return {
            'scenario': self.scenario,
            'mode': self.mode,
            'crosswalk_interval': list(self.crosswalk_interval),
            'entry_interval': list(self.entry_interval),
            'conflict_encountered': self.conflict_encountered,
            'optimizable': self.optimizable,
            'dt': self.dt,
        }


def write_trip_log(log: TripLog, stream: TextIO) -> None:
    """JSON lines: the outcome header, then one record per second."""
    stream.write(json.dumps(log.header(), sort_keys=True) + '\n')
    for record in log.records:
        stream.write(json.dumps(record.to_dict(), sort_keys=True) + '\n')


def read_trip_log(stream: TextIO) -> TripLog:
    lines = [line for line in stream.read().splitlines() if line.strip()]
    if not lines:
        raise EmptyInput('✗ THE TRIP LOG FILE IS EMPTY')
    header = json.loads(lines[0])
    return TripLog(
        scenario=header['scenario'],
        mode=header['mode'],
        records=tuple(TripRecord.from_dict(json.loads(line)) for line in lines[1:]),
        crosswalk_interval=tuple(header['crosswalk_interval']),
        entry_interval=tuple(header['entry_interval']),
        conflict_encountered=bool(header['conflict_encountered']),
        optimizable=header.get('optimizable'),
        dt=float(header.get('dt', 1.0)),
    )


def stopping_distance(v: float, a_dec_max: float = 2.0) -> float:
    """Distance of a full stop on the 1 s grid, shedding ``a_dec_max`` per second."""
    total = 0.0
    while v > 0:
        following = max(0.0, v - a_dec_max)
        total += 0.5 * (v + following)
        v = following
    return total


class EgoCourse:
    """
    The ego's route through one scenario.

    Holds the arc-length intervals of the ego's crosswalk and entry, reads
    their occupancy from the background, and implements the default speed
    profile and the safety layer.
    """

    def __init__(
        self,
        spec: ScenarioSpec,
        geo: RoundaboutGeometry | None = None,
        config: SimulatorConfig = SimulatorConfig(),
    ):
        self.spec = spec
        self.geo = geo or default_geometry()
        self.config = config
        route = spec.route

        self.crosswalk = self.geo.zone(route.crosswalk_zone)
        self.entry = self.geo.zone(route.entry_zone)
        if self.crosswalk.kind is not ZoneKind.CROSSWALK:
            raise InvalidSpec(
                f'✗ ZONE {route.crosswalk_zone} IS NOT A CROSSWALK',
                zone_id=route.crosswalk_zone,
            )
        if self.entry.kind is not ZoneKind.ENTRY:
            raise InvalidSpec(
                f'✗ ZONE {route.entry_zone} IS NOT AN ENTRY',
                zone_id=route.entry_zone,
            )

        self.path = self.geo.vehicle_route(
            route.approach_arm,
            route.exit_arm,
            approach=spec.ego_start_distance,
            departure=config.departure,
        )
        interval = self.path.interval_in_zone(self.crosswalk)
        if interval is None or interval[1] >= self.path.entry_s:
            raise InvalidSpec(
                f'✗ CROSSWALK {route.crosswalk_zone} DOES NOT PRECEDE THE ENTRY '
                f'OF ARM {route.approach_arm}',
                zone_id=route.crosswalk_zone,
                arm_id=route.approach_arm,
            )
        self.crosswalk_interval = interval
        self.entry_interval = (
            self.path.entry_s,
            self.path.entry_s + config.entry_length,
        )
        self.end_s = self.path.entry_s + config.run_out
        if self.end_s > self.path.length:
            raise InvalidSpec(
                '✗ THE EGO ROUTE ENDS BEFORE THE RUN-OUT',
                length=self.path.length,
            )
        self._occupancy: dict[tuple[int, int], bool] = {}

    @property
    def zone_intervals(self) -> tuple[tuple[ConflictZone, tuple[float, float]], ...]:
        return (
            (self.crosswalk, self.crosswalk_interval),
            (self.entry, self.entry_interval),
        )

    def occupied(self, zone: ConflictZone, t: int) -> bool:
        """Background occupancy of ``zone`` at second ``t`` (clear past the end)."""
        key = (zone.zone_id, t)
        if key not in self._occupancy:
            frame = self.spec.background.frame_at(t)
            self._occupancy[key] = frame is not None and zone_occupied(
                frame.states, zone
            )
        return self._occupancy[key]

    def distances(self, s: float) -> tuple[float, float]:
        return (
            max(0.0, self.crosswalk_interval[0] - s),
            max(0.0, self.path.entry_s - s),
        )

    def desired_speed(self, ego: EgoState) -> float:
        """
        Default driver target, evaluated one second ahead.

        Cruise far from the entry, then a ramp linear in distance down to
        the negotiation speed at the entry line, which is kept afterwards.
        """
        config = self.config
        d = self.path.entry_s - (ego.s + ego.v)
        if ego.s >= self.path.entry_s or d <= 0:
            return config.v_negotiation
        if d >= config.decel_distance:
            return config.v_cruise
        return config.v_negotiation + (
            config.v_cruise - config.v_negotiation
        ) * d / config.decel_distance

    def _clear_while_inside(
        self, zone: ConflictZone, zone_end: float, t: int, s1: float, v: float
    ) -> bool:
        seconds = math.ceil(
            max(0.0, zone_end - s1) / max(v, self.config.min_clear_speed)
        )
        return not any(self.occupied(zone, t + 1 + k) for k in range(seconds + 1))

    def is_safe(self, ego: EgoState, candidate: float) -> bool:
        """
        Whether driving the next second towards ``candidate`` keeps the ego
        out of occupied zones.

        A zone occupied now or in one second must stay beyond the rest
        position of a maximum-deceleration stop started after this second.
        Entering or staying in a clear zone requires it to remain clear
        until the ego has left it. While a zone ahead is blocked, the ego
        may not come to rest inside another zone.
        """
        config = self.config
        s1 = ego.s + 0.5 * (ego.v + candidate)
        rest = s1 + stopping_distance(candidate, config.a_dec_max)
        blocked_ahead = False
        for zone, (start, end) in self.zone_intervals:
            if ego.s > end:
                continue
            blocked = self.occupied(zone, ego.time) or self.occupied(
                zone, ego.time + 1
            )
            if ego.s < start:
                if blocked:
                    blocked_ahead = True
                    if rest > max(start - config.stop_gap, ego.s):
                        return False
                elif s1 >= start and not self._clear_while_inside(
                    zone, end, ego.time, s1, candidate
                ):
                    return False
            elif s1 <= end and not self._clear_while_inside(
                zone, end, ego.time, s1, candidate
            ):
                return False
        if blocked_ahead and rest > ego.s + 1e-9:
            for _, (start, end) in self.zone_intervals:
                if start - config.stop_gap < rest <= end:
                    return False
        return True

    def _inside_blocked_zone(self, ego: EgoState) -> bool:
        return any(
            start <= ego.s <= end
            and (self.occupied(zone, ego.time) or self.occupied(zone, ego.time + 1))
            for zone, (start, end) in self.zone_intervals
        )

    def choose_speed(self, ego: EgoState, target: float) -> tuple[float, bool]:
        """
        Highest safe speed not above ``target``, searched downwards.

        Returns:
            - ``tuple``: the next speed and whether zone occupancy forced it
            below the target.
        """
        config = self.config
        low = max(0.0, ego.v - config.a_dec_max)
        high = min(V_MAX, ego.v + config.a_acc_max)
        desired = min(max(target, low), high)

        step = config.candidate_step
        k = 0
        while True:
            candidate = max(low, desired - k * step)
            if self.is_safe(ego, candidate):
                return candidate, k > 0
            if candidate <= low:
                break
            k += 1
        k = 1
        while desired + k * step <= high + 1e-9:
            candidate = min(high, desired + k * step)
            if self.is_safe(ego, candidate):
                return candidate, True
            k += 1

        fallback = high if self._inside_blocked_zone(ego) else low
        logger.warning(
            f'NO SAFE SPEED      [{self.spec.name} - t: {ego.time}, '
            f's: {ego.s:.2f}, fallback: {fallback:.2f}]'
        )
        return fallback, True

    def advance(self, ego: EgoState, v_next: float) -> EgoState:
        s_next = min(ego.s + 0.5 * (ego.v + v_next), self.path.length)
        return EgoState(ego.time + 1, s_next, v_next, v_next - ego.v)


def step_ego_default(ego: EgoState, course: EgoCourse) -> EgoState:
    """One second of the default driver: comfort profile plus safety layer."""
    course.path.position_at(ego.s)
    v_next, _ = course.choose_speed(ego, course.desired_speed(ego))
    return course.advance(ego, v_next)


@lru_cache(maxsize=8)
def _load_model(path: str) -> TransformerModel:
    return TransformerModel(load_parameters(path))


def predictor_for(spec: ScenarioSpec) -> TrajectoryPredictor | None:
    """The rollout predictor a MODEL scenario needs (None otherwise)."""
    if spec.predictor_mode is not PredictorMode.MODEL:
        return None
    model = _load_model(str(spec.parameters_path))
    variant = model.params.feature_config.variant
    if spec.variant is not None and spec.variant is not variant:
        raise InvalidSpec(
            f'✗ PARAMETER FILE HOLDS VARIANT "{variant.label}", '
            f'SCENARIO EXPECTS "{spec.variant.label}"',
            path=spec.parameters_path,
        )
    return model


def _occupancy_ahead(
    course: EgoCourse,
    t: int,
    m: int,
    mode: PredictorMode,
    predictor: TrajectoryPredictor | None,
):
    zones = (course.crosswalk, course.entry)
    background = course.spec.background
    if mode is PredictorMode.GROUND_TRUTH:
        future = [
            background.frame_at(t + k) or Frame(t + k, ()) for k in range(1, m + 1)
        ]
        return occupancy_series(future, zones, m, OccupancySource.ORACLE)

    history = [background.frame_at(t - k) for k in range(predictor.history_length)]
    if any(frame is None for frame in history):
        logger.debug(f'SHORT HISTORY      [{course.spec.name} - t: {t}]')
        return None
    rolled = predictor.rollout(list(reversed(history)), m)
    return occupancy_series(rolled, zones, m, OccupancySource.PREDICTED)


def run_scenario(
    spec: ScenarioSpec,
    geo: RoundaboutGeometry | None = None,
    config: SimulatorConfig = SimulatorConfig(),
    advisory: AdvisoryConfig = AdvisoryConfig(),
    predictor: TrajectoryPredictor | None = None,
) -> TripLog:
    """
    Simulate one ego trip at 1 Hz.

    Each second the advisory runs while the ego is still before its
    crosswalk and the crosswalk arrival step lies inside the horizon. Once
    an advisory has changed the speed, the last advised speed is held until
    the ego passes the entry line; before that the default driver keeps
    control, and it takes control back when the ego stands still with no
    advisory. The safety layer filters every speed. The episode ends once
    the ego is ``run_out`` metres past the entry.

    Raises:
        - ``BackgroundExhausted``: the background ends before the episode.
    """
    course = EgoCourse(spec, geo, config)
    mode = spec.predictor_mode
    if mode is PredictorMode.MODEL and predictor is None:
        predictor = predictor_for(spec)
    background = spec.background
    if background.start is None:
        raise BackgroundExhausted(
            f'✗ SCENARIO "{spec.name}" HAS AN EMPTY BACKGROUND', name=spec.name
        )

    ego = EgoState(background.start, 0.0, spec.ego_initial_speed, 0.0)
    records: list[TripRecord] = []
    engaged, released, hold = False, False, None
    conflict = False
    while True:
        if ego.time > background.end:
            raise BackgroundExhausted(
                f'✗ BACKGROUND OF "{spec.name}" ENDS AT {background.end} '
                f'BEFORE THE EGO FINISHED',
                name=spec.name,
                end=background.end,
                s=ego.s,
            )
        d_c, d_e = course.distances(ego.s)

        advice, occupancy = None, None
        before_crosswalk = ego.s < course.crosswalk_interval[0]
        if mode is not PredictorMode.NONE and before_crosswalk:
            t_c = time_to_arrival(d_c, ego.v, advisory.v_stop)
            if t_c is not None and t_c <= config.horizon:
                occupancy = _occupancy_ahead(
                    course, ego.time, config.horizon, mode, predictor
                )
            if occupancy is not None:
                advice = rosa_step(
                    AdvisoryInput(
                        ego.v,
                        d_c,
                        d_e,
                        occupancy,
                        config.horizon,
                        course.crosswalk.zone_id,
                        course.entry.zone_id,
                    ),
                    advisory,
                )
                if advice.adjusted and not released:
                    engaged = True
                if engaged and advice.advised_speed is not None:
                    hold = advice.advised_speed

        if engaged and ego.s >= course.path.entry_s:
            engaged, released = False, True
        elif engaged and advice is None and ego.v <= advisory.v_stop:
            # standstill: the advisory abstains and the default driver resumes
            engaged = False

        if engaged:
            target = apply_decel_limit(
                ego.v, hold, 1.0, config.a_dec_max, config.a_acc_max
            )
        else:
            target = course.desired_speed(ego)
        v_next, limited = course.choose_speed(ego, target)
        conflict = conflict or limited

        if advice is not None:
            stage = advice.stage.value
        elif mode is not PredictorMode.NONE:
            stage = Stage.NOT_TRIGGERED.value
        else:
            stage = None
        x, y = course.path.position_at(ego.s)
        records.append(
            TripRecord(
                time=ego.time - background.start,
                s=ego.s,
                x=x,
                y=y,
                v=ego.v,
                a=ego.a,
                advised=hold if engaged else None,
                d_c=d_c,
                d_e=d_e,
                stage=stage,
                occupancy=None if occupancy is None else occupancy.to_dict(),
                limited=limited,
                crosswalk_occupied=course.occupied(course.crosswalk, ego.time),
                entry_occupied=course.occupied(course.entry, ego.time),
            )
        )
        if ego.s >= course.end_s:
            break
        ego = course.advance(ego, v_next)

    log = TripLog(
        scenario=spec.name,
        mode=mode.value,
        records=tuple(records),
        crosswalk_interval=course.crosswalk_interval,
        entry_interval=course.entry_interval,
        conflict_encountered=conflict,
    )
    logger.debug(
        f'SCENARIO RUN       [{spec.name} - mode: {mode.value}, '
        f'seconds: {len(records)}, conflict: {conflict}]'
    )
    return log


def count_safety_violations(log: TripLog) -> int:
    """Logged seconds with the ego inside an occupied zone interval."""
    count = 0
    c_start, c_end = log.crosswalk_interval
    e_start, e_end = log.entry_interval
    for record in log.records:
        if record.crosswalk_occupied and c_start <= record.s <= c_end:
            count += 1
        if record.entry_occupied and e_start <= record.s <= e_end:
            count += 1
    return count


@lru_cache(maxsize=256)
def _baseline_run(
    spec: ScenarioSpec, geo: RoundaboutGeometry, config: SimulatorConfig
) -> TripLog:
    return run_scenario(spec, geo, config)


def classify_optimizable(
    spec: ScenarioSpec,
    geo: RoundaboutGeometry | None = None,
    config: SimulatorConfig = SimulatorConfig(),
    baseline: TripLog | None = None,
) -> bool:
    """
    True iff the unadvised ego meets an occupied crosswalk or entry.

    The baseline run is cached per scenario unless one is passed in.
    """
    if baseline is None:
        baseline = _baseline_run(spec.baseline(), geo or default_geometry(), config)
    return baseline.conflict_encountered


def run_pair(
    spec: ScenarioSpec,
    geo: RoundaboutGeometry | None = None,
    config: SimulatorConfig = SimulatorConfig(),
    advisory: AdvisoryConfig = AdvisoryConfig(),
) -> tuple[TripLog, TripLog]:
    """Baseline and advised runs of one scenario, both tagged optimizable or not."""
    geo = geo or default_geometry()
    baseline = run_scenario(spec.baseline(), geo, config, advisory)
    optimizable = classify_optimizable(spec, geo, config, baseline=baseline)
    advised = run_scenario(spec, geo, config, advisory)
    return (
        baseline.with_optimizable(optimizable),
        advised.with_optimizable(optimizable),
    )


@dataclass(frozen=True)
class BatchResult:
    scenario: str
    baseline: TripLog | None = None
    advised: TripLog | None = None
    error: dict | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def optimizable(self) -> bool | None:
        return None if self.baseline is None else self.baseline.optimizable


def run_batch(
    specs: Sequence[ScenarioSpec],
    parallelism: int = 1,
    geo: RoundaboutGeometry | None = None,
    config: SimulatorConfig = SimulatorConfig(),
    advisory: AdvisoryConfig = AdvisoryConfig(),
) -> list[BatchResult]:
    """
    Run every scenario in baseline and advised mode.

    Results keep the input order whatever the scheduling. A scenario that
    fails carries its error in its slot and the batch goes on.
    """
    specs = list(specs)
    if not specs:
        return []
    validate_count(parallelism, 'parallelism')
    geo = geo or default_geometry()

    def run_one(spec: ScenarioSpec) -> BatchResult:
        try:
            baseline, advised = run_pair(spec, geo, config, advisory)
        except RosaError as error:
            logger.warning(f'SCENARIO FAILED    [{spec.name} - {error.code}]')
            return BatchResult(spec.name, error=error.to_dict())
        logger.info(
            f'SCENARIO DONE      [{spec.name} - optimizable: {baseline.optimizable}]'
        )
        return BatchResult(spec.name, baseline, advised)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run_one, specs))


@dataclass(frozen=True)
class TrackingResult:
    arrival_time: float | None
    speeds: tuple[float, ...]
    max_deceleration: float


def _crossing_fraction(remaining: float, v0: float, v1: float) -> float:
    """Fraction of a constant-acceleration second needed to cover ``remaining``."""
    a = v1 - v0
    if abs(a) < 1e-12:
        return remaining / v0 if v0 > 0 else 1.0
    discriminant = max(0.0, v0 * v0 + 2.0 * a * remaining)
    return min(1.0, max(0.0, (-v0 + math.sqrt(discriminant)) / a))


def track_optimal_speed(
    d: float,
    v: float,
    t: int,
    a_dec_max: float = 2.0,
    a_acc_max: float = 2.5,
    v_max: float = V_MAX,
    max_steps: int = 120,
) -> TrackingResult:
    """
    Ego re-advised every second to reach a point ``d`` metres ahead in
    ``t`` seconds.

    Each second it follows the constant-acceleration profile whose final
    speed is the optimal speed for the remaining distance and time, under
    the actuator limits. Once the target time has passed it keeps its speed.

    Returns:
        - ``TrackingResult``: arrival time (interpolated inside the second,
        None if the ego stops short), the speed trace and the largest
        per-second deceleration.
    """
    optimal_speed(d, t, v, v_max)
    remaining, speed = float(d), float(v)
    speeds = [speed]
    arrival = None if d > 0 else 0.0
    for k in range(max_steps if d > 0 else 0):
        left = t - k
        if left >= 1:
            final = optimal_speed(remaining, left, speed, v_max)
            target = speed + (final - speed) / left
        else:
            target = speed
        following = apply_decel_limit(
            speed, target, 1.0, a_dec_max, a_acc_max, v_max
        )
        covered = 0.5 * (speed + following)
        speeds.append(following)
        if covered >= remaining - 1e-9:
            arrival = k + _crossing_fraction(remaining, speed, following)
            break
        remaining -= covered
        speed = following
        if speed <= 0:
            break
    decelerations = [a - b for a, b in zip(speeds, speeds[1:])]
    return TrackingResult(
        arrival, tuple(speeds), max([0.0, *decelerations])
    )


def _ordered_arms(geo: RoundaboutGeometry, arm_id: int) -> list[int]:
    """Other arms in circulation order, starting after ``arm_id``."""
    origin = geo.arm(arm_id).center_angle
    others = [arm for arm in geo.arms if arm.arm_id != arm_id]
    others.sort(key=lambda arm: (arm.center_angle - origin) % (2.0 * math.pi))
    return [arm.arm_id for arm in others]


def _first_second_at(log: TripLog, s: float) -> int:
    for record in log.records:
        if record.s >= s:
            return record.time
    return log.records[-1].time


def _free_flow_arrivals(
    geo: RoundaboutGeometry, route: EgoRoute, config: SimulatorConfig
) -> tuple[int, int]:
    empty = FrameSeries(
        tuple(Frame(t, ()) for t in range(SUITE_DURATION)), name='free-flow'
    )
    log = run_scenario(ScenarioSpec('free-flow', empty, route), geo, config)
    return (
        _first_second_at(log, log.crosswalk_interval[0]),
        _first_second_at(log, log.entry_interval[0]),
    )


def _harmless_pairs(
    geo: RoundaboutGeometry, ego_arm: int, entry: ConflictZone, approach: float
) -> dict[int, tuple[int, ...]]:
    """Background origin/destination pairs whose route never enters ``entry``."""
    pairs: dict[int, tuple[int, ...]] = {}
    for origin in _ordered_arms(geo, ego_arm):
        exits = tuple(
            destination
            for destination in _ordered_arms(geo, origin)
            if geo.vehicle_route(origin, destination, approach).interval_in_zone(
                entry
            )
            is None
        )
        if exits:
            pairs[origin] = exits
    return pairs


def _platoon_trips(
    geo: RoundaboutGeometry,
    ego_arm: int,
    entry: ConflictZone,
    arrival: int,
    lead: int,
    approach: float,
) -> tuple[VehicleTrip, ...]:
    ordered = _ordered_arms(geo, ego_arm)
    origin = ordered[-1]
    for destination in _ordered_arms(geo, origin):
        interval = geo.vehicle_route(origin, destination, approach).interval_in_zone(
            entry
        )
        if interval is not None and destination != ego_arm:
            break
    else:
        raise InvalidSpec(
            f'✗ NO CIRCULATING ROUTE CROSSES ENTRY {entry.zone_id}',
            zone_id=entry.zone_id,
        )
    depart = max(0, math.floor(arrival - lead - interval[0] / PLATOON_SPEED))
    return tuple(
        VehicleTrip(origin, destination, depart + k, PLATOON_SPEED)
        for k in range(PLATOON_SIZE)
    )


def build_demo_suite(
    n: int,
    seed: int = 0,
    geo: RoundaboutGeometry | None = None,
    config: SimulatorConfig = SimulatorConfig(),
) -> list[ScenarioSpec]:
    """
    Synthetic evaluation suite where about a fifth of the scenarios hold a
    conflict at the ego's free-flow arrival.

    A conflict is a pedestrian crossing the ego's crosswalk or a short
    platoon circulating through the ego's entry; either one clears a few
    seconds after the free-flow arrival. All other traffic uses routes and
    crosswalks that never touch the ego's zones, so the remaining scenarios
    are conflict-free.
    """
    validate_count(n, 'n')
    geo = geo or default_geometry()
    rng = np.random.default_rng(derive_seed(seed, 'suite'))
    n_optimizable = int(round(SUITE_OPTIMIZABLE_SHARE * n))
    optimizable = set(int(i) for i in rng.permutation(n)[:n_optimizable])
    candidate_arms = [
        zone.arm_id
        for zone in geo.crosswalks
        if any(entry.arm_id == zone.arm_id for entry in geo.entries)
    ]
    approach = TrafficSpec(duration=1).approach
    arrivals: dict[EgoRoute, tuple[int, int]] = {}

    specs = []
    for index in range(n):
        arm = int(candidate_arms[rng.integers(len(candidate_arms))])
        exits = _ordered_arms(geo, arm)
        exit_arm = int(exits[rng.integers(len(exits))])
        crosswalk, entry = geo.zones_for_arm(arm)
        route = EgoRoute(arm, crosswalk.zone_id, entry.zone_id, exit_arm)
        if route not in arrivals:
            arrivals[route] = _free_flow_arrivals(geo, route, config)
        t_crosswalk, t_entry = arrivals[route]

        flows = tuple(
            ArmFlow(origin, float(rng.uniform(0.03, 0.1)), destinations)
            for origin, destinations in _harmless_pairs(
                geo, arm, entry, approach
            ).items()
        )
        crossings = []
        for other in geo.crosswalks:
            if other.zone_id == crosswalk.zone_id or rng.uniform() < 0.5:
                continue
            crossings.append(
                VruCrossing(
                    other.zone_id,
                    int(rng.integers(0, SUITE_DURATION - 10)),
                    int(rng.integers(4, 7)),
                    bool(rng.integers(2)),
                )
            )

        trips: tuple[VehicleTrip, ...] = ()
        lead = int(rng.integers(0, 2))
        if index in optimizable:
            if rng.uniform() < 0.5:
                crossings.append(
                    VruCrossing(
                        crosswalk.zone_id,
                        t_crosswalk - 3 - lead,
                        int(rng.integers(5, 7)),
                        bool(rng.integers(2)),
                    )
                )
            else:
                trips = _platoon_trips(geo, arm, entry, t_entry, 3 + lead, approach)

        name = f'demo-{index:03d}'
        traffic = TrafficSpec(
            duration=SUITE_DURATION,
            flows=flows,
            trips=trips,
            crossings=tuple(crossings),
            speed=8.0,
            speed_jitter=1.0,
            name=name,
        )
        background = generate_synthetic_scenario(
            geo, traffic, int(rng.integers(2**31))
        )
        specs.append(ScenarioSpec(name, background, route))
    logger.info(
        f'DEMO SUITE         [scenarios: {n}, conflicts planted: {n_optimizable}]'
    )
    return specs


def write_scenario(spec: ScenarioSpec, directory: str | Path) -> Path:
    """Write ``<name>.json`` and its ``<name>.jsonl`` background."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    background_file = f'{spec.name}.jsonl'
    with open(directory / background_file, 'w', encoding='utf-8') as stream:
        write_series(spec.background, stream)
    path = directory / f'{spec.name}.json'
    dump_json(spec.to_dict(background_file), path)
    return path


def scenario_from_dict(data: dict, base_dir: str | Path = '.') -> ScenarioSpec:
    try:
        background_path = Path(base_dir) / data['background']
        route = EgoRoute.from_dict(data['route'])
        mode = PredictorMode.from_label(data.get('predictor', 'none'))
        variant = data.get('variant')
        name = str(data['name'])
    except (KeyError, TypeError, ValueError) as error:
        raise InvalidSpec(f'✗ MALFORMED SCENARIO: {error}', reason=str(error))
    if not background_path.is_file():
        raise InvalidSpec(
            f'✗ BACKGROUND FILE "{background_path}" DOES NOT EXIST',
            path=str(background_path),
        )
    with open(background_path, encoding='utf-8') as stream:
        background = read_series(stream)
    return ScenarioSpec(
        name=name,
        background=background,
        route=route,
        ego_start_distance=float(data.get('ego_start_distance', 250.0)),
        ego_initial_speed=float(data.get('ego_initial_speed', V_MAX)),
        predictor_mode=mode,
        parameters_path=data.get('parameters'),
        variant=None if variant is None else Variant.from_label(variant),
    )


def read_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    if not path.is_file():
        raise InvalidSpec(f'✗ SCENARIO FILE "{path}" DOES NOT EXIST', path=str(path))
    return scenario_from_dict(
        json.loads(path.read_text(encoding='utf-8')), path.parent
    )


def write_manifest(specs: Sequence[ScenarioSpec], directory: str | Path) -> Path:
    """Write every scenario plus a manifest listing them in order."""
    directory = Path(directory)
    files = [write_scenario(spec, directory).name for spec in specs]
    path = directory / MANIFEST_FILE
    dump_json({'scenarios': files}, path)
    return path


def read_manifest(path: str | Path) -> list[ScenarioSpec]:
    path = Path(path)
    if not path.is_file():
        raise InvalidSpec(f'✗ MANIFEST "{path}" DOES NOT EXIST', path=str(path))
    data = json.loads(path.read_text(encoding='utf-8'))
    return [read_scenario(path.parent / name) for name in data.get('scenarios', [])]
