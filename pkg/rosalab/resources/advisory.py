"""
Roundabout speed advisory: crosswalk stage, then entry stage, on a 1 s grid.
"""
import math
from dataclasses import dataclass
from enum import Enum

from rosalab.resources.errors import (HorizonMismatch, InvalidAdvisoryInput,
                                      InvalidSpec, NegativeDistance,
                                      NonPositiveTime)
from rosalab.resources.zones import OccupancyMatrix

V_MAX = 13.89
V_STOP = 0.1
ARRIVAL_BASES = ('current_speed', 'crosswalk_speed')


class Stage(Enum):
    NOT_TRIGGERED = 'NotTriggered'
    CROSSWALK_ONLY = 'CrosswalkOnly'
    CROSSWALK_AND_ENTRY = 'CrosswalkAndEntry'


@dataclass(frozen=True)
class AdvisoryConfig:
    """
    Arguments and Attributes:
        - ``v_max (float):`` Upper bound of every advised speed (50 km/h).
        - ``v_stop (float):`` Below this speed arrival times are undefined.
        - ``a_dec_max, a_acc_max (float):`` Actuator limits in m/s².
        - ``entry_arrival_basis (str):`` ``current_speed`` computes the
        entry arrival from the current speed, ``crosswalk_speed`` from the
        crosswalk-stage speed.
    """

    v_max: float = V_MAX
    v_stop: float = V_STOP
    a_dec_max: float = 2.0
    a_acc_max: float = 2.5
    entry_arrival_basis: str = 'current_speed'

    def __post_init__(self):
        if self.entry_arrival_basis not in ARRIVAL_BASES:
            raise InvalidSpec(
                f'✗ UNKNOWN ENTRY ARRIVAL BASIS "{self.entry_arrival_basis}"',
                allowed=ARRIVAL_BASES,
            )

    def to_dict(self) -> dict:
        return {
            'v_max': self.v_max,
            'v_stop': self.v_stop,
            'a_dec_max': self.a_dec_max,
            'a_acc_max': self.a_acc_max,
            'entry_arrival_basis': self.entry_arrival_basis,
        }


@dataclass(frozen=True)
class AdvisoryInput:
    v: float
    d_c: float
    d_e: float
    occupancy: OccupancyMatrix
    m: int
    crosswalk_zone: int
    entry_zone: int

    def __post_init__(self):
        if not self.v >= 0:
            raise InvalidAdvisoryInput('✗ EGO SPEED MUST BE NON-NEGATIVE', v=self.v)
        if not self.d_e >= self.d_c >= 0:
            raise InvalidAdvisoryInput(
                '✗ DISTANCES MUST SATISFY d_e >= d_c >= 0',
                d_c=self.d_c,
                d_e=self.d_e,
            )


@dataclass(frozen=True)
class ZoneTrace:
    zone_id: int
    stage: str
    arrival_step: int | None
    occupied: bool
    beyond_horizon: bool

    def to_dict(self) -> dict:
        return {
            'zone_id': self.zone_id,
            'stage': self.stage,
            'arrival_step': self.arrival_step,
            'occupied': self.occupied,
            'beyond_horizon': self.beyond_horizon,
        }


@dataclass(frozen=True)
class AdvisoryOutput:
    advised_speed: float | None
    stage: Stage
    rationale: tuple[ZoneTrace, ...] = ()
    adjusted: bool = False

    def to_dict(self) -> dict:
        return {
            'advised_speed': self.advised_speed,
            'stage': self.stage.value,
            'adjusted': self.adjusted,
            'rationale': [trace.to_dict() for trace in self.rationale],
        }


def time_to_arrival(d: float, v: float, v_stop: float = V_STOP) -> int | None:
    """
    Whole seconds needed to cover ``d`` at speed ``v``, rounded up.

    Returns None at standstill (``v <= v_stop``).
    """
    if d < 0:
        raise NegativeDistance(f'✗ DISTANCE {d} IS NEGATIVE', d=d)
    if v <= v_stop:
        return None
    return max(0, math.ceil(d / v - 1e-9))


def optimal_speed(d: float, t: float, v: float, v_max: float = V_MAX) -> float:
    """
    Speed ``2d/t - v`` clamped to ``[0, v_max]``.

    Unclamped, it is the final speed of a constant-acceleration profile that
    starts at ``v`` and covers ``d`` in exactly ``t`` seconds.
    """
    if not t > 0:
        raise NonPositiveTime(f'✗ ARRIVAL TIME {t} MUST BE POSITIVE', t=t)
    if d < 0:
        raise NegativeDistance(f'✗ DISTANCE {d} IS NEGATIVE', d=d)
    return min(max(2.0 * d / t - v, 0.0), v_max)


def rosa_step(
    inp: AdvisoryInput, config: AdvisoryConfig = AdvisoryConfig()
) -> AdvisoryOutput:
    """
    One advisory decision.

    The crosswalk stage runs when the crosswalk arrival step lies inside
    the horizon; an occupied arrival step shifts the target arrival one
    second later. The entry stage follows the same rule for the entry.
    Arrival steps beyond the horizon count as clear.
    """
    if inp.occupancy.horizon != inp.m:
        raise HorizonMismatch(
            f'✗ OCCUPANCY COVERS {inp.occupancy.horizon} STEPS, HORIZON IS {inp.m}',
            horizon=inp.m,
            occupancy=inp.occupancy.horizon,
        )
    v = min(inp.v, config.v_max)
    t_c = time_to_arrival(inp.d_c, inp.v, config.v_stop)
    if t_c is None or t_c > inp.m:
        trace = ZoneTrace(inp.crosswalk_zone, 'crosswalk', t_c, False, True)
        return AdvisoryOutput(None, Stage.NOT_TRIGGERED, (trace,))

    crosswalk_occupied = inp.occupancy.occupied(inp.crosswalk_zone, t_c)
    traces = [ZoneTrace(inp.crosswalk_zone, 'crosswalk', t_c, crosswalk_occupied, False)]
    v_crosswalk = (
        optimal_speed(inp.d_c, t_c + 1, inp.v, config.v_max)
        if crosswalk_occupied
        else v
    )

    basis = inp.v if config.entry_arrival_basis == 'current_speed' else v_crosswalk
    t_e = time_to_arrival(inp.d_e, basis, config.v_stop)
    if t_e is None or t_e > inp.m:
        traces.append(ZoneTrace(inp.entry_zone, 'entry', t_e, False, True))
        return AdvisoryOutput(
            v_crosswalk, Stage.CROSSWALK_ONLY, tuple(traces), crosswalk_occupied
        )

    entry_occupied = inp.occupancy.occupied(inp.entry_zone, t_e)
    traces.append(ZoneTrace(inp.entry_zone, 'entry', t_e, entry_occupied, False))
    v_entry = (
        optimal_speed(inp.d_e, t_e + 1, inp.v, config.v_max)
        if entry_occupied
        else v_crosswalk
    )
    return AdvisoryOutput(
        v_entry,
        Stage.CROSSWALK_AND_ENTRY,
        tuple(traces),
        crosswalk_occupied or entry_occupied,
    )


def apply_decel_limit(
    v_now: float,
    v_advised: float,
    dt: float = 1.0,
    a_dec_max: float = 2.0,
    a_acc_max: float = 2.5,
    v_max: float = V_MAX,
) -> float:
    """Next speed after ``dt`` seconds of tracking ``v_advised`` within limits."""
    if not dt > 0:
        raise NonPositiveTime(f'✗ TIME STEP {dt} MUST BE POSITIVE', dt=dt)
    v_next = min(max(v_advised, v_now - a_dec_max * dt), v_now + a_acc_max * dt)
    return min(max(v_next, 0.0), v_max)
