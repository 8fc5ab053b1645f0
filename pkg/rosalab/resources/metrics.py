"""
Trip efficiency metrics, surrogate fuel and battery models, batch
aggregation and prediction-quality reports.
"""
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from tabulate import tabulate

from rosalab.resources.data import FrameSeries
from rosalab.resources.errors import (EmptyBatch, EmptyLog, InvalidSpec,
                                      LengthMismatch)
from rosalab.resources.geometry import RoundaboutGeometry
from rosalab.resources.predictor.inference import (DisplacementErrors,
                                                   TrajectoryPredictor,
                                                   displacements,
                                                   errors_from_displacements)
from rosalab.resources.predictor.training import extract_samples
from rosalab.resources.simulator import BatchResult, TripLog
from rosalab.resources.zones import (ClassificationReport, OccupancySource,
                                     occupancy_metrics, occupancy_series)

METRIC_NAMES = ('travel_time', 'waiting_time', 'stops', 'fuel', 'co2', 'bev_energy')
CATEGORIES = ('optimizable', 'non_optimizable', 'all')


class Powertrain(Enum):
    ICE = 'ICE'
    BEV = 'BEV'


@dataclass(frozen=True)
class IceModel:
    """
    Polynomial fuel-rate surrogate in mL/s with an idle floor.

    ``rate = max(idle_rate, c0 + c1 v + c2 v³ + c3 max(0, a) v)``
    """

    idle_rate: float = 0.3
    c0: float = 0.15
    c1: float = 0.04
    c2: float = 3e-5
    c3: float = 0.19
    co2_per_liter: float = 2392.0

    def fuel_rate(self, v: np.ndarray, a: np.ndarray) -> np.ndarray:
        rate = (
            self.c0 + self.c1 * v + self.c2 * v**3 + self.c3 * np.maximum(0.0, a) * v
        )
        return np.maximum(self.idle_rate, rate)


@dataclass(frozen=True)
class BevModel:
    """
    Longitudinal battery-electric surrogate.

    Traction power ``(m a + f0 + f2 v²) v`` is divided by the drive
    efficiency when positive and scaled by the recuperation efficiency when
    negative; the auxiliary load runs all the time.
    """

    mass: float = 1600.0
    f0: float = 150.0
    f2: float = 0.4
    eta_drive: float = 0.85
    eta_regen: float = 0.6
    aux_power: float = 300.0

    def power(self, v: np.ndarray, a: np.ndarray) -> np.ndarray:
        wheel = (self.mass * a + self.f0 + self.f2 * v**2) * v
        battery = np.where(wheel >= 0, wheel / self.eta_drive, wheel * self.eta_regen)
        return battery + self.aux_power


@dataclass(frozen=True)
class MetricsConfig:
    stop_threshold: float = 0.1
    ice: IceModel = field(default_factory=IceModel)
    bev: BevModel = field(default_factory=BevModel)

    def to_dict(self) -> dict:
        return {
            'stop_threshold': self.stop_threshold,
            'ice': {f.name: getattr(self.ice, f.name) for f in fields(self.ice)},
            'bev': {f.name: getattr(self.bev, f.name) for f in fields(self.bev)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'MetricsConfig':
        try:
            return cls(
                stop_threshold=float(data.get('stop_threshold', 0.1)),
                ice=IceModel(**data.get('ice', {})),
                bev=BevModel(**data.get('bev', {})),
            )
        except TypeError as error:
            raise InvalidSpec(
                f'✗ MALFORMED METRICS SETTINGS: {error}', reason=str(error)
            )


@dataclass(frozen=True)
class TripMetrics:
    """
    Arguments and Attributes:
        - ``travel_time (float):`` Seconds logged.
        - ``waiting_time (float):`` Seconds below the stop threshold.
        - ``stops (int):`` Downward crossings of the stop threshold.
        - ``fuel (float):`` Litres (ICE surrogate).
        - ``co2 (float):`` Grams, proportional to ``fuel``.
        - ``bev_energy (float):`` Battery energy in Wh.
    """

    travel_time: float
    waiting_time: float
    stops: int
    fuel: float = 0.0
    co2: float = 0.0
    bev_energy: float = 0.0

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _kinematics(log: TripLog) -> tuple[np.ndarray, np.ndarray]:
    if not log.records:
        raise EmptyLog(f'✗ TRIP LOG OF "{log.scenario}" IS EMPTY', scenario=log.scenario)
    return log.speeds, log.accelerations


def _waiting_and_stops(speeds: np.ndarray, threshold: float, dt: float):
    below = speeds < threshold
    stops = int(np.sum(below[1:] & ~below[:-1]))
    return float(np.sum(below) * dt), stops


def fuel_liters(log: TripLog, model: IceModel = IceModel()) -> float:
    speeds, accelerations = _kinematics(log)
    return float(np.sum(model.fuel_rate(speeds, accelerations)) * log.dt / 1000.0)


def bev_energy_wh(log: TripLog, model: BevModel = BevModel()) -> float:
    speeds, accelerations = _kinematics(log)
    joules = float(np.sum(model.power(speeds, accelerations)) * log.dt)
    return max(0.0, joules / 3600.0)


def trip_metrics(
    log: TripLog,
    powertrain: Powertrain = Powertrain.ICE,
    config: MetricsConfig = MetricsConfig(),
) -> TripMetrics:
    """
    Efficiency figures of one trip for one powertrain.

    The energy fields of the other powertrain stay zero.
    """
    speeds, _ = _kinematics(log)
    waiting, stops = _waiting_and_stops(speeds, config.stop_threshold, log.dt)
    travel = len(log.records) * log.dt
    if powertrain is Powertrain.ICE:
        fuel = fuel_liters(log, config.ice)
        return TripMetrics(travel, waiting, stops, fuel, fuel * config.ice.co2_per_liter)
    return TripMetrics(travel, waiting, stops, bev_energy=bev_energy_wh(log, config.bev))


def combined_metrics(log: TripLog, config: MetricsConfig = MetricsConfig()) -> TripMetrics:
    """ICE and BEV figures of one trip in a single record."""
    ice = trip_metrics(log, Powertrain.ICE, config)
    bev = trip_metrics(log, Powertrain.BEV, config)
    return TripMetrics(
        ice.travel_time, ice.waiting_time, ice.stops, ice.fuel, ice.co2, bev.bev_energy
    )


@dataclass(frozen=True)
class CategoryReport:
    n: int
    baseline: dict[str, float | None]
    advised: dict[str, float | None]
    delta: dict[str, float | None]

    def to_dict(self) -> dict:
        return {
            'n': self.n,
            'baseline': self.baseline,
            'advised': self.advised,
            'delta_percent': self.delta,
        }


@dataclass(frozen=True)
class BatchReport:
    categories: dict[str, CategoryReport]

    def to_dict(self) -> dict:
        return {name: report.to_dict() for name, report in self.categories.items()}

    def to_table(self) -> str:
        headers = ['METRIC']
        for name in CATEGORIES:
            n = self.categories[name].n
            headers.append(f'{name.upper()} (n={n})')
        rows = []
        for metric in METRIC_NAMES:
            row = [metric]
            for name in CATEGORIES:
                report = self.categories[name]
                row.append(
                    f'{_fmt(report.baseline[metric])} -> {_fmt(report.advised[metric])} '
                    f'({_fmt_delta(report.delta[metric])})'
                )
            rows.append(row)
        return tabulate(rows, headers, tablefmt='heavy_outline')


def _fmt(value: float | None) -> str:
    return 'n/a' if value is None else f'{value:.3f}'


def _fmt_delta(value: float | None) -> str:
    return 'n/a' if value is None else f'{value:+.2f}%'


def _category(
    pairs: Sequence[tuple[TripMetrics, TripMetrics]],
) -> CategoryReport:
    if not pairs:
        empty = {name: None for name in METRIC_NAMES}
        return CategoryReport(0, dict(empty), dict(empty), dict(empty))
    baseline, advised, delta = {}, {}, {}
    for name in METRIC_NAMES:
        base = float(np.mean([getattr(b, name) for b, _ in pairs]))
        adv = float(np.mean([getattr(a, name) for _, a in pairs]))
        baseline[name], advised[name] = base, adv
        delta[name] = None if base == 0 else 100.0 * (adv - base) / base
    return CategoryReport(len(pairs), baseline, advised, delta)


def aggregate(
    batch: Sequence[tuple[TripMetrics, TripMetrics]],
    optimizable: Sequence[bool],
) -> BatchReport:
    """
    Baseline and advised means per category with percentage deltas.

    A zero baseline mean reports its delta as None.
    """
    if len(batch) != len(optimizable):
        raise LengthMismatch(
            f'✗ {len(batch)} METRIC PAIRS VS {len(optimizable)} FLAGS',
            pairs=len(batch),
            flags=len(optimizable),
        )
    if not batch:
        raise EmptyBatch('✗ NO TRIP LOGS TO AGGREGATE')
    selected = {
        'optimizable': [p for p, flag in zip(batch, optimizable) if flag],
        'non_optimizable': [p for p, flag in zip(batch, optimizable) if not flag],
        'all': list(batch),
    }
    return BatchReport({name: _category(selected[name]) for name in CATEGORIES})


def report_from_batch(
    results: Sequence[BatchResult], config: MetricsConfig = MetricsConfig()
) -> BatchReport:
    """Aggregate the successful slots of a batch."""
    done = [r for r in results if r.ok]
    pairs = [
        (combined_metrics(r.baseline, config), combined_metrics(r.advised, config))
        for r in done
    ]
    return aggregate(pairs, [bool(r.optimizable) for r in done])


@dataclass(frozen=True)
class PredictionReport:
    """
    Displacement errors and per-step occupancy scores of one predictor.

    ``occupancy`` maps ``all``, ``crosswalk`` and ``entry`` to one report
    per horizon step.
    """

    errors: DisplacementErrors
    occupancy: dict[str, tuple[ClassificationReport, ...]]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            'n_samples': self.n_samples,
            'displacement': self.errors.to_dict(),
            'occupancy': {
                name: [
                    {'h': h + 1, **report.to_dict()}
                    for h, report in enumerate(reports)
                ]
                for name, reports in self.occupancy.items()
            },
        }

    def displacement_table(self) -> str:
        rows = [
            [f'{h + 1} s', f'{a:.2f}', f'{f:.2f}']
            for h, (a, f) in enumerate(zip(self.errors.ade, self.errors.fde))
        ]
        return tabulate(rows, ['HORIZON', 'ADE [m]', 'FDE [m]'], tablefmt='heavy_outline')

    def occupancy_table(self) -> str:
        rows = []
        for name, reports in self.occupancy.items():
            for h, report in enumerate(reports):
                rows.append(
                    [
                        name,
                        f'{h + 1} s',
                        f'{report.precision:.3f}',
                        f'{report.recall:.3f}',
                        f'{report.accuracy:.3f}',
                    ]
                )
        return tabulate(
            rows,
            ['ZONES', 'HORIZON', 'PRECISION', 'RECALL', 'ACCURACY'],
            tablefmt='heavy_outline',
        )


def prediction_report(
    series_list: Sequence[FrameSeries],
    make_predictor: Callable[[FrameSeries], TrajectoryPredictor],
    geo: RoundaboutGeometry,
    m: int = 5,
    history: int | None = None,
) -> PredictionReport:
    """
    Roll a predictor over every evaluation window of the given series.

    Args:
        - ``series_list (Sequence[FrameSeries]):`` Test segments.
        - ``make_predictor (Callable):`` Builds the predictor for one series
        (the oracle needs its own recording).
        - ``geo (RoundaboutGeometry):`` Zones to score.
        - ``m (int):`` Horizon in seconds.
        - ``history (int, optional):`` Past frames per window beyond the
        current one; defaults to what the predictor needs, so several
        predictors can be compared on the same windows.

    Returns:
        - ``PredictionReport``: per-horizon ADE/FDE and occupancy scores.
    """
    blocks, predicted, actual = [], [], []
    for series in series_list:
        predictor = make_predictor(series)
        s = predictor.history_length - 1 if history is None else history
        for sample in extract_samples(
            [series], s, horizon=m, n_max=predictor.max_agents
        ):
            rolled = predictor.rollout(sample.history, m)
            blocks.append(displacements(rolled, sample.future))
            predicted.append(
                occupancy_series(rolled, geo.zones, m, OccupancySource.PREDICTED)
            )
            actual.append(
                occupancy_series(
                    sample.future, geo.zones, m, OccupancySource.GROUND_TRUTH
                )
            )
    errors = errors_from_displacements(blocks)
    groups = {
        'all': None,
        'crosswalk': [z.zone_id for z in geo.crosswalks],
        'entry': [z.zone_id for z in geo.entries],
    }
    occupancy = {
        name: tuple(
            occupancy_metrics(predicted, actual, step, zone_ids)
            for step in range(1, m + 1)
        )
        for name, zone_ids in groups.items()
    }
    return PredictionReport(errors, occupancy, len(blocks))
