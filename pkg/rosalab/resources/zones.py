"""
Conflict zones (crosswalks and roundabout entries), their occupancy and the
binary-classification scoring of predicted occupancy.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from rosalab.resources.data import AgentClass, AgentState, Frame
from rosalab.resources.errors import (HorizonMismatch, InvalidGeometry,
                                      LengthMismatch)

EDGE_TOLERANCE = 1e-9


class ZoneKind(Enum):
    CROSSWALK = 'Crosswalk'
    ENTRY = 'Entry'

    @property
    def relevant_class(self) -> AgentClass:
        if self is ZoneKind.CROSSWALK:
            return AgentClass.VRU
        return AgentClass.VEHICLE


class OccupancySource(Enum):
    GROUND_TRUTH = 'GroundTruth'
    PREDICTED = 'Predicted'
    ORACLE = 'Oracle'


@dataclass(frozen=True)
class ConflictZone:
    """
    A polygonal conflict zone.

    Arguments and Attributes:
        - ``zone_id (int):`` Unique id inside a geometry.
        - ``kind (ZoneKind):`` Crosswalk (watched for VRUs) or Entry (watched
        for circulating vehicles).
        - ``polygon (tuple):`` Simple polygon, at least 3 vertices.
        - ``arm_id (int | None):`` Arm the zone belongs to.
        - ``carriageway (tuple | None):`` ``(cx, cy, r_inner, r_outer)`` band
        a vehicle must lie in to count for an Entry zone.
    """

    zone_id: int
    kind: ZoneKind
    polygon: tuple[tuple[float, float], ...]
    arm_id: int | None = None
    carriageway: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        polygon = tuple((float(x), float(y)) for x, y in self.polygon)
        object.__setattr__(self, 'polygon', polygon)
        if len(polygon) < 3 or abs(polygon_area(polygon)) <= 0.0:
            raise InvalidGeometry(
                f'✗ ZONE {self.zone_id} NEEDS AT LEAST 3 VERTICES AND A POSITIVE AREA',
                zone_id=self.zone_id,
            )

    @property
    def relevant_class(self) -> AgentClass:
        return self.kind.relevant_class

    @property
    def centroid(self) -> tuple[float, float]:
        points = np.asarray(self.polygon)
        return float(points[:, 0].mean()), float(points[:, 1].mean())

    def to_dict(self) -> dict:
        return {
            'zone_id': self.zone_id,
            'kind': self.kind.value,
            'polygon': [list(p) for p in self.polygon],
            'arm_id': self.arm_id,
            'carriageway': list(self.carriageway) if self.carriageway else None,
        }


def polygon_area(polygon: Sequence[tuple[float, float]]) -> float:
    """Signed shoelace area."""
    points = np.asarray(polygon, dtype=float)
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _on_segment(px, py, x1, y1, x2, y2) -> bool:
    dx, dy = x2 - x1, y2 - y1
    length_sq = dx * dx + dy * dy
    if length_sq == 0.0:
        return math.hypot(px - x1, py - y1) <= EDGE_TOLERANCE
    t = max(0.0, min(1.0, ((px - x1) * dx + (py - y1) * dy) / length_sq))
    return math.hypot(px - (x1 + t * dx), py - (y1 + t * dy)) <= EDGE_TOLERANCE


def point_in_zone(p: tuple[float, float], z: ConflictZone) -> bool:
    """
    Even-odd point-in-polygon test; points on an edge count as inside.

    Args:
        - ``p (tuple):`` Point ``(x, y)`` in metres.
        - ``z (ConflictZone):`` The zone to test against.

    Returns:
        - ``bool``: True if ``p`` is inside or on the boundary of ``z``.
    """
    x, y = float(p[0]), float(p[1])
    polygon = z.polygon
    n = len(polygon)
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = polygon[i]
        xj, yj = polygon[j]
        if _on_segment(x, y, xj, yj, xi, yi):
            return True
        if (yi > y) != (yj > y):
            x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def points_in_zone(points: np.ndarray, z: ConflictZone) -> np.ndarray:
    """Vectorized :func:`point_in_zone` over an ``(K, 2)`` array."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]
    polygon = np.asarray(z.polygon)
    inside = np.zeros(len(points), dtype=bool)
    on_edge = np.zeros(len(points), dtype=bool)
    for i in range(len(polygon)):
        xi, yi = polygon[i]
        xj, yj = polygon[i - 1]
        dx, dy = xi - xj, yi - yj
        length_sq = dx * dx + dy * dy
        t = np.clip(((x - xj) * dx + (y - yj) * dy) / length_sq, 0.0, 1.0)
        distance = np.hypot(x - (xj + t * dx), y - (yj + t * dy))
        on_edge |= distance <= EDGE_TOLERANCE
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide='ignore', invalid='ignore'):
            x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < x_cross)
    return inside | on_edge


def _in_carriageway(state: AgentState, z: ConflictZone) -> bool:
    if z.carriageway is None:
        return True
    cx, cy, r_inner, r_outer = z.carriageway
    radius = math.hypot(state.x - cx, state.y - cy)
    return r_inner - EDGE_TOLERANCE <= radius <= r_outer + EDGE_TOLERANCE


def zone_occupied(states: Iterable[AgentState], z: ConflictZone) -> bool:
    """True if at least one agent of the zone's relevant class is inside."""
    for state in states:
        if state.agent_class is not z.relevant_class:
            continue
        if z.kind is ZoneKind.ENTRY and not _in_carriageway(state, z):
            continue
        if point_in_zone(state.position, z):
            return True
    return False


def occupancy_from_frame(
    frame: Frame | Iterable[AgentState], zones: Sequence[ConflictZone]
) -> np.ndarray:
    """
    Occupancy of every zone in one frame.

    Crosswalks only see VRUs, entries only see vehicles inside the
    circulating carriageway.

    Returns:
        - ``np.ndarray``: boolean vector aligned with ``zones``.
    """
    states = frame.states if isinstance(frame, Frame) else tuple(frame)
    return np.array([zone_occupied(states, z) for z in zones], dtype=bool)


@dataclass(frozen=True)
class OccupancyMatrix:
    """
    Zone x horizon-step occupancy grid.

    Column ``k`` holds step ``k + 1`` (steps count seconds ahead, 1..m).
    """

    zone_ids: tuple[int, ...]
    values: np.ndarray
    source: OccupancySource = OccupancySource.PREDICTED

    def __post_init__(self):
        values = np.asarray(self.values, dtype=bool)
        if values.ndim != 2 or values.shape[0] != len(self.zone_ids):
            raise HorizonMismatch(
                '✗ OCCUPANCY GRID DOES NOT MATCH ITS ZONE LIST',
                shape=list(values.shape),
                zones=len(self.zone_ids),
            )
        object.__setattr__(self, 'zone_ids', tuple(self.zone_ids))
        object.__setattr__(self, 'values', values)

    @property
    def horizon(self) -> int:
        return int(self.values.shape[1])

    def occupied(self, zone_id: int, step: int) -> bool:
        """Occupancy at ``step`` seconds ahead; steps outside 1..m are clear."""
        if step < 1 or step > self.horizon:
            return False
        return bool(self.values[self.zone_ids.index(zone_id), step - 1])

    def rows(self, zone_ids: Iterable[int]) -> np.ndarray:
        return self.values[[self.zone_ids.index(z) for z in zone_ids]]

    def to_dict(self) -> dict:
        return {
            'zone_ids': list(self.zone_ids),
            'values': self.values.astype(int).tolist(),
            'source': self.source.value,
        }

    @classmethod
    def clear(cls, zone_ids: Sequence[int], m: int) -> 'OccupancyMatrix':
        return cls(tuple(zone_ids), np.zeros((len(zone_ids), m), dtype=bool))


def occupancy_series(
    rollout: Sequence[Frame],
    zones: Sequence[ConflictZone],
    m: int,
    source: OccupancySource = OccupancySource.PREDICTED,
) -> OccupancyMatrix:
    """Occupancy over a rollout of exactly ``m`` frames."""
    if len(rollout) != m:
        raise HorizonMismatch(
            f'✗ ROLLOUT HAS {len(rollout)} FRAMES, HORIZON IS {m}',
            frames=len(rollout),
            horizon=m,
        )
    columns = [occupancy_from_frame(frame, zones) for frame in rollout]
    values = (
        np.stack(columns, axis=1)
        if columns
        else np.zeros((len(zones), 0), dtype=bool)
    )
    return OccupancyMatrix(tuple(z.zone_id for z in zones), values, source)


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


@dataclass(frozen=True)
class ClassificationReport:
    """Binary confusion counts and derived ratios (0/0 counts as 0)."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            'tp': self.tp,
            'fp': self.fp,
            'tn': self.tn,
            'fn': self.fn,
            'precision': self.precision,
            'recall': self.recall,
            'accuracy': self.accuracy,
            'f1': self.f1,
        }


def occupancy_metrics(
    pred: Sequence[OccupancyMatrix],
    truth: Sequence[OccupancyMatrix],
    step: int,
    zone_ids: Sequence[int] | None = None,
) -> ClassificationReport:
    """
    Score predicted occupancy at one horizon step over all samples.

    Args:
        - ``pred, truth (Sequence[OccupancyMatrix]):`` Aligned streams.
        - ``step (int):`` Horizon step, 1-based.
        - ``zone_ids (Sequence[int], optional):`` Restrict scoring to these
        zones (e.g. only crosswalks). Default: all zones.

    Returns:
        - ``ClassificationReport``: counts over every (sample, zone) pair.
    """
    if len(pred) != len(truth):
        raise LengthMismatch(
            f'✗ {len(pred)} PREDICTED VS {len(truth)} TRUE OCCUPANCY SAMPLES',
            predicted=len(pred),
            truth=len(truth),
        )
    if step < 1:
        raise HorizonMismatch(f'✗ STEP {step} MUST BE AT LEAST 1', step=step)
    tp = fp = tn = fn = 0
    for predicted, actual in zip(pred, truth):
        ids = predicted.zone_ids if zone_ids is None else tuple(zone_ids)
        if predicted.horizon < step or actual.horizon < step:
            raise HorizonMismatch(
                f'✗ STEP {step} IS BEYOND THE OCCUPANCY HORIZON',
                step=step,
            )
        p = predicted.rows(ids)[:, step - 1]
        t = actual.rows(ids)[:, step - 1]
        tp += int(np.sum(p & t))
        fp += int(np.sum(p & ~t))
        tn += int(np.sum(~p & ~t))
        fn += int(np.sum(~p & t))
    return ClassificationReport(tp, fp, tn, fn)
