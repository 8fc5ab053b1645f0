"""
Roundabout layout: arms, conflict zones and the lane-level routes vehicles
follow through it.

Angles grow counter-clockwise and circulation is counter-clockwise. Every
arm carries an inbound lane on the right of its axis (seen from a vehicle
driving towards the centre) and an outbound lane on the left.
"""
import math
import os
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from rosalab.config import load_config_file
from rosalab.resources.errors import InvalidGeometry, OffRoute
from rosalab.resources.zones import ConflictZone, ZoneKind, points_in_zone

DEFAULT_GEOMETRY_FILE = os.path.join(
    os.path.dirname(os.path.abspath(__file__)), '..', 'seed', 'rdb1_geometry.yaml'
)
ARC_STEP_DEG = 2.0
JOIN_OFFSET_DEG = 10.0


def unit_vector(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def normal_vector(angle: float) -> np.ndarray:
    return np.array([-math.sin(angle), math.cos(angle)])


def angular_distance(a: float, b: float) -> float:
    """Absolute difference of two angles, in ``[0, pi]``."""
    diff = (a - b) % (2.0 * math.pi)
    return min(diff, 2.0 * math.pi - diff)


@dataclass(frozen=True)
class Arm:
    arm_id: int
    center_angle: float
    approach_polyline: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True, eq=False)
class RoutePath:
    """
    A polyline parametrised by arc length ``s``.

    Arguments and Attributes:
        - ``points (np.ndarray):`` ``(K, 2)`` vertices.
        - ``entry_s (float):`` Arc length at which the route crosses the
        entry line (the yield line of its approach arm).
        - ``entry_arm, exit_arm (int):`` Arms the route enters and leaves by.
    """

    points: np.ndarray
    entry_s: float
    entry_arm: int
    exit_arm: int

    @cached_property
    def cumulative(self) -> np.ndarray:
        steps = np.hypot(*np.diff(self.points, axis=0).T)
        return np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def position_at(self, s: float) -> tuple[float, float]:
        if s < -1e-9 or s > self.length + 1e-9:
            raise OffRoute(
                f'✗ ARC LENGTH {s:.2f} IS OUTSIDE THE ROUTE [0, {self.length:.2f}]',
                s=s,
                length=self.length,
            )
        x = np.interp(s, self.cumulative, self.points[:, 0])
        y = np.interp(s, self.cumulative, self.points[:, 1])
        return float(x), float(y)

    def heading_at(self, s: float) -> float:
        index = int(np.searchsorted(self.cumulative, s, side='right')) - 1
        index = min(max(index, 0), len(self.points) - 2)
        dx, dy = self.points[index + 1] - self.points[index]
        return math.atan2(dy, dx)

    def interval_in_zone(
        self, zone: ConflictZone, resolution: float = 0.05
    ) -> tuple[float, float] | None:
        """Arc-length interval the route spends inside ``zone`` (None if never)."""
        s = np.arange(0.0, self.length + resolution, resolution)
        s = np.minimum(s, self.length)
        xy = np.column_stack(
            [
                np.interp(s, self.cumulative, self.points[:, 0]),
                np.interp(s, self.cumulative, self.points[:, 1]),
            ]
        )
        inside = points_in_zone(xy, zone)
        if not inside.any():
            return None
        return float(s[inside].min()), float(s[inside].max())


@dataclass(frozen=True)
class RoundaboutGeometry:
    """
    A single-lane roundabout.

    Arguments and Attributes:
        - ``name (str):`` Identifier recorded as ``geometry_ref`` in series.
        - ``center (tuple):`` Centre point in metres.
        - ``circulating_radius (float):`` Outer edge of the circulating
        carriageway; vehicles ending inside it are labelled -1.
        - ``lane_width (float):`` Width of the circulating lane.
        - ``arms (tuple[Arm]):`` Distinct arm angles.
        - ``zones (tuple[ConflictZone]):`` Three crosswalks, three entries.
        - ``lane_offset (float):`` Lateral offset of arm lanes from the axis.
        - ``arm_length (float):`` Modelled length of every arm beyond the
        circulating radius.
    """

    name: str
    center: tuple[float, float]
    circulating_radius: float
    arms: tuple[Arm, ...]
    zones: tuple[ConflictZone, ...]
    lane_width: float = 5.0
    lane_offset: float = 2.0
    arm_length: float = 300.0

    def __post_init__(self):
        if not self.circulating_radius > 0:
            raise InvalidGeometry(
                '✗ THE CIRCULATING RADIUS MUST BE POSITIVE',
                circulating_radius=self.circulating_radius,
            )
        if not 0 < self.lane_width < self.circulating_radius:
            raise InvalidGeometry(
                '✗ THE LANE WIDTH MUST LIE INSIDE THE CIRCULATING RADIUS',
                lane_width=self.lane_width,
            )
        angles = [arm.center_angle for arm in self.arms]
        for i, a in enumerate(angles):
            for b in angles[i + 1:]:
                if angular_distance(a, b) < 1e-9:
                    raise InvalidGeometry(
                        '✗ ARM ANGLES MUST BE PAIRWISE DISTINCT',
                        angles=angles,
                    )
        ids = [arm.arm_id for arm in self.arms]
        if len(set(ids)) != len(ids) or any(i < 0 for i in ids):
            raise InvalidGeometry('✗ ARM IDS MUST BE UNIQUE AND NON-NEGATIVE')
        zone_ids = [zone.zone_id for zone in self.zones]
        if len(set(zone_ids)) != len(zone_ids):
            raise InvalidGeometry('✗ ZONE IDS MUST BE UNIQUE', zone_ids=zone_ids)
        for kind in ZoneKind:
            count = sum(zone.kind is kind for zone in self.zones)
            if count != 3:
                raise InvalidGeometry(
                    f'✗ A GEOMETRY NEEDS EXACTLY 3 {kind.value.upper()} ZONES, GOT {count}',
                    kind=kind.value,
                    count=count,
                )
        object.__setattr__(
            self, 'arms', tuple(sorted(self.arms, key=lambda a: a.arm_id))
        )

    @property
    def inner_radius(self) -> float:
        return self.circulating_radius - self.lane_width

    @property
    def path_radius(self) -> float:
        return self.circulating_radius - self.lane_width / 2.0

    @property
    def n_exit_slots(self) -> int:
        """One-hot width of the exit label: -1 plus one slot per arm."""
        return len(self.arms) + 1

    @property
    def crosswalks(self) -> tuple[ConflictZone, ...]:
        return tuple(z for z in self.zones if z.kind is ZoneKind.CROSSWALK)

    @property
    def entries(self) -> tuple[ConflictZone, ...]:
        return tuple(z for z in self.zones if z.kind is ZoneKind.ENTRY)

    @property
    def zone_ids(self) -> tuple[int, ...]:
        return tuple(z.zone_id for z in self.zones)

    def zone(self, zone_id: int) -> ConflictZone:
        for zone in self.zones:
            if zone.zone_id == zone_id:
                return zone
        raise InvalidGeometry(f'✗ UNKNOWN ZONE {zone_id}', zone_id=zone_id)

    def arm(self, arm_id: int) -> Arm:
        for arm in self.arms:
            if arm.arm_id == arm_id:
                return arm
        raise InvalidGeometry(f'✗ UNKNOWN ARM {arm_id}', arm_id=arm_id)

    def arm_for_bearing(self, bearing: float) -> int:
        """Arm whose angular Voronoi cell holds ``bearing``; ties go to the lower id."""
        best_id, best_distance = -1, math.inf
        for arm in self.arms:
            distance = angular_distance(bearing, arm.center_angle)
            if distance < best_distance - 1e-12:
                best_id, best_distance = arm.arm_id, distance
        return best_id

    def zones_for_arm(self, arm_id: int) -> tuple[ConflictZone, ConflictZone]:
        """Crosswalk and entry zone of an arm."""
        crosswalk = [z for z in self.crosswalks if z.arm_id == arm_id]
        entry = [z for z in self.entries if z.arm_id == arm_id]
        if not crosswalk or not entry:
            raise InvalidGeometry(
                f'✗ ARM {arm_id} HAS NO CROSSWALK/ENTRY PAIR', arm_id=arm_id
            )
        return crosswalk[0], entry[0]

    def _lane_point(self, arm_id: int, radius: float, inbound: bool) -> np.ndarray:
        angle = self.arm(arm_id).center_angle
        side = self.lane_offset if inbound else -self.lane_offset
        return (
            np.asarray(self.center)
            + radius * unit_vector(angle)
            + side * normal_vector(angle)
        )

    def vehicle_route(
        self,
        entry_arm: int,
        exit_arm: int,
        approach: float = 60.0,
        departure: float = 60.0,
    ) -> RoutePath:
        """
        Lane-level path from ``approach`` metres before the entry line of
        ``entry_arm`` round the circle to ``departure`` metres down
        ``exit_arm``.
        """
        if approach > self.arm_length or departure > self.arm_length:
            raise InvalidGeometry(
                '✗ ROUTE EXTENDS BEYOND THE MODELLED ARMS',
                approach=approach,
                departure=departure,
            )
        r_edge = self.circulating_radius
        points = [
            self._lane_point(entry_arm, r_edge + approach, True),
            self._lane_point(entry_arm, r_edge, True),
        ]
        entry_s = approach

        join = self.arm(entry_arm).center_angle + math.radians(JOIN_OFFSET_DEG)
        leave = self.arm(exit_arm).center_angle - math.radians(JOIN_OFFSET_DEG)
        sweep = (leave - join) % (2.0 * math.pi)
        if sweep < 1e-9:
            sweep = 2.0 * math.pi
        n_steps = max(1, int(math.ceil(math.degrees(sweep) / ARC_STEP_DEG)))
        center = np.asarray(self.center)
        for k in range(n_steps + 1):
            angle = join + sweep * k / n_steps
            points.append(center + self.path_radius * unit_vector(angle))

        points.append(self._lane_point(exit_arm, r_edge, False))
        points.append(self._lane_point(exit_arm, r_edge + departure, False))
        return RoutePath(np.asarray(points), entry_s, entry_arm, exit_arm)

    def rotated(self, angle: float) -> 'RoundaboutGeometry':
        """The same layout rigidly rotated by ``angle`` about its centre."""
        cx, cy = self.center
        c, s = math.cos(angle), math.sin(angle)

        def turn(p):
            dx, dy = p[0] - cx, p[1] - cy
            return (cx + c * dx - s * dy, cy + s * dx + c * dy)

        arms = tuple(
            Arm(
                arm.arm_id,
                arm.center_angle + angle,
                tuple(turn(p) for p in arm.approach_polyline),
            )
            for arm in self.arms
        )
        zones = tuple(
            ConflictZone(
                z.zone_id,
                z.kind,
                tuple(turn(p) for p in z.polygon),
                z.arm_id,
                z.carriageway,
            )
            for z in self.zones
        )
        return RoundaboutGeometry(
            name=self.name,
            center=self.center,
            circulating_radius=self.circulating_radius,
            arms=arms,
            zones=zones,
            lane_width=self.lane_width,
            lane_offset=self.lane_offset,
            arm_length=self.arm_length,
        )

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'center': list(self.center),
            'circulating_radius': self.circulating_radius,
            'lane_width': self.lane_width,
            'lane_offset': self.lane_offset,
            'arm_length': self.arm_length,
            'arms': [
                {'arm_id': a.arm_id, 'angle_deg': math.degrees(a.center_angle)}
                for a in self.arms
            ],
            'zones': [z.to_dict() for z in self.zones],
        }


def crosswalk_polygon(
    center: Sequence[float],
    angle: float,
    offset: float,
    depth: float,
    half_span: float,
) -> tuple[tuple[float, float], ...]:
    """Rectangle across an arm, ``offset`` metres from the centre."""
    c = np.asarray(center, dtype=float)
    u, n = unit_vector(angle), normal_vector(angle)
    near, far = offset - depth / 2.0, offset + depth / 2.0
    corners = [
        c + near * u - half_span * n,
        c + far * u - half_span * n,
        c + far * u + half_span * n,
        c + near * u + half_span * n,
    ]
    return tuple((float(p[0]), float(p[1])) for p in corners)


def entry_sector_polygon(
    center: Sequence[float],
    angle: float,
    sector: float,
    r_inner: float,
    r_outer: float,
    max_step_deg: float = 5.0,
) -> tuple[tuple[float, float], ...]:
    """Annular sector spanning ``sector`` radians upstream of ``angle``."""
    c = np.asarray(center, dtype=float)
    n_steps = max(1, int(math.ceil(math.degrees(sector) / max_step_deg)))
    angles = [angle - sector + sector * k / n_steps for k in range(n_steps + 1)]
    outer = [c + r_outer * unit_vector(a) for a in angles]
    inner = [c + r_inner * unit_vector(a) for a in reversed(angles)]
    return tuple((float(p[0]), float(p[1])) for p in outer + inner)


def build_geometry(data: dict) -> RoundaboutGeometry:
    """
    Build a geometry from its mapping form (the YAML layout).

    Zones may carry an explicit ``polygon``; otherwise crosswalks are built
    from ``offset``/``depth``/``half_span`` and entries from ``sector_deg``
    along their arm.
    """
    try:
        center = tuple(float(v) for v in data.get('center', (0.0, 0.0)))
        radius = float(data['circulating_radius'])
        lane_width = float(data.get('lane_width', 5.0))
        lane_offset = float(data.get('lane_offset', 2.0))
        arm_length = float(data.get('arm_length', 300.0))
        arm_items = data['arms']
    except (KeyError, TypeError, ValueError) as error:
        raise InvalidGeometry(
            f'✗ MALFORMED GEOMETRY DEFINITION: {error}', reason=str(error)
        )

    angles: dict[int, float] = {}
    arms = []
    for item in arm_items:
        arm_id = int(item['arm_id'])
        angle = (
            math.radians(float(item['angle_deg']))
            if 'angle_deg' in item
            else float(item['angle'])
        )
        angles[arm_id] = angle
        u, n = unit_vector(angle), normal_vector(angle)
        c = np.asarray(center)
        polyline = tuple(
            tuple(float(v) for v in c + r * u + lane_offset * n)
            for r in (radius + arm_length, radius)
        )
        arms.append(Arm(arm_id, angle, polyline))

    def arm_angle(item) -> float:
        arm_id = item.get('arm_id')
        if arm_id not in angles:
            raise InvalidGeometry(
                f'✗ ZONE {item.get("zone_id")} REFERS TO UNKNOWN ARM {arm_id}',
                zone_id=item.get('zone_id'),
            )
        return angles[arm_id]

    zones = []
    for item in data.get('crosswalks', []):
        polygon = item.get('polygon') or crosswalk_polygon(
            center,
            arm_angle(item),
            float(item.get('offset', radius + 6.0)),
            float(item.get('depth', 4.0)),
            float(item.get('half_span', 3.0)),
        )
        zones.append(
            ConflictZone(
                int(item['zone_id']),
                ZoneKind.CROSSWALK,
                tuple(tuple(p) for p in polygon),
                item.get('arm_id'),
            )
        )
    for item in data.get('entries', []):
        r_outer = float(item.get('r_outer', radius))
        r_inner = float(item.get('r_inner', radius - lane_width))
        polygon = item.get('polygon') or entry_sector_polygon(
            center,
            arm_angle(item),
            math.radians(float(item.get('sector_deg', 60.0))),
            r_inner,
            r_outer,
        )
        zones.append(
            ConflictZone(
                int(item['zone_id']),
                ZoneKind.ENTRY,
                tuple(tuple(p) for p in polygon),
                item.get('arm_id'),
                (center[0], center[1], r_inner, r_outer),
            )
        )

    return RoundaboutGeometry(
        name=str(data.get('name', 'roundabout')),
        center=center,
        circulating_radius=radius,
        arms=tuple(arms),
        zones=tuple(zones),
        lane_width=lane_width,
        lane_offset=lane_offset,
        arm_length=arm_length,
    )


def load_geometry(path: str | Path) -> RoundaboutGeometry:
    """Read a geometry YAML/JSON file."""
    if not os.path.isfile(path):
        raise InvalidGeometry(
            f'✗ GEOMETRY FILE "{path}" DOES NOT EXIST', path=str(path)
        )
    return build_geometry(load_config_file(path))


@lru_cache(maxsize=1)
def default_geometry() -> RoundaboutGeometry:
    """The bundled four-arm layout modelled on the rdb1 roundabout."""
    return load_geometry(DEFAULT_GEOMETRY_FILE)
