"""
Trajectory data: per-second agent states, openDD-style CSV ingestion,
aggregation to 1 Hz, exit-intention labelling and dataset splits.
"""
import io
import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Sequence, TextIO

import numpy as np
import pandas as pd

from rosalab.resources.errors import (EmptyInput, IncompatibleRates,
                                      InvalidSpec, MalformedRow,
                                      MissingColumn, TooFewSegments,
                                      validate_count)

if TYPE_CHECKING:
    from rosalab.resources.geometry import RoundaboutGeometry

VRU_LABELS = {'pedestrian', 'bicycle', 'cyclist', 'bike', 'vru', 'person'}
NUMERIC_FIELDS = ('time', 'x', 'y', 'v', 'a_tan', 'a_lat', 'theta')


class AgentClass(Enum):
    VEHICLE = 'Vehicle'
    VRU = 'VRU'

    @classmethod
    def from_label(cls, label: str) -> 'AgentClass':
        """Map a dataset class string (``Car``, ``Pedestrian``...) to a class."""
        text = str(label).strip().lower()
        if text in VRU_LABELS:
            return cls.VRU
        return cls.VEHICLE

    @property
    def code(self) -> float:
        return 1.0 if self is AgentClass.VRU else 0.0


def wrap_angle(theta: float) -> float:
    """Normalize an angle to ``[-pi, pi)``."""
    wrapped = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class AgentState:
    """
    One agent at one timestep, in roundabout-local metres.

    Arguments and Attributes:
        - ``agent_id (str):`` Opaque identifier, unique inside a frame.
        - ``agent_class (AgentClass):`` Vehicle or VRU.
        - ``x, y (float):`` Position in metres.
        - ``v (float):`` Speed in m/s, never negative.
        - ``a_tan, a_lat (float):`` Tangential and lateral acceleration.
        - ``theta (float):`` Heading in radians, normalized to [-pi, pi).
        - ``exit (int):`` Exit arm index or -1 (always -1 for VRUs).
    """

    agent_id: str
    agent_class: AgentClass
    x: float
    y: float
    v: float = 0.0
    a_tan: float = 0.0
    a_lat: float = 0.0
    theta: float = 0.0
    exit: int = -1

    def __post_init__(self):
        if not self.v >= 0:
            raise InvalidSpec(
                f'SPEED OF AGENT "{self.agent_id}" MUST BE NON-NEGATIVE',
                agent_id=self.agent_id,
                v=self.v,
            )
        object.__setattr__(self, 'theta', wrap_angle(float(self.theta)))
        if self.agent_class is AgentClass.VRU:
            object.__setattr__(self, 'exit', -1)

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def to_dict(self) -> dict:
        return {
            'id': self.agent_id,
            'c': self.agent_class.value,
            'x': self.x,
            'y': self.y,
            'v': self.v,
            'a_tan': self.a_tan,
            'a_lat': self.a_lat,
            'theta': self.theta,
            'e': self.exit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'AgentState':
        return cls(
            agent_id=str(data['id']),
            agent_class=AgentClass(data['c']),
            x=float(data['x']),
            y=float(data['y']),
            v=float(data['v']),
            a_tan=float(data['a_tan']),
            a_lat=float(data['a_lat']),
            theta=float(data['theta']),
            exit=int(data['e']),
        )


@dataclass(frozen=True)
class Frame:
    """All agents present at one timestamp, ordered by ``agent_id``."""

    timestamp: int
    states: tuple[AgentState, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.states, key=lambda s: s.agent_id))
        ids = [s.agent_id for s in ordered]
        if len(set(ids)) != len(ids):
            raise InvalidSpec(
                f'DUPLICATE AGENT IN FRAME {self.timestamp}',
                timestamp=self.timestamp,
            )
        object.__setattr__(self, 'states', ordered)

    @cached_property
    def by_id(self) -> dict[str, AgentState]:
        return {state.agent_id: state for state in self.states}

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(state.agent_id for state in self.states)

    def restricted_to(self, agent_ids: Iterable[str]) -> 'Frame':
        wanted = set(agent_ids)
        return Frame(
            self.timestamp,
            tuple(s for s in self.states if s.agent_id in wanted),
        )


@dataclass(frozen=True)
class FrameSeries:
    """
    Time-indexed frames of one recording, segment or scenario.

    Arguments and Attributes:
        - ``frames (tuple[Frame]):`` Strictly increasing timestamps.
        - ``frequency_hz (int):`` Sampling rate (1 after preprocessing).
        - ``geometry_ref (str):`` Name of the geometry used for labelling.
        - ``name (str):`` Segment or scenario name.
    """

    frames: tuple[Frame, ...] = ()
    frequency_hz: int = 1
    geometry_ref: str = ''
    name: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'frames', tuple(self.frames))
        stamps = [frame.timestamp for frame in self.frames]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise InvalidSpec(
                f'TIMESTAMPS OF SERIES "{self.name}" MUST STRICTLY INCREASE',
                name=self.name,
            )

    @cached_property
    def _index(self) -> dict[int, Frame]:
        return {frame.timestamp: frame for frame in self.frames}

    def frame_at(self, timestamp: int) -> Frame | None:
        return self._index.get(timestamp)

    @property
    def start(self) -> int | None:
        return self.frames[0].timestamp if self.frames else None

    @property
    def end(self) -> int | None:
        return self.frames[-1].timestamp if self.frames else None

    @property
    def has_vru(self) -> bool:
        return any(
            state.agent_class is AgentClass.VRU
            for frame in self.frames
            for state in frame.states
        )

    @property
    def agent_ids(self) -> tuple[str, ...]:
        return tuple(
            sorted({state.agent_id for frame in self.frames for state in frame.states})
        )

    def with_frames(self, frames: Sequence[Frame], name: str | None = None):
        return replace(
            self, frames=tuple(frames), name=self.name if name is None else name
        )


@dataclass(frozen=True)
class ColumnMap:
    """
    Mapping from canonical fields to CSV header names.

    The defaults follow the openDD trajectory export. ``time_unit`` is either
    ``'seconds'`` (converted to frame indices with ``hz``) or ``'frames'``.
    """

    agent_id: str = 'OBJID'
    time: str = 'TIMESTAMP'
    agent_class: str = 'CLASS'
    x: str = 'UTM_X'
    y: str = 'UTM_Y'
    v: str = 'V'
    a_tan: str = 'ACC_TAN'
    a_lat: str = 'ACC_LAT'
    theta: str = 'UTM_ANGLE'
    exit: str | None = None
    time_unit: str = 'seconds'
    theta_unit: str = 'rad'
    hz: int = 30

    def required(self) -> dict[str, str]:
        return {
            'agent_id': self.agent_id,
            'time': self.time,
            'agent_class': self.agent_class,
            'x': self.x,
            'y': self.y,
            'v': self.v,
            'a_tan': self.a_tan,
            'a_lat': self.a_lat,
            'theta': self.theta,
        }


@dataclass(frozen=True)
class RawTrajectorySet:
    """High-rate per-agent records, one row per agent per source frame."""

    records: pd.DataFrame
    hz: int

    @property
    def n_agents(self) -> int:
        return int(self.records['agent_id'].nunique())

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test lists of segment names."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def to_dict(self) -> dict:
        data = asdict(self)
        data['fractions'] = list(self.fractions)
        for key in ('train', 'val', 'test'):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'DatasetSplit':
        return cls(
            train=tuple(data['train']),
            val=tuple(data['val']),
            test=tuple(data['test']),
            fractions=tuple(data.get('fractions', (0.8, 0.1, 0.1))),
            seed=int(data.get('seed', 0)),
        )


def parse_trajectory_file(
    stream: TextIO | str, schema: ColumnMap = ColumnMap()
) -> RawTrajectorySet:
    """
    Parse an openDD-style trajectory CSV.

    Args:
        - ``stream (TextIO | str):`` Open text stream or the CSV text itself.
        - ``schema (ColumnMap, optional):`` Header names of the canonical
        fields. Unknown columns are ignored.

    Returns:
        - ``RawTrajectorySet``: records sorted by agent and frame, with class
        strings mapped to Vehicle/VRU and headings in radians.

    Raises ``MissingColumn``, ``MalformedRow`` (with the 0-based data row
    index in ``details['row']``) or ``EmptyInput``.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    try:
        table = pd.read_csv(stream, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyInput('✗ THE TRAJECTORY FILE IS EMPTY')

    table.columns = [str(column).strip() for column in table.columns]

    for name, column in schema.required().items():
        if column not in table.columns:
            raise MissingColumn(
                f'✗ REQUIRED COLUMN "{column}" ({name}) IS ABSENT',
                column=column,
                field=name,
            )

    if table.empty:
        raise EmptyInput('✗ THE TRAJECTORY FILE HAS NO DATA ROWS')

    records = pd.DataFrame(
        {'agent_id': table[schema.agent_id].astype(str).str.strip()}
    )

    columns = schema.required()
    for name in NUMERIC_FIELDS:
        raw = table[columns[name]]
        values = pd.to_numeric(raw, errors='coerce')
        bad = values.isna() | ~np.isfinite(values.fillna(0.0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise MalformedRow(
                f'✗ NON-NUMERIC VALUE IN COLUMN "{columns[name]}" AT ROW {row}',
                row=row,
                column=columns[name],
                value=str(raw.iloc[row]),
            )
        records[name] = values.astype(float)

    records['agent_class'] = table[schema.agent_class].map(AgentClass.from_label)

    if schema.theta_unit == 'deg':
        records['theta'] = np.deg2rad(records['theta'])

    if schema.time_unit == 'seconds':
        records['frame'] = np.rint(records['time'] * schema.hz).astype(np.int64)
    else:
        records['frame'] = records['time'].astype(np.int64)

    if schema.exit and schema.exit in table.columns:
        records['exit'] = (
            pd.to_numeric(table[schema.exit], errors='coerce')
            .fillna(-1)
            .astype(int)
        )
    else:
        records['exit'] = -1

    records = records.drop(columns=['time'])
    records = records.sort_values(['agent_id', 'frame'], kind='mergesort')
    records = records.reset_index(drop=True)
    return RawTrajectorySet(records=records, hz=schema.hz)


def downsample(
    raw: RawTrajectorySet, hz_in: int | None = None, hz_out: int = 1
) -> FrameSeries:
    """
    Aggregate high-rate records into windows of ``hz_in / hz_out`` frames.

    Positions, speed and accelerations are averaged, the heading uses the
    circular (vector) mean; class and exit label are carried through.
    Agents with no record in a window are absent from that output frame.
    """
    hz_in = raw.hz if hz_in is None else hz_in
    if hz_in <= 0 or hz_out <= 0 or hz_in % hz_out:
        raise IncompatibleRates(
            f'✗ INPUT RATE {hz_in} HZ IS NOT A MULTIPLE OF {hz_out} HZ',
            hz_in=hz_in,
            hz_out=hz_out,
        )
    factor = hz_in // hz_out

    table = raw.records.copy()
    if table.empty:
        return FrameSeries(frames=(), frequency_hz=hz_out)

    table['window'] = table['frame'] // factor
    table['sin'] = np.sin(table['theta'])
    table['cos'] = np.cos(table['theta'])

    grouped = (
        table.groupby(['window', 'agent_id'], sort=True)
        .agg(
            agent_class=('agent_class', 'first'),
            x=('x', 'mean'),
            y=('y', 'mean'),
            v=('v', 'mean'),
            a_tan=('a_tan', 'mean'),
            a_lat=('a_lat', 'mean'),
            sin=('sin', 'mean'),
            cos=('cos', 'mean'),
            exit=('exit', 'first'),
        )
        .reset_index()
    )

    per_window: dict[int, list[AgentState]] = {}
    for row in grouped.itertuples(index=False):
        per_window.setdefault(int(row.window), []).append(
            AgentState(
                agent_id=str(row.agent_id),
                agent_class=row.agent_class,
                x=float(row.x),
                y=float(row.y),
                v=max(0.0, float(row.v)),
                a_tan=float(row.a_tan),
                a_lat=float(row.a_lat),
                theta=math.atan2(float(row.sin), float(row.cos)),
                exit=int(row.exit),
            )
        )

    first, last = min(per_window), max(per_window)
    frames = tuple(
        Frame(window, tuple(per_window.get(window, ())))
        for window in range(first, last + 1)
    )
    return FrameSeries(frames=frames, frequency_hz=hz_out)


def infer_exit_labels(
    series: FrameSeries, geo: 'RoundaboutGeometry'
) -> FrameSeries:
    """
    Label every agent with the arm it leaves through.

    VRUs and vehicles whose final position lies inside the circulating
    radius get -1; any other vehicle gets the arm whose angular sector
    contains the bearing from the centre to its final position.
    """
    final: dict[str, AgentState] = {}
    for frame in series.frames:
        for state in frame.states:
            final[state.agent_id] = state

    labels: dict[str, int] = {}
    cx, cy = geo.center
    for agent_id, state in final.items():
        if state.agent_class is AgentClass.VRU:
            labels[agent_id] = -1
            continue
        dx, dy = state.x - cx, state.y - cy
        if math.hypot(dx, dy) < geo.circulating_radius:
            labels[agent_id] = -1
            continue
        labels[agent_id] = geo.arm_for_bearing(math.atan2(dy, dx))

    frames = tuple(
        Frame(
            frame.timestamp,
            tuple(replace(s, exit=labels[s.agent_id]) for s in frame.states),
        )
        for frame in series.frames
    )
    return replace(series, frames=frames, geometry_ref=geo.name)


def segment_series(
    series: FrameSeries, length_s: int, min_frames: int | None = None
) -> list[FrameSeries]:
    """
    Cut a series into consecutive segments of ``length_s`` frames.

    A trailing remainder is kept only if it holds at least ``min_frames``
    frames (default: half a segment).
    """
    validate_count(length_s, 'length_s')
    min_frames = length_s // 2 if min_frames is None else min_frames
    segments = []
    for index, start in enumerate(range(0, len(series.frames), length_s)):
        chunk = series.frames[start:start + length_s]
        if len(chunk) < length_s and len(chunk) < max(min_frames, 1):
            continue
        segments.append(
            series.with_frames(chunk, name=f'{series.name}-{index:03d}')
        )
    return segments


def _allocate(total: int, fractions: tuple[float, float, float]) -> list[int]:
    train = int(round(total * fractions[0]))
    val = int(round(total * fractions[1]))
    train = min(train, total)
    val = min(val, total - train)
    return [train, val, total - train - val]


def split_dataset(
    segments: Sequence[FrameSeries],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """
    Split segments into train/val/test, stratified on VRU presence.

    Args:
        - ``segments (Sequence[FrameSeries]):`` At least 10 uniquely named
        segments.
        - ``fractions (tuple, optional):`` Train/val/test fractions.
        - ``seed (int, optional):`` Shuffle seed; equal seeds give equal
        splits.

    Returns:
        - ``DatasetSplit``: a partition of the segment names.
    """
    if len(segments) < 10:
        raise TooFewSegments(
            f'✗ AT LEAST 10 SEGMENTS ARE NEEDED TO SPLIT, GOT {len(segments)}',
            count=len(segments),
        )
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidSpec(
            '✗ SPLIT FRACTIONS MUST BE NON-NEGATIVE AND SUM TO 1',
            fractions=list(fractions),
        )
    names = [segment.name for segment in segments]
    if len(set(names)) != len(names):
        raise InvalidSpec('✗ SEGMENT NAMES MUST BE UNIQUE')

    rng = np.random.default_rng(seed)
    with_vru = sorted(s.name for s in segments if s.has_vru)
    without_vru = sorted(s.name for s in segments if not s.has_vru)
    with_vru = [with_vru[i] for i in rng.permutation(len(with_vru))]
    without_vru = [without_vru[i] for i in rng.permutation(len(without_vru))]

    targets = _allocate(len(segments), fractions)
    vru_counts = _allocate(len(with_vru), fractions)
    if len(with_vru) >= 3:
        for index in (1, 2):
            if vru_counts[index] == 0 and fractions[index] > 0:
                vru_counts[index] = 1
                vru_counts[0] -= 1
    other_counts = [max(0, t - v) for t, v in zip(targets, vru_counts)]
    other_counts[0] = len(without_vru) - other_counts[1] - other_counts[2]
    if other_counts[0] < 0:
        other_counts = _allocate(len(without_vru), fractions)

    parts: list[list[str]] = [[], [], []]
    start_vru = start_other = 0
    for index in range(3):
        parts[index].extend(with_vru[start_vru:start_vru + vru_counts[index]])
        parts[index].extend(
            without_vru[start_other:start_other + other_counts[index]]
        )
        start_vru += vru_counts[index]
        start_other += other_counts[index]

    return DatasetSplit(
        train=tuple(sorted(parts[0])),
        val=tuple(sorted(parts[1])),
        test=tuple(sorted(parts[2])),
        fractions=tuple(fractions),
        seed=seed,
    )


def write_series(series: FrameSeries, stream: TextIO) -> None:
    """Write a series as JSON lines: one header object, then one frame per line."""
    header = {
        'frequency_hz': series.frequency_hz,
        'geometry_ref': series.geometry_ref,
        'name': series.name,
    }
    stream.write(json.dumps(header, sort_keys=True) + '\n')
    for frame in series.frames:
        line = {
            't': frame.timestamp,
            'agents': [state.to_dict() for state in frame.states],
        }
        stream.write(json.dumps(line, sort_keys=True) + '\n')


def read_series(stream: TextIO) -> FrameSeries:
    """Read a series written by :func:`write_series`."""
    lines = [line for line in stream.read().splitlines() if line.strip()]
    if not lines:
        raise EmptyInput('✗ THE SERIES FILE IS EMPTY')
    header = json.loads(lines[0])
    frames = []
    for line in lines[1:]:
        data = json.loads(line)
        frames.append(
            Frame(
                int(data['t']),
                tuple(AgentState.from_dict(a) for a in data['agents']),
            )
        )
    return FrameSeries(
        frames=tuple(frames),
        frequency_hz=int(header.get('frequency_hz', 1)),
        geometry_ref=header.get('geometry_ref', ''),
        name=header.get('name', ''),
    )
