from rosalab.resources.data import AgentClass, AgentState, Frame, FrameSeries
from rosalab.resources.simulator import EgoRoute, ScenarioSpec

CSV_HEADER = 'OBJID,TIMESTAMP,CLASS,UTM_X,UTM_Y,V,ACC_TAN,ACC_LAT,UTM_ANGLE'

# Inside the crosswalk of arm 0 and inside the entry sector of arm 0 (bundled layout).
CROSSWALK_0_POINT = (20.0, 0.0)
ENTRY_3_POINT = (9.959, -5.75)


def csv_text(rows) -> str:
    lines = [CSV_HEADER] + [','.join(str(value) for value in row) for row in rows]
    return '\n'.join(lines) + '\n'


def vehicle(agent_id: str, x: float, y: float, v: float = 0.0, theta: float = 0.0, exit: int = -1):
    return AgentState(agent_id, AgentClass.VEHICLE, x, y, v=v, theta=theta, exit=exit)


def vru(agent_id: str, x: float, y: float, v: float = 1.2, theta: float = 0.0):
    return AgentState(agent_id, AgentClass.VRU, x, y, v=v, theta=theta)


def series_of(*frames: Frame, name: str = 'test') -> FrameSeries:
    return FrameSeries(frames=tuple(frames), name=name)


def single_frame_segment(name: str, with_vru: bool) -> FrameSeries:
    states = (vru('p', 0.0, 0.0),) if with_vru else (vehicle('v', 0.0, 0.0),)
    return FrameSeries(frames=(Frame(0, states),), name=name)


def crossing_scenario(name: str = 'crossing', vru_seconds=range(4, 11), n_frames: int = 60):
    """Ego 60 m before the arm-0 entry at 8 m/s, a pedestrian on the crosswalk."""
    background = FrameSeries(
        frames=tuple(
            Frame(t, (vru('p', *CROSSWALK_0_POINT),) if t in vru_seconds else ())
            for t in range(n_frames)
        ),
        name='bg',
    )
    return ScenarioSpec(
        name,
        background,
        EgoRoute(approach_arm=0, crosswalk_zone=0, entry_zone=3, exit_arm=2),
        ego_start_distance=60.0,
        ego_initial_speed=8.0,
    )
