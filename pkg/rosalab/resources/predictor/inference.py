"""
Autoregressive rollout with the transformer and the two reference
predictors, and displacement-error evaluation.
"""
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from rosalab.config import setup_custom_logger
from rosalab.resources.data import AgentState, Frame, FrameSeries, wrap_angle
from rosalab.resources.errors import AlignmentError, WindowTooShort
from rosalab.resources.predictor.features import Variant, normalize_features
from rosalab.resources.predictor.network import ModelParameters, forward

logger = setup_custom_logger()


class TrajectoryPredictor:
    """
    One-step predictor rolled out autoregressively.

    Subclasses implement :meth:`predict_next`, which receives the whole
    window (history plus already predicted frames) and returns the next
    frame for the agents of the window's last frame.
    """

    history_length = 1
    max_agents: int | None = None

    def predict_next(self, window: Sequence[Frame]) -> Frame:
        raise NotImplementedError

    def rollout(self, history: Sequence[Frame], m: int) -> list[Frame]:
        """
        Predict ``m`` frames after ``history``.

        Each predicted frame is appended to the window before the next step,
        so the window grows from ``history_length`` to
        ``history_length + m - 1`` frames.
        """
        if len(history) < self.history_length:
            raise WindowTooShort(
                f'✗ ROLLOUT NEEDS {self.history_length} HISTORY FRAMES, GOT {len(history)}',
                frames=len(history),
            )
        window = list(history[len(history) - self.history_length:])
        predicted = []
        for _ in range(m):
            frame = self.predict_next(window)
            predicted.append(frame)
            window.append(frame)
        return predicted


class ConstantVelocityModel(TrajectoryPredictor):
    """Physics baseline: every agent keeps its speed and heading."""

    def predict_next(self, window: Sequence[Frame]) -> Frame:
        current = window[-1]
        states = tuple(
            replace(
                state,
                x=state.x + state.v * math.cos(state.theta),
                y=state.y + state.v * math.sin(state.theta),
                a_tan=0.0,
                a_lat=0.0,
            )
            for state in current.states
        )
        return Frame(current.timestamp + 1, states)


class GroundTruthModel(TrajectoryPredictor):
    """Oracle reading the recorded future of the current agents."""

    def __init__(self, series: FrameSeries):
        self.series = series

    def predict_next(self, window: Sequence[Frame]) -> Frame:
        current = window[-1]
        timestamp = current.timestamp + 1
        future = self.series.frame_at(timestamp)
        if future is None:
            return Frame(timestamp, ())
        return future.restricted_to(current.ids)


class TransformerModel(TrajectoryPredictor):
    """The trained masked transformer."""

    def __init__(self, params: ModelParameters):
        self.params = params
        self.history_length = params.config.s + 1
        self.max_agents = params.config.n_max

    def _window_tensors(self, window: Sequence[Frame], agent_ids: Sequence[str]):
        config, feature_config = self.params.config, self.params.feature_config
        steps = []
        valid = np.zeros((len(agent_ids), len(window)), dtype=bool)
        earliest = {}
        for frame in window:
            for agent_id in agent_ids:
                if agent_id in frame.by_id and agent_id not in earliest:
                    earliest[agent_id] = frame.by_id[agent_id]
        for t, frame in enumerate(window):
            states = []
            for i, agent_id in enumerate(agent_ids):
                state = frame.by_id.get(agent_id)
                valid[i, t] = state is not None
                states.append(state if state is not None else earliest[agent_id])
            steps.append(
                normalize_features(states, feature_config, config.normalization)
            )
        return np.stack(steps, axis=1), valid

    def predict_next(self, window: Sequence[Frame]) -> Frame:
        config = self.params.config
        current = window[-1]
        agent_ids = current.ids
        if len(agent_ids) > config.n_max:
            logger.warning(
                f'AGENTS TRUNCATED   [{len(agent_ids)} > n_max={config.n_max}]'
            )
            agent_ids = agent_ids[:config.n_max]
        if not agent_ids:
            return Frame(current.timestamp + 1, ())

        inputs, valid = self._window_tensors(window, agent_ids)
        output = forward(self.params, inputs[None], valid[None])[0]
        normalization = config.normalization
        derive = self.params.feature_config.variant is Variant.POSITION

        states = []
        for agent_id, vector in zip(agent_ids, output):
            last = current.by_id[agent_id]
            fields = normalization.denormalize(vector)
            if derive:
                dx, dy = fields['x'] - last.x, fields['y'] - last.y
                v = math.hypot(dx, dy)
                theta = math.atan2(dy, dx) if v > 0 else last.theta
                fields['v'] = v
                fields['theta'] = theta
                fields['a_tan'] = v - last.v
                fields['a_lat'] = v * wrap_angle(theta - last.theta)
            states.append(
                AgentState(
                    agent_id=agent_id,
                    agent_class=last.agent_class,
                    x=fields['x'],
                    y=fields['y'],
                    v=max(0.0, fields['v']),
                    a_tan=fields['a_tan'],
                    a_lat=fields['a_lat'],
                    theta=fields['theta'],
                    exit=last.exit,
                )
            )
        return Frame(current.timestamp + 1, tuple(states))


def rollout(
    history: Sequence[Frame], params: ModelParameters, m: int | None = None
) -> list[Frame]:
    """Roll the transformer ``m`` steps (default: the configured horizon)."""
    return TransformerModel(params).rollout(
        history, params.config.m if m is None else m
    )


@dataclass(frozen=True)
class DisplacementErrors:
    """
    Displacement errors per horizon.

    ``ade[h - 1]`` averages over every agent and step up to ``h``,
    ``fde[h - 1]`` over every agent at step ``h``.
    """

    ade: tuple[float, ...]
    fde: tuple[float, ...]

    @property
    def final_ade(self) -> float:
        return self.ade[-1]

    @property
    def final_fde(self) -> float:
        return self.fde[-1]

    def to_dict(self) -> dict:
        return {
            'horizons': [
                {'h': h + 1, 'ade': a, 'fde': f}
                for h, (a, f) in enumerate(zip(self.ade, self.fde))
            ]
        }


def displacements(
    pred: Sequence[Frame], truth: Sequence[Frame]
) -> np.ndarray:
    """``(m, N)`` Euclidean errors of aligned frames."""
    if len(pred) != len(truth) or not pred:
        raise AlignmentError(
            f'✗ {len(pred)} PREDICTED VS {len(truth)} TRUE FRAMES',
            predicted=len(pred),
            truth=len(truth),
        )
    rows = []
    for step, (p, t) in enumerate(zip(pred, truth)):
        if p.ids != t.ids:
            raise AlignmentError(
                f'✗ AGENT SETS DIFFER AT STEP {step + 1}',
                step=step + 1,
                predicted=list(p.ids),
                truth=list(t.ids),
            )
        rows.append(
            [
                math.hypot(a.x - b.x, a.y - b.y)
                for a, b in zip(p.states, t.states)
            ]
        )
    return np.asarray(rows, dtype=float).reshape(len(pred), -1)


def errors_from_displacements(blocks: Sequence[np.ndarray]) -> DisplacementErrors:
    """Pool ``(m, N_k)`` displacement blocks of many samples."""
    if not blocks:
        raise AlignmentError('✗ NO SAMPLES TO EVALUATE')
    horizon = blocks[0].shape[0]
    if any(block.shape[0] != horizon for block in blocks):
        raise AlignmentError('✗ SAMPLES HAVE DIFFERENT HORIZONS')
    pooled = np.concatenate(blocks, axis=1)
    if pooled.shape[1] == 0:
        return DisplacementErrors((0.0,) * horizon, (0.0,) * horizon)
    per_step = pooled.mean(axis=1)
    ade = tuple(float(per_step[:h].mean()) for h in range(1, horizon + 1))
    fde = tuple(float(v) for v in per_step)
    return DisplacementErrors(ade, fde)


def ade_fde(pred: Sequence[Frame], truth: Sequence[Frame]) -> DisplacementErrors:
    """ADE and FDE of one rollout against its ground truth, per horizon."""
    return errors_from_displacements([displacements(pred, truth)])
