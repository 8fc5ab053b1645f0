"""
Feature layout and normalization of the trajectory predictor.

Per-token input vector (variant-dependent width)::

    [c, px, py]                                    position
    [c, px, py, v, a_tan, a_lat, sin, cos]         dynamics
    [c, px, py, v, a_tan, a_lat, sin, cos, e...]   dynamics-exit (one-hot e)

Prediction and target vectors are always seven wide::

    [px, py, v, a_tan, a_lat, sin, cos]
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from rosalab.resources.data import AgentClass, AgentState
from rosalab.resources.errors import DegenerateBounds, InvalidSpec

OUTPUT_WIDTH = 7


class Variant(Enum):
    POSITION = 1
    DYNAMICS = 2
    DYNAMICS_EXIT = 3

    @property
    def label(self) -> str:
        return self.name.lower().replace('_', '-')

    @classmethod
    def from_label(cls, label: 'str | int | Variant') -> 'Variant':
        """Accept ``position``, ``dynamics``, ``dynamics-exit`` or 1/2/3."""
        if isinstance(label, Variant):
            return label
        text = str(label).strip().lower().replace('_', '-')
        for variant in cls:
            if text in (variant.label, str(variant.value)):
                return variant
        raise InvalidSpec(
            f'✗ UNKNOWN FEATURE VARIANT "{label}"',
            variant=str(label),
            allowed=[v.label for v in cls],
        )


@dataclass(frozen=True)
class FeatureConfig:
    variant: Variant = Variant.DYNAMICS
    n_exit_slots: int = 5

    @property
    def input_width(self) -> int:
        if self.variant is Variant.POSITION:
            return 3
        if self.variant is Variant.DYNAMICS:
            return 8
        return 8 + self.n_exit_slots

    def to_dict(self) -> dict:
        return {'variant': self.variant.label, 'n_exit_slots': self.n_exit_slots}

    @classmethod
    def from_dict(cls, data: dict) -> 'FeatureConfig':
        return cls(
            variant=Variant.from_label(data.get('variant', 'dynamics')),
            n_exit_slots=int(data.get('n_exit_slots', 5)),
        )


@dataclass(frozen=True)
class Normalization:
    """
    Scene bounding box and kinematic bounds.

    Positions map affinely from the box to ``[-1, 1]``; speed is divided by
    ``v_max`` and accelerations by ``a_max``.
    """

    x_min: float = -80.0
    x_max: float = 80.0
    y_min: float = -80.0
    y_max: float = 80.0
    v_max: float = 15.0
    a_max: float = 5.0

    def __post_init__(self):
        if not (
            self.x_max > self.x_min
            and self.y_max > self.y_min
            and self.v_max > 0
            and self.a_max > 0
        ):
            raise DegenerateBounds(
                '✗ NORMALIZATION BOUNDS MUST HAVE A POSITIVE EXTENT',
                bounds=self.to_dict(),
            )

    @classmethod
    def around(
        cls,
        center: Sequence[float],
        half_extent: float = 80.0,
        v_max: float = 15.0,
        a_max: float = 5.0,
    ) -> 'Normalization':
        cx, cy = center
        return cls(
            cx - half_extent,
            cx + half_extent,
            cy - half_extent,
            cy + half_extent,
            v_max,
            a_max,
        )

    def to_dict(self) -> dict:
        return {
            'x_min': self.x_min,
            'x_max': self.x_max,
            'y_min': self.y_min,
            'y_max': self.y_max,
            'v_max': self.v_max,
            'a_max': self.a_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Normalization':
        return cls(**{k: float(v) for k, v in data.items()})

    def position(self, x: float, y: float) -> tuple[float, float]:
        return (
            2.0 * (x - self.x_min) / (self.x_max - self.x_min) - 1.0,
            2.0 * (y - self.y_min) / (self.y_max - self.y_min) - 1.0,
        )

    def inverse_position(self, px: float, py: float) -> tuple[float, float]:
        return (
            self.x_min + (px + 1.0) * (self.x_max - self.x_min) / 2.0,
            self.y_min + (py + 1.0) * (self.y_max - self.y_min) / 2.0,
        )

    def target(self, state: AgentState) -> np.ndarray:
        """The seven normalized target fields of a state."""
        px, py = self.position(state.x, state.y)
        return np.array(
            [
                px,
                py,
                state.v / self.v_max,
                state.a_tan / self.a_max,
                state.a_lat / self.a_max,
                math.sin(state.theta),
                math.cos(state.theta),
            ]
        )

    def denormalize(self, vector: Sequence[float]) -> dict[str, float]:
        """Physical fields of a seven-wide normalized vector."""
        px, py, v, a_tan, a_lat, sin, cos = (float(value) for value in vector)
        x, y = self.inverse_position(px, py)
        return {
            'x': x,
            'y': y,
            'v': v * self.v_max,
            'a_tan': a_tan * self.a_max,
            'a_lat': a_lat * self.a_max,
            'theta': math.atan2(sin, cos),
        }


def exit_one_hot(exit_label: int, n_slots: int) -> np.ndarray:
    """Slot 0 holds -1, slot ``k + 1`` holds arm ``k``."""
    vector = np.zeros(n_slots)
    slot = exit_label + 1
    if 0 <= slot < n_slots:
        vector[slot] = 1.0
    return vector


def normalize_features(
    states: Sequence[AgentState],
    feature_config: FeatureConfig,
    normalization: Normalization,
) -> np.ndarray:
    """
    Input vectors of a list of states.

    Args:
        - ``states (Sequence[AgentState]):`` States to encode.
        - ``feature_config (FeatureConfig):`` Variant and exit width.
        - ``normalization (Normalization):`` Scene and kinematic bounds.

    Returns:
        - ``np.ndarray``: ``(len(states), input_width)`` float64 array.
    """
    rows = np.zeros((len(states), feature_config.input_width))
    for index, state in enumerate(states):
        target = normalization.target(state)
        rows[index, 0] = 1.0 if state.agent_class is AgentClass.VRU else 0.0
        if feature_config.variant is Variant.POSITION:
            rows[index, 1:3] = target[:2]
            continue
        rows[index, 1:8] = target
        if feature_config.variant is Variant.DYNAMICS_EXIT:
            rows[index, 8:] = exit_one_hot(state.exit, feature_config.n_exit_slots)
    return rows


def denormalize_features(
    rows: np.ndarray, normalization: Normalization
) -> list[dict[str, float]]:
    """Inverse of the dynamics part of :func:`normalize_features`."""
    rows = np.atleast_2d(rows)
    return [normalization.denormalize(row[1:8]) for row in rows]


def residual_base(inputs: np.ndarray, variant: Variant) -> np.ndarray:
    """
    Seven-wide current-state offsets that a residual head adds to its output.

    ``inputs`` has the input width in its last axis.
    """
    base = np.zeros(inputs.shape[:-1] + (OUTPUT_WIDTH,))
    if variant is Variant.POSITION:
        base[..., 0:2] = inputs[..., 1:3]
    else:
        base[..., :] = inputs[..., 1:8]
    return base
