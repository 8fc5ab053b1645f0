"""
Sample extraction, mini-batch training and the finite-difference gradient
oracle of the transformer predictor.
"""
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from rosalab.config import setup_custom_logger
from rosalab.resources.data import DatasetSplit, Frame, FrameSeries
from rosalab.resources.errors import (DivergedLoss, EmptyDataset,
                                      NonFiniteLoss, validate_positive)
from rosalab.resources.predictor.features import (OUTPUT_WIDTH,
                                                  FeatureConfig,
                                                  normalize_features)
from rosalab.resources.predictor.loss import composite_loss
from rosalab.resources.predictor.network import (ModelConfig,
                                                 ModelParameters, backward,
                                                 forward, init_parameters)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

logger = setup_custom_logger()


@dataclass(frozen=True)
class Sample:
    """
    ``s + 1`` history frames and the frames that follow, restricted to the
    agents present in all of them.
    """

    history: tuple[Frame, ...]
    future: tuple[Frame, ...]
    agent_ids: tuple[str, ...]
    source: str = ''


@dataclass(frozen=True, eq=False)
class Batch:
    """Padded tensors of a list of samples."""

    inputs: np.ndarray
    valid: np.ndarray
    targets: np.ndarray
    agent_valid: np.ndarray

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    components: list[dict] = field(default_factory=list)
    initial_train_loss: float = float('nan')
    best_epoch: int = -1
    seed: int = 0
    model_config: dict = field(default_factory=dict)
    feature_config: dict = field(default_factory=dict)
    n_train: int = 0
    n_val: int = 0

    def to_dict(self) -> dict:
        return {
            'train_loss': self.train_loss,
            'val_loss': self.val_loss,
            'components': self.components,
            'initial_train_loss': self.initial_train_loss,
            'best_epoch': self.best_epoch,
            'seed': self.seed,
            'model_config': self.model_config,
            'feature_config': self.feature_config,
            'n_train': self.n_train,
            'n_val': self.n_val,
        }


@dataclass(frozen=True)
class GradientCheckResult:
    max_relative_error: float
    worst_parameter: str
    worst_index: tuple[int, ...]
    n_checked: int


def _consecutive(frames: Sequence[Frame]) -> bool:
    return all(
        b.timestamp - a.timestamp == 1 for a, b in zip(frames, frames[1:])
    )


def extract_samples(
    series_list: Iterable[FrameSeries],
    s: int,
    horizon: int = 1,
    n_max: int | None = None,
    stride: int = 1,
) -> list[Sample]:
    """
    Every window of ``s + 1 + horizon`` consecutive frames with at least one
    agent present throughout.

    Agents beyond ``n_max`` (by sorted id) are dropped.
    """
    samples = []
    span = s + 1 + horizon
    for series in series_list:
        frames = series.frames
        for start in range(0, len(frames) - span + 1, stride):
            window = frames[start:start + span]
            if not _consecutive(window):
                continue
            common = set(window[0].ids)
            for frame in window[1:]:
                common &= set(frame.ids)
            if not common:
                continue
            agent_ids = tuple(sorted(common))[:n_max]
            restricted = tuple(frame.restricted_to(agent_ids) for frame in window)
            samples.append(
                Sample(
                    restricted[:s + 1],
                    restricted[s + 1:],
                    agent_ids,
                    series.name,
                )
            )
    return samples


def sample_tensors(
    sample: Sample, feature_config: FeatureConfig, config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """``(N, L, F)`` inputs and ``(N, 7)`` next-step targets of a sample."""
    inputs = np.stack(
        [
            normalize_features(
                [frame.by_id[a] for a in sample.agent_ids],
                feature_config,
                config.normalization,
            )
            for frame in sample.history
        ],
        axis=1,
    )
    target_frame = sample.future[0]
    targets = np.stack(
        [config.normalization.target(target_frame.by_id[a]) for a in sample.agent_ids]
    )
    return inputs, targets


def collate(tensors: Sequence[tuple[np.ndarray, np.ndarray]]) -> Batch:
    """Pad per-sample tensors to the largest agent count of the batch."""
    n = max(inputs.shape[0] for inputs, _ in tensors)
    window, width = tensors[0][0].shape[1:]
    b = len(tensors)
    batch_inputs = np.zeros((b, n, window, width))
    valid = np.zeros((b, n, window), dtype=bool)
    targets = np.zeros((b, n, OUTPUT_WIDTH))
    agent_valid = np.zeros((b, n), dtype=bool)
    for index, (inputs, target) in enumerate(tensors):
        count = inputs.shape[0]
        batch_inputs[index, :count] = inputs
        valid[index, :count] = True
        targets[index, :count] = target
        agent_valid[index, :count] = True
    return Batch(batch_inputs, valid, targets, agent_valid)


def make_batch(
    samples: Sequence[Sample], feature_config: FeatureConfig, config: ModelConfig
) -> Batch:
    return collate([sample_tensors(s, feature_config, config) for s in samples])


def loss_and_gradients(params: ModelParameters, batch: Batch):
    """Composite loss of a batch, its components and every tensor gradient."""
    weights = params.config.weights.for_variant(params.feature_config.variant)
    output, cache = forward(params, batch.inputs, batch.valid, keep_cache=True)
    loss, components, d_output = composite_loss(
        output, batch.targets, weights, batch.agent_valid, with_grad=True
    )
    return loss, components, backward(params, cache, d_output)


def batch_loss(params: ModelParameters, batch: Batch) -> tuple[float, dict]:
    weights = params.config.weights.for_variant(params.feature_config.variant)
    output = forward(params, batch.inputs, batch.valid)
    return composite_loss(output, batch.targets, weights, batch.agent_valid)


def _clip(grads: dict[str, np.ndarray], clip_norm: float | None) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if clip_norm is not None and norm > clip_norm:
        factor = clip_norm / norm
        for grad in grads.values():
            grad *= factor
    return norm


class _Optimizer:
    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.kind = config.optimizer
        self.learning_rate = config.learning_rate
        self.step_count = 0
        self.first = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.second = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.step_count += 1
        if self.kind == 'sgd':
            for name, grad in grads.items():
                tensors[name] -= self.learning_rate * grad
            return
        beta1, beta2 = ADAM_BETAS
        correction1 = 1.0 - beta1 ** self.step_count
        correction2 = 1.0 - beta2 ** self.step_count
        for name, grad in grads.items():
            self.first[name] = beta1 * self.first[name] + (1 - beta1) * grad
            self.second[name] = beta2 * self.second[name] + (1 - beta2) * grad * grad
            m_hat = self.first[name] / correction1
            v_hat = self.second[name] / correction2
            tensors[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _mean_loss(params: ModelParameters, batches: Sequence[Batch]) -> float:
    total = count = 0.0
    for batch in batches:
        loss, _ = batch_loss(params, batch)
        total += loss * len(batch)
        count += len(batch)
    return total / count


def train_on_samples(
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    feature_config: FeatureConfig,
    config: ModelConfig,
) -> tuple[ModelParameters, TrainingHistory]:
    """
    Mini-batch gradient descent on next-step prediction.

    Args:
        - ``train_samples (Sequence[Sample]):`` Non-empty training windows.
        - ``val_samples (Sequence[Sample]):`` Validation windows; when empty
        the training loss selects the best epoch.
        - ``feature_config (FeatureConfig):`` Input variant.
        - ``config (ModelConfig):`` Architecture and optimization settings.

    Returns:
        - ``(ModelParameters, TrainingHistory)``: parameters of the epoch
        with the lowest validation loss and the per-epoch record.
    """
    if not train_samples:
        raise EmptyDataset('✗ THE TRAINING SET HOLDS NO SAMPLES')

    params = init_parameters(config, feature_config)
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    train_tensors = [sample_tensors(s, feature_config, config) for s in train_samples]
    size = config.batch_size
    val_batches = [
        make_batch(val_samples[i:i + size], feature_config, config)
        for i in range(0, len(val_samples), size)
    ]
    train_batches = [
        collate(train_tensors[i:i + size])
        for i in range(0, len(train_tensors), size)
    ]

    history = TrainingHistory(
        seed=config.seed,
        model_config=config.to_dict(),
        feature_config=feature_config.to_dict(),
        n_train=len(train_samples),
        n_val=len(val_samples),
    )
    history.initial_train_loss = _mean_loss(params, train_batches)

    rng = np.random.default_rng([config.seed, 1])
    optimizer = _Optimizer(config, tensors)
    best_loss, best_tensors = float('inf'), {k: v.copy() for k, v in tensors.items()}

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_tensors))
        total = 0.0
        sums = dict.fromkeys(('pos', 'vel', 'acc', 'ori', 'unit'), 0.0)
        for start in range(0, len(order), size):
            chosen = [train_tensors[i] for i in order[start:start + size]]
            batch = collate(chosen)
            current = ModelParameters(config, feature_config, tensors)
            loss, components, grads = loss_and_gradients(current, batch)
            if not np.isfinite(loss):
                raise DivergedLoss(
                    f'✗ TRAINING LOSS DIVERGED AT EPOCH {epoch}', epoch=epoch
                )
            total += loss * len(batch)
            for name, value in components.items():
                sums[name] += value * len(batch)
            _clip(grads, config.clip_norm)
            optimizer.step(tensors, grads)

        current = ModelParameters(config, feature_config, tensors)
        train_loss = total / len(train_tensors)
        val_loss = _mean_loss(current, val_batches) if val_batches else train_loss
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergedLoss(
                f'✗ TRAINING LOSS DIVERGED AT EPOCH {epoch}', epoch=epoch
            )
        history.train_loss.append(float(train_loss))
        history.val_loss.append(float(val_loss))
        history.components.append(
            {k: v / len(train_tensors) for k, v in sums.items()}
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_tensors = {k: v.copy() for k, v in tensors.items()}
            history.best_epoch = epoch
        logger.info(
            f'EPOCH {epoch + 1}/{config.epochs}'.ljust(19)
            + f'[train={train_loss:.6f} val={val_loss:.6f}]'
        )

    return ModelParameters(config, feature_config, best_tensors), history


def train(
    split: DatasetSplit,
    segments: Sequence[FrameSeries],
    feature_config: FeatureConfig,
    config: ModelConfig,
) -> tuple[ModelParameters, TrainingHistory]:
    """Train on the segments named by ``split.train``, select on ``split.val``."""
    by_name = {segment.name: segment for segment in segments}
    train_series = [by_name[name] for name in split.train if name in by_name]
    val_series = [by_name[name] for name in split.val if name in by_name]
    train_samples = extract_samples(train_series, config.s, 1, config.n_max)
    val_samples = extract_samples(val_series, config.s, 1, config.n_max)
    logger.info(
        f'TRAIN SAMPLES      [train: {len(train_samples)} - val: {len(val_samples)} - '
        f'variant: {feature_config.variant.label}]'
    )
    return train_on_samples(train_samples, val_samples, feature_config, config)


def gradient_check(
    params: ModelParameters,
    batch: Batch,
    epsilon: float = 1e-5,
    n_coordinates: int = 200,
    seed: int = 0,
    floor: float = 1e-3,
) -> GradientCheckResult:
    """
    Compare analytic gradients with central finite differences.

    The relative error of a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    The floor keeps exactly-zero gradients from reading as failures: the
    attention key bias (``layers.*.attn.bk``) adds the same term to every
    score of a query and cancels in the softmax, so its analytic gradient
    is zero and its finite difference is rounding noise, which without a
    floor gives a relative error near 1.

    Args:
        - ``params (ModelParameters):`` Point of evaluation.
        - ``batch (Batch):`` Inputs and targets.
        - ``epsilon (float, optional):`` Finite-difference step.
        - ``n_coordinates (int, optional):`` Coordinates sampled uniformly
        over all tensors (all of them when fewer exist).
        - ``seed (int, optional):`` Coordinate sampling seed.
        - ``floor (float, optional):`` Lower bound of the denominator.

    Returns:
        - ``GradientCheckResult``: worst relative error and where it occurred.
    """
    validate_positive(epsilon, 'epsilon')
    loss, _, grads = loss_and_gradients(params, batch)
    if not np.isfinite(loss):
        raise NonFiniteLoss('✗ THE BATCH LOSS IS NOT FINITE', loss=str(loss))

    names = list(params.tensors)
    sizes = np.array([params.tensors[name].size for name in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(n_coordinates, total), replace=False))

    worst = GradientCheckResult(0.0, names[0], (0,), 0)
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    probe = ModelParameters(params.config, params.feature_config, tensors)
    for flat in picks:
        position = int(np.searchsorted(offsets, flat, side='right')) - 1
        name = names[position]
        index = np.unravel_index(int(flat - offsets[position]), tensors[name].shape)
        original = tensors[name][index]
        tensors[name][index] = original + epsilon
        plus, _ = batch_loss(probe, batch)
        tensors[name][index] = original - epsilon
        minus, _ = batch_loss(probe, batch)
        tensors[name][index] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NonFiniteLoss(
                f'✗ NON-FINITE LOSS WHILE PROBING {name}{tuple(index)}',
                parameter=name,
            )
        numeric = (plus - minus) / (2.0 * epsilon)
        analytic = float(grads[name][index])
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if error >= worst.max_relative_error:
            worst = GradientCheckResult(
                float(error), name, tuple(int(i) for i in index), 0
            )
    return GradientCheckResult(
        worst.max_relative_error,
        worst.worst_parameter,
        worst.worst_index,
        len(picks),
    )
