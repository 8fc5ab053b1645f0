"""
Masked multi-agent transformer encoder in plain numpy.

Tokens are laid out agent-major (token ``i * L + t`` is agent ``i`` at window
step ``t``; step ``L - 1`` is the current frame). Every token attends to the
tokens of its own agent and to every agent at its own time step.

The encoder is pre-LN without a final normalization, so a layer whose
weights are all zero is an identity on the residual stream.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from rosalab.resources.errors import (InvalidSpec, UnknownOffset,
                                      WindowTooShort, validate_count,
                                      validate_non_negative,
                                      validate_positive)
from rosalab.resources.predictor.features import (OUTPUT_WIDTH,
                                                  FeatureConfig,
                                                  Normalization, Variant,
                                                  residual_base)

LAYER_NORM_EPS = 1e-5
ACTIVATIONS = ('tanh', 'linear')
OPTIMIZERS = ('sgd', 'adam')


@dataclass(frozen=True)
class LossWeights:
    pos: float = 1.0
    vel: float = 0.5
    acc: float = 0.25
    ori: float = 0.5
    unit: float = 0.1

    def __post_init__(self):
        for name in ('vel', 'acc', 'ori', 'unit'):
            validate_non_negative(getattr(self, name), f'w_{name}')
        validate_positive(self.pos, 'w_pos')

    def for_variant(self, variant: Variant) -> 'LossWeights':
        """Position-only models are trained on the position term alone."""
        if variant is Variant.POSITION:
            return LossWeights(self.pos, 0.0, 0.0, 0.0, 0.0)
        return self

    def to_dict(self) -> dict:
        return {
            'w_pos': self.pos,
            'w_vel': self.vel,
            'w_acc': self.acc,
            'w_ori': self.ori,
            'w_unit': self.unit,
        }


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture, loss and optimization settings of the predictor.

    Arguments and Attributes:
        - ``s (int):`` Past steps in the history window (the window holds
        ``s + 1`` frames).
        - ``m (int):`` Prediction horizon in steps.
        - ``n_max (int):`` Agents per scene; extra agents are dropped by
        sorted id.
        - ``d_model, embed_hidden, ffn_hidden, head_hidden (int):`` Widths.
        - ``num_layers, num_heads (int):`` Encoder depth and heads;
        ``num_layers = 0`` bypasses the encoder.
        - ``activation (str):`` ``tanh`` or ``linear``.
        - ``residual_head (bool):`` Add the current normalized state to the
        head output.
        - ``weights (LossWeights):`` Composite-loss weights.
        - ``normalization (Normalization):`` Feature bounds.
        - ``optimizer (str):`` ``sgd`` or ``adam``.
        - ``learning_rate, batch_size, epochs, clip_norm:`` Training loop.
        - ``seed (int):`` Initialization and shuffling seed.
    """

    s: int = 3
    m: int = 5
    n_max: int = 64
    d_model: int = 32
    embed_hidden: int = 32
    num_layers: int = 2
    num_heads: int = 4
    ffn_hidden: int = 64
    head_hidden: int = 32
    activation: str = 'tanh'
    residual_head: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    normalization: Normalization = field(default_factory=Normalization)
    optimizer: str = 'sgd'
    learning_rate: float = 0.01
    batch_size: int = 16
    epochs: int = 50
    clip_norm: float | None = 1.0
    seed: int = 0

    def __post_init__(self):
        validate_count(self.s, 's')
        validate_count(self.m, 'm')
        validate_count(self.n_max, 'n_max')
        validate_count(self.d_model, 'd_model')
        validate_count(self.embed_hidden, 'embed_hidden')
        validate_count(self.num_layers, 'num_layers', minimum=0)
        validate_count(self.num_heads, 'num_heads')
        validate_count(self.ffn_hidden, 'ffn_hidden')
        validate_count(self.head_hidden, 'head_hidden')
        validate_count(self.batch_size, 'batch_size')
        validate_count(self.epochs, 'epochs', minimum=0)
        validate_positive(self.learning_rate, 'learning_rate')
        if self.clip_norm is not None:
            validate_positive(self.clip_norm, 'clip_norm')
        if self.d_model % self.num_heads:
            raise InvalidSpec(
                '✗ d_model MUST BE A MULTIPLE OF num_heads',
                d_model=self.d_model,
                num_heads=self.num_heads,
            )
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(
                f'✗ UNKNOWN ACTIVATION "{self.activation}"', allowed=ACTIVATIONS
            )
        if self.optimizer not in OPTIMIZERS:
            raise InvalidSpec(
                f'✗ UNKNOWN OPTIMIZER "{self.optimizer}"', allowed=OPTIMIZERS
            )

    @property
    def window_max(self) -> int:
        """Longest window seen during rollout, i.e. positional table rows."""
        return self.s + self.m

    def to_dict(self) -> dict:
        return {
            's': self.s,
            'm': self.m,
            'n_max': self.n_max,
            'd_model': self.d_model,
            'embed_hidden': self.embed_hidden,
            'num_layers': self.num_layers,
            'num_heads': self.num_heads,
            'ffn_hidden': self.ffn_hidden,
            'head_hidden': self.head_hidden,
            'activation': self.activation,
            'residual_head': self.residual_head,
            'weights': self.weights.to_dict(),
            'normalization': self.normalization.to_dict(),
            'optimizer': self.optimizer,
            'learning_rate': self.learning_rate,
            'batch_size': self.batch_size,
            'epochs': self.epochs,
            'clip_norm': self.clip_norm,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelConfig':
        data = dict(data)
        weights = data.pop('weights', None)
        normalization = data.pop('normalization', None)
        config = cls(**data)
        if weights is not None:
            config = replace(
                config,
                weights=LossWeights(
                    weights.get('w_pos', 1.0),
                    weights.get('w_vel', 0.5),
                    weights.get('w_acc', 0.25),
                    weights.get('w_ori', 0.5),
                    weights.get('w_unit', 0.1),
                ),
            )
        if normalization is not None:
            config = replace(
                config, normalization=Normalization.from_dict(normalization)
            )
        return config


def parameter_shapes(
    config: ModelConfig, feature_config: FeatureConfig
) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every tensor, in declaration order."""
    f, d = feature_config.input_width, config.d_model
    he, hf, hh = config.embed_hidden, config.ffn_hidden, config.head_hidden
    shapes = [
        ('embed.w1', (f, he)),
        ('embed.b1', (he,)),
        ('embed.w2', (he, d)),
        ('embed.b2', (d,)),
        ('pos', (config.window_max, d)),
    ]
    for layer in range(config.num_layers):
        prefix = f'layers.{layer}'
        shapes += [
            (f'{prefix}.ln1.g', (d,)),
            (f'{prefix}.ln1.b', (d,)),
            (f'{prefix}.attn.wq', (d, d)),
            (f'{prefix}.attn.bq', (d,)),
            (f'{prefix}.attn.wk', (d, d)),
            (f'{prefix}.attn.bk', (d,)),
            (f'{prefix}.attn.wv', (d, d)),
            (f'{prefix}.attn.bv', (d,)),
            (f'{prefix}.attn.wo', (d, d)),
            (f'{prefix}.attn.bo', (d,)),
            (f'{prefix}.ln2.g', (d,)),
            (f'{prefix}.ln2.b', (d,)),
            (f'{prefix}.ffn.w1', (d, hf)),
            (f'{prefix}.ffn.b1', (hf,)),
            (f'{prefix}.ffn.w2', (hf, d)),
            (f'{prefix}.ffn.b2', (d,)),
        ]
    shapes += [
        ('head.w1', (d, hh)),
        ('head.b1', (hh,)),
        ('head.w2', (hh, OUTPUT_WIDTH)),
        ('head.b2', (OUTPUT_WIDTH,)),
    ]
    return shapes


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """All learnable tensors plus the configuration they were built for."""

    config: ModelConfig
    feature_config: FeatureConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = parameter_shapes(self.config, self.feature_config)
        if [name for name, _ in expected] != list(self.tensors):
            raise InvalidSpec('✗ PARAMETER NAMES DO NOT MATCH THE CONFIGURATION')
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise InvalidSpec(
                    f'✗ TENSOR "{name}" HAS SHAPE {self.tensors[name].shape}, EXPECTED {shape}',
                    name=name,
                )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def size(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors.values())

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> 'ModelParameters':
        return ModelParameters(self.config, self.feature_config, tensors)

    def copy(self) -> 'ModelParameters':
        return self.with_tensors({k: v.copy() for k, v in self.tensors.items()})


def init_parameters(
    config: ModelConfig, feature_config: FeatureConfig, seed: int | None = None
) -> ModelParameters:
    """Scaled-normal weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    tensors = {}
    for name, shape in parameter_shapes(config, feature_config):
        leaf = name.rsplit('.', 1)[-1]
        if name == 'pos':
            tensors[name] = rng.normal(0.0, 0.1, shape)
        elif leaf == 'g':
            tensors[name] = np.ones(shape)
        elif leaf.startswith('b'):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    return ModelParameters(config, feature_config, tensors)


def build_attention_mask(
    n_agents: int, window: int, valid: np.ndarray | None = None
) -> np.ndarray:
    """
    Allowed attention between tokens.

    Args:
        - ``n_agents (int):`` Agents in the scene (padding included).
        - ``window (int):`` Frames per agent.
        - ``valid (np.ndarray, optional):`` ``(n_agents, window)`` token
        validity; invalid tokens are neither attended to nor attend to
        others (each token keeps its own diagonal entry).

    Returns:
        - ``np.ndarray``: boolean ``(N*L, N*L)``; entry ``[q, k]`` is True
        when query ``q`` may attend to key ``k``.
    """
    validate_count(n_agents, 'n_agents')
    validate_count(window, 'window')
    agent = np.repeat(np.arange(n_agents), window)
    step = np.tile(np.arange(window), n_agents)
    allowed = (agent[:, None] == agent[None, :]) | (step[:, None] == step[None, :])
    if valid is not None:
        flat = np.asarray(valid, dtype=bool).reshape(-1)
        allowed &= flat[:, None] & flat[None, :]
        np.fill_diagonal(allowed, True)
    return allowed


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(x) if kind == 'tanh' else x


def _activation_grad(y: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - y * y if kind == 'tanh' else np.ones_like(y)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    sigma = np.sqrt(x.var(axis=-1, keepdims=True) + LAYER_NORM_EPS)
    xhat = (x - mu) / sigma
    return g * xhat + b, (xhat, sigma)


def _layer_norm_backward(dy, g, cache):
    xhat, sigma = cache
    dxhat = dy * g
    dx = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) / sigma
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _linear_backward(x, w, dy):
    """Gradients of ``y = x @ w + b`` over any leading batch axes."""
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, flat_x.T @ flat_dy, flat_dy.sum(axis=0)


def _check_window(config: ModelConfig, window: int) -> None:
    if window < config.s + 1:
        raise WindowTooShort(
            f'✗ WINDOW OF {window} FRAMES IS SHORTER THAN s + 1 = {config.s + 1}',
            window=window,
            s=config.s,
        )
    if window > config.window_max:
        raise UnknownOffset(
            f'✗ WINDOW OF {window} FRAMES EXCEEDS THE POSITIONAL TABLE ({config.window_max})',
            window=window,
            table=config.window_max,
        )


def forward(
    params: ModelParameters,
    inputs: np.ndarray,
    valid: np.ndarray,
    keep_cache: bool = False,
):
    """
    One-step prediction for a batch of padded scenes.

    Args:
        - ``params (ModelParameters):`` Weights and configuration.
        - ``inputs (np.ndarray):`` ``(B, N, L, F)`` normalized features,
        step ``L - 1`` is the current frame.
        - ``valid (np.ndarray):`` ``(B, N, L)`` token validity. Padded
        agents are invalid at every step.
        - ``keep_cache (bool, optional):`` Return the activations needed by
        :func:`backward`.

    Returns:
        - ``np.ndarray``: ``(B, N, 7)`` normalized predictions for the next
        step (rows of padded agents are meaningless). With ``keep_cache``
        a ``(output, cache)`` pair.
    """
    config = params.config
    kind = config.activation
    b, n, window, _ = inputs.shape
    _check_window(config, window)
    d, heads = config.d_model, config.num_heads
    dh = d // heads
    tokens = n * window

    h1 = _activate(inputs @ params['embed.w1'] + params['embed.b1'], kind)
    embedded = h1 @ params['embed.w2'] + params['embed.b2']
    offsets = window - 1 - np.arange(window)
    z = (embedded + params['pos'][offsets]).reshape(b, tokens, d)

    mask = np.stack([build_attention_mask(n, window, v) for v in valid])
    mask = mask[:, None, :, :]
    scale = 1.0 / math.sqrt(dh)

    layer_caches = []
    for layer in range(config.num_layers):
        p = f'layers.{layer}'
        a, ln1 = _layer_norm(z, params[f'{p}.ln1.g'], params[f'{p}.ln1.b'])
        q = (a @ params[f'{p}.attn.wq'] + params[f'{p}.attn.bq'])
        k = (a @ params[f'{p}.attn.wk'] + params[f'{p}.attn.bk'])
        v = (a @ params[f'{p}.attn.wv'] + params[f'{p}.attn.bv'])
        q = q.reshape(b, tokens, heads, dh).transpose(0, 2, 1, 3)
        k = k.reshape(b, tokens, heads, dh).transpose(0, 2, 1, 3)
        v = v.reshape(b, tokens, heads, dh).transpose(0, 2, 1, 3)
        scores = np.where(mask, q @ k.transpose(0, 1, 3, 2) * scale, -np.inf)
        scores = scores - scores.max(axis=-1, keepdims=True)
        weights = np.exp(scores)
        weights /= weights.sum(axis=-1, keepdims=True)
        context = (weights @ v).transpose(0, 2, 1, 3).reshape(b, tokens, d)
        z = z + context @ params[f'{p}.attn.wo'] + params[f'{p}.attn.bo']

        c, ln2 = _layer_norm(z, params[f'{p}.ln2.g'], params[f'{p}.ln2.b'])
        f1 = _activate(c @ params[f'{p}.ffn.w1'] + params[f'{p}.ffn.b1'], kind)
        z = z + f1 @ params[f'{p}.ffn.w2'] + params[f'{p}.ffn.b2']
        layer_caches.append((a, ln1, q, k, v, weights, context, c, ln2, f1))

    current = z.reshape(b, n, window, d)[:, :, window - 1, :]
    hidden = _activate(current @ params['head.w1'] + params['head.b1'], kind)
    output = hidden @ params['head.w2'] + params['head.b2']
    if config.residual_head:
        output = output + residual_base(
            inputs[:, :, window - 1, :], params.feature_config.variant
        )

    if not keep_cache:
        return output
    cache = {
        'inputs': inputs,
        'h1': h1,
        'offsets': offsets,
        'layers': layer_caches,
        'current': current,
        'hidden': hidden,
        'shape': (b, n, window),
        'scale': scale,
    }
    return output, cache


def backward(
    params: ModelParameters, cache: dict, d_output: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every tensor, given ``dL/d output``."""
    config = params.config
    kind = config.activation
    b, n, window = cache['shape']
    d, heads = config.d_model, config.num_heads
    dh = d // heads
    tokens = n * window
    scale = cache['scale']
    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}

    d_hidden, grads['head.w2'], grads['head.b2'] = _linear_backward(
        cache['hidden'], params['head.w2'], d_output
    )
    d_pre = d_hidden * _activation_grad(cache['hidden'], kind)
    d_current, grads['head.w1'], grads['head.b1'] = _linear_backward(
        cache['current'], params['head.w1'], d_pre
    )
    dz = np.zeros((b, n, window, d))
    dz[:, :, window - 1, :] = d_current
    dz = dz.reshape(b, tokens, d)

    for layer in reversed(range(config.num_layers)):
        p = f'layers.{layer}'
        a, ln1, q, k, v, weights, context, c, ln2, f1 = cache['layers'][layer]

        d_f1, grads[f'{p}.ffn.w2'], grads[f'{p}.ffn.b2'] = _linear_backward(
            f1, params[f'{p}.ffn.w2'], dz
        )
        d_f1_pre = d_f1 * _activation_grad(f1, kind)
        d_c, grads[f'{p}.ffn.w1'], grads[f'{p}.ffn.b1'] = _linear_backward(
            c, params[f'{p}.ffn.w1'], d_f1_pre
        )
        d_z_ln, grads[f'{p}.ln2.g'], grads[f'{p}.ln2.b'] = _layer_norm_backward(
            d_c, params[f'{p}.ln2.g'], ln2
        )
        dz = dz + d_z_ln

        d_context, grads[f'{p}.attn.wo'], grads[f'{p}.attn.bo'] = _linear_backward(
            context, params[f'{p}.attn.wo'], dz
        )
        d_context = d_context.reshape(b, tokens, heads, dh).transpose(0, 2, 1, 3)
        d_weights = d_context @ v.transpose(0, 1, 3, 2)
        dv = weights.transpose(0, 1, 3, 2) @ d_context
        d_scores = weights * (
            d_weights - (d_weights * weights).sum(axis=-1, keepdims=True)
        )
        dq = d_scores @ k * scale
        dk = d_scores.transpose(0, 1, 3, 2) @ q * scale

        def merge(x):
            return x.transpose(0, 2, 1, 3).reshape(b, tokens, d)

        d_a = np.zeros_like(a)
        for name, grad in (('q', dq), ('k', dk), ('v', dv)):
            d_in, grads[f'{p}.attn.w{name}'], grads[f'{p}.attn.b{name}'] = (
                _linear_backward(a, params[f'{p}.attn.w{name}'], merge(grad))
            )
            d_a += d_in
        d_z_ln, grads[f'{p}.ln1.g'], grads[f'{p}.ln1.b'] = _layer_norm_backward(
            d_a, params[f'{p}.ln1.g'], ln1
        )
        dz = dz + d_z_ln

    d_embedded = dz.reshape(b, n, window, d)
    np.add.at(grads['pos'], cache['offsets'], d_embedded.sum(axis=(0, 1)))
    d_h1, grads['embed.w2'], grads['embed.b2'] = _linear_backward(
        cache['h1'], params['embed.w2'], d_embedded
    )
    d_h1_pre = d_h1 * _activation_grad(cache['h1'], kind)
    _, grads['embed.w1'], grads['embed.b1'] = _linear_backward(
        cache['inputs'], params['embed.w1'], d_h1_pre
    )
    return grads
