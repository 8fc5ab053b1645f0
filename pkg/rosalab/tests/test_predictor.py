import io
import math
from dataclasses import replace

import numpy as np
import pytest

from rosalab.resources.data import Frame
from rosalab.resources.errors import (AlignmentError, DegenerateBounds,
                                      EmptyDataset, NonFiniteLoss,
                                      ParameterFileError, UnknownOffset,
                                      WindowTooShort)
from rosalab.resources.geometry import default_geometry
from rosalab.resources.predictor.features import (FeatureConfig,
                                                  Normalization, Variant,
                                                  denormalize_features,
                                                  exit_one_hot,
                                                  normalize_features)
from rosalab.resources.predictor.inference import (ConstantVelocityModel,
                                                   GroundTruthModel,
                                                   TransformerModel, ade_fde,
                                                   errors_from_displacements,
                                                   rollout)
from rosalab.resources.predictor.loss import composite_loss, smooth_l1
from rosalab.resources.predictor.network import (LossWeights, ModelConfig,
                                                 build_attention_mask,
                                                 forward, init_parameters)
from rosalab.resources.predictor.storage import (encode_parameters,
                                                 load_parameters,
                                                 save_parameters)
from rosalab.resources.predictor.training import (Batch, collate,
                                                  extract_samples,
                                                  gradient_check,
                                                  loss_and_gradients,
                                                  make_batch,
                                                  train_on_samples)
from rosalab.resources.synthetic import generate_synthetic_dataset
from rosalab.tests.helpers import series_of, vehicle, vru

TINY = ModelConfig(
    s=1,
    m=2,
    n_max=4,
    d_model=4,
    embed_hidden=3,
    num_layers=1,
    num_heads=2,
    ffn_hidden=5,
    head_hidden=3,
)
LINEAR = replace(TINY, num_layers=0, activation='linear')


def random_batch(rng, width, agent_counts=(3, 2), window=2):
    tensors = [
        (
            rng.normal(0.0, 0.5, size=(n, window, width)),
            rng.normal(0.0, 0.3, size=(n, 7)),
        )
        for n in agent_counts
    ]
    return collate(tensors)


def test_normalization_examples():
    norm = Normalization.around((10.0, -5.0), half_extent=50.0, v_max=12.0)
    assert norm.position(10.0, -5.0) == (0.0, 0.0)
    state = vehicle('a', 30.0, 12.0, v=12.0, theta=0.7)
    assert norm.target(state)[2] == 1.0
    back = norm.denormalize(norm.target(state))
    assert back['x'] == pytest.approx(30.0, rel=1e-12)
    assert back['y'] == pytest.approx(12.0, rel=1e-12)
    assert back['theta'] == pytest.approx(0.7, rel=1e-12)


def test_degenerate_bounds():
    with pytest.raises(DegenerateBounds):
        Normalization(x_min=1.0, x_max=1.0)


@pytest.mark.parametrize('variant, width', [(Variant.POSITION, 3), (Variant.DYNAMICS, 8), (Variant.DYNAMICS_EXIT, 13)])
def test_feature_widths(variant, width):
    config = FeatureConfig(variant, 5)
    rows = normalize_features([vehicle('a', 1.0, 2.0, exit=2), vru('b', 0.0, 0.0)], config, Normalization())
    assert config.input_width == width
    assert rows.shape == (2, width)
    assert rows[:, 0].tolist() == [0.0, 1.0]


def test_exit_one_hot_slots():
    assert exit_one_hot(-1, 5).tolist() == [1, 0, 0, 0, 0]
    assert exit_one_hot(3, 5).tolist() == [0, 0, 0, 0, 1]


def test_denormalize_features_inverts_dynamics():
    state = vehicle('a', -20.0, 7.5, v=6.0, theta=-1.2)
    rows = normalize_features([state], FeatureConfig(Variant.DYNAMICS), Normalization())
    fields = denormalize_features(rows, Normalization())[0]
    assert fields['x'] == pytest.approx(-20.0) and fields['v'] == pytest.approx(6.0)
    assert fields['theta'] == pytest.approx(-1.2)


@pytest.mark.parametrize('n_agents', range(1, 6))
@pytest.mark.parametrize('window', range(1, 5))
def test_attention_mask_rule_exhaustively(n_agents, window):
    mask = build_attention_mask(n_agents, window)
    for i in range(n_agents):
        for t in range(window):
            for j in range(n_agents):
                for u in range(window):
                    assert mask[i * window + t, j * window + u] == (i == j or t == u)


def test_attention_mask_connection_count():
    mask = build_attention_mask(4, 3)
    assert mask.sum(axis=1).tolist() == [6] * 12
    assert build_attention_mask(1, 4).all()
    assert build_attention_mask(5, 1).all()


def test_padded_tokens_are_masked_out():
    valid = np.array([[True, True], [False, False]])
    mask = build_attention_mask(2, 2, valid)
    assert not mask[:2, 2:].any() and not mask[2:, :2].any()
    assert mask[2, 2] and mask[3, 3] and not mask[2, 3]


def test_forward_is_permutation_equivariant():
    rng = np.random.default_rng(0)
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS))
    inputs = rng.normal(size=(1, 4, 2, 8))
    valid = np.ones((1, 4, 2), dtype=bool)
    order = [2, 0, 3, 1]
    output = forward(params, inputs, valid)
    permuted = forward(params, inputs[:, order], valid[:, order])
    np.testing.assert_allclose(permuted, output[:, order], atol=1e-12)


def test_forward_is_deterministic():
    rng = np.random.default_rng(1)
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS))
    inputs = rng.normal(size=(2, 3, 2, 8))
    valid = np.ones((2, 3, 2), dtype=bool)
    assert np.array_equal(forward(params, inputs, valid), forward(params, inputs, valid))


def test_padding_does_not_change_valid_agents():
    rng = np.random.default_rng(2)
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS))
    inputs = rng.normal(size=(1, 2, 2, 8))
    padded = np.concatenate([inputs, rng.normal(size=(1, 1, 2, 8))], axis=1)
    valid = np.array([[[True, True], [True, True], [False, False]]])
    alone = forward(params, inputs, valid[:, :2])
    with_padding = forward(params, padded, valid)
    np.testing.assert_allclose(with_padding[:, :2], alone, atol=1e-12)


def test_zero_weights_reproduce_the_current_state():
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS))
    params = params.with_tensors({k: np.zeros_like(v) for k, v in params.tensors.items()})
    rng = np.random.default_rng(3)
    inputs = rng.normal(size=(1, 3, 2, 8))
    output = forward(params, inputs, np.ones((1, 3, 2), dtype=bool))
    np.testing.assert_allclose(output[0], inputs[0, :, -1, 1:8])


def test_window_bounds():
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS))
    with pytest.raises(WindowTooShort):
        forward(params, np.zeros((1, 1, 1, 8)), np.ones((1, 1, 1), dtype=bool))
    with pytest.raises(UnknownOffset):
        forward(params, np.zeros((1, 1, 4, 8)), np.ones((1, 1, 4), dtype=bool))


def test_loss_is_zero_at_the_truth():
    theta = 0.4
    truth = np.array([[0.1, -0.2, 0.5, 0.1, 0.0, math.sin(theta), math.cos(theta)]])
    total, components = composite_loss(truth, truth)
    assert total == pytest.approx(0.0, abs=1e-15)
    assert all(value == pytest.approx(0.0, abs=1e-15) for value in components.values())


def test_smooth_l1_below_threshold():
    assert smooth_l1(np.array(0.5)) == pytest.approx(0.125)
    assert smooth_l1(np.array(3.0)) == pytest.approx(2.5)


def test_unit_penalty_ignores_the_truth_angle():
    pred = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.8]])
    truth = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0]])
    _, components = composite_loss(pred, truth)
    assert components['unit'] == pytest.approx(0.0, abs=1e-12)
    assert components['ori'] > 0


def test_loss_averages_over_valid_agents_only():
    pred = np.zeros((1, 2, 7))
    truth = np.zeros((1, 2, 7))
    truth[0, 0, 0] = 2.0
    truth[0, 1, 0] = 100.0
    total, components = composite_loss(
        pred, truth, LossWeights(1.0, 0.0, 0.0, 0.0, 0.0), valid=np.array([[True, False]])
    )
    assert components['pos'] == pytest.approx(2.0)
    assert total == pytest.approx(2.0)


def test_position_variant_trains_on_position_alone():
    weights = LossWeights().for_variant(Variant.POSITION)
    assert (weights.vel, weights.acc, weights.ori, weights.unit) == (0.0, 0.0, 0.0, 0.0)
    assert LossWeights().for_variant(Variant.DYNAMICS) == LossWeights()


def test_gradient_check_on_a_small_model():
    rng = np.random.default_rng(4)
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS), seed=4)
    result = gradient_check(params, random_batch(rng, 8), epsilon=1e-5)
    assert result.n_checked == 200
    assert result.max_relative_error < 1e-4


def test_key_bias_has_no_gradient():
    rng = np.random.default_rng(4)
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS), seed=4)
    batch = random_batch(rng, 8)
    _, _, grads = loss_and_gradients(params, batch)
    assert np.abs(grads['layers.0.attn.bk']).max() < 1e-10
    assert np.abs(grads['layers.0.attn.bq']).max() > 1e-8
    result = gradient_check(params, batch, epsilon=1e-5, n_coordinates=params.size)
    assert result.max_relative_error < 1e-4


def test_gradient_check_on_a_linear_model():
    rng = np.random.default_rng(5)
    params = init_parameters(LINEAR, FeatureConfig(Variant.POSITION), seed=5)
    result = gradient_check(params, random_batch(rng, 3), epsilon=1e-4)
    assert result.n_checked == params.size
    assert result.max_relative_error < 1e-7


def test_gradient_check_rejects_nan_loss():
    rng = np.random.default_rng(6)
    batch = random_batch(rng, 8)
    targets = batch.targets.copy()
    targets[0, 0, 0] = np.nan
    broken = Batch(batch.inputs, batch.valid, targets, batch.agent_valid)
    with pytest.raises(NonFiniteLoss):
        gradient_check(init_parameters(TINY, FeatureConfig(Variant.DYNAMICS)), broken)


def test_constant_velocity_rollout():
    history = [Frame(0, (vehicle('a', 0.0, 0.0, v=5.0),))]
    frames = ConstantVelocityModel().rollout(history, 5)
    assert [f.states[0].x for f in frames] == pytest.approx([5.0, 10.0, 15.0, 20.0, 25.0])
    assert all(f.states[0].y == pytest.approx(0.0) for f in frames)
    assert [f.timestamp for f in frames] == [1, 2, 3, 4, 5]


def test_ground_truth_rollout_reads_the_recording():
    series = series_of(
        Frame(0, (vehicle('a', 0.0, 0.0),)),
        Frame(1, (vehicle('a', 1.0, 0.0), vehicle('b', 9.0, 9.0))),
    )
    frames = GroundTruthModel(series).rollout(series.frames[:1], 2)
    assert frames[0].ids == ('a',)
    assert frames[1].states == ()


def test_transformer_rollout_contract():
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS_EXIT))
    history = [
        Frame(t, (vehicle('a', 2.0 * t, 1.0, v=2.0, exit=1), vru('p', 20.0, 0.5 * t)))
        for t in range(2)
    ]
    frames = rollout(history, params)
    assert len(frames) == TINY.m
    assert all(frame.ids == ('a', 'p') for frame in frames)
    assert all(frame.by_id['a'].exit == 1 for frame in frames)
    assert rollout(history, params) == frames
    assert rollout(history, params, m=1) == [TransformerModel(params).predict_next(history)]


def test_transformer_rollout_needs_full_history():
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS))
    with pytest.raises(WindowTooShort):
        rollout([Frame(0, (vehicle('a', 0.0, 0.0),))], params)


def test_agents_missing_from_history_are_back_filled():
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS))
    model = TransformerModel(params)
    window = [Frame(0, (vehicle('a', 0.0, 0.0),)), Frame(1, (vehicle('a', 1.0, 0.0), vehicle('b', 5.0, 5.0)))]
    inputs, valid = model._window_tensors(window, ('a', 'b'))
    assert valid.tolist() == [[True, True], [False, True]]
    np.testing.assert_array_equal(inputs[1, 0], inputs[1, 1])


def test_ade_fde_examples():
    truth = [Frame(t, (vehicle('a', t, 0.0), vehicle('b', 0.0, t))) for t in range(1, 6)]
    shifted = [Frame(f.timestamp, tuple(replace(s, x=s.x + 1.0) for s in f.states)) for f in truth]
    assert ade_fde(truth, truth).final_ade == 0.0
    errors = ade_fde(shifted, truth)
    assert errors.ade == pytest.approx((1.0,) * 5)
    assert errors.final_fde == pytest.approx(1.0)
    assert errors.to_dict()['horizons'][4] == {'h': 5, 'ade': errors.ade[4], 'fde': errors.fde[4]}


def test_ade_grows_for_a_linear_drift():
    blocks = [np.array([[1.0], [2.0], [3.0]])]
    errors = errors_from_displacements(blocks)
    assert errors.ade == pytest.approx((1.0, 1.5, 2.0))
    assert errors.fde == pytest.approx((1.0, 2.0, 3.0))


def test_ade_fde_alignment_errors():
    a = [Frame(1, (vehicle('a', 0.0, 0.0),))]
    b = [Frame(1, (vehicle('b', 0.0, 0.0),))]
    with pytest.raises(AlignmentError):
        ade_fde(a, b)
    with pytest.raises(AlignmentError):
        ade_fde(a, a + a)


def test_parameter_file_round_trip(tmp_path):
    params = init_parameters(TINY, FeatureConfig(Variant.DYNAMICS_EXIT, 5), seed=9)
    path = tmp_path / 'model.rosa'
    save_parameters(params, path)
    loaded = load_parameters(path)
    assert loaded.config == params.config
    assert loaded.feature_config == params.feature_config
    assert all(np.array_equal(loaded[k], params[k]) for k in params.tensors)


@pytest.mark.parametrize(
    'mutate',
    [
        lambda data: b'XXXX' + data[4:],
        lambda data: data[:-8],
        lambda data: data + b'\x00',
        lambda data: data[:4] + b'\x07' + data[5:],
    ],
)
def test_corrupt_parameter_files(mutate):
    data = encode_parameters(init_parameters(TINY, FeatureConfig(Variant.DYNAMICS)))
    with pytest.raises(ParameterFileError):
        load_parameters(io.BytesIO(mutate(data)))


def test_missing_parameter_file(tmp_path):
    with pytest.raises(ParameterFileError):
        load_parameters(tmp_path / 'absent.rosa')


def synthetic_samples(geo, n_scenarios=2, horizon=1, seed=0):
    recordings = generate_synthetic_dataset(geo, n_scenarios, seed=seed, duration=40)
    return extract_samples(recordings, TINY.s, horizon, TINY.n_max)


def test_extract_samples_keeps_agents_present_throughout():
    series = series_of(
        Frame(0, (vehicle('a', 0.0, 0.0), vehicle('b', 1.0, 1.0))),
        Frame(1, (vehicle('a', 1.0, 0.0),)),
        Frame(2, (vehicle('a', 2.0, 0.0), vehicle('b', 2.0, 2.0))),
    )
    samples = extract_samples([series], s=1, horizon=1)
    assert len(samples) == 1
    assert samples[0].agent_ids == ('a',)
    assert len(samples[0].history) == 2 and len(samples[0].future) == 1


def test_training_is_deterministic(geo):
    samples = synthetic_samples(geo)
    assert len(samples) >= 4
    config = replace(TINY, epochs=2, batch_size=4)
    features = FeatureConfig(Variant.DYNAMICS)
    first_params, first = train_on_samples(samples[:8], samples[8:12], features, config)
    second_params, second = train_on_samples(samples[:8], samples[8:12], features, config)
    assert first.to_dict() == second.to_dict()
    assert len(first.train_loss) == 2
    assert all(np.array_equal(first_params[k], second_params[k]) for k in first_params.tensors)


def test_training_needs_samples():
    with pytest.raises(EmptyDataset):
        train_on_samples([], [], FeatureConfig(), TINY)


def test_batch_pads_to_the_largest_scene(geo):
    samples = synthetic_samples(geo)
    batch = make_batch(samples[:3], FeatureConfig(Variant.DYNAMICS), TINY)
    assert batch.inputs.shape[:3] == batch.valid.shape
    assert batch.inputs.shape[2] == TINY.s + 1
    assert batch.agent_valid.sum() == sum(len(s.agent_ids) for s in samples[:3])


@pytest.mark.slow
def test_overfits_a_small_training_set(geo):
    samples = synthetic_samples(geo, n_scenarios=3)[:20]
    config = replace(TINY, d_model=16, embed_hidden=16, ffn_hidden=32, head_hidden=16, optimizer='adam', learning_rate=0.005, epochs=500)
    _, history = train_on_samples(samples, [], FeatureConfig(Variant.DYNAMICS), config)
    assert history.train_loss[-1] < 0.01 * history.initial_train_loss


@pytest.fixture(scope='module')
def ablation_errors():
    geo = default_geometry()
    config = ModelConfig(s=3, m=5, n_max=16, d_model=16, embed_hidden=16, ffn_hidden=32, head_hidden=16, optimizer='adam', learning_rate=0.003, epochs=30)
    recordings = generate_synthetic_dataset(geo, 240, seed=21, duration=60)
    train_samples = extract_samples(recordings[:200], config.s, 1, config.n_max, stride=4)
    test_samples = extract_samples(recordings[200:], config.s, config.m, config.n_max, stride=3)

    errors = {}
    for variant in Variant:
        params, _ = train_on_samples(train_samples, [], FeatureConfig(variant), config)
        model = TransformerModel(params)
        blocks = []
        for sample in test_samples:
            predicted = model.rollout(sample.history, config.m)
            blocks.append(np.array([[math.hypot(a.x - b.x, a.y - b.y) for a, b in zip(p.states, t.states)] for p, t in zip(predicted, sample.future)]))
        errors[variant] = errors_from_displacements(blocks)
    return errors


@pytest.mark.slow
def test_dynamics_beat_positions_at_five_seconds(ablation_errors):
    assert ablation_errors[Variant.DYNAMICS].final_ade < ablation_errors[Variant.POSITION].final_ade


@pytest.mark.slow
@pytest.mark.parametrize('variant', list(Variant))
def test_ade_grows_with_the_horizon(ablation_errors, variant):
    ade = ablation_errors[variant].ade
    assert len(ade) == 5
    assert all(later >= earlier for earlier, later in zip(ade, ade[1:]))
