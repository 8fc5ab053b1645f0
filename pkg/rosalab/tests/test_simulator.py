import numpy as np
import pytest

from rosalab.resources.advisory import V_MAX, time_to_arrival
from rosalab.resources.data import Frame, FrameSeries
from rosalab.resources.errors import BackgroundExhausted, InvalidSpec
from rosalab.resources.metrics import combined_metrics, report_from_batch
from rosalab.resources.predictor.features import FeatureConfig, Variant
from rosalab.resources.predictor.network import (ModelConfig,
                                                 init_parameters)
from rosalab.resources.predictor.storage import save_parameters
from rosalab.resources.predictor.training import (extract_samples,
                                                  train_on_samples)
from rosalab.resources.simulator import (EgoCourse, EgoRoute, EgoState,
                                         PredictorMode, ScenarioSpec,
                                         SimulatorConfig, build_demo_suite,
                                         classify_optimizable,
                                         count_safety_violations,
                                         read_manifest, run_batch, run_pair,
                                         run_scenario, step_ego_default,
                                         stopping_distance,
                                         track_optimal_speed, write_manifest)
from rosalab.resources.synthetic import generate_synthetic_dataset
from rosalab.tests.helpers import CROSSWALK_0_POINT, vru

ROUTE = EgoRoute(approach_arm=0, crosswalk_zone=0, entry_zone=3, exit_arm=2)
# constant 8 m/s driver, so arrival times are easy to reason about
STEADY = SimulatorConfig(v_cruise=8.0, v_negotiation=8.0)


def background(n_frames=60, vru_seconds=()):
    return FrameSeries(
        frames=tuple(
            Frame(t, (vru('p', *CROSSWALK_0_POINT),) if t in vru_seconds else ())
            for t in range(n_frames)
        ),
        name='bg',
    )


def steady_spec(name='steady', vru_seconds=(), n_frames=60):
    return ScenarioSpec(
        name,
        background(n_frames, vru_seconds),
        ROUTE,
        ego_start_distance=60.0,
        ego_initial_speed=8.0,
    )


# the ego would reach the crosswalk between seconds 6 and 7; the pedestrian
# shows up early enough for a full stop and stays until the ego stands still
CROSSING = range(4, 11)


def stops(log):
    return combined_metrics(log).stops


def test_empty_background_never_stops(geo):
    log = run_scenario(ScenarioSpec('empty', background(90), ROUTE), geo)
    assert stops(log) == 0
    assert combined_metrics(log).waiting_time == 0.0
    assert not log.conflict_encountered
    assert log.records[-1].s >= log.entry_interval[0] + 20.0


def test_cruise_speed_far_from_the_entry(geo):
    log = run_scenario(ScenarioSpec('empty', background(90), ROUTE), geo)
    far = [r.v for r in log.records if r.d_e >= 150.0]
    assert far and all(v == V_MAX for v in far)
    assert min(r.v for r in log.records) < V_MAX


def test_pedestrian_on_the_crosswalk_forces_a_stop(geo):
    log = run_scenario(steady_spec(vru_seconds=CROSSING), geo, STEADY)
    assert stops(log) >= 1
    assert log.conflict_encountered
    assert count_safety_violations(log) == 0
    assert classify_optimizable(steady_spec(vru_seconds=CROSSING), geo, STEADY)


def test_empty_background_is_not_optimizable(geo):
    assert not classify_optimizable(steady_spec(), geo, STEADY)


def test_perfect_foresight_avoids_the_stop(geo):
    spec = steady_spec(vru_seconds=CROSSING)
    baseline, advised = run_pair(spec.advised(PredictorMode.GROUND_TRUTH), geo, STEADY)
    assert stops(baseline) >= 1
    assert stops(advised) == 0
    assert combined_metrics(advised).waiting_time < combined_metrics(baseline).waiting_time
    assert count_safety_violations(advised) == 0
    assert baseline.optimizable and advised.optimizable
    assert any(r.advised is not None for r in advised.records)


def test_baseline_matches_the_default_driver(geo):
    spec = steady_spec(vru_seconds=CROSSING)
    log = run_scenario(spec, geo, STEADY)
    course = EgoCourse(spec, geo, STEADY)
    ego = EgoState(0, 0.0, 8.0)
    for record in log.records:
        assert (record.s, record.v) == (ego.s, ego.v)
        ego = step_ego_default(ego, course)


def test_undisturbed_advised_run_equals_the_baseline(geo):
    spec = ScenarioSpec('empty', background(90), ROUTE)
    baseline = run_scenario(spec, geo)
    advised = run_scenario(spec.advised(PredictorMode.GROUND_TRUTH), geo)
    assert advised.speeds.tolist() == baseline.speeds.tolist()
    assert all(r.advised is None for r in advised.records)


def test_trigger_distance_emerges_from_the_horizon(geo):
    spec = ScenarioSpec('empty', background(90), ROUTE, predictor_mode=PredictorMode.GROUND_TRUTH)
    log = run_scenario(spec, geo)
    triggered = [r for r in log.records if r.stage not in (None, 'NotTriggered')]
    assert triggered
    assert 31.0 <= triggered[0].d_c <= 61.0


def test_runs_are_deterministic(geo):
    spec = steady_spec(vru_seconds=CROSSING).advised(PredictorMode.GROUND_TRUTH)
    assert run_scenario(spec, geo, STEADY) == run_scenario(spec, geo, STEADY)


def test_speed_changes_respect_actuator_limits(geo):
    spec = steady_spec(vru_seconds=CROSSING)
    for mode in (PredictorMode.NONE, PredictorMode.GROUND_TRUTH):
        speeds = run_scenario(spec.advised(mode), geo, STEADY).speeds
        steps = np.diff(speeds)
        assert steps.min() >= -STEADY.a_dec_max - 1e-9
        assert steps.max() <= STEADY.a_acc_max + 1e-9


def test_persistence_model_keeps_the_ego_safe(geo, tmp_path):
    config = ModelConfig(s=1, m=5, n_max=8, d_model=4, embed_hidden=3, num_layers=1, num_heads=2, ffn_hidden=5, head_hidden=3)
    params = init_parameters(config, FeatureConfig(Variant.DYNAMICS))
    # all-zero weights with the residual head predict that every agent stays put
    params = params.with_tensors({k: np.zeros_like(v) for k, v in params.tensors.items()})
    path = tmp_path / 'persistence.rosa'
    save_parameters(params, path)
    spec = steady_spec(vru_seconds=CROSSING, n_frames=200)
    log = run_scenario(spec.advised(PredictorMode.MODEL, str(path), Variant.DYNAMICS), geo, STEADY)
    assert log.mode == 'model'
    assert count_safety_violations(log) == 0
    with pytest.raises(InvalidSpec):
        run_scenario(spec.advised(PredictorMode.MODEL, str(path), Variant.POSITION), geo, STEADY)


def test_model_mode_needs_a_parameter_file():
    with pytest.raises(InvalidSpec):
        steady_spec().advised(PredictorMode.MODEL)


def test_background_exhausted(geo):
    with pytest.raises(BackgroundExhausted):
        run_scenario(steady_spec(n_frames=5), geo, STEADY)
    with pytest.raises(BackgroundExhausted):
        run_scenario(ScenarioSpec('none', FrameSeries(), ROUTE), geo, STEADY)


def test_zone_ids_must_match_the_route(geo):
    with pytest.raises(InvalidSpec):
        EgoCourse(ScenarioSpec('bad', background(), EgoRoute(0, 3, 0, 2)), geo)


def test_batch_keeps_order_and_isolates_failures(geo):
    specs = [
        steady_spec('first', vru_seconds=CROSSING).advised(PredictorMode.GROUND_TRUTH),
        steady_spec('short', n_frames=5).advised(PredictorMode.GROUND_TRUTH),
        steady_spec('third').advised(PredictorMode.GROUND_TRUTH),
    ]
    results = run_batch(specs, 1, geo, STEADY)
    assert [r.scenario for r in results] == ['first', 'short', 'third']
    assert [r.ok for r in results] == [True, False, True]
    assert results[1].error['error'] == 'BackgroundExhausted'
    assert results[0].optimizable is True and results[2].optimizable is False
    assert run_batch(specs, 3, geo, STEADY) == results


def test_empty_batch():
    assert run_batch([]) == []


@pytest.mark.parametrize('v, expected', [(0.0, 0.0), (2.0, 1.0), (8.0, 16.0), (3.0, 2.5)])
def test_stopping_distance(v, expected):
    assert stopping_distance(v) == pytest.approx(expected)


def test_tracking_the_optimal_speed_arrives_one_second_late():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = float(rng.uniform(4.0, 8.0))
        d = v * float(rng.uniform(2.0, 4.0))
        t = time_to_arrival(d, v)
        result = track_optimal_speed(d, v, t + 1)
        assert result.arrival_time == pytest.approx(t + 1, abs=0.5)
        assert result.max_deceleration <= 2.0 + 1e-9


def test_tracking_never_brakes_harder_than_the_limit():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = float(rng.uniform(1.0, V_MAX))
        d = v * float(rng.uniform(0.5, 4.0))
        result = track_optimal_speed(d, v, int(rng.integers(1, 7)))
        assert result.max_deceleration <= 2.0 + 1e-9


def test_manifest_round_trip(tmp_path):
    specs = [steady_spec('a', vru_seconds=CROSSING), steady_spec('b')]
    manifest = write_manifest(specs, tmp_path)
    assert manifest.name == 'manifest.json'
    assert read_manifest(manifest) == specs


def test_missing_manifest(tmp_path):
    with pytest.raises(InvalidSpec):
        read_manifest(tmp_path / 'manifest.json')


@pytest.mark.slow
def test_demo_suite_is_deterministic(geo):
    first = build_demo_suite(5, seed=3, geo=geo)
    assert [spec.name for spec in first] == [f'demo-{i:03d}' for i in range(5)]
    assert build_demo_suite(5, seed=3, geo=geo) == first
    assert all(spec.predictor_mode is PredictorMode.NONE for spec in first)


@pytest.fixture(scope='module')
def demo_suite():
    return build_demo_suite(100, seed=7)


def assert_no_safety_violations(results):
    assert all(result.ok for result in results), [r.error for r in results if not r.ok]
    for result in results:
        assert count_safety_violations(result.baseline) == 0, result.scenario
        assert count_safety_violations(result.advised) == 0, result.scenario


@pytest.mark.slow
def test_ground_truth_advisory_on_the_demo_suite(demo_suite):
    results = run_batch([spec.advised(PredictorMode.GROUND_TRUTH) for spec in demo_suite], parallelism=4)
    assert_no_safety_violations(results)
    report = report_from_batch(results)
    optimizable = report.categories['optimizable']
    assert optimizable.n >= 10
    assert optimizable.baseline['stops'] > 0
    assert optimizable.delta['stops'] <= -80.0
    assert optimizable.delta['waiting_time'] <= -80.0
    for delta in report.categories['non_optimizable'].delta.values():
        assert delta is None or delta == 0.0


@pytest.mark.slow
def test_trained_model_advisory_on_the_demo_suite(demo_suite, geo, tmp_path):
    config = ModelConfig(s=3, m=5, n_max=16, d_model=16, embed_hidden=16, ffn_hidden=32, head_hidden=16, optimizer='adam', learning_rate=0.003, epochs=20)
    recordings = generate_synthetic_dataset(geo, 60, seed=11, duration=60)
    samples = extract_samples(recordings, config.s, 1, config.n_max, stride=2)
    params, _ = train_on_samples(samples, [], FeatureConfig(Variant.DYNAMICS), config)
    path = tmp_path / 'parameters.rosa'
    save_parameters(params, path)

    specs = [spec.advised(PredictorMode.MODEL, str(path), Variant.DYNAMICS) for spec in demo_suite]
    results = run_batch(specs, parallelism=4)
    assert_no_safety_violations(results)
    report = report_from_batch(results)
    optimizable = report.categories['optimizable']
    assert optimizable.advised['stops'] < optimizable.baseline['stops']
    for delta in report.categories['non_optimizable'].delta.values():
        assert delta is None or delta <= 5.0
