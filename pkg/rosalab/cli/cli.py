import io
import json
import time
from functools import wraps
from pathlib import Path

import click
from termcolor import colored

from rosalab.cli.run_config import RunConfig, resolve_run_config
from rosalab.cli.utils import (prepare_out_dir, print_batch_summary,
                               print_result_run, report_error,
                               write_run_files)
from rosalab.config import derive_seed, dump_json, load_config_file
from rosalab.resources.data import (ColumnMap, DatasetSplit, FrameSeries,
                                    downsample, infer_exit_labels,
                                    parse_trajectory_file, read_series,
                                    segment_series, split_dataset,
                                    write_series)
from rosalab.resources.errors import (BatchIncomplete, EmptyBatch,
                                      EmptyDataset, InvalidSpec, RosaError)
from rosalab.resources.metrics import (combined_metrics, prediction_report,
                                       report_from_batch)
from rosalab.resources.predictor.inference import (ConstantVelocityModel,
                                                   GroundTruthModel,
                                                   TransformerModel)
from rosalab.resources.predictor.storage import (load_parameters,
                                                 save_history,
                                                 save_parameters)
from rosalab.resources.predictor.training import train as train_model
from rosalab.resources.simulator import (MANIFEST_FILE, BatchResult,
                                         PredictorMode, build_demo_suite,
                                         count_safety_violations,
                                         read_manifest, read_trip_log,
                                         run_batch, write_manifest,
                                         write_trip_log)
from rosalab.resources.synthetic import (TrafficSpec,
                                         generate_synthetic_dataset,
                                         generate_synthetic_scenario)

VARIANTS = ['position', 'dynamics', 'dynamics-exit', '1', '2', '3']
SEGMENTS_DIR = 'segments'
SPLIT_FILE = 'split.json'
PARAMETERS_FILE = 'parameters.rosa'
LOGS_DIR = 'logs'


def run_options(function):
    """``--config``, ``--seed``, ``--variant``, ``--geometry`` and ``--out``."""
    options = [
        click.option(
            '-c',
            '--config',
            'config_path',
            default=None,
            type=click.Path(dir_okay=False),
            help='YAML or JSON run configuration.',
        ),
        click.option(
            '-s', '--seed', default=None, type=int, help='Run seed (overrides the file).'
        ),
        click.option(
            '-v',
            '--variant',
            default=None,
            type=click.Choice(VARIANTS, case_sensitive=False),
            help='Predictor feature variant.',
        ),
        click.option(
            '-g',
            '--geometry',
            default=None,
            type=str,
            help='Roundabout geometry file (defaults to the bundled layout).',
        ),
        click.option(
            '-o',
            '--out',
            'out_dir',
            required=True,
            type=click.Path(file_okay=False),
            help='Output directory of this run.',
        ),
    ]
    for option in reversed(options):
        function = option(function)
    return function


def rosa_command(name: str):
    """
    Register a subcommand that resolves the run configuration, writes the
    run receipts and turns a ``RosaError`` into exit code 1.

    The wrapped function receives the resolved ``RunConfig``, the output
    directory and its own options, and returns extra entries for
    ``resolved_config.json``.
    """

    def decorator(function):
        @cli.command(name=name)
        @run_options
        @wraps(function)
        def command(config_path, seed, variant, geometry, out_dir, **kwargs):
            start_time = time.time()
            try:
                config = resolve_run_config(config_path, seed, variant, geometry)
                out = prepare_out_dir(out_dir)
                extra = function(config, out, **kwargs) or {}
                write_run_files(out, name, config.to_dict(), start_time, **extra)
            except RosaError as error:
                report_error(error)
                raise SystemExit(1)
            click.echo(f'\n{print_result_run(name, out_dir)}\n')

        return command

    return decorator


@click.group()
def cli():
    pass


def _read_segments(data_dir: Path) -> tuple[DatasetSplit, list[FrameSeries]]:
    split_path = data_dir / SPLIT_FILE
    if not split_path.is_file():
        raise InvalidSpec(
            f'✗ SPLIT MANIFEST "{split_path}" DOES NOT EXIST', path=str(split_path)
        )
    split = DatasetSplit.from_dict(json.loads(split_path.read_text(encoding='utf-8')))
    segments = []
    for name in (*split.train, *split.val, *split.test):
        path = data_dir / SEGMENTS_DIR / f'{name}.jsonl'
        if not path.is_file():
            raise InvalidSpec(f'✗ SEGMENT "{path}" DOES NOT EXIST', path=str(path))
        with open(path, encoding='utf-8') as stream:
            segments.append(read_series(stream))
    return split, segments


def _parse_recording(path: str, config: RunConfig, schema: ColumnMap) -> FrameSeries:
    try:
        with open(path, encoding='utf-8') as stream:
            raw = parse_trajectory_file(stream, schema)
    except RosaError as error:
        error.details.setdefault('file', path)
        raise
    series = downsample(raw, config.data.hz_in, config.data.hz_out)
    return series.with_frames(series.frames, name=Path(path).stem)


@rosa_command('preprocess')
@click.argument('recordings', nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option(
    '--synthetic',
    'synthetic_spec',
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help='Traffic spec (YAML/JSON) to generate instead of parsing CSVs.',
)
@click.option(
    '--synthetic-count',
    default=None,
    type=int,
    help='Generate this many random synthetic recordings.',
)
@click.option(
    '--duration', default=60, type=int, help='Seconds per random recording.'
)
def preprocess(
    config: RunConfig, out: Path, recordings, synthetic_spec, synthetic_count, duration
):
    """
    Turn trajectory CSVs (or synthetic traffic) into 1 Hz segments and a
    train/val/test split.
    """
    geo = config.load_geometry()
    synthetic_seed = derive_seed(config.seed, 'synthetic')

    if synthetic_spec is not None:
        spec = TrafficSpec.from_dict(load_config_file(synthetic_spec))
        series_list = [generate_synthetic_scenario(geo, spec, synthetic_seed)]
    elif synthetic_count is not None:
        series_list = generate_synthetic_dataset(
            geo, synthetic_count, synthetic_seed, duration
        )
    elif recordings:
        schema = ColumnMap()
        series_list = [
            infer_exit_labels(_parse_recording(path, config, schema), geo)
            for path in recordings
        ]
    else:
        raise InvalidSpec('✗ PREPROCESS NEEDS CSV FILES, --synthetic OR --synthetic-count')

    segments = [
        segment
        for series in series_list
        for segment in segment_series(series, config.data.segment_length)
    ]
    split = split_dataset(
        segments, config.data.fractions, derive_seed(config.seed, 'split')
    )

    segments_dir = prepare_out_dir(out / SEGMENTS_DIR)
    for segment in segments:
        with open(segments_dir / f'{segment.name}.jsonl', 'w', encoding='utf-8') as stream:
            write_series(segment, stream)
    dump_json(split.to_dict(), out / SPLIT_FILE)

    click.echo(
        f'\n[ SPLIT ] train: {len(split.train)} - val: {len(split.val)} - test: {len(split.test)}'
    )
    return {
        'inputs': {
            'recordings': [str(p) for p in recordings],
            'synthetic': synthetic_spec,
            'synthetic_count': synthetic_count,
            'duration': duration,
        }
    }


@rosa_command('train')
@click.option(
    '-d',
    '--data',
    'data_dir',
    required=True,
    type=click.Path(exists=True, file_okay=False),
    help='Output directory of "preprocess".',
)
def train(config: RunConfig, out: Path, data_dir):
    """Train the trajectory predictor on a preprocessed split."""
    geo = config.load_geometry()
    split, segments = _read_segments(Path(data_dir))
    params, history = train_model(
        split, segments, config.feature_config(geo), config.model_for_training()
    )
    save_parameters(params, out / PARAMETERS_FILE)
    save_history(history, out / 'history.json')
    return {'inputs': {'data': str(data_dir)}}


def _evaluate(config: RunConfig, data_dir: str, parameters: str | None, horizon: int | None):
    geo = config.load_geometry()
    split, segments = _read_segments(Path(data_dir))
    test = [s for s in segments if s.name in set(split.test)]
    if not test:
        raise EmptyDataset('✗ THE TEST SPLIT IS EMPTY')

    m = config.model.m if horizon is None else horizon
    model = None if parameters is None else TransformerModel(load_parameters(parameters))
    history = config.model.s if model is None else model.params.config.s

    predictors = {
        'constant-velocity': lambda series: ConstantVelocityModel(),
        'ground-truth': GroundTruthModel,
    }
    if model is not None:
        predictors[f'transformer-{model.params.feature_config.variant.label}'] = (
            lambda series: model
        )
    return {
        name: prediction_report(test, make, geo, m, history)
        for name, make in predictors.items()
    }


def _evaluation_options(function):
    options = [
        click.option(
            '-d',
            '--data',
            'data_dir',
            required=True,
            type=click.Path(exists=True, file_okay=False),
            help='Output directory of "preprocess".',
        ),
        click.option(
            '-p',
            '--parameters',
            default=None,
            type=click.Path(exists=True, dir_okay=False),
            help='Trained parameter file to evaluate next to the baselines.',
        ),
        click.option(
            '-m', '--horizon', default=None, type=int, help='Horizon in seconds.'
        ),
    ]
    for option in reversed(options):
        function = option(function)
    return function


@rosa_command('eval-prediction')
@_evaluation_options
def eval_prediction(config: RunConfig, out: Path, data_dir, parameters, horizon):
    """ADE/FDE per horizon of every predictor on the test split."""
    reports = _evaluate(config, data_dir, parameters, horizon)
    dump_json(
        {name: report.to_dict()['displacement'] | {'n_samples': report.n_samples}
         for name, report in reports.items()},
        out / 'prediction.json',
    )
    text = '\n\n'.join(
        f'{name.upper()} ({report.n_samples} samples)\n{report.displacement_table()}'
        for name, report in reports.items()
    )
    (out / 'prediction.txt').write_text(text + '\n', encoding='utf-8')
    click.echo(f'\n{text}')
    return {'inputs': {'data': str(data_dir), 'parameters': parameters, 'horizon': horizon}}


@rosa_command('eval-occupancy')
@_evaluation_options
def eval_occupancy(config: RunConfig, out: Path, data_dir, parameters, horizon):
    """Per-horizon precision, recall and accuracy of predicted zone occupancy."""
    reports = _evaluate(config, data_dir, parameters, horizon)
    dump_json(
        {name: report.to_dict()['occupancy'] | {'n_samples': report.n_samples}
         for name, report in reports.items()},
        out / 'occupancy.json',
    )
    text = '\n\n'.join(
        f'{name.upper()} ({report.n_samples} samples)\n{report.occupancy_table()}'
        for name, report in reports.items()
    )
    (out / 'occupancy.txt').write_text(text + '\n', encoding='utf-8')
    click.echo(f'\n{text}')
    return {'inputs': {'data': str(data_dir), 'parameters': parameters, 'horizon': horizon}}


@rosa_command('make-suite')
@click.option('-n', '--count', default=100, type=int, help='Number of scenarios.')
def make_suite(config: RunConfig, out: Path, count):
    """Write the synthetic demo scenarios and their manifest."""
    geo = config.load_geometry()
    specs = build_demo_suite(count, config.seed, geo, config.simulator)
    manifest = write_manifest(specs, out)
    click.echo(f'\n[ SUITE ] {len(specs)} scenarios - manifest: {manifest}')
    return {'inputs': {'count': count}}


def parse_predictor(label: str) -> tuple[PredictorMode, str | None]:
    """``none``, ``ground-truth`` or ``model:<parameter file>``."""
    if label.startswith('model:'):
        path = label.split(':', 1)[1]
        if not path:
            raise InvalidSpec('✗ "model:" NEEDS A PARAMETER FILE PATH', predictor=label)
        return PredictorMode.MODEL, path
    return PredictorMode.from_label(label), None


def _batch_from_broker(
    manifest: Path, predictor: str, broker: str
) -> list[BatchResult]:
    from rosalab.resources.tasks import app, simulate_scenario_pair

    app.conf.broker_url = broker
    mode, parameters = parse_predictor(predictor)
    files = json.loads(manifest.read_text(encoding='utf-8')).get('scenarios', [])
    pending = [
        simulate_scenario_pair.apply_async(
            args=(str(manifest.parent / name), mode.value, parameters)
        )
        for name in files
    ]
    results = []
    for name, task in zip(files, pending):
        payload = task.get()
        if 'error' in payload:
            results.append(BatchResult(Path(name).stem, error=payload['error']))
            continue
        results.append(
            BatchResult(
                payload['scenario'],
                read_trip_log(io.StringIO(payload['baseline'])),
                read_trip_log(io.StringIO(payload['advised'])),
            )
        )
    return results


@rosa_command('simulate')
@click.argument('manifest', type=click.Path(exists=True))
@click.option(
    '-p',
    '--predictor',
    default='ground-truth',
    type=str,
    help='none | ground-truth | model:<parameter file>.',
)
@click.option('-j', '--jobs', default=1, type=int, help='Scenarios run in parallel.')
@click.option(
    '-b',
    '--broker',
    default=None,
    type=str,
    help='Celery broker URL; scenario pairs then run on workers.',
)
def simulate(config: RunConfig, out: Path, manifest, predictor, jobs, broker):
    """Run every scenario of a manifest in baseline and advised mode."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / MANIFEST_FILE

    if broker:
        results = _batch_from_broker(manifest, predictor, broker)
    else:
        mode, parameters = parse_predictor(predictor)
        variant = config.variant if mode is PredictorMode.MODEL else None
        specs = [
            spec.advised(mode, parameters, variant) for spec in read_manifest(manifest)
        ]
        results = run_batch(
            specs,
            jobs,
            config.load_geometry(),
            config.simulator,
            config.advisory,
        )

    logs_dir = prepare_out_dir(out / LOGS_DIR)
    rows, entries = [], []
    for result in results:
        entry = {'scenario': result.scenario, 'error': result.error}
        if result.ok:
            for log, kind in ((result.baseline, 'baseline'), (result.advised, 'advised')):
                with open(
                    logs_dir / f'{result.scenario}.{kind}.jsonl', 'w', encoding='utf-8'
                ) as stream:
                    write_trip_log(log, stream)
            entry['optimizable'] = result.optimizable
            entry['safety_violations'] = count_safety_violations(
                result.baseline
            ) + count_safety_violations(result.advised)
            rows.append(
                [
                    result.scenario,
                    result.optimizable,
                    combined_metrics(result.baseline, config.metrics).stops,
                    combined_metrics(result.advised, config.metrics).stops,
                    colored('OK', 'green'),
                ]
            )
        else:
            rows.append([result.scenario, '-', '-', '-', colored(result.error['error'], 'red')])
        entries.append(entry)
    dump_json({'predictor': predictor, 'scenarios': entries}, out / 'batch.json')
    click.echo(f'\n{print_batch_summary(rows)}')

    failed = [r.scenario for r in results if not r.ok]
    if failed:
        raise BatchIncomplete(
            f'✗ {len(failed)} OF {len(results)} SCENARIOS FAILED', scenarios=failed
        )
    return {'inputs': {'manifest': str(manifest), 'predictor': predictor, 'jobs': jobs}}


def _read_batch(logs_dir: Path) -> list[BatchResult]:
    results = []
    for baseline_path in sorted(logs_dir.glob('*.baseline.jsonl')):
        name = baseline_path.name[: -len('.baseline.jsonl')]
        advised_path = logs_dir / f'{name}.advised.jsonl'
        if not advised_path.is_file():
            raise InvalidSpec(
                f'✗ TRIP LOG "{advised_path}" DOES NOT EXIST', path=str(advised_path)
            )
        with open(baseline_path, encoding='utf-8') as stream:
            baseline = read_trip_log(stream)
        with open(advised_path, encoding='utf-8') as stream:
            advised = read_trip_log(stream)
        results.append(BatchResult(name, baseline, advised))
    return results


@rosa_command('report')
@click.argument('logs', type=click.Path(exists=True, file_okay=False))
def report(config: RunConfig, out: Path, logs):
    """Aggregate the trip logs of a "simulate" run into per-category deltas."""
    logs_dir = Path(logs)
    if (logs_dir / LOGS_DIR).is_dir():
        logs_dir = logs_dir / LOGS_DIR
    results = _read_batch(logs_dir)
    if not results:
        raise EmptyBatch(f'✗ NO TRIP LOGS IN "{logs_dir}"', path=str(logs_dir))
    batch_report = report_from_batch(results, config.metrics)
    violations = sum(
        count_safety_violations(r.baseline) + count_safety_violations(r.advised)
        for r in results
    )
    dump_json(
        batch_report.to_dict() | {'safety_violations': violations},
        out / 'report.json',
    )
    table = batch_report.to_table()
    (out / 'report.txt').write_text(table + '\n', encoding='utf-8')
    click.echo(f'\n{table}')
    if violations:
        click.echo(colored(f'\n[ ! ] {violations} SAFETY VIOLATIONS IN THE LOGS.', 'yellow'))
    return {'inputs': {'logs': str(logs)}}


if __name__ == '__main__':
    cli()
