import json
import sys
from datetime import datetime
from pathlib import Path

import click
from tabulate import tabulate
from termcolor import colored

from rosalab.config import dump_json
from rosalab.resources.errors import RosaError


def elapsed_time(start_time: float) -> str:
    """
    Calculate the elapsed time since a given start time.

    Args:
        - ``start_time`` (float): Timestamp the command started at.

    Returns:
        - ``str``: The elapsed time in the HH:MM:SS format.
    """
    difference = datetime.now() - datetime.fromtimestamp(start_time)
    hours, remainder = divmod(difference.total_seconds(), 3600)
    minutes, seconds = divmod(remainder, 60)
    return f'{int(hours):02d}:{int(minutes):02d}:{int(seconds):02d}'


def print_result_run(command: str, out_dir: str | Path) -> str:
    """
    Format the success line of a command.

    Args:
        - ``command`` (str): Subcommand name.
        - ``out_dir`` (str): Directory holding its outputs.

    Returns:
        - ``str``: A green confirmation message.
    """
    return colored(f'[ ✓ ] {command.upper()}: OUTPUTS IN "{out_dir}"', 'green')


def report_error(error: RosaError) -> None:
    """Coloured summary plus the machine-readable error object, both on stderr."""
    click.echo(colored(f'[ ✗ ] {error.code}: {error.message}', 'red'), err=True)
    click.echo(json.dumps(error.to_dict(), sort_keys=True, default=str), err=True)


def prepare_out_dir(out_dir: str | Path) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run_files(
    out_dir: Path, command: str, config_dict: dict, start_time: float, **extra
) -> None:
    """
    Write the resolved configuration and the timing sidecar.

    ``resolved_config.json`` depends only on the inputs; wall-clock values
    live in ``run_info.json``.
    """
    dump_json({'command': command, **config_dict, **extra}, out_dir / 'resolved_config.json')
    dump_json(
        {
            'command': command,
            'started': datetime.fromtimestamp(start_time).isoformat(),
            'finished': datetime.now().isoformat(),
            'elapsed': elapsed_time(start_time),
            'argv': sys.argv[1:],
        },
        out_dir / 'run_info.json',
    )


def print_batch_summary(rows: list) -> str:
    """
    Table of simulated scenarios or a warning when there are none.

    Args:
        - ``rows`` (list): ``[scenario, optimizable, baseline stops,
        advised stops, status]`` per scenario.

    Returns:
        - ``str``: The table, or a message.
    """
    if rows:
        headers = ['SCENARIO', 'OPTIMIZABLE', 'STOPS (BASE)', 'STOPS (ROSA)', 'STATUS']
        return tabulate(rows, headers, tablefmt='heavy_outline')
    return colored('[ ! ] THERE ARE NO SCENARIOS IN THE MANIFEST.', 'yellow')
