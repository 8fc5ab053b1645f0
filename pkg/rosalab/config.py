import json
import logging
import os
import sys
import zlib
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path

import numpy as np
import yaml

LOG_DIR = os.getenv('LOG_DIR')
LOG_FILE = 'rosa_logs.log'
LOG_LEVEL = os.getenv('ROSA_LOG', 'INFO')


def setup_custom_logger(name: str = 'ROSA') -> logging.Logger:
    """
    Return the named laboratory logger, attaching its handler only once.

    The level comes from ``ROSA_LOG``. When ``LOG_DIR`` is set the records go
    to a midnight-rotated file there, otherwise to stderr.
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))

    if logger.handlers:
        return logger

    formatter = logging.Formatter(
        '%(name)s | [%(asctime)s]: %(message)s', datefmt='%Y-%m-%d %H:%M:%S'
    )

    if LOG_DIR:
        os.makedirs(LOG_DIR, exist_ok=True)
        handler = TimedRotatingFileHandler(
            os.path.join(LOG_DIR, LOG_FILE),
            when='midnight',
            interval=1,
            backupCount=7,
        )
    else:
        handler = logging.StreamHandler(sys.stderr)

    handler.setFormatter(formatter)
    logger.addHandler(handler)
    logger.propagate = False

    return logger


def derive_seed(seed: int, stage: str) -> int:
    """
    Derive the deterministic sub-seed of a pipeline stage from the run seed.

    Args:
        - ``seed (int):`` The run seed given with ``--seed``.
        - ``stage (str):`` Stage name, e.g. ``'split'`` or ``'train'``.

    Returns:
        - ``int``: A 32-bit seed that depends only on both arguments.
    """
    sequence = np.random.SeedSequence([int(seed), zlib.crc32(stage.encode())])
    return int(sequence.generate_state(1)[0])


def load_config_file(path: str | Path) -> dict:
    """Read a YAML or JSON mapping from disk."""
    path = Path(path)
    text = path.read_text(encoding='utf-8')
    if path.suffix.lower() == '.json':
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    return data or {}


def dump_json(data, path: str | Path) -> None:
    """Write ``data`` as stable (sorted, indented) JSON."""
    Path(path).write_text(
        json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8'
    )
