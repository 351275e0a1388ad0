import os
import math
import logging
import pathlib
from typing import Iterable, Sequence, Union

import ujson
import jsonlines
import matplotlib
matplotlib.use('Agg')
from matplotlib import pyplot as plt
import pandas as pd

from constants import LOG_ENV_VAR, LogLevel, ROUND, SEED, XI, PHI, LAMBDA, V, SIM_STD, TEST_ACC

LOGGER = logging.getLogger(__name__)

_LEVELS = {LogLevel.ERROR: logging.ERROR, LogLevel.INFO: logging.INFO, LogLevel.DEBUG: logging.DEBUG}


def get_loglevel(env=None) -> int:
    """Log level from FEDSPLIT_LOG (error | info | debug), info when unset or unknown."""
    env = os.environ if env is None else env
    raw = env.get(LOG_ENV_VAR, LogLevel.INFO.value).strip().lower()
    try:
        return _LEVELS[LogLevel(raw)]
    except ValueError:
        LOGGER.warning(f"Unknown {LOG_ENV_VAR}={raw!r}, falling back to info")
        return logging.INFO


def setup_logger(name=None, loglevel=logging.INFO, handlers=None, output_log_file: pathlib.Path or str = None):
    if handlers is None:
        handlers = [logging.StreamHandler()]
    if output_log_file:
        pathlib.Path(output_log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(output_log_file, mode="w", encoding="utf-8")
        handlers.append(file_handler)

    logger = logging.getLogger(name)
    logger.setLevel(loglevel)

    # handlers from an earlier call in the same process are replaced, not stacked
    for old in [h for h in logger.handlers if getattr(h, '_fedsplit', False)]:
        logger.removeHandler(old)
        old.close()

    formatter = logging.Formatter('%(asctime)s %(name)-12s %(levelname)-8s %(message)s',
                                  datefmt='%d/%m/%Y %I:%M:%S %p')

    for handler in handlers:
        handler.setLevel(loglevel)
        handler.setFormatter(formatter)
        handler._fedsplit = True
        logger.addHandler(handler)

    # matplotlib font discovery is chatty at debug
    logging.getLogger('matplotlib').setLevel(logging.WARNING)

    return logger


def _jsonable(value):
    """Non-finite floats become the strings 'inf', '-inf', 'nan' (plain JSON has no literal for them)."""
    if isinstance(value, float) and not math.isfinite(value):
        return 'nan' if math.isnan(value) else ('inf' if value > 0 else '-inf')
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_json(data: dict, path: Union[str, pathlib.Path]):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        ujson.dump(_jsonable(data), f, indent=4, escape_forward_slashes=False)


def read_json(path: Union[str, pathlib.Path]) -> dict:
    with open(path, 'r', encoding='utf-8') as f:
        return ujson.loads(f.read())


def write_jsonl(rows: Iterable[dict], path: Union[str, pathlib.Path]):
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with jsonlines.open(path, mode='w') as writer:
        for row in rows:
            writer.write(_jsonable(row))


def read_jsonl(path: Union[str, pathlib.Path]) -> list[dict]:
    with jsonlines.open(path, mode='r') as reader:
        return list(reader)


def plot_round_metrics(frame: pd.DataFrame, output_path: Union[str, pathlib.Path], title: str = '',
                       fields: Sequence[str] = (XI, PHI, LAMBDA, SIM_STD, V, TEST_ACC)):
    """Line charts of per-round metrics, one panel per field and one line per seed, saved as SVG."""
    output_path = pathlib.Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(len(fields), 1, figsize=(8, 2.2 * len(fields)), sharex=True, squeeze=False)
    ax[0, 0].set_title(title)
    for i, attr in enumerate(fields):
        for seed, rows in frame.groupby(SEED):
            ax[i, 0].plot(rows[ROUND], rows[attr], label=f'seed {seed}')
        ax[i, 0].set_ylabel(attr)
    ax[0, 0].legend(loc='upper right', fontsize='small')
    plt.xlabel(ROUND)

    fig.savefig(output_path, bbox_inches='tight', format='svg')
    plt.close(fig)
    LOGGER.info(f"Wrote chart {output_path}")
