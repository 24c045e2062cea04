"""
Experiment logging for Pairwise Continual.

Every experiment writes a plain-text log per day into ``<out_dir>/logs``
and, unless disabled, mirrors it to the terminal with the level name
highlighted. Old experiment logs are pruned by :func:`rotate_logs`.
"""

from __future__ import annotations

import logging
import sys
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import TextIO


LOGGER_NAME = "pairwise_continual"

LOG_FORMAT = "[%(asctime)s] %(levelname)s - %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LOG_FILE_PREFIX = "experiment-"
LOG_FILE_DATE = "%Y-%m-%d"

_logger: logging.Logger | None = None


class ColoredFormatter(logging.Formatter):
    """Highlights the level name when the target stream is a terminal."""

    LEVEL_COLORS = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[35m",
    }
    RESET = "\033[0m"

    def __init__(self, stream: TextIO):
        super().__init__(LOG_FORMAT, LOG_DATE_FORMAT)
        self.use_color = hasattr(stream, "isatty") and stream.isatty()

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        color = self.LEVEL_COLORS.get(record.levelname)
        if not (self.use_color and color):
            return text
        return text.replace(record.levelname, f"{color}{record.levelname}{self.RESET}", 1)


def get_log_file_path(log_dir: Path, day: date | None = None) -> Path:
    """Path of the experiment log for ``day`` (today by default)."""
    day = day or date.today()
    return log_dir / f"{LOG_FILE_PREFIX}{day.strftime(LOG_FILE_DATE)}.log"


def parse_level(level: int | str) -> int:
    """Turn a level name such as ``"debug"`` into a logging constant."""
    if isinstance(level, int):
        return level
    value = logging.getLevelName(level.upper())
    if not isinstance(value, int):
        raise ValueError(f"Unknown log level: {level}")
    return value


def _console_handler(level: int) -> logging.Handler:
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)
    handler.setFormatter(ColoredFormatter(sys.stdout))
    return handler


def _reset_handlers(logger: logging.Logger) -> None:
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)


def setup_logging(
    log_dir: Path,
    level: int | str = logging.INFO,
    console_output: bool = True,
) -> logging.Logger:
    """Point the package logger at ``log_dir`` and, optionally, the terminal.

    Handlers from an earlier call are closed and replaced, so one process
    can run several experiments in turn.

    Args:
        log_dir: Directory for the daily experiment logs; created if missing.
        level: Logging level or level name.
        console_output: Also log to stdout.

    Returns:
        The configured package logger.
    """
    global _logger

    level = parse_level(level)
    log_dir = Path(log_dir).expanduser().resolve()
    log_dir.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level)
    logger.propagate = False
    _reset_handlers(logger)

    to_file = logging.FileHandler(get_log_file_path(log_dir), encoding="utf-8")
    to_file.setLevel(level)
    to_file.setFormatter(logging.Formatter(LOG_FORMAT, LOG_DATE_FORMAT))
    logger.addHandler(to_file)
    if console_output:
        logger.addHandler(_console_handler(level))

    _logger = logger
    return logger


def get_logger() -> logging.Logger:
    """The package logger; console-only at INFO until :func:`setup_logging` runs."""
    global _logger
    if _logger is None:
        logger = logging.getLogger(LOGGER_NAME)
        if not logger.handlers:
            logger.setLevel(logging.INFO)
            logger.addHandler(_console_handler(logging.INFO))
        _logger = logger
    return _logger


def _log_date(path: Path) -> date | None:
    stamp = path.stem[len(LOG_FILE_PREFIX):]
    try:
        return datetime.strptime(stamp, LOG_FILE_DATE).date()
    except ValueError:
        return None


def rotate_logs(log_dir: Path, retention_days: int) -> int:
    """Delete experiment logs dated more than ``retention_days`` ago.

    Files whose name carries no date are left alone.

    Returns:
        Number of log files deleted.
    """
    log_dir = Path(log_dir).expanduser().resolve()
    if not log_dir.is_dir():
        return 0

    oldest_kept = date.today() - timedelta(days=retention_days)
    deleted = 0
    for path in log_dir.glob(f"{LOG_FILE_PREFIX}*.log"):
        logged_on = _log_date(path)
        if logged_on is None or logged_on >= oldest_kept:
            continue
        try:
            path.unlink()
        except OSError:
            continue
        deleted += 1
    return deleted
