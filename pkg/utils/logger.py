"""Loguru sink setup; library modules just ``from loguru import logger``."""

import sys
from loguru import logger

from utils.director_config import LOG_LEVEL, plain_output


def configure_logging(level: str = LOG_LEVEL, colorize: bool | None = None) -> None:
    """Route all log records to stderr so stdout stays free for trace output."""
    if colorize is None:
        colorize = not plain_output()
    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        colorize=colorize,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {name}:{line} - {message}",
    )
