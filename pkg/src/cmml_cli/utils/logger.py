"""Logging configuration using Loguru."""

import sys
from pathlib import Path
from typing import Any, Optional

from loguru import logger

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"


def setup_logging(logging_config: Optional[Any] = None, log_dir: Optional[Path] = None):
    """Configure loguru sinks.

    Args:
        logging_config: ``LoggingConfig`` section; defaults to INFO on stderr.
        log_dir: Directory for the file sink, derived from the run's output directory.
    """
    level = getattr(logging_config, "level", "INFO")
    console_enabled = getattr(logging_config, "console_enabled", True)
    file_enabled = getattr(logging_config, "file_enabled", False)

    # Remove default handler
    logger.remove()

    if console_enabled:
        logger.add(sys.stderr, format=CONSOLE_FORMAT, level=level, colorize=True)

    if file_enabled and log_dir is not None:
        log_path = Path(log_dir) / logging_config.file_name
        log_path.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            str(log_path),
            format=FILE_FORMAT,
            level=level,
            rotation=logging_config.file_rotation,
            retention=logging_config.file_retention,
            compression="zip",
        )

    return logger


# Global logger instance
log = setup_logging()


def get_logger():
    """Get global logger instance."""
    return log
