import json
import logging
import sys
from typing import Any, Dict, Optional

from loguru import logger
from pydantic import BaseModel

from pddf.core.config import settings


class LoggingConfig(BaseModel):
    """Logging configuration to be set for the toolkit"""

    LOG_FORMAT: str = "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
    LOG_LEVEL: str = settings.LOG_LEVEL
    LOG_FILE_PATH: Optional[str] = settings.LOG_FILE_PATH
    ROTATION: str = "20 MB"
    RETENTION: str = "1 month"


logging_config = LoggingConfig()


class InterceptHandler(logging.Handler):
    """
    Default handler from examples in loguru documentation.
    See https://loguru.readthedocs.io/en/stable/overview.html#entirely-compatible-with-standard-logging
    """

    def emit(self, record: logging.LogRecord) -> None:
        # Get corresponding Loguru level if it exists
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        # Find caller from where originated the logged message
        frame, depth = logging.currentframe(), 2
        while frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(
            level, record.getMessage()
        )


def _not_metrics(record: Dict[str, Any]) -> bool:
    return not record["extra"].get("metrics", False)


def _only_metrics(record: Dict[str, Any]) -> bool:
    return record["extra"].get("metrics", False)


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure logging for the toolkit.

    Human-readable lines go to stderr; stdout is left to command summaries.

    Args:
        level: Optional level overriding the configured one
    """
    log_level = level or logging_config.LOG_LEVEL

    # Intercept standard logging
    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)

    # Remove all the default handlers
    logger.remove()

    logger.add(
        sys.stderr,
        format=logging_config.LOG_FORMAT,
        level=log_level,
        filter=_not_metrics,
    )

    if logging_config.LOG_FILE_PATH:
        logger.add(
            logging_config.LOG_FILE_PATH,
            format=logging_config.LOG_FORMAT,
            level=log_level,
            rotation=logging_config.ROTATION,
            retention=logging_config.RETENTION,
            filter=_not_metrics,
        )

    if settings.METRICS_FILE_PATH:
        add_metrics_sink(settings.METRICS_FILE_PATH)

    logger.debug("Logging configured")


def add_metrics_sink(path: str) -> int:
    """
    Route metrics records to a JSON-lines file.

    Args:
        path: Output file path

    Returns:
        Handler id, usable with logger.remove
    """
    return logger.add(path, format="{message}", level="INFO", filter=_only_metrics, mode="w")


def log_metrics(payload: Dict[str, Any]) -> None:
    """
    Emit one metrics record as a single JSON object.

    Args:
        payload: JSON-serialisable mapping
    """
    logger.bind(metrics=True).info(json.dumps(payload, sort_keys=True))
