"""
Logging for the simulator.

Provides structured logging with context (stage, pair, worker) and
performance tracking for long-running stages.
"""
import functools
import json
import logging
import sys
import time
from datetime import datetime
from typing import Any, Dict, Optional

LOGGER_NAME = "satsim"

_CONTEXT_FIELDS = ("stage", "pair_id", "worker_id", "seed")
_SHORT_LABELS = {"stage": "stage", "pair_id": "pair", "worker_id": "worker"}


class StructuredFormatter(logging.Formatter):
    """One JSON object per line; context fields become top-level keys."""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": datetime.fromtimestamp(record.created).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        for field in _CONTEXT_FIELDS:
            if hasattr(record, field):
                log_data[field] = getattr(record, field)
        if hasattr(record, "duration_ms"):
            log_data["duration_ms"] = record.duration_ms
        if hasattr(record, "context"):
            log_data["context"] = record.context

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, default=str)


class HumanReadableFormatter(logging.Formatter):
    """
    Formats log messages for human readability.
    """

    COLORS = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[35m",
    }
    RESET = "\033[0m"

    def __init__(self, use_color: bool = True):
        super().__init__()
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        color = self.COLORS.get(record.levelname, "") if self.use_color else ""
        reset = self.RESET if color else ""

        parts = [
            f"{color}[{record.levelname}]{reset}",
            datetime.fromtimestamp(record.created).strftime("%Y-%m-%d %H:%M:%S"),
        ]

        parts += [f"{label}={getattr(record, f)}" for f, label in _SHORT_LABELS.items() if hasattr(record, f)]
        parts.append("-")
        parts.append(record.getMessage())

        if hasattr(record, "duration_ms"):
            parts.append(f"({record.duration_ms}ms)")
        if hasattr(record, "context"):
            parts.append(json.dumps(record.context, default=str, sort_keys=True))

        message = " ".join(parts)

        if record.exc_info:
            message += "\n" + self.formatException(record.exc_info)

        return message


def setup_logging(
    log_level: str = "INFO",
    log_format: str = "human",  # "human" or "json"
    log_file: Optional[str] = None,
) -> logging.Logger:
    """
    Set up simulator logging.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: Output format ("human" or "json")
        log_file: Optional file path for log output

    Returns:
        Configured logger
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(getattr(logging, log_level.upper()))
    logger.handlers.clear()

    # stderr keeps stdout free for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, log_level.upper()))
    if log_format == "json":
        console_handler.setFormatter(StructuredFormatter())
    else:
        console_handler.setFormatter(HumanReadableFormatter(use_color=sys.stderr.isatty()))
    logger.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(logging.DEBUG)  # Always log everything to file
        file_handler.setFormatter(StructuredFormatter())
        logger.addHandler(file_handler)

    return logger


_logger: Optional[logging.Logger] = None


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get the simulator logger, or a child of it.

    The root ``satsim`` logger is configured from Settings on first use.
    """
    global _logger
    if _logger is None:
        from .config import settings

        _logger = setup_logging(settings.LOG_LEVEL, settings.LOG_FORMAT, settings.LOG_FILE or None)
    if name:
        return _logger.getChild(name.rsplit(".", 1)[-1])
    return _logger


class ContextLogger:
    """
    Logger with context (stage, pair_id, worker_id).

    Usage:
        logger = ContextLogger(stage="simulate", pair_id="A>B")
        logger.info("Pair simulated")
        logger.warning("Series invalid", context={"missing": 0.6})
    """

    def __init__(
        self,
        stage: Optional[str] = None,
        pair_id: Optional[str] = None,
        worker_id: Optional[str] = None,
        seed: Optional[int] = None,
    ):
        self.stage = stage
        self.pair_id = pair_id
        self.worker_id = worker_id
        self.seed = seed
        self.logger = get_logger()

    def _log(self, level: str, message: str, context: Optional[Dict[str, Any]] = None, **kwargs):
        extra: Dict[str, Any] = {}
        for field in _CONTEXT_FIELDS:
            value = getattr(self, field)
            if value is not None:
                extra[field] = value
        if context:
            extra["context"] = context

        # LogRecord rejects exc_info inside extra
        exc_info = kwargs.pop("exc_info", False)
        extra.update(kwargs)

        log_func = getattr(self.logger, level.lower())
        log_func(message, extra=extra, exc_info=exc_info)

    def debug(self, message: str, **kwargs):
        self._log("DEBUG", message, **kwargs)

    def info(self, message: str, **kwargs):
        self._log("INFO", message, **kwargs)

    def warning(self, message: str, **kwargs):
        self._log("WARNING", message, **kwargs)

    def error(self, message: str, **kwargs):
        self._log("ERROR", message, **kwargs)


def log_performance(operation: str):
    """
    Decorator for performance logging.

    Usage:
        @log_performance("ingest")
        def cmd_ingest(config):
            ...
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_logger()
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                duration_ms = int((time.perf_counter() - start) * 1000)
                logger.info(f"{operation} completed", extra={"duration_ms": duration_ms, "stage": operation})
                return result
            except Exception as e:
                duration_ms = int((time.perf_counter() - start) * 1000)
                logger.error(
                    f"{operation} failed: {e}",
                    extra={"duration_ms": duration_ms, "stage": operation},
                    exc_info=True,
                )
                raise

        return wrapper

    return decorator
