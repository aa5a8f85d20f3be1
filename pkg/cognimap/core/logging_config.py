"""
Logging configuration for cognimap
"""

import copy
import logging
import logging.config
import os
import sys
from typing import Any, Dict, Optional

from cognimap.core.config import Settings, settings as default_settings


DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LOG_FILE_MAX_BYTES = 10 * 1024 * 1024
LOG_FILE_BACKUPS = 5

FORMATTERS: Dict[str, Dict[str, str]] = {
    "default": {
        "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        "datefmt": DATE_FORMAT,
    },
    "detailed": {
        "format": "%(asctime)s - %(name)s - %(levelname)s - %(module)s:%(lineno)d - %(message)s",
        "datefmt": DATE_FORMAT,
    },
    "json": {
        "()": "pythonjsonlogger.jsonlogger.JsonFormatter",
        "format": "%(asctime)s %(name)s %(levelname)s %(module)s %(lineno)d %(message)s",
    },
}


def setup_logging(config: Optional[Settings] = None, level: Optional[str] = None) -> None:
    """
    Install console (stderr) and optional rotating-file logging.

    ``level`` overrides ``LOG_LEVEL``; the command line passes ``--log-level``
    through it. The file handler always writes JSON lines.
    """
    config = config or default_settings
    level = (level or config.LOG_LEVEL).upper()
    console_formatter = config.LOG_FORMAT
    if config.DEBUG and console_formatter == "default":
        console_formatter = "detailed"

    handlers: Dict[str, Dict[str, Any]] = {
        "console": {
            "class": "logging.StreamHandler",
            "level": level,
            "formatter": console_formatter,
            "stream": sys.stderr,
        }
    }
    if config.LOG_TO_FILE:
        os.makedirs(config.LOG_DIR, exist_ok=True)
        handlers["file"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "level": "INFO",
            "formatter": "json",
            "filename": str(config.log_file),
            "maxBytes": LOG_FILE_MAX_BYTES,
            "backupCount": LOG_FILE_BACKUPS,
        }

    logging.config.dictConfig({
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": copy.deepcopy(FORMATTERS),
        "handlers": handlers,
        "loggers": {
            "": {"level": level, "handlers": ["console"], "propagate": False},
            "cognimap": {"level": level, "handlers": list(handlers), "propagate": False},
        },
    })

    for name in config.QUIET_LOGGERS or []:
        logging.getLogger(name).setLevel(logging.WARNING)


class StructuredLogger:
    """Structured logger for stage events: ``message | key=value | ...``"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)

    @staticmethod
    def _format(message: str, kwargs: Dict[str, Any]) -> str:
        extra_data = " | ".join(f"{k}={v}" for k, v in kwargs.items())
        return f"{message} | {extra_data}" if extra_data else message

    def info(self, message: str, **kwargs):
        """Log info message with structured data"""
        self.logger.info(self._format(message, kwargs))

    def error(self, message: str, error: Optional[BaseException] = None, **kwargs):
        """Log error message with structured data"""
        full_message = self._format(message, kwargs)
        if error:
            self.logger.error(full_message, exc_info=error)
        else:
            self.logger.error(full_message)

    def warning(self, message: str, **kwargs):
        """Log warning message with structured data"""
        self.logger.warning(self._format(message, kwargs))

    def debug(self, message: str, **kwargs):
        """Log debug message with structured data"""
        if self.logger.isEnabledFor(logging.DEBUG):
            self.logger.debug(self._format(message, kwargs))
