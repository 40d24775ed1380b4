import logging
import logging.config
import sys

from colorama import Fore, Style, just_fix_windows_console

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"

_LEVEL_COLORS = {
    "DEBUG": Fore.CYAN,
    "INFO": Fore.GREEN,
    "WARNING": Fore.YELLOW,
    "ERROR": Fore.RED,
    "CRITICAL": Fore.MAGENTA + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """Formatter that paints the level name; plain text when the stream is not a tty."""

    def __init__(self, fmt: str | None = None, datefmt: str | None = None, use_color: bool = True):
        super().__init__(fmt=fmt, datefmt=datefmt)
        self.use_color = use_color and sys.stdout.isatty()

    def format(self, record: logging.LogRecord) -> str:
        if not self.use_color:
            return super().format(record)
        original = record.levelname
        color = _LEVEL_COLORS.get(original, "")
        record.levelname = f"{color}{original}{Style.RESET_ALL}"
        try:
            return super().format(record)
        finally:
            record.levelname = original


def setup_logging(level: str = "INFO") -> logging.Logger:
    """
    Initializes and configures the lab's loggers.

    Uses a dictionary-based configuration that sends every record to standard
    output with one consistent format. Both the `nelson_lab` logger and the
    `app` package hierarchy (module loggers created with
    `logging.getLogger(__name__)`) share the handler.

    The level is passed explicitly by the command line or the `[run]` section
    of the configuration file; environment variables are not consulted.

    Returns:
        logging.Logger: The configured `nelson_lab` logger.
    """

    just_fix_windows_console()
    log_level = level.upper()

    LOGGING_CONFIG = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {
                "()": ColorFormatter,
                "fmt": LOG_FORMAT,
                "datefmt": LOG_DATEFMT,
            },
        },
        "handlers": {
            "default": {
                "formatter": "default",
                "class": "logging.StreamHandler",
                "stream": sys.stdout,
            },
        },
        "loggers": {
            "nelson_lab": {
                "handlers": ["default"],
                "level": log_level,
                "propagate": False,
            },
            "app": {
                "handlers": ["default"],
                "level": log_level,
                "propagate": False,
            },
        },
    }

    logging.config.dictConfig(LOGGING_CONFIG)

    return logging.getLogger("nelson_lab")
