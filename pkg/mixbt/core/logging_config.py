import logging
import sys

from tqdm import tqdm

from mixbt.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s"

# Determine log level from settings, default to INFO
LOG_LEVEL = settings.LOG_LEVEL.upper() if hasattr(settings, 'LOG_LEVEL') else "INFO"
numeric_level = getattr(logging, LOG_LEVEL, logging.INFO)


class ProgressAwareHandler(logging.StreamHandler):
    """Writes through tqdm so log lines do not tear an active progress bar."""
    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


# stdout carries the RESULT line of each command, so logs go to stderr
_handler = ProgressAwareHandler(sys.stderr) if settings.SHOW_PROGRESS else logging.StreamHandler(sys.stderr)

logging.basicConfig(
    level=numeric_level,
    format=LOG_FORMAT,
    datefmt="%Y-%m-%d %H:%M:%S",
    handlers=[_handler],
)

def get_logger(name: str):
    """
    Retrieves a logger instance.
    """
    return logging.getLogger(name)

def set_log_level(level: str) -> None:
    """Override the root log level at runtime (used by the CLI --log-level flag)."""
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))
