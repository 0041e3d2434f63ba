import logging
import os

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def default_threads() -> int:
  raw = os.getenv("HJDC_THREADS", "1")
  try:
    return max(1, int(raw))
  except ValueError:
    logging.getLogger(__name__).warning("Ignoring non-integer HJDC_THREADS=%r", raw)
    return 1


def outdir_root() -> str:
  return os.getenv("HJDC_OUTDIR", "runs")


def configure_logging(level: str = None) -> None:
  level = (level or os.getenv("HJDC_LOG_LEVEL", "INFO")).upper()
  root = logging.getLogger()
  if not root.handlers:
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
  try:
    root.setLevel(level)
  except ValueError:
    root.setLevel(logging.INFO)
    logging.getLogger(__name__).error("Unknown log level %r, falling back to INFO", level)
