import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from utils.errors import ArtifactIOError

logger = logging.getLogger(__name__)


def format_cell(value) -> str:
  if value is None:
    return ""
  if isinstance(value, (bool, np.bool_)):
    return str(bool(value)).lower()
  if isinstance(value, (int, np.integer)):
    return str(int(value))
  if isinstance(value, (float, np.floating)):
    return format(float(value), ".17g")
  return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
  """Comma separated, header row, LF line endings, 17 significant digits."""
  count = 0
  try:
    with open(path, "w", newline="", encoding="utf-8") as f:
      writer = csv.writer(f, lineterminator="\n")
      writer.writerow(header)
      for row in rows:
        writer.writerow([format_cell(v) for v in row])
        count += 1
  except OSError as e:
    logger.error("Could not write %s: %s", path, e)
    raise ArtifactIOError(f"cannot write {path}: {e.strerror or e}")
  logger.debug("Wrote %d rows to %s", count, path)
  return count


def read_csv(path) -> List[Dict[str, str]]:
  if not Path(path).is_file():
    raise ArtifactIOError(f"cannot read {path}: no such file")
  with open(path, newline="", encoding="utf-8") as f:
    return list(csv.DictReader(f))
