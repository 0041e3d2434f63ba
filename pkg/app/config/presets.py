import json
import logging
from pathlib import Path
from typing import Dict, List

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent / "presets"


def list_presets() -> List[str]:
  return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def is_preset(name: str) -> bool:
  return (PRESET_DIR / f"{name}.json").is_file()


def preset_path(name: str) -> Path:
  path = PRESET_DIR / f"{name}.json"
  if not path.is_file():
    raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
  return path


def load_preset(name: str) -> Dict:
  return json.loads(preset_path(name).read_text(encoding="utf-8"))
