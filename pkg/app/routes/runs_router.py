import json
from pathlib import Path
from typing import Dict, List

from fastapi import APIRouter, HTTPException, status
from starlette.concurrency import run_in_threadpool

from config.settings import outdir_root
from interfaces.IApi import RunInfo
from utils.saveCsv import read_csv

runs_router = APIRouter()
runs_router.prefix = '/runs'


def run_dir(run: str) -> Path:
  root = Path(outdir_root()).resolve()
  path = (root / run).resolve()
  if path.parent != root or not path.is_dir():
    raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Run '{run}' not found.")
  return path


def _artifact(run: str, name: str) -> Path:
  path = run_dir(run) / name
  if not path.is_file():
    raise HTTPException(
      status_code=status.HTTP_404_NOT_FOUND, detail=f"Run '{run}' has no {name}."
    )
  return path


@runs_router.get("", response_model=List[RunInfo])
async def list_runs():
  root = Path(outdir_root())
  if not root.is_dir():
    return []
  runs = []
  for path in sorted(p for p in root.iterdir() if p.is_dir()):
    runs.append(RunInfo(run=path.name, files=sorted(f.name for f in path.iterdir() if f.is_file())))
  return runs


@runs_router.get("/{run}/report")
async def get_report(run: str):
  path = _artifact(run, "report.json")
  return json.loads(await run_in_threadpool(path.read_text, encoding="utf-8"))


@runs_router.get("/{run}/curves", response_model=List[Dict[str, str]])
async def get_curves(run: str):
  path = _artifact(run, "curves.csv")
  return await run_in_threadpool(read_csv, path)
