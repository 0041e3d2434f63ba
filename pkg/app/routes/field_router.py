import logging

import numpy as np
from fastapi import APIRouter, HTTPException, status
from starlette.concurrency import run_in_threadpool

from interfaces.IApi import GradientRequest, GradientResponse
from routes.runs_router import run_dir
from utils.errors import ArtifactIOError, ConfigError
from utils.modelIO import read_model

logger = logging.getLogger(__name__)

field_router = APIRouter()
field_router.prefix = '/field'

MODEL_FILE = "model.json"


def _gradient(run: str, request: GradientRequest) -> GradientResponse:
  path = run_dir(run) / MODEL_FILE
  if not path.is_file():
    raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=f"Run '{run}' has no model.")
  field = read_model(path)
  points = np.asarray(request.points, dtype=np.float64)
  if points.ndim != 2 or points.shape[1] != field.d:
    raise ConfigError(f"points must have {field.d} coordinates each", "points")
  gx, gt = field.grad_xt(points, np.full(points.shape[0], request.t))
  return GradientResponse(t=request.t, gradients=gx.tolist(), time_derivatives=gt.tolist())


@field_router.post("/{run}/gradient", response_model=GradientResponse)
async def field_gradient(run: str, request: GradientRequest):
  try:
    return await run_in_threadpool(_gradient, run, request)
  except ConfigError as e:
    raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
  except ArtifactIOError as e:
    logger.error("Unreadable model for run %s: %s", run, e)
    raise HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(e))
