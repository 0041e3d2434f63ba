from typing import List

import numpy as np
from fastapi import APIRouter, HTTPException, Query, status

from interfaces.IApi import OracleResponse
from services.reference_solutions import harmonic_exact_grad, harmonic_is_pole, weighted_momentum
from utils.errors import ConfigError, OraclePoleError

oracle_router = APIRouter()
oracle_router.prefix = '/oracles'


@oracle_router.get("/harmonic", response_model=OracleResponse)
async def harmonic(t: float, x: List[float] = Query(...)):
  if harmonic_is_pole(t):
    raise HTTPException(
      status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=f"t={t} is a pole of the harmonic solution."
    )
  try:
    values = harmonic_exact_grad(np.asarray(x, dtype=np.float64), t)
  except OraclePoleError as e:
    raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
  return OracleResponse(t=t, values=np.atleast_1d(values).tolist())


@oracle_router.get("/weighted_momentum", response_model=OracleResponse)
async def weighted(t: float, z: List[float] = Query(...), variant: str = "cos_initial"):
  if t < 0:
    raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail="t must be non-negative.")
  try:
    values = weighted_momentum(t, np.asarray(z, dtype=np.float64), variant)
  except ConfigError as e:
    raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
  return OracleResponse(t=t, values=np.atleast_1d(values).tolist())
