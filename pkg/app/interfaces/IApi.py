from typing import List, Optional

from pydantic import BaseModel


class RunInfo(BaseModel):
  run: str
  files: List[str]


class GradientRequest(BaseModel):
  points: List[List[float]]
  t: float


class GradientResponse(BaseModel):
  t: float
  gradients: List[List[float]]
  time_derivatives: List[float]


class OracleResponse(BaseModel):
  t: float
  values: List[float]
  status: str = "ok"
  detail: Optional[str] = None
