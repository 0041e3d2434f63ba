from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from interfaces.IConfig import Threshold

NET_SCHEMA = "hjdc-net-1"


class TrajectoryHeader(BaseModel):
  model_config = ConfigDict(protected_namespaces=())

  d: int
  N: int
  M: int
  h: float
  t0: float
  model_id: str
  integrator_id: str
  seed: int


class NetworkInterval(BaseModel):
  t_lo: float
  t_hi: float
  params: Dict[str, List[Any]]


class ModelFile(BaseModel):
  model_config = ConfigDict(populate_by_name=True)

  schema_: Literal["hjdc-net-1"] = Field(NET_SCHEMA, alias="schema")
  d: int
  L: int
  width: int
  kappa: float
  activation: str
  intervals: List[NetworkInterval]


class StageSummary(BaseModel):
  stage: str
  config_name: str
  config_hash: str
  seeds: Dict[str, int]
  metrics: Dict[str, Optional[float]]
  acceptance: Dict[str, Threshold] = Field(default_factory=dict)
  flags: Dict[str, Any] = Field(default_factory=dict)


class AcceptanceResult(BaseModel):
  stage: str
  metric: str
  value: Optional[float]
  min: Optional[float] = None
  max: Optional[float] = None
  passed: bool


class Report(BaseModel):
  summaries: List[StageSummary]
  results: List[AcceptanceResult]
  passed: bool
