from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import (
  BaseModel,
  ConfigDict,
  Field,
  NonNegativeInt,
  PositiveFloat,
  PositiveInt,
  field_validator,
  model_validator,
)

CONFIG_SCHEMA = "hjdc-config-1"

HamiltonianName = Literal[
  "harmonic",
  "degenerate_kinetic",
  "caustic_cos",
  "sinusoidal_potential",
  "nonseparable_quartic",
  "kepler",
  "lqc_pendulum",
  "free_particle",
]
IntegratorId = Literal["stormer_verlet", "tao", "linear_flow", "euler", "rk4"]
Activation = Literal["tanh", "sin", "relu", "softplus"]
LossKind = Literal["quadratic", "bregman"]
OracleName = Literal[
  "harmonic",
  "caustic_cos",
  "caustic_cos_neg",
  "sinusoidal_kinetic",
  "lqc_pendulum",
  "free_particle",
]

# oracle -> hamiltonians it can be checked against
ORACLE_MODELS: Dict[str, Tuple[str, ...]] = {
  "harmonic": ("harmonic",),
  "caustic_cos": ("caustic_cos",),
  "caustic_cos_neg": ("caustic_cos",),
  "sinusoidal_kinetic": ("degenerate_kinetic",),
  "lqc_pendulum": ("lqc_pendulum",),
  "free_particle": ("free_particle",),
}


class _Strict(BaseModel):
  model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ---- initial densities (rho0) ----

class GaussianSpec(_Strict):
  kind: Literal["gaussian"] = "gaussian"
  mean: List[float]
  cov_scale: Union[PositiveFloat, List[PositiveFloat]] = 1.0

  @model_validator(mode="after")
  def _diag_matches(self):
    if isinstance(self.cov_scale, list) and len(self.cov_scale) != len(self.mean):
      raise ValueError("cov_scale diagonal must have one entry per mean coordinate")
    return self

  @property
  def dim(self) -> int:
    return len(self.mean)


class UniformBoxSpec(_Strict):
  kind: Literal["uniform_box"] = "uniform_box"
  lo: List[float]
  hi: List[float]

  @model_validator(mode="after")
  def _ordered(self):
    if len(self.lo) != len(self.hi):
      raise ValueError("lo and hi must have the same length")
    if any(a >= b for a, b in zip(self.lo, self.hi)):
      raise ValueError("box requires lo < hi componentwise")
    return self

  @property
  def dim(self) -> int:
    return len(self.lo)


class MixtureComponent(_Strict):
  weight: float = Field(ge=0.0)
  mean: List[float]
  cov_scale: PositiveFloat = 1.0


class GaussianMixtureSpec(_Strict):
  kind: Literal["gaussian_mixture"] = "gaussian_mixture"
  components: List[MixtureComponent] = Field(min_length=1)

  @model_validator(mode="after")
  def _weights(self):
    total = sum(c.weight for c in self.components)
    if abs(total - 1.0) > 1e-12:
      raise ValueError(f"mixture weights sum to {total!r}, expected 1")
    dims = {len(c.mean) for c in self.components}
    if len(dims) != 1:
      raise ValueError("mixture components disagree on dimension")
    return self

  @property
  def dim(self) -> int:
    return len(self.components[0].mean)


class PiecewiseUniformHalvesSpec(_Strict):
  """Uniform on a box, reweighted on the two sides of a hyperplane through its centre."""
  kind: Literal["piecewise_uniform_halves"] = "piecewise_uniform_halves"
  lo: List[float]
  hi: List[float]
  normal: List[float]
  weights: Tuple[float, float] = (0.5, 0.5)

  @model_validator(mode="after")
  def _valid(self):
    if not (len(self.lo) == len(self.hi) == len(self.normal)):
      raise ValueError("lo, hi and normal must share a dimension")
    if any(a >= b for a, b in zip(self.lo, self.hi)):
      raise ValueError("box requires lo < hi componentwise")
    if all(v == 0.0 for v in self.normal):
      raise ValueError("normal must be nonzero")
    if min(self.weights) < 0 or sum(self.weights) <= 0:
      raise ValueError("side weights must be nonnegative with positive sum")
    return self

  @property
  def dim(self) -> int:
    return len(self.lo)


class DeltaSpec(_Strict):
  kind: Literal["delta"] = "delta"
  point: List[float]

  @property
  def dim(self) -> int:
    return len(self.point)


class ProductSpec(_Strict):
  kind: Literal["product"] = "product"
  factors: List["SamplerSpec"] = Field(min_length=1)

  @property
  def dim(self) -> int:
    return sum(f.dim for f in self.factors)


SamplerSpec = Annotated[
  Union[
    GaussianSpec,
    UniformBoxSpec,
    GaussianMixtureSpec,
    PiecewiseUniformHalvesSpec,
    DeltaSpec,
    ProductSpec,
  ],
  Field(discriminator="kind"),
]

ProductSpec.model_rebuild()


# ---- experiment blocks ----

class HamiltonianBlock(_Strict):
  name: HamiltonianName
  params: Dict[str, Any] = Field(default_factory=dict)


class TrajectoryBlock(_Strict):
  N: PositiveInt
  M: PositiveInt
  T: PositiveFloat
  integrator: IntegratorId = "stormer_verlet"
  omega: PositiveFloat = 10.0
  seed: NonNegativeInt = 0


class NetworkBlock(_Strict):
  L: int = Field(6, ge=3)
  width: PositiveInt = 50
  kappa: float = 0.5
  activation: Activation = "tanh"


class TrainPlan(_Strict):
  lr: PositiveFloat = 1e-4
  n_iter: NonNegativeInt = 1000
  batch: PositiveInt = 1200
  M_T: PositiveInt = 1
  loss_kind: LossKind = "quadratic"
  seed: NonNegativeInt = 0
  beta1: float = Field(0.9, ge=0.0, lt=1.0)
  beta2: float = Field(0.999, ge=0.0, lt=1.0)
  eps_adam: PositiveFloat = 1e-8
  log_every: PositiveInt = 500


class GridSpec(_Strict):
  plane: Tuple[NonNegativeInt, NonNegativeInt] = (0, 1)
  lo: Tuple[float, float] = (-6.0, -6.0)
  hi: Tuple[float, float] = (6.0, 6.0)
  n: PositiveInt = 50
  times: List[float] = Field(default_factory=list)

  @field_validator("plane")
  @classmethod
  def _distinct(cls, v):
    if v[0] == v[1]:
      raise ValueError("plane needs two different coordinates")
    return v


class Threshold(_Strict):
  min: Optional[float] = None
  max: Optional[float] = None


class EvalBlock(_Strict):
  oracle: Optional[OracleName] = None
  grid: Optional[GridSpec] = None
  times: List[float] = Field(default_factory=list)
  n_list: Optional[List[PositiveInt]] = None
  seeds: List[NonNegativeInt] = Field(default_factory=lambda: [0])
  eval_sample_size: PositiveInt = 45000
  n_rollouts: PositiveInt = 40
  diagonal_points: PositiveInt = 200
  exclude_radius: float = Field(0.2, ge=0.0)
  residual_particles: Optional[PositiveInt] = None
  acceptance: Dict[str, Threshold] = Field(default_factory=dict)


class ExperimentConfig(_Strict):
  schema_: Literal["hjdc-config-1"] = Field(CONFIG_SCHEMA, alias="schema")
  name: str = "experiment"
  hamiltonian: HamiltonianBlock
  rho0: SamplerSpec
  trajectory: TrajectoryBlock
  network: NetworkBlock = Field(default_factory=NetworkBlock)
  train: TrainPlan = Field(default_factory=TrainPlan)
  eval: EvalBlock = Field(default_factory=EvalBlock)

  @model_validator(mode="after")
  def _referential(self):
    if self.trajectory.M % self.train.M_T != 0:
      raise ValueError(
        f"train.M_T: M_T={self.train.M_T} must divide trajectory.M={self.trajectory.M}"
      )
    if self.train.batch > self.trajectory.N:
      raise ValueError(
        f"train.batch: batch={self.train.batch} exceeds trajectory.N={self.trajectory.N}"
      )
    oracle = self.eval.oracle
    if oracle is not None and self.hamiltonian.name not in ORACLE_MODELS[oracle]:
      raise ValueError(
        f"eval.oracle: oracle {oracle!r} does not apply to hamiltonian {self.hamiltonian.name!r}"
      )
    return self
