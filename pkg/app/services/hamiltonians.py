"""Hamiltonian models H(x, p) with exact partial derivatives.

All callables are vectorized over leading axes: x and p have shape (..., d)
and energies come back with shape (...).
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from utils.errors import ConfigError, SingularStateError

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

KEPLER_MIN_RADIUS = 1e-8


class Structure(str, Enum):
  SEPARABLE = "separable"
  LINEAR = "linear"
  GENERAL = "general"


@dataclass(frozen=True)
class HamiltonianModel:
  id: str
  dim: int
  structure: Structure
  energy: ArrayFn
  dx: ArrayFn
  dp: ArrayFn
  kinetic: Optional[Callable[[np.ndarray], np.ndarray]] = None
  grad_kinetic: Optional[Callable[[np.ndarray], np.ndarray]] = None
  potential: Optional[Callable[[np.ndarray], np.ndarray]] = None
  grad_potential: Optional[Callable[[np.ndarray], np.ndarray]] = None
  system_matrix: Optional[np.ndarray] = None
  params: Dict[str, Any] = field(default_factory=dict)

  def _check(self, x, p) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if x.shape[-1] != self.dim or p.shape[-1] != self.dim:
      raise ConfigError(
        f"model {self.id!r} has dimension {self.dim}, got x{x.shape} and p{p.shape}"
      )
    return x, p

  def eval(self, x, p) -> np.ndarray:
    x, p = self._check(x, p)
    return self.energy(x, p)

  def grad_x(self, x, p) -> np.ndarray:
    x, p = self._check(x, p)
    return self.dx(x, p)

  def grad_p(self, x, p) -> np.ndarray:
    x, p = self._check(x, p)
    return self.dp(x, p)


@dataclass(frozen=True)
class InitialCondition:
  g: Callable[[np.ndarray], np.ndarray]
  grad_g: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LqcSystem:
  """Linear dynamics x' = Ax + Bv with running cost ½xᵀQx + ½vᵀRv and terminal ½xᵀP₁x."""
  A: np.ndarray
  B: np.ndarray
  Q: np.ndarray
  R: np.ndarray
  P1: np.ndarray

  @property
  def dim(self) -> int:
    return self.A.shape[0]

  @property
  def control_gain(self) -> np.ndarray:
    # B R⁻¹ Bᵀ
    return self.B @ np.linalg.solve(self.R, self.B.T)

  @property
  def system_matrix(self) -> np.ndarray:
    return np.block([[-self.A, self.control_gain], [self.Q, self.A.T]])


def pendulum_system(
  cart_mass: float = 1.0,
  bob_mass: float = 0.1,
  length: float = 1.0,
  gravity: float = 9.8,
  r: float = 1.0,
) -> LqcSystem:
  M, m, l, g = cart_mass, bob_mass, length, gravity
  A = np.array([
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, m * g / M, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, (M + m) * g / (M * l), 0.0],
  ])
  B = np.array([[0.0], [1.0 / M], [0.0], [1.0 / (M * l)]])
  Q = np.diag([1.0, 0.0, 1.0, 0.0])
  return LqcSystem(A=A, B=B, Q=Q, R=np.array([[r]]), P1=Q.copy())


def _sq(v: np.ndarray) -> np.ndarray:
  return np.sum(v * v, axis=-1)


def _broadcast(value: np.ndarray, x: np.ndarray, p: np.ndarray) -> np.ndarray:
  shape = np.broadcast_shapes(x.shape, p.shape)
  return np.array(np.broadcast_to(value, shape))


def separable_model(
  model_id: str,
  dim: int,
  kinetic: Callable,
  grad_kinetic: Callable,
  potential: Callable,
  grad_potential: Callable,
  params: Optional[Dict[str, Any]] = None,
) -> HamiltonianModel:
  return HamiltonianModel(
    id=model_id,
    dim=dim,
    structure=Structure.SEPARABLE,
    energy=lambda x, p: kinetic(p) + potential(x),
    dx=lambda x, p: _broadcast(grad_potential(x), x, p),
    dp=lambda x, p: _broadcast(grad_kinetic(p), x, p),
    kinetic=kinetic,
    grad_kinetic=grad_kinetic,
    potential=potential,
    grad_potential=grad_potential,
    params=params or {},
  )


def lqc_model(system: LqcSystem, model_id: str = "lqc", params=None) -> HamiltonianModel:
  """H = ½(Bᵀp)ᵀR⁻¹(Bᵀp) − pᵀAx − ½xᵀQx, the time-reversed LQC Hamiltonian."""
  A, Q = system.A, system.Q
  gain = system.control_gain

  def energy(x, p):
    return 0.5 * np.sum(p * (p @ gain.T), axis=-1) - np.sum(p * (x @ A.T), axis=-1) \
      - 0.5 * np.sum(x * (x @ Q.T), axis=-1)

  return HamiltonianModel(
    id=model_id,
    dim=system.dim,
    structure=Structure.LINEAR,
    energy=energy,
    dx=lambda x, p: -(p @ A) - x @ Q.T,
    dp=lambda x, p: p @ gain.T - x @ A.T,
    system_matrix=system.system_matrix,
    params=params or {},
  )


def bregman_divergence(model: HamiltonianModel, x, q1, q2) -> np.ndarray:
  """D_{H,x}(q1 : q2) = H(x,q1) − H(x,q2) − ∂ₚH(x,q2)·(q1 − q2)."""
  q1 = np.asarray(q1, dtype=np.float64)
  q2 = np.asarray(q2, dtype=np.float64)
  return model.eval(x, q1) - model.eval(x, q2) - np.sum(model.grad_p(x, q2) * (q1 - q2), axis=-1)


# ---- builtin models ----

class _Params:
  """Consumes a params record, complaining about keys nobody asked for."""

  def __init__(self, name: str, params: Optional[Dict[str, Any]]):
    self.name = name
    self.raw = dict(params or {})
    self.used = set()

  def get(self, key, default):
    self.used.add(key)
    return self.raw.get(key, default)

  def dim(self, default: int) -> int:
    d = self.get("d", default)
    if not isinstance(d, (int, np.integer)) or isinstance(d, bool) or d <= 0:
      raise ConfigError(f"dimension must be a positive integer, got {d!r}", "hamiltonian.params.d")
    return int(d)

  def vector(self, key: str, default, dim: int) -> np.ndarray:
    v = np.asarray(self.get(key, default), dtype=np.float64).reshape(-1)
    if v.shape != (dim,):
      raise ConfigError(f"expected {dim} entries, got {v.size}", f"hamiltonian.params.{key}")
    return v

  def finish(self) -> Dict[str, Any]:
    extra = set(self.raw) - self.used
    if extra:
      raise ConfigError(
        f"unknown parameter(s) {sorted(extra)} for model {self.name!r}", "hamiltonian.params"
      )
    return {k: self.raw[k] for k in self.raw}


def _harmonic(args: _Params):
  d = args.dim(2)
  model = separable_model(
    "harmonic", d,
    kinetic=lambda p: 0.5 * _sq(p),
    grad_kinetic=lambda p: p,
    potential=lambda x: 0.5 * _sq(x),
    grad_potential=lambda x: x,
    params=args.finish(),
  )
  ic = InitialCondition(g=lambda x: 0.5 * _sq(x), grad_g=lambda x: np.array(x, dtype=np.float64))
  return model, ic


def _free_particle(args: _Params):
  d = args.dim(1)
  a = args.vector("velocity", np.ones(d), d)
  model = separable_model(
    "free_particle", d,
    kinetic=lambda p: 0.5 * _sq(p),
    grad_kinetic=lambda p: p,
    potential=lambda x: np.zeros(x.shape[:-1]),
    grad_potential=lambda x: np.zeros_like(x),
    params=args.finish(),
  )
  ic = InitialCondition(
    g=lambda x: np.asarray(x) @ a,
    grad_g=lambda x: np.broadcast_to(a, np.shape(x)).astype(np.float64),
  )
  return model, ic


def _degenerate(args: _Params, model_id: str, d_default: int, tau_default: float,
                freq_default: float):
  d = args.dim(d_default)
  tau = float(args.get("tau", tau_default))
  freq = float(args.get("frequency", freq_default))
  sign = float(args.get("sign", 1.0))
  if sign not in (1.0, -1.0):
    raise ConfigError("sign must be +1 or -1", "hamiltonian.params.sign")
  eta = np.full(d, 1.0 / np.sqrt(d))

  def kinetic(p):
    s = p @ eta
    return 0.5 * s * s + tau * s

  model = separable_model(
    model_id, d,
    kinetic=kinetic,
    grad_kinetic=lambda p: (p @ eta + tau)[..., None] * eta,
    potential=lambda x: np.zeros(x.shape[:-1]),
    grad_potential=lambda x: np.zeros_like(x),
    params=args.finish(),
  )
  ic = InitialCondition(
    g=lambda x: sign * np.cos(freq * (np.asarray(x) @ eta)),
    grad_g=lambda x: (-sign * freq * np.sin(freq * (np.asarray(x) @ eta)))[..., None] * eta,
  )
  return model, ic


def _sinusoidal_potential(args: _Params):
  d = args.dim(30)
  i1 = int(args.get("i1", 9))
  i2 = int(args.get("i2", 19))
  if not (0 <= i1 < d and 0 <= i2 < d) or i1 == i2:
    raise ConfigError(f"need distinct indices in [0, {d}), got {i1}, {i2}", "hamiltonian.params")
  idx = np.array([i1, i2])

  def grad_potential(x):
    out = np.zeros_like(x)
    out[..., idx] = -2.0 * np.sin(2.0 * x[..., idx] + 0.4)
    return out

  def grad_g(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    out[..., idx] = np.cos(x[..., idx] + 0.15)
    return out

  model = separable_model(
    "sinusoidal_potential", d,
    kinetic=lambda p: 0.5 * _sq(p),
    grad_kinetic=lambda p: p,
    potential=lambda x: np.sum(np.cos(2.0 * x[..., idx] + 0.4), axis=-1),
    grad_potential=grad_potential,
    params=args.finish(),
  )
  ic = InitialCondition(
    g=lambda x: np.sum(np.sin(np.asarray(x)[..., idx] + 0.15), axis=-1),
    grad_g=grad_g,
  )
  return model, ic


def _nonseparable_quartic(args: _Params):
  d = args.dim(10)
  model = HamiltonianModel(
    id="nonseparable_quartic",
    dim=d,
    structure=Structure.GENERAL,
    energy=lambda x, p: 0.5 * (_sq(x) + 1.0) * (_sq(p) + 1.0),
    dx=lambda x, p: x * (_sq(p) + 1.0)[..., None],
    dp=lambda x, p: p * (_sq(x) + 1.0)[..., None],
    params=args.finish(),
  )
  ic = InitialCondition(
    g=lambda x: np.zeros(np.shape(x)[:-1]),
    grad_g=lambda x: np.zeros(np.shape(x)),
  )
  return model, ic


def _radius(x: np.ndarray) -> np.ndarray:
  r = np.sqrt(_sq(x))
  if np.any(r < KEPLER_MIN_RADIUS):
    raise SingularStateError(f"Kepler state within {KEPLER_MIN_RADIUS} of the origin")
  return r


def _kepler(args: _Params):
  d = args.dim(2)
  if d != 2:
    raise ConfigError("kepler is planar, d must be 2", "hamiltonian.params.d")
  v = args.vector("velocity", [0.5, 0.0], d)
  model = separable_model(
    "kepler", d,
    kinetic=lambda p: 0.5 * _sq(p),
    grad_kinetic=lambda p: p,
    potential=lambda x: -1.0 / _radius(x),
    grad_potential=lambda x: x / (_radius(x) ** 3)[..., None],
    params=args.finish(),
  )
  ic = InitialCondition(
    g=lambda x: np.asarray(x) @ v,
    grad_g=lambda x: np.broadcast_to(v, np.shape(x)).astype(np.float64),
  )
  return model, ic


def lqc_system_from_params(params: Optional[Dict[str, Any]]) -> LqcSystem:
  params = params or {}
  return pendulum_system(
    cart_mass=float(params.get("cart_mass", 1.0)),
    bob_mass=float(params.get("bob_mass", 0.1)),
    length=float(params.get("length", 1.0)),
    gravity=float(params.get("gravity", 9.8)),
    r=float(params.get("R", 1.0)),
  )


def _lqc_pendulum(args: _Params):
  d = args.dim(4)
  if d != 4:
    raise ConfigError("lqc_pendulum state is (x, x', zeta, zeta'), d must be 4",
                      "hamiltonian.params.d")
  for key in ("cart_mass", "bob_mass", "length", "gravity", "R"):
    args.get(key, None)
  params = args.finish()
  system = lqc_system_from_params(params)
  if min(system.A[1, 2], system.R[0, 0], system.A[3, 2]) <= 0:
    raise ConfigError("pendulum constants must be positive", "hamiltonian.params")
  P1 = system.P1
  ic = InitialCondition(
    g=lambda x: 0.5 * np.sum(np.asarray(x) * (np.asarray(x) @ P1.T), axis=-1),
    grad_g=lambda x: np.asarray(x, dtype=np.float64) @ P1.T,
  )
  return lqc_model(system, "lqc_pendulum", params), ic


BUILTIN_MODELS = {
  "harmonic": _harmonic,
  "degenerate_kinetic": lambda a: _degenerate(a, "degenerate_kinetic", 20, 3.0, np.sqrt(3.0)),
  "caustic_cos": lambda a: _degenerate(a, "caustic_cos", 2, 0.0, 1.0),
  "sinusoidal_potential": _sinusoidal_potential,
  "nonseparable_quartic": _nonseparable_quartic,
  "kepler": _kepler,
  "lqc_pendulum": _lqc_pendulum,
  "free_particle": _free_particle,
}


def make_builtin_model(
  name: str, params: Optional[Dict[str, Any]] = None
) -> Tuple[HamiltonianModel, InitialCondition]:
  builder = BUILTIN_MODELS.get(name)
  if builder is None:
    raise ConfigError(
      f"unknown model {name!r}; choose one of {sorted(BUILTIN_MODELS)}", "hamiltonian.name"
    )
  model, ic = builder(_Params(name, params))
  logger.debug("Built model %s (d=%d, %s)", model.id, model.dim, model.structure.value)
  return model, ic
