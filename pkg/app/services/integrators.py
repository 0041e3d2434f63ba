"""One-step maps for x' = dH/dp, p' = -dH/dx and trajectory generation.

Steps are vectorized over particles: x and p are (n, d) arrays and every
particle is advanced independently.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg as la

from services.hamiltonians import HamiltonianModel, InitialCondition, Structure
from services.sampling import draw
from utils.errors import ConfigError, IntegrationError
from utils.parallel import map_chunks

logger = logging.getLogger(__name__)

INTEGRATOR_IDS = ("stormer_verlet", "tao", "linear_flow", "euler", "rk4")

Pair = Tuple[np.ndarray, np.ndarray]


@dataclass
class TrajectoryBundle:
  d: int
  N: int
  M: int
  h: float
  t0: float
  states: np.ndarray
  model_id: str
  integrator_id: str
  seed: int

  def __post_init__(self):
    expected = (self.M + 1, self.N, 2 * self.d)
    if self.states.shape != expected:
      raise ConfigError(f"states have shape {self.states.shape}, expected {expected}")

  @property
  def T(self) -> float:
    return self.t0 + self.M * self.h

  @property
  def times(self) -> np.ndarray:
    return self.t0 + np.arange(self.M + 1) * self.h

  def time(self, i: int) -> float:
    return self.t0 + i * self.h

  @property
  def positions(self) -> np.ndarray:
    return self.states[..., :self.d]

  @property
  def momenta(self) -> np.ndarray:
    return self.states[..., self.d:]


def _require(model: HamiltonianModel, structure: Structure, integrator_id: str):
  if model.structure != structure:
    raise ConfigError(
      f"{integrator_id} needs a {structure.value} model, {model.id!r} is {model.structure.value}",
      "trajectory.integrator",
    )


def stormer_verlet_step(model: HamiltonianModel, x, p, h: float) -> Pair:
  _require(model, Structure.SEPARABLE, "stormer_verlet")
  x = np.asarray(x, dtype=np.float64)
  p = np.asarray(p, dtype=np.float64)
  p_half = p - 0.5 * h * model.grad_potential(x)
  x_new = x + h * model.grad_kinetic(p_half)
  p_new = p_half - 0.5 * h * model.grad_potential(x_new)
  return x_new, p_new


# ---- Tao's extended phase space: copies (q, p) and (x, y) bound by omega ----

def _tao_a(model, q, p, x, y, delta):
  return q, p - delta * model.grad_x(q, y), x + delta * model.grad_p(q, y), y


def _tao_b(model, q, p, x, y, delta):
  return q + delta * model.grad_p(x, p), p, x, y - delta * model.grad_x(x, p)


def _tao_c(q, p, x, y, delta, omega):
  c, s = np.cos(2.0 * omega * delta), np.sin(2.0 * omega * delta)
  u, v = q - x, p - y
  u_rot = u * c + v * s
  v_rot = -u * s + v * c
  q_sum, p_sum = q + x, p + y
  return 0.5 * (q_sum + u_rot), 0.5 * (p_sum + v_rot), 0.5 * (q_sum - u_rot), 0.5 * (p_sum - v_rot)


def tao_extended_step(model: HamiltonianModel, q, p, x, y, h: float, omega: float):
  half = 0.5 * h
  state = _tao_a(model, q, p, x, y, half)
  state = _tao_b(model, *state, half)
  state = _tao_c(*state, h, omega)
  state = _tao_b(model, *state, half)
  return _tao_a(model, *state, half)


def tao_step(model: HamiltonianModel, x, p, h: float, omega: float = 10.0) -> Pair:
  x = np.asarray(x, dtype=np.float64)
  p = np.asarray(p, dtype=np.float64)
  q_new, p_new, _, _ = tao_extended_step(model, x, p, x, p, h, omega)
  return q_new, p_new


@lru_cache(maxsize=32)
def _propagator(matrix_bytes: bytes, n: int, h: float) -> np.ndarray:
  A_sys = np.frombuffer(matrix_bytes, dtype=np.float64).reshape(n, n)
  return la.expm(h * A_sys)


def linear_propagator(A_sys, h: float) -> np.ndarray:
  A_sys = np.ascontiguousarray(A_sys, dtype=np.float64)
  if A_sys.ndim != 2 or A_sys.shape[0] != A_sys.shape[1]:
    raise ConfigError(f"system matrix must be square, got shape {A_sys.shape}")
  return _propagator(A_sys.tobytes(), A_sys.shape[0], float(h))


def linear_flow_step(A_sys, z, h: float) -> np.ndarray:
  """exp(h·A_sys) z, for a single state or a batch of row states."""
  return np.asarray(z, dtype=np.float64) @ linear_propagator(A_sys, h).T


def euler_step(model: HamiltonianModel, x, p, h: float) -> Pair:
  return x + h * model.grad_p(x, p), p - h * model.grad_x(x, p)


def rk4_step(model: HamiltonianModel, x, p, h: float) -> Pair:
  def field(xs, ps):
    return model.grad_p(xs, ps), -model.grad_x(xs, ps)

  k1x, k1p = field(x, p)
  k2x, k2p = field(x + 0.5 * h * k1x, p + 0.5 * h * k1p)
  k3x, k3p = field(x + 0.5 * h * k2x, p + 0.5 * h * k2p)
  k4x, k4p = field(x + h * k3x, p + h * k3p)
  return (
    x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
    p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
  )


def make_stepper(
  model: HamiltonianModel, integrator_id: str, h: float, omega: float = 10.0
) -> Callable[[np.ndarray, np.ndarray], Pair]:
  if integrator_id == "stormer_verlet":
    _require(model, Structure.SEPARABLE, integrator_id)
    return lambda x, p: stormer_verlet_step(model, x, p, h)
  if integrator_id == "tao":
    return lambda x, p: tao_step(model, x, p, h, omega)
  if integrator_id == "linear_flow":
    _require(model, Structure.LINEAR, integrator_id)
    E = linear_propagator(model.system_matrix, h)
    d = model.dim

    def step(x, p):
      z = np.concatenate([x, p], axis=-1) @ E.T
      return z[..., :d], z[..., d:]

    return step
  if integrator_id == "euler":
    return lambda x, p: euler_step(model, x, p, h)
  if integrator_id == "rk4":
    return lambda x, p: rk4_step(model, x, p, h)
  raise ConfigError(f"unknown integrator {integrator_id!r}", "trajectory.integrator")


def integrate(
  model: HamiltonianModel,
  x0: np.ndarray,
  p0: np.ndarray,
  integrator_id: str,
  M: int,
  h: float,
  omega: float = 10.0,
  threads: Optional[int] = None,
) -> np.ndarray:
  """(M+1, n, 2d) states starting from (x0, p0)."""
  step = make_stepper(model, integrator_id, h, omega)
  d = model.dim

  def run(chunk: slice) -> np.ndarray:
    x, p = x0[chunk], p0[chunk]
    out = np.empty((M + 1, x.shape[0], 2 * d))
    out[0, :, :d], out[0, :, d:] = x, p
    for i in range(M):
      x, p = step(x, p)
      out[i + 1, :, :d], out[i + 1, :, d:] = x, p
      bad = ~np.isfinite(out[i + 1]).all(axis=1)
      if bad.any():
        raise IntegrationError(i + 1, chunk.start + int(np.argmax(bad)), integrator_id)
    return out

  return np.concatenate(map_chunks(run, x0.shape[0], threads), axis=1)


def generate_trajectories(
  model: HamiltonianModel,
  ic: InitialCondition,
  sampler_spec,
  integrator_id: str,
  N: int,
  M: int,
  T: float,
  seed: int,
  omega: float = 10.0,
  t0: float = 0.0,
  threads: Optional[int] = None,
  initial_positions: Optional[np.ndarray] = None,
) -> TrajectoryBundle:
  if N < 1 or M < 1:
    raise ConfigError(f"need N >= 1 and M >= 1, got N={N}, M={M}", "trajectory")
  if not T > 0:
    raise ConfigError(f"horizon must be positive, got T={T}", "trajectory.T")
  if initial_positions is None:
    x0 = draw(sampler_spec, N, seed)
  else:
    x0 = np.array(initial_positions, dtype=np.float64).reshape(N, -1)
  if x0.shape[1] != model.dim:
    raise ConfigError(
      f"rho0 has dimension {x0.shape[1]} but model {model.id!r} has {model.dim}", "rho0"
    )
  h = T / M
  p0 = np.asarray(ic.grad_g(x0), dtype=np.float64)
  logger.info("Integrating %d particles over %d steps (h=%g) with %s", N, M, h, integrator_id)
  states = integrate(model, x0, p0, integrator_id, M, h, omega, threads)
  return TrajectoryBundle(
    d=model.dim, N=N, M=M, h=h, t0=t0, states=states,
    model_id=model.id, integrator_id=integrator_id, seed=seed,
  )
