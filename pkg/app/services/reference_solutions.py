"""Analytic and semi-analytic reference solutions used to measure errors."""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import optimize
from scipy.integrate import cumulative_trapezoid

from services.field_net import central_second_derivatives
from services.hamiltonians import LqcSystem, lqc_system_from_params
from services.integrators import linear_propagator
from services.sampling import make_rng
from utils.errors import ConfigError, OraclePoleError

logger = logging.getLogger(__name__)

BRACKET_POINTS = 4096
DEGENERATE_JACOBIAN = 1e-10
POLE_TOLERANCE = 1e-12
SQRT3 = np.sqrt(3.0)


# ---- harmonic oscillator: u(x, t) = cot(t + pi/4) |x|^2 / 2 ----

def _cot(t) -> np.ndarray:
  s = np.sin(np.asarray(t, dtype=np.float64) + np.pi / 4)
  if np.any(np.abs(s) < POLE_TOLERANCE):
    raise OraclePoleError(f"harmonic solution has a pole at t={t}")
  return np.cos(np.asarray(t, dtype=np.float64) + np.pi / 4) / s


def harmonic_exact_grad(x, t) -> np.ndarray:
  x = np.asarray(x, dtype=np.float64)
  c = _cot(t)
  return (c[..., None] if np.ndim(c) else c) * x


def harmonic_exact_value(x, t) -> np.ndarray:
  x = np.asarray(x, dtype=np.float64)
  return 0.5 * _cot(t) * np.sum(x * x, axis=-1)


def harmonic_is_pole(t: float) -> bool:
  return abs(np.sin(t + np.pi / 4)) < POLE_TOLERANCE


class HarmonicExactField:
  """Closed-form harmonic solution behind the same interface as a trained field."""
  activation = "analytic"

  def __init__(self, d: int):
    self.d = d

  def value(self, x, t):
    return harmonic_exact_value(x, t)

  def grad_x(self, x, t):
    return harmonic_exact_grad(x, t)

  def grad_xt(self, x, t):
    x = np.asarray(x, dtype=np.float64)
    csc2 = 1.0 + _cot(t) ** 2
    return harmonic_exact_grad(x, t), -0.5 * csc2 * np.sum(x * x, axis=-1)

  def second_derivatives(self, x, t):
    x = np.asarray(x, dtype=np.float64)
    c = _cot(t)
    csc2 = 1.0 + c ** 2
    csc2 = csc2[..., None] if np.ndim(csc2) else csc2
    eye = np.eye(self.d)
    hess = np.broadcast_to(eye * (c[..., None, None] if np.ndim(c) else c), x.shape + (self.d,))
    return -csc2 * x, np.array(hess)


class FiniteDifferenceField:
  """Wraps a gradient oracle; second derivatives come from central differences."""
  activation = "analytic"

  def __init__(self, grad_fn: Callable, d: int):
    self._grad = grad_fn
    self.d = d

  def grad_x(self, x, t):
    return self._grad(x, t)

  def second_derivatives(self, x, t):
    return central_second_derivatives(self._grad, x, t, self.d)


# ---- one-dimensional characteristic maps along the diagonal ----

@dataclass(frozen=True)
class CharacteristicMap:
  """z = phi_t(xi) for a 1D reduction, with the momentum carried by xi."""
  name: str
  phi: Callable[[np.ndarray, float], np.ndarray]
  dphi: Callable[[np.ndarray, float], np.ndarray]
  momentum: Callable[[np.ndarray], np.ndarray]
  drift: float
  amplitude: float
  support: Optional[tuple]

  def window(self, t: float, z: float):
    if self.support is not None:
      return self.support[0] - self.amplitude * t, self.support[1] + self.amplitude * t
    centre = z - self.drift * t
    reach = self.amplitude * t + 1.0
    return centre - reach, centre + reach


def sinusoidal_kinetic_map(tau: float = 3.0) -> CharacteristicMap:
  return CharacteristicMap(
    name="sinusoidal_kinetic",
    phi=lambda xi, t: xi + t * (tau - SQRT3 * np.sin(SQRT3 * xi)),
    dphi=lambda xi, t: 1.0 - 3.0 * t * np.cos(SQRT3 * xi),
    momentum=lambda xi: -SQRT3 * np.sin(SQRT3 * xi),
    drift=tau,
    amplitude=SQRT3,
    support=None,
  )


CHARACTERISTIC_MAPS: Dict[str, CharacteristicMap] = {
  # g = cos(eta.x): characteristics converge on the origin, caustic at t = 1
  "cos_initial": CharacteristicMap(
    name="cos_initial",
    phi=lambda xi, t: xi - t * np.sin(xi),
    dphi=lambda xi, t: 1.0 - t * np.cos(xi),
    momentum=lambda xi: -np.sin(xi),
    drift=0.0,
    amplitude=np.pi,
    support=(-np.pi, np.pi),
  ),
  # g = -cos(eta.x): classical inside [-pi, pi] for all t
  "neg_cos_initial": CharacteristicMap(
    name="neg_cos_initial",
    phi=lambda xi, t: xi + t * np.sin(xi),
    dphi=lambda xi, t: 1.0 + t * np.cos(xi),
    momentum=lambda xi: np.sin(xi),
    drift=0.0,
    amplitude=np.pi,
    support=(-np.pi, np.pi),
  ),
  "sinusoidal_kinetic": sinusoidal_kinetic_map(),
}


def characteristic_map(variant) -> CharacteristicMap:
  if isinstance(variant, CharacteristicMap):
    return variant
  try:
    return CHARACTERISTIC_MAPS[variant]
  except KeyError:
    raise ConfigError(f"unknown characteristic variant {variant!r}")


@dataclass
class BranchSet:
  z: float
  t: float
  roots: np.ndarray
  jacobians: np.ndarray
  degenerate: np.ndarray


def _critical_points(cmap: CharacteristicMap, t: float, grid: np.ndarray) -> List[float]:
  d = cmap.dphi(grid, t)
  return [
    optimize.brentq(lambda xi: cmap.dphi(xi, t), grid[i], grid[i + 1], xtol=1e-15, maxiter=200)
    for i in np.nonzero(d[:-1] * d[1:] < 0.0)[0]
  ]


def invert_phi(t: float, z: float, variant="cos_initial") -> BranchSet:
  """All xi with phi_t(xi) = z.

  The uniform grid is split at the critical points of phi_t so every cell is monotone;
  each sign change then holds exactly one root, including the close pair near a fold.
  """
  cmap = characteristic_map(variant)
  lo, hi = cmap.window(t, z)
  grid = np.linspace(lo, hi, BRACKET_POINTS)
  edges = np.unique(np.concatenate([grid, _critical_points(cmap, t, grid)]))
  f = cmap.phi(edges, t) - z
  roots: List[float] = list(edges[f == 0.0])
  for i in np.nonzero(f[:-1] * f[1:] < 0.0)[0]:
    roots.append(optimize.brentq(
      lambda xi: cmap.phi(xi, t) - z, edges[i], edges[i + 1], xtol=1e-14, maxiter=200
    ))
  roots = np.array(sorted(roots))
  if cmap.support is not None and roots.size:
    lo_s, hi_s = cmap.support
    roots = np.clip(roots[(roots >= lo_s - 1e-12) & (roots <= hi_s + 1e-12)], lo_s, hi_s)
  jac = np.abs(cmap.dphi(roots, t))
  return BranchSet(z=z, t=t, roots=roots, jacobians=jac, degenerate=jac < DEGENERATE_JACOBIAN)


def caustic_endpoint(t: float) -> Optional[float]:
  """z*_t = sqrt(t^2 - 1) - arccos(1/t), where phi_t' vanishes (t > 1 only)."""
  if t <= 1.0:
    return None
  return np.sqrt(t * t - 1.0) - np.arccos(1.0 / t)


def _weighted(t: float, z: float, variant) -> float:
  cmap = characteristic_map(variant)
  if cmap.name == "cos_initial":
    z_star = caustic_endpoint(t)
    if z_star is not None and abs(abs(z) - z_star) <= POLE_TOLERANCE * max(1.0, z_star):
      return float(np.sign(z) * np.sqrt(t * t - 1.0) / t)
  branches = invert_phi(t, z, cmap)
  if branches.roots.size == 0:
    return float("nan")
  momenta = cmap.momentum(branches.roots)
  if branches.degenerate.any():
    return float(np.mean(momenta[branches.degenerate]))
  weights = 1.0 / branches.jacobians
  return float(np.sum(weights * momenta) / np.sum(weights))


def weighted_momentum(t: float, z, variant="cos_initial"):
  """Density-weighted average momentum over all branches landing at z.

  rho0 is uniform on the support, so its constant density cancels in the
  normalization.
  """
  cmap = characteristic_map(variant)
  z_arr = np.asarray(z, dtype=np.float64)
  if cmap.support is not None and np.any(np.abs(z_arr) > np.pi + 1e-12):
    raise ConfigError(f"z must lie in [-pi, pi] for {cmap.name}")
  values = np.array([_weighted(float(t), float(zi), cmap) for zi in z_arr.reshape(-1)])
  return values.reshape(z_arr.shape) if z_arr.ndim else float(values[0])


def sinusoidal_kinetic_exact_grad(z, t: float, tau: float = 3.0):
  """-sqrt(3) sin(sqrt(3) phi_t^{-1}(z)) on the classical branch (t <= 1/3)."""
  cmap = sinusoidal_kinetic_map(tau)
  z_arr = np.asarray(z, dtype=np.float64)
  out = np.empty(z_arr.size)
  for k, zi in enumerate(z_arr.reshape(-1)):
    roots = invert_phi(t, float(zi), cmap).roots
    out[k] = cmap.momentum(roots[0]) if roots.size == 1 else np.nan
  return out.reshape(z_arr.shape) if z_arr.ndim else float(out[0])


def histogram_momentum(xi, t: float, z_centers, bin_width: float, variant="cos_initial"):
  """Particle oracle: push xi through phi_t and average momenta per z-bin."""
  cmap = characteristic_map(variant)
  xi = np.asarray(xi, dtype=np.float64)
  z = cmap.phi(xi, t)
  order = np.argsort(z, kind="stable")
  z_sorted = z[order]
  csum = np.concatenate([[0.0], np.cumsum(cmap.momentum(xi)[order])])
  centers = np.asarray(z_centers, dtype=np.float64)
  lo = np.searchsorted(z_sorted, centers - 0.5 * bin_width, side="left")
  hi = np.searchsorted(z_sorted, centers + 0.5 * bin_width, side="right")
  count = hi - lo
  with np.errstate(invalid="ignore", divide="ignore"):
    return np.where(count > 0, (csum[hi] - csum[lo]) / count, np.nan)


def weak_solution_profile(t: float, z_grid, variant="cos_initial") -> np.ndarray:
  """f(z, t) - f(0, t) by integrating the weighted momentum along z."""
  z_grid = np.asarray(z_grid, dtype=np.float64)
  slope = weighted_momentum(t, z_grid, variant)
  profile = cumulative_trapezoid(slope, z_grid, initial=0.0)
  return profile - np.interp(0.0, z_grid, profile)


# ---- linear-quadratic control ----

@dataclass
class LqcReference:
  times: np.ndarray
  q: np.ndarray
  p: np.ndarray
  control: np.ndarray


def lqc_optimal_reference(system: LqcSystem, q0, T: float, steps: int) -> LqcReference:
  """Exact linear flow from (q0, P1 q0).

  In reversed time q_t = x_{T-t} and p_t = -lambda_{T-t}, so this forward run
  is the Pontryagin-optimal path read backwards; the control along it is
  v = R^-1 B^T p.
  """
  if steps < 1:
    raise ConfigError(f"need at least one step, got {steps}")
  q0 = np.atleast_2d(np.asarray(q0, dtype=np.float64))
  h = T / steps
  E = linear_propagator(system.system_matrix, h)
  d = system.dim
  z = np.empty((steps + 1, q0.shape[0], 2 * d))
  z[0] = np.concatenate([q0, q0 @ system.P1.T], axis=1)
  for i in range(steps):
    z[i + 1] = z[i] @ E.T
  gain = np.linalg.solve(system.R, system.B.T)
  p = z[..., d:]
  return LqcReference(
    times=np.arange(steps + 1) * h, q=z[..., :d], p=p, control=p @ gain.T,
  )


def lqc_costate_gain(system: LqcSystem, t: float) -> np.ndarray:
  """S(t) with p_t = S(t) q_t along every optimal trajectory."""
  d = system.dim
  E = linear_propagator(system.system_matrix, t)
  lift = np.vstack([np.eye(d), system.P1])
  Z = E @ lift
  return np.linalg.solve(Z[:d].T, Z[d:].T).T


def superposition_residual(system: LqcSystem, T: float, steps: int, seed: int = 0) -> float:
  """Fit p_t = S(t) q_t from the 2d states +/- e_j and test it on a random start.

  Returns the largest |p_t - S(t) q_t| of the held-out trajectory over all nodes.
  """
  d = system.dim
  basis = np.vstack([np.eye(d), -np.eye(d)])
  fitted = lqc_optimal_reference(system, basis, T, steps)
  probe = make_rng(seed).uniform(-1.0, 1.0, (1, d))
  held_out = lqc_optimal_reference(system, probe, T, steps)
  worst = 0.0
  for i in range(steps + 1):
    S_T, *_ = np.linalg.lstsq(fitted.q[i], fitted.p[i], rcond=None)
    gap = held_out.p[i] - held_out.q[i] @ S_T
    worst = max(worst, float(np.max(np.abs(gap))))
  return worst


# ---- oracle registry for error measurements ----

def _diagonal(d: int) -> np.ndarray:
  return np.full(d, 1.0 / np.sqrt(d))


def oracle_gradient(name: str, d: int, params: Optional[dict] = None) -> Callable:
  """grad u(x, t) for the named oracle; diagonal oracles use z = eta.x."""
  params = params or {}
  if name == "harmonic":
    return harmonic_exact_grad
  if name == "free_particle":
    a = np.asarray(params.get("velocity", np.ones(d)), dtype=np.float64)
    return lambda x, t: np.broadcast_to(a, np.shape(x)).astype(np.float64)
  if name in ("caustic_cos", "caustic_cos_neg", "sinusoidal_kinetic"):
    eta = _diagonal(d)
    if name == "sinusoidal_kinetic":
      tau = float(params.get("tau", 3.0))
      slope = lambda z, t: sinusoidal_kinetic_exact_grad(z, t, tau)
    else:
      variant = "cos_initial" if name == "caustic_cos" else "neg_cos_initial"
      slope = lambda z, t: weighted_momentum(t, z, variant)

    def grad(x, t):
      z = np.asarray(x, dtype=np.float64) @ eta
      return np.asarray(slope(z, float(t)))[..., None] * eta

    return grad
  if name == "lqc_pendulum":
    system = lqc_system_from_params(params)
    return lambda x, t: np.asarray(x, dtype=np.float64) @ lqc_costate_gain(system, float(t)).T
  raise ConfigError(f"unknown oracle {name!r}", "eval.oracle")


def oracle_is_pole(name: str, t: float) -> bool:
  return name == "harmonic" and harmonic_is_pole(t)
