"""Reported quantities: residuals, errors against oracles, per-node loss curves,
energy conservation and the sample-size study."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from interfaces.IConfig import ExperimentConfig, GridSpec
from services.hamiltonians import HamiltonianModel, InitialCondition, make_builtin_model
from services.integrators import TrajectoryBundle, generate_trajectories
from services.reference_solutions import (
  caustic_endpoint,
  oracle_gradient,
  oracle_is_pole,
  weighted_momentum,
)
from services.training import interval_nodes, train
from utils.errors import ConfigError, OraclePoleError
from utils.parallel import map_chunks

logger = logging.getLogger(__name__)

# held-out evaluation trajectories never reuse a training seed
EVAL_SEED_OFFSET = 1_000_003


def _rows(x) -> np.ndarray:
  return np.atleast_2d(np.asarray(x, dtype=np.float64))


def residual(field, model: HamiltonianModel, x, t, threads: Optional[int] = None) -> np.ndarray:
  """|d/dt grad psi + Hess psi . dH/dp(x, grad psi) + dH/dx(x, grad psi)| per point."""
  X = _rows(x)

  def chunk(rows: slice) -> np.ndarray:
    xs = X[rows]
    G = field.grad_x(xs, t)
    dt_grad, hess = field.second_derivatives(xs, t)
    vec = dt_grad + np.einsum("bij,bj->bi", hess, model.grad_p(xs, G)) + model.grad_x(xs, G)
    return np.linalg.norm(vec, axis=1)

  return np.concatenate(map_chunks(chunk, X.shape[0], threads))


def error_field(field, oracle_grad: Callable, x, t) -> np.ndarray:
  X = _rows(x)
  return np.linalg.norm(field.grad_x(X, t) - oracle_grad(X, t), axis=1)


@dataclass
class LossCurves:
  times: np.ndarray
  eps: np.ndarray
  delta: np.ndarray
  mse: np.ndarray


def node_errors(field, bundle: TrajectoryBundle, i: int) -> np.ndarray:
  """e_i^(k) = grad psi(x_i^(k), t_i) - p_i^(k)."""
  return field.grad_x(bundle.positions[i], bundle.time(i)) - bundle.momenta[i]


def loss_curves(field, bundle: TrajectoryBundle) -> LossCurves:
  """Per-node eps (mean |e|), delta (mean |e_{i+1} - e_i| / h) and mse (mean |e|^2).

  delta has no forward difference at the last node and repeats the previous value.
  """
  M = bundle.M
  eps, mse, delta = np.empty(M + 1), np.empty(M + 1), np.empty(M + 1)
  prev = node_errors(field, bundle, 0)
  for i in range(M + 1):
    e = prev
    norms = np.linalg.norm(e, axis=1)
    eps[i] = norms.mean()
    mse[i] = np.mean(norms * norms)
    if i < M:
      prev = node_errors(field, bundle, i + 1)
      delta[i] = np.mean(np.linalg.norm(prev - e, axis=1)) / bundle.h
  delta[M] = delta[M - 1]
  return LossCurves(bundle.times, eps, delta, mse)


def weighted_L1_residual(
  field, model: HamiltonianModel, bundle: TrajectoryBundle, i: int,
  particles: Optional[int] = None, threads: Optional[int] = None,
) -> float:
  x = bundle.positions[i][:particles]
  return float(np.mean(residual(field, model, x, bundle.time(i), threads)))


def energy_curve(model: HamiltonianModel, bundle: TrajectoryBundle, field=None) -> np.ndarray:
  """Mean H per node: H(x, p) over the bundle, or H(x, grad psi) when a field is given."""
  out = np.empty(bundle.M + 1)
  for i in range(bundle.M + 1):
    x = bundle.positions[i]
    p = bundle.momenta[i] if field is None else field.grad_x(x, bundle.time(i))
    out[i] = np.mean(model.eval(x, p))
  return out


def subinterval_loss_totals(eps: np.ndarray, M_T: int) -> np.ndarray:
  M = len(eps) - 1
  return np.array([eps[nodes].sum() for nodes in interval_nodes(M, M_T)])


@dataclass
class DiagnosticsReport:
  times: np.ndarray
  eps: np.ndarray
  delta: np.ndarray
  mse: np.ndarray
  l1_residual: np.ndarray
  energy: np.ndarray
  energy_drift: np.ndarray
  residual_grid: List[Tuple] = field(default_factory=list)
  error_grid: List[Tuple] = field(default_factory=list)
  metadata: Dict[str, object] = field(default_factory=dict)

  def curve_rows(self) -> List[Tuple]:
    return list(zip(
      self.times, self.eps, self.delta, self.mse, self.l1_residual, self.energy, self.energy_drift
    ))


def build_report(
  field, model: HamiltonianModel, bundle: TrajectoryBundle,
  residual_particles: Optional[int] = None, threads: Optional[int] = None,
  metadata: Optional[dict] = None,
) -> DiagnosticsReport:
  curves = loss_curves(field, bundle)
  if field_is_smooth(field):
    l1 = np.array([
      weighted_L1_residual(field, model, bundle, i, residual_particles, threads)
      for i in range(bundle.M + 1)
    ])
  else:
    logger.warning("Skipping residuals: %s activation has no second derivative", field.activation)
    l1 = np.full(bundle.M + 1, np.nan)
  energy = energy_curve(model, bundle, field)
  return DiagnosticsReport(
    times=curves.times, eps=curves.eps, delta=curves.delta, mse=curves.mse,
    l1_residual=l1, energy=energy, energy_drift=np.abs(energy - energy[0]),
    metadata=dict(metadata or {}),
  )


def field_is_smooth(field) -> bool:
  return getattr(field, "activation", "analytic") != "relu"


# ---- grids on a coordinate plane ----

def plane_points(grid: GridSpec, anchor: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
  """n x n points on the grid plane, other coordinates frozen at anchor."""
  i, j = grid.plane
  if max(i, j) >= anchor.size:
    raise ConfigError(f"plane {grid.plane} outside dimension {anchor.size}", "eval.grid.plane")
  u = np.linspace(grid.lo[0], grid.hi[0], grid.n)
  v = np.linspace(grid.lo[1], grid.hi[1], grid.n)
  U, V = np.meshgrid(u, v, indexing="ij")
  points = np.tile(anchor, (U.size, 1))
  points[:, i] = U.ravel()
  points[:, j] = V.ravel()
  return U.ravel(), V.ravel(), points


def residual_grid(
  field, model: HamiltonianModel, grid: GridSpec, anchor, times: Sequence[float],
  threads: Optional[int] = None,
) -> List[Tuple[float, float, float, float]]:
  u, v, points = plane_points(grid, np.asarray(anchor, dtype=np.float64))
  rows = []
  for t in times:
    res = residual(field, model, points, t, threads)
    rows += list(zip(u, v, np.full(u.size, t), res))
  return rows


def error_grid(
  field, oracle_name: str, oracle_grad: Callable, grid: GridSpec, anchor, times: Sequence[float],
) -> List[Tuple]:
  """Rows (x1, x2, t, err, flag); flag is "pole" where the oracle is singular."""
  u, v, points = plane_points(grid, np.asarray(anchor, dtype=np.float64))
  rows = []
  for t in times:
    if oracle_is_pole(oracle_name, t):
      logger.warning("Oracle %s has a pole at t=%g, flagging grid rows", oracle_name, t)
      rows += [(a, b, t, None, "pole") for a, b in zip(u, v)]
      continue
    try:
      err = error_field(field, oracle_grad, points, t)
    except OraclePoleError:
      rows += [(a, b, t, None, "pole") for a, b in zip(u, v)]
      continue
    rows += [(a, b, t, e, "ok") for a, b, e in zip(u, v, err)]
  return rows


def cloud_contrast(
  field, model: HamiltonianModel, bundle: TrajectoryBundle, i: int, grid: GridSpec,
  threads: Optional[int] = None,
) -> Tuple[float, float]:
  """(mean residual over the particles at node i, mean residual on grid points
  outside the cloud's mean +/- 2 sigma box on the grid plane)."""
  x = bundle.positions[i]
  mean, std = x.mean(axis=0), x.std(axis=0)
  inside = float(np.mean(residual(field, model, x, bundle.time(i), threads)))
  u, v, points = plane_points(grid, mean)
  a, b = grid.plane
  in_box = (np.abs(u - mean[a]) <= 2.0 * std[a]) & (np.abs(v - mean[b]) <= 2.0 * std[b])
  if in_box.all():
    raise ConfigError("grid lies entirely inside the particle cloud", "eval.grid")
  outside = float(np.mean(residual(field, model, points[~in_box], bundle.time(i), threads)))
  return inside, outside


def diagonal_momentum_error(
  field, t: float, z_grid, exclude: float = 0.2, variant: str = "cos_initial"
) -> float:
  """Mean |eta . grad psi(z eta, t) - weighted momentum(z)| away from the jumps at +/- z*_t."""
  z = np.asarray(z_grid, dtype=np.float64)
  eta = np.full(field.d, 1.0 / np.sqrt(field.d))
  keep = np.ones(z.size, dtype=bool)
  z_star = caustic_endpoint(t) if variant == "cos_initial" else None
  if z_star is not None:
    keep &= (np.abs(z - z_star) > exclude) & (np.abs(z + z_star) > exclude)
  z = z[keep]
  learned = field.grad_x(z[:, None] * eta, t) @ eta
  return float(np.mean(np.abs(learned - weighted_momentum(t, z, variant))))


def diagonal_rows(field, t: float, z_grid, variant: str = "cos_initial") -> List[Tuple]:
  """(z, t, oracle value, network value) along the diagonal line."""
  z = np.asarray(z_grid, dtype=np.float64)
  eta = np.full(field.d, 1.0 / np.sqrt(field.d))
  learned = field.grad_x(z[:, None] * eta, t) @ eta
  exact = weighted_momentum(t, z, variant)
  return list(zip(z, np.full(z.size, t), exact, learned))


# ---- studies ----

def _problem(config: ExperimentConfig) -> Tuple[HamiltonianModel, InitialCondition]:
  return make_builtin_model(config.hamiltonian.name, config.hamiltonian.params)


def node_index(bundle: TrajectoryBundle, t: float) -> int:
  i = int(round((t - bundle.t0) / bundle.h))
  if not 0 <= i <= bundle.M or abs(bundle.time(i) - t) > 1e-9 * max(1.0, abs(t)):
    raise ConfigError(f"t={t} is not a time node of the trajectory grid (h={bundle.h})", "eval.times")
  return i


def node_mean(bundle: TrajectoryBundle, t: float) -> np.ndarray:
  """Cloud mean at the time node nearest t (clamped to the trajectory span)."""
  i = min(max(int(round((t - bundle.t0) / bundle.h)), 0), bundle.M)
  return bundle.positions[i].mean(axis=0)


def l2_error(field, oracle_grad: Callable, bundle: TrajectoryBundle, t: float) -> float:
  """Monte Carlo estimate of ||grad psi - grad u||^2 in L2(rho_t)."""
  i = node_index(bundle, t)
  err = error_field(field, oracle_grad, bundle.positions[i], t)
  return float(np.mean(err * err))


def evaluation_bundle(config: ExperimentConfig, model, ic, size: int, threads=None) -> TrajectoryBundle:
  traj = config.trajectory
  return generate_trajectories(
    model, ic, config.rho0, traj.integrator, size, traj.M, traj.T,
    traj.seed + EVAL_SEED_OFFSET, traj.omega, threads=threads,
  )


def error_vs_n_study(
  config: ExperimentConfig,
  n_list: Sequence[int],
  seeds: Sequence[int],
  eval_sample_size: int,
  times: Optional[Sequence[float]] = None,
  threads: Optional[int] = None,
) -> Tuple[List[Tuple], List[Tuple]]:
  """Train once per (N, seed) and measure the L2(rho_t) gradient error.

  Returns (rows of (N, seed, t, error), summary rows of (N, t, median, q25, q75)).
  """
  if config.eval.oracle is None:
    raise ConfigError("error study needs an oracle", "eval.oracle")
  model, ic = _problem(config)
  oracle = oracle_gradient(config.eval.oracle, model.dim, config.hamiltonian.params)
  times = list(times or config.eval.times or [config.trajectory.T])
  held_out = evaluation_bundle(config, model, ic, eval_sample_size, threads)
  traj = config.trajectory
  rows = []
  for N in n_list:
    plan = config.train.model_copy(update={"batch": min(config.train.batch, N)})
    for seed in seeds:
      logger.info("Study run N=%d seed=%d", N, seed)
      bundle = generate_trajectories(
        model, ic, config.rho0, traj.integrator, N, traj.M, traj.T, seed, traj.omega,
        threads=threads,
      )
      field_, _ = train(bundle, config.network, plan.model_copy(update={"seed": seed}), model, threads)
      for t in times:
        rows.append((N, seed, t, l2_error(field_, oracle, held_out, t)))
  return rows, summarize_study(rows)


def summarize_study(rows: Sequence[Tuple]) -> List[Tuple]:
  summary = []
  keys = sorted({(r[0], r[2]) for r in rows})
  for N, t in keys:
    errs = np.array([r[3] for r in rows if r[0] == N and r[2] == t])
    q25, median, q75 = np.percentile(errs, [25, 50, 75])
    summary.append((N, t, median, q25, q75))
  return summary


def activation_comparison(
  config: ExperimentConfig,
  activations: Sequence[str],
  times: Sequence[float],
  threads: Optional[int] = None,
) -> List[Tuple[str, float, float]]:
  """Train the same caustic problem per activation; rows (activation, t, diagonal error)."""
  if config.eval.oracle not in ("caustic_cos", "caustic_cos_neg"):
    raise ConfigError("activation comparison needs a caustic oracle", "eval.oracle")
  variant = "cos_initial" if config.eval.oracle == "caustic_cos" else "neg_cos_initial"
  model, ic = _problem(config)
  traj = config.trajectory
  bundle = generate_trajectories(
    model, ic, config.rho0, traj.integrator, traj.N, traj.M, traj.T, traj.seed, traj.omega,
    threads=threads,
  )
  z_grid = np.linspace(-np.pi, np.pi, config.eval.diagonal_points)
  rows = []
  for activation in activations:
    network = config.network.model_copy(update={"activation": activation})
    field_, _ = train(bundle, network, config.train, model, threads)
    for t in times:
      rows.append((activation, t, diagonal_momentum_error(
        field_, t, z_grid, config.eval.exclude_radius, variant
      )))
  return rows


def integrator_energy_comparison(
  model: HamiltonianModel,
  ic: InitialCondition,
  sampler_spec,
  integrator_ids: Sequence[str],
  N: int,
  M: int,
  T: float,
  seed: int,
  omega: float = 10.0,
  threads: Optional[int] = None,
) -> Dict[str, Tuple[np.ndarray, float]]:
  """Mean-H curve and max |H(t) - H(0)| per integrator on a shared ensemble."""
  out = {}
  for integrator_id in integrator_ids:
    bundle = generate_trajectories(
      model, ic, sampler_spec, integrator_id, N, M, T, seed, omega, threads=threads
    )
    curve = energy_curve(model, bundle)
    out[integrator_id] = (curve, float(np.max(np.abs(curve - curve[0]))))
  return out
