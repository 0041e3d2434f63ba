import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from interfaces.IConfig import NetworkBlock, TrainPlan
from services.field_net import (
  PiecewiseField,
  flatten,
  init_he,
  loss_value_and_param_grad,
  unflatten,
)
from services.hamiltonians import HamiltonianModel
from services.integrators import TrajectoryBundle
from services.sampling import make_rng
from utils.errors import ConfigError, TrainingDivergedError

logger = logging.getLogger(__name__)

# (subinterval, iteration, loss)
HistoryRow = Tuple[int, int, float]


@dataclass
class AdamState:
  m: np.ndarray
  v: np.ndarray
  step: int = 0

  @classmethod
  def fresh(cls, size: int) -> "AdamState":
    return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(
  state: AdamState, params: np.ndarray, grad: np.ndarray, plan: TrainPlan
) -> Tuple[AdamState, np.ndarray]:
  if params.shape != grad.shape or state.m.shape != grad.shape:
    raise ConfigError(f"Adam shapes disagree: {params.shape}, {grad.shape}, {state.m.shape}")
  step = state.step + 1
  m = plan.beta1 * state.m + (1.0 - plan.beta1) * grad
  v = plan.beta2 * state.v + (1.0 - plan.beta2) * grad * grad
  m_hat = m / (1.0 - plan.beta1 ** step)
  v_hat = v / (1.0 - plan.beta2 ** step)
  params = params - plan.lr * m_hat / (np.sqrt(v_hat) + plan.eps_adam)
  return AdamState(m, v, step), params


def interval_net_seed(seed: int, interval: int) -> np.random.SeedSequence:
  return np.random.SeedSequence([seed, interval, 0])


def interval_batch_seed(seed: int, interval: int) -> np.random.SeedSequence:
  return np.random.SeedSequence([seed, interval, 1])


def interval_nodes(M: int, M_T: int) -> List[np.ndarray]:
  """Time-node indices trained by each subinterval.

  Subinterval k owns nodes [k*l, (k+1)*l) with l = M / M_T, the last one also
  owns node M. Node 0 is left out unless it is all a subinterval has.
  """
  if M_T < 1 or M % M_T != 0:
    raise ConfigError(f"M_T={M_T} must divide M={M}", "train.M_T")
  span = M // M_T
  groups = []
  for k in range(M_T):
    nodes = np.arange(k * span, (k + 1) * span + (1 if k == M_T - 1 else 0))
    trimmed = nodes[nodes > 0]
    groups.append(trimmed if trimmed.size else nodes)
  return groups


def interval_edges(bundle: TrajectoryBundle, M_T: int) -> np.ndarray:
  span = bundle.M // M_T
  return bundle.t0 + (np.arange(M_T + 1) * span) * bundle.h


def train(
  bundle: TrajectoryBundle,
  network: NetworkBlock,
  plan: TrainPlan,
  model: Optional[HamiltonianModel] = None,
  threads: Optional[int] = None,
) -> Tuple[PiecewiseField, List[HistoryRow]]:
  if plan.batch > bundle.N:
    raise ConfigError(f"batch={plan.batch} exceeds N={bundle.N}", "train.batch")
  groups = interval_nodes(bundle.M, plan.M_T)
  edges = interval_edges(bundle, plan.M_T)
  times = bundle.times
  nets, history = [], []

  for k, nodes in enumerate(groups):
    net = init_he(
      bundle.d, network.L, network.width, network.activation,
      seed=interval_net_seed(plan.seed, k), kappa=network.kappa,
    )
    rng = make_rng(interval_batch_seed(plan.seed, k))
    X = bundle.positions[nodes]
    P = bundle.momenta[nodes]
    t_rows = np.repeat(times[nodes], plan.batch)
    theta = flatten(net)
    state = AdamState.fresh(theta.size)
    logger.info(
      "Training subinterval %d/%d on [%g, %g] (%d nodes, %d iterations)",
      k + 1, len(groups), edges[k], edges[k + 1], len(nodes), plan.n_iter,
    )

    for it in range(plan.n_iter):
      batch = rng.permutation(bundle.N)[:plan.batch]
      xb = X[:, batch].reshape(-1, bundle.d)
      pb = P[:, batch].reshape(-1, bundle.d)
      value, grad = loss_value_and_param_grad(
        unflatten(net, theta), xb, t_rows, pb, plan.loss_kind, model, threads
      )
      if not np.isfinite(value):
        logger.error("Loss diverged at iteration %d of subinterval %d", it, k)
        raise TrainingDivergedError(it, k)
      history.append((k, it, value))
      if it % plan.log_every == 0:
        logger.debug("subinterval %d iter %d loss %.6e", k, it, value)
      state, theta = adam_step(state, theta, grad, plan)

    nets.append(unflatten(net, theta))
    if history and history[-1][0] == k:
      logger.info("Subinterval %d done, last loss %.6e", k, history[-1][2])

  return PiecewiseField(edges, nets), history
