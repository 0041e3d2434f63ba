"""Residual network psi(x, t) and its exact derivatives.

Layers, with y = (x, t):
  f_1 = s(A_1 y + b_1)
  f_k = s(h + kappa (A_k h + b_k))    2 <= k <= L-1
  f_L = A_L h                         (no bias)

grad_x is the reverse-mode input gradient of that recurrence. The training
loss is a function of grad_x, so its parameter gradient differentiates through
the reverse sweep as well; both passes are written out by hand below.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from services.hamiltonians import HamiltonianModel
from services.sampling import make_rng, standard_normal
from utils.errors import ConfigError
from utils.parallel import map_chunks

logger = logging.getLogger(__name__)

LOSS_KINDS = ("quadratic", "bregman")


def _tanh(a):
  s = np.tanh(a)
  s1 = 1.0 - s * s
  return s, s1, -2.0 * s * s1


def _sin(a):
  s = np.sin(a)
  return s, np.cos(a), -s


def _softplus(a):
  e = expit(a)
  return np.logaddexp(0.0, a), e, e * (1.0 - e)


def _relu(a):
  # sub-derivative 0 at the kink
  return np.maximum(a, 0.0), (a > 0.0).astype(np.float64), np.zeros_like(a)


ACTIVATIONS = {"tanh": _tanh, "sin": _sin, "softplus": _softplus, "relu": _relu}


@dataclass
class FieldNetwork:
  d: int
  L: int
  width: int
  kappa: float
  activation: str
  A: List[np.ndarray]
  b: List[np.ndarray]
  out: np.ndarray

  @property
  def n_hidden(self) -> int:
    return self.L - 1

  @property
  def param_count(self) -> int:
    w = self.width
    return (self.L - 2) * w * w + w * (self.d + 2) + (self.L - 1) * w

  def value(self, x, t):
    return evaluate(self, x, t)

  def grad_x(self, x, t):
    return grad_x(self, x, t)

  def grad_xt(self, x, t):
    return grad_xt(self, x, t)

  def second_derivatives(self, x, t):
    return second_derivatives(self, x, t)


def _check_shape(d: int, L: int, width: int, activation: str):
  if L < 3:
    raise ConfigError(f"depth L must be at least 3, got {L}", "network.L")
  if width < 1 or d < 1:
    raise ConfigError(f"width and dimension must be positive, got {width}, {d}", "network.width")
  if activation not in ACTIVATIONS:
    raise ConfigError(f"unknown activation {activation!r}", "network.activation")


def zeros(d: int, L: int, width: int, kappa: float = 0.5, activation: str = "tanh") -> FieldNetwork:
  _check_shape(d, L, width, activation)
  A = [np.zeros((width, d + 1))] + [np.zeros((width, width)) for _ in range(L - 2)]
  b = [np.zeros(width) for _ in range(L - 1)]
  return FieldNetwork(d, L, width, kappa, activation, A, b, np.zeros(width))


def init_he(
  d: int, L: int, width: int, activation: str = "tanh", seed: int = 0, kappa: float = 0.5
) -> FieldNetwork:
  """He initialization: weights N(0, 2/fan_in), biases zero."""
  net = zeros(d, L, width, kappa, activation)
  rng = make_rng(seed)
  for k, A in enumerate(net.A):
    net.A[k] = np.sqrt(2.0 / A.shape[1]) * standard_normal(rng, A.shape)
  net.out = np.sqrt(2.0 / width) * standard_normal(rng, (width,))
  return net


# ---- flat parameter vector: A1, b1, A2, b2, ..., A_{L-1}, b_{L-1}, A_L ----

def flatten(net: FieldNetwork) -> np.ndarray:
  parts = []
  for A, b in zip(net.A, net.b):
    parts += [A.ravel(), b]
  parts.append(net.out)
  return np.concatenate(parts)


def unflatten(template: FieldNetwork, theta: np.ndarray) -> FieldNetwork:
  theta = np.asarray(theta, dtype=np.float64)
  if theta.size != template.param_count:
    raise ConfigError(f"expected {template.param_count} parameters, got {theta.size}")
  A, b, pos = [], [], 0
  for A_t, b_t in zip(template.A, template.b):
    A.append(theta[pos:pos + A_t.size].reshape(A_t.shape))
    pos += A_t.size
    b.append(theta[pos:pos + b_t.size].copy())
    pos += b_t.size
  A = [a.copy() for a in A]
  return FieldNetwork(
    template.d, template.L, template.width, template.kappa, template.activation,
    A, b, theta[pos:].copy(),
  )


def to_param_dict(net: FieldNetwork) -> Dict[str, list]:
  params = {}
  for k, (A, b) in enumerate(zip(net.A, net.b), start=1):
    params[f"A{k}"] = A.tolist()
    params[f"b{k}"] = b.tolist()
  params[f"A{net.L}"] = [net.out.tolist()]
  return params


def from_param_dict(
  params: Dict[str, list], d: int, L: int, width: int, kappa: float, activation: str
) -> FieldNetwork:
  net = zeros(d, L, width, kappa, activation)
  try:
    for k in range(1, L):
      net.A[k - 1] = np.array(params[f"A{k}"], dtype=np.float64).reshape(net.A[k - 1].shape)
      net.b[k - 1] = np.array(params[f"b{k}"], dtype=np.float64).reshape(width)
    net.out = np.array(params[f"A{L}"], dtype=np.float64).reshape(width)
  except (KeyError, ValueError) as e:
    raise ConfigError(f"network parameters do not match L={L}, width={width}, d={d}: {e}")
  return net


# ---- forward and reverse passes ----

def _inputs(net: FieldNetwork, x, t) -> Tuple[np.ndarray, bool]:
  x = np.asarray(x, dtype=np.float64)
  single = x.ndim == 1
  X = np.atleast_2d(x)
  if X.shape[-1] != net.d:
    raise ConfigError(f"network expects {net.d} space coordinates, got {X.shape[-1]}")
  tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
  return np.concatenate([X, tt[:, None]], axis=1), single


@dataclass
class _Cache:
  y: np.ndarray
  h: List[np.ndarray] = field(default_factory=list)
  s1: List[np.ndarray] = field(default_factory=list)
  s2: List[np.ndarray] = field(default_factory=list)
  g: List[Optional[np.ndarray]] = field(default_factory=list)
  delta: List[Optional[np.ndarray]] = field(default_factory=list)
  grad_y: Optional[np.ndarray] = None


def _forward(net: FieldNetwork, y: np.ndarray) -> _Cache:
  act = ACTIVATIONS[net.activation]
  cache = _Cache(y=y)
  h = y
  for j in range(net.n_hidden):
    if j == 0:
      a = y @ net.A[0].T + net.b[0]
    else:
      a = h + net.kappa * (h @ net.A[j].T + net.b[j])
    h, s1, s2 = act(a)
    cache.h.append(h)
    cache.s1.append(s1)
    cache.s2.append(s2)
  return cache


def _input_gradient(net: FieldNetwork, cache: _Cache) -> _Cache:
  n = net.n_hidden
  B = cache.y.shape[0]
  cache.g = [None] * n
  cache.delta = [None] * n
  g = np.broadcast_to(net.out, (B, net.width))
  for j in range(n - 1, 0, -1):
    cache.g[j] = g
    delta = cache.s1[j] * g
    cache.delta[j] = delta
    g = delta + net.kappa * (delta @ net.A[j])
  cache.g[0] = g
  cache.delta[0] = cache.s1[0] * g
  cache.grad_y = cache.delta[0] @ net.A[0]
  return cache


def evaluate(net: FieldNetwork, x, t):
  y, single = _inputs(net, x, t)
  cache = _forward(net, y)
  out = cache.h[-1] @ net.out
  return out[0] if single else out


def grad_xt(net: FieldNetwork, x, t):
  """(grad_x psi, d psi/dt)."""
  y, single = _inputs(net, x, t)
  gy = _input_gradient(net, _forward(net, y)).grad_y
  gx, gt = gy[:, :net.d], gy[:, net.d]
  return (gx[0], gt[0]) if single else (gx, gt)


def grad_x(net: FieldNetwork, x, t):
  return grad_xt(net, x, t)[0]


def _param_gradient(net: FieldNetwork, cache: _Cache, r: np.ndarray) -> np.ndarray:
  """Exact d/dtheta of sum_b r_b . grad_x psi(y_b) for fixed r."""
  n, d, kappa = net.n_hidden, net.d, net.kappa
  dA = [np.zeros_like(A) for A in net.A]
  db = [np.zeros_like(b) for b in net.b]
  a_bar = [None] * n

  # back through the reverse sweep that produced grad_x
  dA[0][:, :d] += cache.delta[0].T @ r
  delta_bar = r @ net.A[0][:, :d].T
  g_bar = cache.s1[0] * delta_bar
  a_bar[0] = cache.s2[0] * cache.g[0] * delta_bar
  for j in range(1, n):
    delta_bar = g_bar + kappa * (g_bar @ net.A[j].T)
    dA[j] += kappa * (cache.delta[j].T @ g_bar)
    g_bar = cache.s1[j] * delta_bar
    a_bar[j] = cache.s2[j] * cache.g[j] * delta_bar
  d_out = g_bar.sum(axis=0)

  # back through the forward pass; the network output itself is not in the loss
  h_bar = np.zeros_like(cache.h[-1])
  for j in range(n - 1, 0, -1):
    alpha = a_bar[j] + cache.s1[j] * h_bar
    db[j] += kappa * alpha.sum(axis=0)
    dA[j] += kappa * (alpha.T @ cache.h[j - 1])
    h_bar = alpha + kappa * (alpha @ net.A[j])
  alpha = a_bar[0] + cache.s1[0] * h_bar
  dA[0] += alpha.T @ cache.y
  db[0] += alpha.sum(axis=0)

  parts = []
  for A, b in zip(dA, db):
    parts += [A.ravel(), b]
  parts.append(d_out)
  return np.concatenate(parts)


def loss_value_and_param_grad(
  net: FieldNetwork,
  x: np.ndarray,
  t,
  p_target: np.ndarray,
  loss_kind: str = "quadratic",
  model: Optional[HamiltonianModel] = None,
  threads: Optional[int] = None,
) -> Tuple[float, np.ndarray]:
  """Mean over the batch of |grad_x psi - p|^2 (or the Bregman divergence
  D_{H,x}(grad_x psi : p)), and its exact gradient in flat parameter order."""
  x = np.atleast_2d(np.asarray(x, dtype=np.float64))
  p_target = np.atleast_2d(np.asarray(p_target, dtype=np.float64))
  B = x.shape[0]
  if B == 0:
    raise ConfigError("loss needs a nonempty batch")
  if p_target.shape != x.shape:
    raise ConfigError(f"targets {p_target.shape} do not match points {x.shape}")
  if loss_kind not in LOSS_KINDS:
    raise ConfigError(f"unknown loss kind {loss_kind!r}", "train.loss_kind")
  if loss_kind == "bregman" and model is None:
    raise ConfigError("bregman loss needs the Hamiltonian model", "train.loss_kind")
  tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))

  def chunk_loss(rows: slice):
    y, _ = _inputs(net, x[rows], tt[rows])
    cache = _input_gradient(net, _forward(net, y))
    G = cache.grad_y[:, :net.d]
    p = p_target[rows]
    if loss_kind == "quadratic":
      diff = G - p
      value = np.sum(diff * diff)
      r = 2.0 * diff / B
    else:
      xs = x[rows]
      dp_target = model.grad_p(xs, p)
      value = np.sum(model.eval(xs, G) - model.eval(xs, p) - np.sum(dp_target * (G - p), axis=-1))
      r = (model.grad_p(xs, G) - dp_target) / B
    return value / B, _param_gradient(net, cache, r)

  value, grad = 0.0, np.zeros(net.param_count)
  for v, g in map_chunks(chunk_loss, B, threads):
    value += v
    grad += g
  return float(value), grad


def fd_step(v) -> np.ndarray:
  return 1e-4 * np.maximum(1.0, np.abs(v))


def second_derivatives(net: FieldNetwork, x, t):
  """(d/dt grad_x psi, Hessian_x psi) by central differences of the exact gradient.

  The Hessian is symmetrized. Only defined for smooth activations.
  """
  if net.activation == "relu":
    raise ConfigError("second derivatives are undefined for relu networks", "network.activation")
  return central_second_derivatives(net.grad_x, x, t, net.d)


def central_second_derivatives(grad_fn, x, t, d: int):
  x = np.asarray(x, dtype=np.float64)
  single = x.ndim == 1
  X = np.atleast_2d(x)
  B = X.shape[0]
  tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,)).copy()

  steps = fd_step(X)
  hess = np.empty((B, d, d))
  for j in range(d):
    shift = np.zeros_like(X)
    shift[:, j] = steps[:, j]
    diff = grad_fn(X + shift, tt) - grad_fn(X - shift, tt)
    hess[:, :, j] = diff / (2.0 * steps[:, j:j + 1])
  hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))

  ht = fd_step(tt)
  dt_grad = (grad_fn(X, tt + ht) - grad_fn(X, tt - ht)) / (2.0 * ht[:, None])
  return (dt_grad[0], hess[0]) if single else (dt_grad, hess)


# ---- piecewise-in-time field ----

@dataclass
class PiecewiseField:
  """One network per left-closed subinterval of [edges[0], edges[-1]]; the last is closed."""
  edges: np.ndarray
  nets: List[FieldNetwork]

  def __post_init__(self):
    self.edges = np.asarray(self.edges, dtype=np.float64)
    if len(self.nets) == 0 or self.edges.size != len(self.nets) + 1:
      raise ConfigError(f"{len(self.nets)} networks need {len(self.nets) + 1} interval edges")
    if np.any(np.diff(self.edges) <= 0):
      raise ConfigError("subinterval edges must be strictly increasing")

  @property
  def d(self) -> int:
    return self.nets[0].d

  @property
  def activation(self) -> str:
    return self.nets[0].activation

  def interval_index(self, t) -> np.ndarray:
    k = np.searchsorted(self.edges, np.asarray(t, dtype=np.float64), side="right") - 1
    return np.clip(k, 0, len(self.nets) - 1)

  def net_at(self, t: float) -> FieldNetwork:
    return self.nets[int(self.interval_index(t))]

  def _dispatch(self, fn, x, t, tail: Sequence[int]):
    x = np.asarray(x, dtype=np.float64)
    if np.ndim(t) == 0:
      return fn(self.net_at(float(t)), x, t)
    X = np.atleast_2d(x)
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
    which = self.interval_index(tt)
    out = np.empty((X.shape[0],) + tuple(tail))
    for k in np.unique(which):
      rows = which == k
      out[rows] = fn(self.nets[k], X[rows], tt[rows])
    return out

  def value(self, x, t):
    return self._dispatch(evaluate, x, t, ())

  def grad_x(self, x, t):
    return self._dispatch(grad_x, x, t, (self.d,))

  def grad_xt(self, x, t):
    if np.ndim(t) == 0:
      return grad_xt(self.net_at(float(t)), x, t)
    gx = self.grad_x(x, t)
    gt = self._dispatch(lambda net, xs, ts: grad_xt(net, xs, ts)[1], x, t, ())
    return gx, gt

  def second_derivatives(self, x, t):
    if self.activation == "relu":
      raise ConfigError("second derivatives are undefined for relu networks", "network.activation")
    # differences in t straddling an edge must stay on one network
    if np.ndim(t) == 0:
      net = self.net_at(float(t))
      return central_second_derivatives(net.grad_x, x, t, self.d)
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
    which = self.interval_index(tt)
    dt_grad = np.empty_like(X)
    hess = np.empty((X.shape[0], self.d, self.d))
    for k in np.unique(which):
      rows = which == k
      dt_grad[rows], hess[rows] = central_second_derivatives(
        self.nets[k].grad_x, X[rows], tt[rows], self.d
      )
    return dt_grad, hess


def single_interval(net: FieldNetwork, t_lo: float, t_hi: float) -> PiecewiseField:
  return PiecewiseField(np.array([t_lo, t_hi]), [net])
