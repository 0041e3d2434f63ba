import numpy as np
import pytest

from services.field_net import (
  PiecewiseField,
  evaluate,
  flatten,
  from_param_dict,
  grad_x,
  grad_xt,
  init_he,
  loss_value_and_param_grad,
  to_param_dict,
  unflatten,
  zeros,
)
from services.hamiltonians import make_builtin_model
from utils.errors import ConfigError

SMOOTH = ["tanh", "sin", "softplus"]


def _batch(rng, B, d):
  return rng.normal(size=(B, d)), rng.uniform(0.0, 2.0, B), rng.normal(size=(B, d))


def test_he_init_is_reproducible_and_shaped():
  net = init_he(3, 5, 7, "tanh", seed=4)
  again = init_he(3, 5, 7, "tanh", seed=4)
  np.testing.assert_array_equal(flatten(net), flatten(again))
  assert net.A[0].shape == (7, 4)
  assert all(A.shape == (7, 7) for A in net.A[1:])
  assert len(net.b) == 4 and net.out.shape == (7,)
  assert flatten(net).size == net.param_count
  assert all(np.all(b == 0.0) for b in net.b)


def test_flatten_round_trip():
  net = init_he(2, 4, 6, "sin", seed=1)
  theta = flatten(net) + 0.5
  np.testing.assert_array_equal(flatten(unflatten(net, theta)), theta)
  with pytest.raises(ConfigError):
    unflatten(net, theta[:-1])


def test_param_dict_layout():
  net = init_he(2, 4, 6, "tanh", seed=2)
  params = to_param_dict(net)
  assert sorted(params) == ["A1", "A2", "A3", "A4", "b1", "b2", "b3"]
  assert np.shape(params["A4"]) == (1, 6)
  back = from_param_dict(params, 2, 4, 6, 0.5, "tanh")
  np.testing.assert_array_equal(flatten(back), flatten(net))
  with pytest.raises(ConfigError):
    from_param_dict(params, 2, 5, 6, 0.5, "tanh")


@pytest.mark.parametrize("activation", SMOOTH)
def test_input_gradient_matches_finite_differences(activation, rng):
  step = 1e-5
  for seed in range(100):
    net = init_he(3, 4, 6, activation, seed=seed)
    x, t, _ = _batch(rng, 4, 3)
    gx, gt = grad_xt(net, x, t)
    for j in range(3):
      e = np.zeros(3)
      e[j] = step
      fd = (evaluate(net, x + e, t) - evaluate(net, x - e, t)) / (2 * step)
      np.testing.assert_allclose(gx[:, j], fd, rtol=1e-6, atol=1e-9)
    fd_t = (evaluate(net, x, t + step) - evaluate(net, x, t - step)) / (2 * step)
    np.testing.assert_allclose(gt, fd_t, rtol=1e-6, atol=1e-9)


def test_single_point_shapes():
  net = init_he(2, 3, 4, "tanh", seed=0)
  assert np.ndim(evaluate(net, np.zeros(2), 0.5)) == 0
  assert grad_x(net, np.zeros(2), 0.5).shape == (2,)
  assert grad_x(net, np.zeros((5, 2)), 0.5).shape == (5, 2)
  with pytest.raises(ConfigError):
    grad_x(net, np.zeros(3), 0.5)


def _fd_param_grad(net, x, t, p, kind, model, step=1e-5):
  theta = flatten(net)
  out = np.empty_like(theta)
  for k in range(theta.size):
    e = np.zeros_like(theta)
    e[k] = step
    up, _ = loss_value_and_param_grad(unflatten(net, theta + e), x, t, p, kind, model)
    down, _ = loss_value_and_param_grad(unflatten(net, theta - e), x, t, p, kind, model)
    out[k] = (up - down) / (2 * step)
  return out


@pytest.mark.parametrize("activation", SMOOTH)
@pytest.mark.parametrize("kind", ["quadratic", "bregman"])
def test_loss_gradient_matches_finite_differences(activation, kind, rng):
  model, _ = make_builtin_model("nonseparable_quartic", {"d": 2})
  for seed in range(100):
    net = init_he(2, 3, 4, activation, seed=seed)
    net.b = [rng.normal(scale=0.1, size=b.shape) for b in net.b]
    x, t, p = _batch(rng, 6, 2)
    _, grad = loss_value_and_param_grad(net, x, t, p, kind, model)
    fd = _fd_param_grad(net, x, t, p, kind, model)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)


def test_he_init_param_count_and_spread():
  assert init_he(2, 3, 4, "tanh", seed=0).param_count == 40
  assert flatten(init_he(2, 3, 4, "tanh", seed=0)).size == 40
  first = np.concatenate([init_he(2, 3, 50, "tanh", seed=s).A[0].ravel() for s in range(67)])
  assert first.size >= 10_000
  assert np.std(first) == pytest.approx(np.sqrt(2.0 / 3.0), rel=0.05)


def test_hand_built_network():
  params = {"A1": [[1.0, 0.0]], "b1": [0.0], "A2": [[1.0]], "b2": [0.0], "A3": [[1.0]]}
  net = from_param_dict(params, 1, 3, 1, 0.5, "tanh")
  assert evaluate(net, np.array([0.5]), 0.0) == pytest.approx(0.6000182751, abs=1e-10)
  assert grad_x(net, np.array([0.5]), 0.0)[0] == pytest.approx(0.754964, abs=1e-6)
  assert evaluate(zeros(1, 3, 1, 0.5, "tanh"), np.array([0.5]), 0.3) == 0.0


def test_bregman_loss_of_quadratic_kinetic_is_half_the_quadratic_loss(rng):
  model, _ = make_builtin_model("harmonic", {"d": 2})
  net = init_he(2, 4, 6, "tanh", seed=0)
  x, t, p = _batch(rng, 20, 2)
  quad, g_quad = loss_value_and_param_grad(net, x, t, p, "quadratic")
  breg, g_breg = loss_value_and_param_grad(net, x, t, p, "bregman", model)
  assert breg == pytest.approx(0.5 * quad, rel=1e-12)
  np.testing.assert_allclose(g_breg, 0.5 * g_quad, rtol=1e-10, atol=1e-14)


def test_loss_is_independent_of_thread_count(rng):
  net = init_he(3, 4, 8, "tanh", seed=5)
  x, t, p = _batch(rng, 1500, 3)
  v1, g1 = loss_value_and_param_grad(net, x, t, p, threads=1)
  v3, g3 = loss_value_and_param_grad(net, x, t, p, threads=3)
  assert v1 == v3
  assert g1.tobytes() == g3.tobytes()


def test_loss_validation(rng):
  net = zeros(2, 3, 4)
  x, t, p = _batch(rng, 4, 2)
  with pytest.raises(ConfigError):
    loss_value_and_param_grad(net, x, t, p[:, :1])
  with pytest.raises(ConfigError):
    loss_value_and_param_grad(net, x, t, p, "bregman")
  with pytest.raises(ConfigError):
    loss_value_and_param_grad(net, x, t, p, "huber")


def test_second_derivatives_are_symmetric(rng):
  net = init_he(3, 4, 8, "tanh", seed=6)
  x, t, _ = _batch(rng, 7, 3)
  dt_grad, hess = net.second_derivatives(x, t)
  assert dt_grad.shape == (7, 3) and hess.shape == (7, 3, 3)
  np.testing.assert_array_equal(hess, np.swapaxes(hess, 1, 2))
  _, gt = grad_xt(net, x, t)
  step = 1e-5
  fd = (grad_xt(net, x + [step, 0, 0], t)[1] - grad_xt(net, x - [step, 0, 0], t)[1]) / (2 * step)
  np.testing.assert_allclose(dt_grad[:, 0], fd, rtol=1e-4, atol=1e-6)


def test_relu_has_no_second_derivatives():
  net = init_he(2, 3, 4, "relu", seed=0)
  with pytest.raises(ConfigError):
    net.second_derivatives(np.zeros((1, 2)), 0.0)
  field = PiecewiseField(np.array([0.0, 1.0]), [net])
  with pytest.raises(ConfigError):
    field.second_derivatives(np.zeros((1, 2)), 0.0)


def test_piecewise_field_dispatches_by_time(rng):
  nets = [init_he(2, 3, 4, "tanh", seed=s) for s in range(3)]
  field = PiecewiseField(np.array([0.0, 1.0, 2.0, 3.0]), nets)
  x = rng.normal(size=(4, 2))
  t = np.array([0.0, 1.0, 2.5, 3.0])
  expected = np.stack([
    grad_x(nets[0], x[0], 0.0), grad_x(nets[1], x[1], 1.0),
    grad_x(nets[2], x[2], 2.5), grad_x(nets[2], x[3], 3.0),
  ])
  np.testing.assert_allclose(field.grad_x(x, t), expected, rtol=1e-12, atol=1e-15)
  np.testing.assert_allclose(field.grad_x(x[:1], 0.5), grad_x(nets[0], x[:1], 0.5), rtol=1e-12)
  gx, gt = field.grad_xt(x, t)
  assert gx.shape == (4, 2) and gt.shape == (4,)
  assert field.value(x, t).shape == (4,)


def test_piecewise_field_validation():
  net = zeros(2, 3, 4)
  with pytest.raises(ConfigError):
    PiecewiseField(np.array([0.0, 1.0, 2.0]), [net])
  with pytest.raises(ConfigError):
    PiecewiseField(np.array([1.0, 1.0]), [net])
