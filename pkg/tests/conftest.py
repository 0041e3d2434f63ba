import numpy as np
import pytest

from interfaces.IConfig import ExperimentConfig


def central_gradient(fn, x, step=1e-6):
  """Central differences of a scalar function over the last axis of x."""
  x = np.asarray(x, dtype=np.float64)
  out = np.empty_like(x)
  for j in range(x.shape[-1]):
    e = np.zeros_like(x)
    e[..., j] = step * np.maximum(1.0, np.abs(x[..., j]))
    out[..., j] = (fn(x + e) - fn(x - e)) / (2.0 * e[..., j])
  return out


def tiny_config(**overrides) -> ExperimentConfig:
  """A 2D harmonic problem small enough to train in a test."""
  data = {
    "schema": "hjdc-config-1",
    "name": "tiny_harmonic",
    "hamiltonian": {"name": "harmonic", "params": {"d": 2}},
    "rho0": {"kind": "gaussian", "mean": [1.0, 1.0], "cov_scale": 0.25},
    "trajectory": {"N": 64, "M": 8, "T": 1.0, "integrator": "stormer_verlet", "seed": 3},
    "network": {"L": 3, "width": 8, "kappa": 0.5, "activation": "tanh"},
    "train": {"lr": 1e-2, "n_iter": 20, "batch": 32, "M_T": 2, "seed": 1},
    "eval": {
      "oracle": "harmonic",
      "times": [0.5, 1.0],
      "grid": {"plane": [0, 1], "lo": [-4.0, -4.0], "hi": [4.0, 4.0], "n": 6, "times": [0.5]},
      "residual_particles": 16,
      "acceptance": {"final_loss": {"max": 1e6}, "mean_err_t0.5": {"max": 1e6}},
    },
  }
  for key, value in overrides.items():
    data[key] = {**data[key], **value} if isinstance(value, dict) else value
  return ExperimentConfig.model_validate(data)


@pytest.fixture
def rng():
  return np.random.default_rng(1234)


@pytest.fixture
def config():
  return tiny_config()
