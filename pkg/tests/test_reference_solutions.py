import numpy as np
import pytest

from services.hamiltonians import lqc_model, pendulum_system
from services.integrators import rk4_step
from services.reference_solutions import (
  caustic_endpoint,
  harmonic_exact_grad,
  harmonic_exact_value,
  harmonic_is_pole,
  histogram_momentum,
  invert_phi,
  lqc_costate_gain,
  lqc_optimal_reference,
  oracle_gradient,
  sinusoidal_kinetic_exact_grad,
  superposition_residual,
  weak_solution_profile,
  weighted_momentum,
)
from services.sampling import make_rng
from utils.errors import ConfigError, OraclePoleError

POLE = 3 * np.pi / 4


def test_harmonic_solution_at_start():
  x = np.array([[1.0, 2.0], [-3.0, 0.5]])
  np.testing.assert_allclose(harmonic_exact_grad(x, 0.0), x)
  np.testing.assert_allclose(harmonic_exact_value(x, 0.0), 0.5 * np.sum(x * x, axis=1))


def test_harmonic_pole():
  assert harmonic_is_pole(POLE)
  assert not harmonic_is_pole(2.0)
  with pytest.raises(OraclePoleError):
    harmonic_exact_grad(np.ones(2), POLE)


def test_invert_phi_branch_counts():
  assert invert_phi(0.5, 0.3).roots.size == 1
  three = invert_phi(1.5, 0.0)
  assert three.roots.size == 3
  assert three.roots[1] == pytest.approx(0.0, abs=1e-12)
  np.testing.assert_allclose(1.5 * np.sin(three.roots[2]), three.roots[2], atol=1e-12)
  assert invert_phi(3.0, 1.0, "neg_cos_initial").roots.size == 1


def test_invert_phi_keeps_support_boundary():
  roots = invert_phi(0.5, np.pi).roots
  assert roots.size == 1
  assert roots[0] == pytest.approx(np.pi)


def test_caustic_endpoint_values():
  assert caustic_endpoint(0.9) is None
  z_star = caustic_endpoint(1.5)
  assert z_star == pytest.approx(np.sqrt(1.25) - np.arccos(2.0 / 3.0))
  edge = np.sqrt(1.5 ** 2 - 1.0) / 1.5
  assert weighted_momentum(1.5, z_star) == pytest.approx(edge, abs=1e-8)
  assert weighted_momentum(1.5, -z_star) == pytest.approx(-edge, abs=1e-8)


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_invert_phi_resolves_both_roots_next_to_a_fold(sign):
  t = 1.5
  fold = sign * -np.arccos(1.0 / t)
  z = sign * (caustic_endpoint(t) - 1e-8)
  branches = invert_phi(t, z)
  assert branches.roots.size == 3
  np.testing.assert_allclose(branches.roots - t * np.sin(branches.roots), z, atol=1e-10)
  assert np.sum(np.abs(branches.roots - fold) < 1e-3) == 2
  edge = sign * np.sqrt(t * t - 1.0) / t
  assert weighted_momentum(t, z) == pytest.approx(edge, abs=1e-3)


def test_weighted_momentum_is_classical_before_the_caustic():
  z = np.linspace(-2.0, 2.0, 9)
  xi = np.array([invert_phi(0.5, zi).roots[0] for zi in z])
  np.testing.assert_allclose(weighted_momentum(0.5, z), -np.sin(xi), atol=1e-12)


@pytest.mark.parametrize("t", [0.5, 1.5, 3.0])
def test_weighted_momentum_is_odd(t):
  z = np.linspace(-np.pi, np.pi, 41)
  np.testing.assert_allclose(weighted_momentum(t, z), -weighted_momentum(t, z[::-1]), atol=1e-10)


def test_weighted_momentum_just_before_the_caustic():
  z = np.linspace(-np.pi, np.pi, 33)
  xi = np.array([invert_phi(0.999, zi).roots for zi in z])
  assert xi.shape == (33, 1)
  np.testing.assert_allclose(xi[:, 0] - 0.999 * np.sin(xi[:, 0]), z, atol=1e-10)
  np.testing.assert_allclose(weighted_momentum(0.999, z), -np.sin(xi[:, 0]), atol=1e-8)


def test_weighted_momentum_rejects_points_outside_support():
  with pytest.raises(ConfigError):
    weighted_momentum(1.0, 4.0)


@pytest.mark.parametrize("t", [0.5, 1.5, 3.0])
def test_weighted_momentum_matches_particle_histogram(t):
  xi = make_rng(17).uniform(-np.pi, np.pi, 2_000_000)
  z = np.linspace(-np.pi, np.pi, 200)
  hist = histogram_momentum(xi, t, z, 0.02)
  exact = weighted_momentum(t, z)
  ok = np.isfinite(hist)
  assert ok.mean() > 0.95
  assert np.mean(np.abs(hist[ok] - exact[ok])) < 0.05


def test_weak_solution_profile_is_even_and_pinned():
  z = np.linspace(-np.pi, np.pi, 101)
  profile = weak_solution_profile(1.5, z)
  assert profile[50] == pytest.approx(0.0, abs=1e-12)
  np.testing.assert_allclose(profile, profile[::-1], atol=1e-6)


def test_sinusoidal_kinetic_grad_at_start():
  z = np.linspace(-1.0, 1.0, 7)
  np.testing.assert_allclose(
    sinusoidal_kinetic_exact_grad(z, 0.0), -np.sqrt(3.0) * np.sin(np.sqrt(3.0) * z), atol=1e-12
  )


def test_sinusoidal_kinetic_grad_follows_characteristics():
  xi = 0.4
  t = 0.2
  z = xi + t * (3.0 - np.sqrt(3.0) * np.sin(np.sqrt(3.0) * xi))
  assert sinusoidal_kinetic_exact_grad(z, t) == pytest.approx(-np.sqrt(3.0) * np.sin(np.sqrt(3.0) * xi))


def test_lqc_reference_starts_on_terminal_cost():
  system = pendulum_system()
  q0 = np.array([[0.1, 0.0, -0.05, 0.02]])
  ref = lqc_optimal_reference(system, q0, 2.0, 50)
  assert ref.q.shape == (51, 1, 4)
  np.testing.assert_allclose(ref.q[0], q0)
  np.testing.assert_allclose(ref.p[0], q0 @ system.P1.T)
  np.testing.assert_allclose(ref.control, ref.p @ system.B)


def test_lqc_reference_follows_the_hamiltonian_flow():
  system = pendulum_system()
  model = lqc_model(system)
  q0 = np.array([[0.1, 0.2, -0.05, 0.0]])
  ref = lqc_optimal_reference(system, q0, 1.0, 10)
  x, p = q0, q0 @ system.P1.T
  for _ in range(1000):
    x, p = rk4_step(model, x, p, 1e-3)
  np.testing.assert_allclose(x, ref.q[-1], atol=1e-10)
  np.testing.assert_allclose(p, ref.p[-1], atol=1e-10)


def test_lqc_costate_gain_and_superposition():
  system = pendulum_system()
  np.testing.assert_allclose(lqc_costate_gain(system, 0.0), system.P1, atol=1e-12)
  assert superposition_residual(system, 2.0, 100, seed=3) < 1e-8
  grad = oracle_gradient("lqc_pendulum", 4)
  x = np.array([[0.1, 0.0, 0.2, -0.1]])
  ref = lqc_optimal_reference(system, x, 1.0, 4)
  np.testing.assert_allclose(grad(ref.q[-1], 1.0), ref.p[-1], atol=1e-9)


def test_oracle_registry():
  x = np.array([[1.0, 1.0]])
  np.testing.assert_allclose(oracle_gradient("harmonic", 2)(x, 0.0), x)
  np.testing.assert_allclose(oracle_gradient("free_particle", 2, {"velocity": [1.0, 2.0]})(x, 0.3), [[1.0, 2.0]])
  caustic = oracle_gradient("caustic_cos", 2)(np.array([[0.3, 0.3]]), 0.5)
  eta = np.full(2, 1.0 / np.sqrt(2.0))
  np.testing.assert_allclose(caustic, weighted_momentum(0.5, 0.6 / np.sqrt(2.0)) * eta[None, :])
  with pytest.raises(ConfigError):
    oracle_gradient("burgers", 2)
