import numpy as np
import pytest

from interfaces.IConfig import GaussianSpec, GridSpec
from services import diagnostics
from services.hamiltonians import make_builtin_model
from services.integrators import generate_trajectories
from services.reference_solutions import (
  FiniteDifferenceField,
  HarmonicExactField,
  harmonic_exact_grad,
  oracle_gradient,
)
from utils.errors import ConfigError

POLE = 3 * np.pi / 4


@pytest.fixture(scope="module")
def harmonic():
  return make_builtin_model("harmonic", {"d": 2})


@pytest.fixture(scope="module")
def rk4_bundle(harmonic):
  model, ic = harmonic
  return generate_trajectories(
    model, ic, GaussianSpec(mean=[1.0, -1.0], cov_scale=0.25), "rk4", N=200, M=100, T=1.0, seed=1
  )


def test_exact_solution_has_zero_residual_on_a_grid(harmonic):
  model, _ = harmonic
  field = HarmonicExactField(2)
  grid = GridSpec(lo=(-5.0, -5.0), hi=(5.0, 5.0), n=50)
  rows = diagnostics.residual_grid(field, model, grid, np.zeros(2), [0.0, 0.5, 1.0, 1.5, 2.0])
  assert len(rows) == 50 * 50 * 5
  assert max(r[3] for r in rows) <= 1e-6


def test_finite_difference_field_residual_is_small(harmonic):
  model, _ = harmonic
  field = FiniteDifferenceField(harmonic_exact_grad, 2)
  x = np.random.default_rng(0).normal(size=(100, 2))
  assert np.max(diagnostics.residual(field, model, x, 0.7)) < 1e-5


def test_loss_curves_vanish_for_the_exact_field(rk4_bundle):
  curves = diagnostics.loss_curves(HarmonicExactField(2), rk4_bundle)
  assert curves.eps.shape == (101,)
  assert np.max(curves.eps) < 1e-8
  assert np.max(curves.mse) < 1e-15
  assert np.max(curves.delta) < 1e-6
  assert curves.delta[-1] == curves.delta[-2]


def test_loss_curves_of_a_constant_offset(rk4_bundle):
  class Shifted(HarmonicExactField):
    def grad_x(self, x, t):
      return super().grad_x(x, t) + np.array([0.3, 0.4])

  curves = diagnostics.loss_curves(Shifted(2), rk4_bundle)
  np.testing.assert_allclose(curves.eps, 0.5, atol=1e-7)
  np.testing.assert_allclose(curves.mse, 0.25, atol=1e-7)


def test_energy_curve_is_conserved_by_the_data(rk4_bundle, harmonic):
  model, _ = harmonic
  energy = diagnostics.energy_curve(model, rk4_bundle)
  assert np.max(np.abs(energy - energy[0])) < 1e-8
  np.testing.assert_allclose(
    diagnostics.energy_curve(model, rk4_bundle, HarmonicExactField(2)), energy, atol=1e-7
  )


def test_weighted_residual_and_report(rk4_bundle, harmonic):
  model, _ = harmonic
  field = HarmonicExactField(2)
  assert diagnostics.weighted_L1_residual(field, model, rk4_bundle, 5, particles=50) < 1e-6
  report = diagnostics.build_report(field, model, rk4_bundle, residual_particles=20)
  rows = report.curve_rows()
  assert len(rows) == 101 and len(rows[0]) == 7
  assert np.all(report.l1_residual < 1e-6)


def test_error_grid_flags_poles():
  field = HarmonicExactField(2)
  grid = GridSpec(n=3)
  rows = diagnostics.error_grid(field, "harmonic", harmonic_exact_grad, grid, np.zeros(2), [POLE, 0.5])
  pole = [r for r in rows if r[2] == POLE]
  assert len(pole) == 9 and all(r[3] is None and r[4] == "pole" for r in pole)
  ok = [r for r in rows if r[2] == 0.5]
  assert all(r[4] == "ok" and r[3] == pytest.approx(0.0, abs=1e-12) for r in ok)


def test_plane_points_freeze_other_coordinates():
  u, v, points = diagnostics.plane_points(GridSpec(plane=(0, 2), n=4), np.array([1.0, 2.0, 3.0]))
  assert points.shape == (16, 3)
  np.testing.assert_array_equal(points[:, 1], 2.0)
  np.testing.assert_array_equal(points[:, 0], u)
  with pytest.raises(ConfigError):
    diagnostics.plane_points(GridSpec(plane=(0, 5)), np.zeros(3))


def test_cloud_contrast_for_the_exact_field(rk4_bundle, harmonic):
  model, _ = harmonic
  inside, outside = diagnostics.cloud_contrast(
    HarmonicExactField(2), model, rk4_bundle, 4, GridSpec(n=10)
  )
  assert inside < 1e-6 and outside < 1e-6
  with pytest.raises(ConfigError):
    diagnostics.cloud_contrast(
      HarmonicExactField(2), model, rk4_bundle, 4, GridSpec(lo=(0.9, -1.1), hi=(1.1, -0.9), n=3)
    )


def test_node_index(rk4_bundle):
  assert diagnostics.node_index(rk4_bundle, 0.5) == 50
  assert diagnostics.node_index(rk4_bundle, 1.0) == 100
  with pytest.raises(ConfigError):
    diagnostics.node_index(rk4_bundle, 0.525)
  with pytest.raises(ConfigError):
    diagnostics.node_index(rk4_bundle, 1.5)


def test_l2_error_of_the_oracle_is_zero(rk4_bundle):
  assert diagnostics.l2_error(HarmonicExactField(2), harmonic_exact_grad, rk4_bundle, 0.5) < 1e-20


def test_subinterval_loss_totals():
  eps = np.arange(9, dtype=float)
  np.testing.assert_array_equal(diagnostics.subinterval_loss_totals(eps, 2), [6.0, 30.0])


def test_diagonal_momentum_error_of_the_oracle():
  field = FiniteDifferenceField(oracle_gradient("caustic_cos", 2), 2)
  z = np.linspace(-np.pi, np.pi, 50)
  assert diagnostics.diagonal_momentum_error(field, 1.5, z, exclude=0.2) < 1e-12
  rows = diagnostics.diagonal_rows(field, 1.5, z)
  assert len(rows) == 50
  np.testing.assert_allclose([r[2] for r in rows], [r[3] for r in rows], atol=1e-12)


def test_kepler_integrator_energy_comparison():
  model, ic = make_builtin_model("kepler")
  spec = GaussianSpec(mean=[-3.0, -3.0], cov_scale=0.25)
  result = diagnostics.integrator_energy_comparison(
    model, ic, spec, ["stormer_verlet", "euler", "rk4"], N=500, M=300, T=9.0, seed=0
  )
  sv = result["stormer_verlet"][1]
  assert sv <= 1e-2
  assert result["euler"][1] >= 10 * sv
  assert result["rk4"][1] <= 5 * sv
  assert result["rk4"][0].shape == (301,)


def test_kepler_stormer_verlet_drift_is_second_order():
  model, ic = make_builtin_model("kepler")
  spec = GaussianSpec(mean=[-3.0, -3.0], cov_scale=0.25)
  drift = {}
  for M in (300, 600):
    _, worst = diagnostics.integrator_energy_comparison(
      model, ic, spec, ["stormer_verlet"], N=200, M=M, T=9.0, seed=0
    )["stormer_verlet"]
    drift[M] = worst
  assert 3.0 <= drift[300] / drift[600] <= 5.0
