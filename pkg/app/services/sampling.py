"""Seeded samplers for the initial densities rho0.

Every draw goes through numpy's PCG64 generator; Gaussians use Box–Muller on
its double-precision uniforms so only the uniform stage comes from numpy.
"""
import logging

import numpy as np

from interfaces.IConfig import (
  DeltaSpec,
  GaussianMixtureSpec,
  GaussianSpec,
  PiecewiseUniformHalvesSpec,
  ProductSpec,
  UniformBoxSpec,
)
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


def make_rng(seed) -> np.random.Generator:
  return np.random.Generator(np.random.PCG64(seed))


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
  shape = (int(shape),) if np.isscalar(shape) else tuple(shape)
  n = int(np.prod(shape, dtype=np.int64))
  pairs = (n + 1) // 2
  u1 = rng.random(pairs)
  u2 = rng.random(pairs)
  # 1 - u1 lies in (0, 1]
  r = np.sqrt(-2.0 * np.log1p(-u1))
  theta = 2.0 * np.pi * u2
  z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1).reshape(-1)
  return z[:n].reshape(shape)


def _gaussian(spec: GaussianSpec, n: int, rng) -> np.ndarray:
  mean = np.asarray(spec.mean, dtype=np.float64)
  std = np.sqrt(np.asarray(spec.cov_scale, dtype=np.float64))
  return mean + std * standard_normal(rng, (n, mean.size))


def _uniform_box(spec: UniformBoxSpec, n: int, rng) -> np.ndarray:
  lo = np.asarray(spec.lo, dtype=np.float64)
  hi = np.asarray(spec.hi, dtype=np.float64)
  u = rng.random((n, lo.size))
  return np.clip(lo + (hi - lo) * u, lo, hi)


def _mixture(spec: GaussianMixtureSpec, n: int, rng) -> np.ndarray:
  weights = np.array([c.weight for c in spec.components])
  means = np.array([c.mean for c in spec.components], dtype=np.float64)
  stds = np.sqrt(np.array([c.cov_scale for c in spec.components], dtype=np.float64))
  which = np.searchsorted(np.cumsum(weights), rng.random(n), side="right")
  which = np.minimum(which, len(weights) - 1)
  z = standard_normal(rng, (n, means.shape[1]))
  return means[which] + stds[which, None] * z


def _halves(spec: PiecewiseUniformHalvesSpec, n: int, rng) -> np.ndarray:
  lo = np.asarray(spec.lo, dtype=np.float64)
  hi = np.asarray(spec.hi, dtype=np.float64)
  normal = np.asarray(spec.normal, dtype=np.float64)
  centre = 0.5 * (lo + hi)
  w_neg, w_pos = spec.weights
  negative = rng.random(n) < w_neg / (w_neg + w_pos)
  y = lo + (hi - lo) * rng.random((n, lo.size))
  side = (y - centre) @ normal
  # reflecting through the centre keeps the box and flips the side
  flip = (negative & (side > 0)) | (~negative & (side < 0))
  y[flip] = 2.0 * centre - y[flip]
  return np.clip(y, lo, hi)


def _delta(spec: DeltaSpec, n: int, rng) -> np.ndarray:
  return np.tile(np.asarray(spec.point, dtype=np.float64), (n, 1))


def _product(spec: ProductSpec, n: int, rng) -> np.ndarray:
  return np.concatenate([_draw(f, n, rng) for f in spec.factors], axis=1)


_SAMPLERS = {
  "gaussian": _gaussian,
  "uniform_box": _uniform_box,
  "gaussian_mixture": _mixture,
  "piecewise_uniform_halves": _halves,
  "delta": _delta,
  "product": _product,
}


def _draw(spec, n: int, rng) -> np.ndarray:
  sampler = _SAMPLERS.get(getattr(spec, "kind", None))
  if sampler is None:
    raise ConfigError(f"unsupported sampler {spec!r}", "rho0.kind")
  return sampler(spec, n, rng)


def draw(spec, n: int, seed: int) -> np.ndarray:
  """n samples of rho0 as an (n, d) array, reproducible from seed."""
  if n < 1:
    raise ConfigError(f"sample count must be at least 1, got {n}", "rho0")
  out = _draw(spec, n, make_rng(seed))
  logger.debug("Drew %d samples from %s (d=%d, seed=%d)", n, spec.kind, out.shape[1], seed)
  return out
