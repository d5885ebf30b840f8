"""Utility functions, including the numerically guarded linear algebra,
box sampling and the quantile and time-grid helpers used for aggregation.
"""
import logging

import jax.numpy as jnp
import jax.random as random
from jax import jit
import numpy as np


logger = logging.getLogger(__name__)

_cholesky = jit(jnp.linalg.cholesky)


class FactorizationError(ValueError):
  """Raised when a covariance matrix cannot be factorised even with jitter."""

  def __init__(self, message, attempted):
    super().__init__(message)
    self.attempted = tuple(attempted)


def box_bounds(d):
  """The scaled search domain [-1, 1]^d as a (d, 2) array."""
  return jnp.stack([-jnp.ones(d), jnp.ones(d)], axis=1)


def sample_box(rng, n, d, bounds=None):
  """Sample `n` points uniformly in an axis-aligned box.

  Args:
    rng: JAX PRNG key.
    n: number of points.
    d: dimension.
    bounds: (d, 2) array of (low, high) rows, defaults to [-1, 1]^d.
  Returns:
    (n, d) array of points.
  """
  if bounds is None:
    bounds = box_bounds(d)
  bounds = jnp.asarray(bounds, dtype=float)
  return random.uniform(
    rng, (n, d), minval=bounds[:, 0], maxval=bounds[:, 1])


def in_box(x, bounds=None, atol=1e-12):
  x = jnp.atleast_2d(jnp.asarray(x, dtype=float))
  if bounds is None:
    bounds = box_bounds(x.shape[-1])
  return bool(jnp.all(x >= bounds[:, 0] - atol) & jnp.all(x <= bounds[:, 1] + atol))


def _is_valid_factor(L):
  return bool(jnp.all(jnp.isfinite(L)) & jnp.all(jnp.diag(L) > 0.))


def cholesky_with_jitter(K, jitter_scale=None):
  """Lower Cholesky factor of `K`, adding diagonal jitter only when needed.

  The first attempt adds no jitter. After that the jitter grows from 1e-10 to
  1e-4 in decades, relative to `jitter_scale` (the mean of the diagonal of
  `K` by default).

  Returns:
    (L, jitter) with L @ L.T == K + jitter * I.
  Raises:
    FactorizationError: if every jitter level fails.
  """
  K = jnp.asarray(K, dtype=float)
  n = K.shape[0]
  if n == 0:
    return K, 0.
  if jitter_scale is None:
    jitter_scale = float(jnp.mean(jnp.diag(K)))
  jitter_scale = abs(jitter_scale) if jitter_scale else 1.
  levels = [0.] + [jitter_scale * 10.**e for e in range(-10, -3)]
  eye = jnp.eye(n)
  attempted = []
  for jitter in levels:
    attempted.append(jitter)
    L = _cholesky(K + jitter * eye)
    if _is_valid_factor(L):
      if jitter > 0.:
        logger.debug("Cholesky needed jitter %.3e on a %d x %d matrix", jitter, n, n)
      return L, jitter
  raise FactorizationError(
    "Cholesky factorisation failed for all jitter levels {}".format(attempted), attempted)


def nearest_rank_quantile(values, q, axis=0):
  """Nearest-rank quantile: the ceil(q * n)-th smallest value along `axis`."""
  if not 0. <= q <= 1.:
    raise ValueError("Quantile must lie in [0, 1], got {}".format(q))
  values = np.sort(np.asarray(values, dtype=float), axis=axis)
  n = values.shape[axis]
  if n == 0:
    raise ValueError("Cannot take a quantile of an empty set")
  index = max(int(np.ceil(q * n)) - 1, 0)
  return np.take(values, index, axis=axis)


def get_time_grid(t1, num_points=101, t0=0.):
  """
  Get linear, monotonically increasing grid of simulated times.
  Args:
    t1: final time.
    num_points: number of grid points, including both end points.
    t0: initial time.
  Returns:
    ts: numpy array of monotonically increasing values t in [t0, t1].
    dt: spacing of the grid.
  """
  if num_points < 2:
    raise ValueError("A time grid needs at least two points, got {}".format(num_points))
  if not t1 > t0:
    raise ValueError("Final time {} must exceed initial time {}".format(t1, t0))
  ts, dt = np.linspace(t0, t1, num_points, retstep=True)
  assert np.isclose(dt, (t1 - t0) / (num_points - 1))
  return ts, dt


def step_interpolate(times, values, grid):
  """Value of a right-continuous step function at each grid time.

  `times` must be non-decreasing. Grid times before the first entry take the
  first value.
  """
  times = np.asarray(times, dtype=float)
  values = np.asarray(values, dtype=float)
  index = np.searchsorted(times, np.asarray(grid, dtype=float), side="right") - 1
  return values[np.clip(index, 0, len(values) - 1)]
