"""Synthetic objectives on [-1, 1]^d, their minima and the regret metric."""
import logging
from typing import Any, Callable, Optional

import flax
import jax.numpy as jnp
import jax.random as random
import numpy as np
import scipy.optimize

from asyncbojax.acquisition import AcqMaxBudget, maximise_acquisition
from asyncbojax.gp import KernelHyperparams, random_features


logger = logging.getLogger(__name__)

REGRET_FLOOR = 1e-12
BENCHMARKS = ("egg-2", "ack-5", "ack-10", "mic-5", "mic-10", "mat-2", "mat-6")


def scale_point(x, bounds, atol=1e-12):
  """Map a native point into [-1, 1]^d."""
  x = jnp.asarray(x, dtype=float)
  bounds = jnp.asarray(bounds, dtype=float)
  if bool(jnp.any(x < bounds[:, 0] - atol) | jnp.any(x > bounds[:, 1] + atol)):
    raise ValueError("Point {} lies outside the native bounds".format(x))
  return 2. * (x - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0]) - 1.


def unscale_point(x, bounds, atol=1e-12):
  """Map a point of [-1, 1]^d into the native box."""
  x = jnp.asarray(x, dtype=float)
  bounds = jnp.asarray(bounds, dtype=float)
  if bool(jnp.any(jnp.abs(x) > 1. + atol)):
    raise ValueError("Point {} lies outside [-1, 1]^d".format(x))
  return bounds[:, 0] + (x + 1.) * 0.5 * (bounds[:, 1] - bounds[:, 0])


def ackley(x):
  """Ackley function on the rows of x; exactly 0 at the origin."""
  x = jnp.atleast_2d(x)
  a = 20. - 20. * jnp.exp(-0.2 * jnp.sqrt(jnp.mean(x**2, axis=-1)))
  # e - exp(mean cos) written so that it vanishes exactly at the origin
  b = -jnp.e * jnp.expm1(jnp.mean(jnp.cos(2. * jnp.pi * x), axis=-1) - 1.)
  return a + b


def eggholder(x):
  x = jnp.atleast_2d(x)
  x1, x2 = x[:, 0], x[:, 1]
  return (-(x2 + 47.) * jnp.sin(jnp.sqrt(jnp.abs(x2 + x1 / 2. + 47.)))
          - x1 * jnp.sin(jnp.sqrt(jnp.abs(x1 - (x2 + 47.)))))


def michalewicz(x, m=10):
  x = jnp.atleast_2d(x)
  i = jnp.arange(1, x.shape[-1] + 1)
  return -jnp.sum(jnp.sin(x) * jnp.sin(i * x**2 / jnp.pi)**(2 * m), axis=-1)


@flax.struct.dataclass
class Problem:
  name: str = flax.struct.field(pytree_node=False)
  d: int = flax.struct.field(pytree_node=False)
  native_bounds: Any = flax.struct.field(pytree_node=False)
  objective: Callable = flax.struct.field(pytree_node=False)
  true_min_value: float = flax.struct.field(pytree_node=False)
  true_min_provenance: str = flax.struct.field(pytree_node=False)
  native_argmin: Optional[Any] = flax.struct.field(pytree_node=False, default=None)
  noise_variance: float = flax.struct.field(pytree_node=False, default=1e-6)

  def evaluate_batch(self, X):
    """Objective at the rows of a scaled m x d matrix."""
    X = jnp.atleast_2d(jnp.asarray(X, dtype=float))
    if X.shape[-1] != self.d:
      raise ValueError("{} expects dimension {}, got shape {}".format(self.name, self.d, X.shape))
    return self.objective(unscale_point(X, self.native_bounds))

  def evaluate(self, x):
    """Objective at one scaled point, as a Python float."""
    x = jnp.asarray(x, dtype=float)
    if x.shape != (self.d,):
      raise ValueError("{} expects a {}-vector, got shape {}".format(self.name, self.d, x.shape))
    return float(self.evaluate_batch(x[None, :])[0])

  def regret(self, value):
    return log_simple_regret(value, self.true_min_value)


def log_simple_regret(best_observed, true_min):
  """log10 of the simple regret, clamped below at 1e-12."""
  return float(np.log10(max(abs(float(true_min) - float(best_observed)), REGRET_FLOOR)))


def regret_trace(event_log, problem):
  """Best-so-far log10 regret after the design and after each finish."""
  return np.array([problem.regret(v) for v in event_log.best_so_far()])


def _eggholder_minimum():
  # the global minimiser sits on the x1 = 512 edge
  result = scipy.optimize.minimize_scalar(
    lambda x2: float(eggholder(jnp.array([512., x2]))[0]),
    bounds=(404., 404.5), method="bounded", options={"xatol": 1e-10})
  return np.array([512., result.x]), float(result.fun)


def _matern_draw(d, seed, lengthscale=0.3, n_features=1024):
  """A fixed random-feature realisation of a Matern-5/2 prior sample."""
  feature_rng, weight_rng = random.split(random.PRNGKey(seed))
  hp = KernelHyperparams.create(1., lengthscale * jnp.ones(d))
  features = random_features(feature_rng, d, n_features, hp)
  w = random.normal(weight_rng, (n_features,))

  def objective(x):
    return features(jnp.atleast_2d(x)) @ w

  return objective


def _estimate_minimum(objective, d, seed, n_starts=1000):
  budget = AcqMaxBudget(n_random=20 * n_starts, n_refine=n_starts, refine_steps=200, refine_step_size=0.05)
  x = maximise_acquisition(lambda X: -objective(X), d, budget, random.PRNGKey(seed))
  return x, float(objective(x)[0])


def make_benchmark(name, seed=None):
  """Build a registered problem.

  Args:
    name: one of `BENCHMARKS`.
    seed: seed of the prior draw for mat-d problems (default 0).
  """
  if name not in BENCHMARKS:
    raise ValueError("Unknown benchmark {}, valid names are {}".format(name, ", ".join(BENCHMARKS)))
  family, d = name.split("-")
  d = int(d)
  if family == "ack":
    bounds = np.tile([-32.768, 32.768], (d, 1))
    return Problem(name=name, d=d, native_bounds=bounds, objective=ackley, true_min_value=0.,
                   true_min_provenance="analytic", native_argmin=np.zeros(d))
  elif family == "egg":
    bounds = np.tile([-512., 512.], (d, 1))
    argmin, value = _eggholder_minimum()
    return Problem(name=name, d=d, native_bounds=bounds, objective=eggholder, true_min_value=value,
                   true_min_provenance="analytic", native_argmin=argmin)
  elif family == "mic":
    bounds = np.tile([0., np.pi], (d, 1))
    value = {5: -4.687658179088, 10: -9.660151715641}[d]
    return Problem(name=name, d=d, native_bounds=bounds, objective=michalewicz, true_min_value=value,
                   true_min_provenance="analytic")
  else:
    seed = 0 if seed is None else seed
    objective = _matern_draw(d, seed)
    x, value = _estimate_minimum(objective, d, seed)
    logger.info("Estimated minimum of %s (seed %d): %.6g", name, seed, value)
    return Problem(name=name, d=d, native_bounds=np.tile([-1., 1.], (d, 1)), objective=objective,
                   true_min_value=value, true_min_provenance="estimated", native_argmin=np.asarray(x))
