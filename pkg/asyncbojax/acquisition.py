"""UCB acquisition, local penalisers, Lipschitz estimation and the
acquisition maximiser."""
import enum
from typing import Any

import flax
import jax.numpy as jnp
from jax.scipy.special import erfc

from asyncbojax.gp import predict, posterior_mean_gradients
from asyncbojax.utils import box_bounds, sample_box


LIPSCHITZ_FLOOR = 1e-6
SIGMA_FLOOR = 1e-9
ZERO_DISTANCE = 1e-12


class PenaliserKind(enum.Enum):
  SOFT = "soft"
  HARD = "hard"


@flax.struct.dataclass
class PenaliserParams:
  """Exclusion-ball parameters around one busy location.

  `mu` and `min_estimate` are in objective orientation (smaller is better).
  """
  center: Any
  mu: Any
  sigma: Any
  lipschitz: Any
  min_estimate: Any
  gamma: Any
  p: Any
  radius_denominator: Any

  @classmethod
  def create(cls, center, mu, sigma, lipschitz, min_estimate, gamma=1., p=-5.):
    if not gamma > 0.:
      raise ValueError("gamma must be positive, got {}".format(gamma))
    if not p < 0.:
      raise ValueError("p must be negative, got {}".format(p))
    if not lipschitz > 0.:
      raise ValueError("lipschitz must be positive, got {}".format(lipschitz))
    if sigma < 0.:
      raise ValueError("sigma must be non-negative, got {}".format(sigma))
    radius_denominator = radius(mu, sigma, lipschitz, min_estimate, gamma)
    if not radius_denominator > 0.:
      raise ValueError("Degenerate exclusion radius {}".format(radius_denominator))
    return cls(
      center=jnp.asarray(center, dtype=float), mu=float(mu), sigma=float(sigma),
      lipschitz=float(lipschitz), min_estimate=float(min_estimate),
      gamma=float(gamma), p=float(p), radius_denominator=float(radius_denominator))

  @property
  def expected_radius(self):
    return abs(self.mu - self.min_estimate) / self.lipschitz


def radius(mu, sigma, lipschitz, min_estimate, gamma=1.):
  """E(r) + gamma * sigma / L with E(r) = |mu - M| / L."""
  return abs(float(mu) - float(min_estimate)) / float(lipschitz) + float(gamma) * float(sigma) / float(lipschitz)


@flax.struct.dataclass
class AcqMaxBudget:
  n_random: int = flax.struct.field(pytree_node=False, default=3000)
  n_refine: int = flax.struct.field(pytree_node=False, default=5)
  refine_steps: int = flax.struct.field(pytree_node=False, default=20)
  refine_step_size: float = flax.struct.field(pytree_node=False, default=0.01)

  def __post_init__(self):
    if self.n_random < 1 or self.n_refine < 1 or self.refine_steps < 0:
      raise ValueError("Invalid acquisition budget {}".format(self))
    if self.n_refine > self.n_random:
      raise ValueError("n_refine ({}) exceeds n_random ({})".format(self.n_refine, self.n_random))
    if not self.refine_step_size > 0.:
      raise ValueError("refine_step_size must be positive, got {}".format(self.refine_step_size))


def ucb(model, x, kappa):
  """Upper confidence bound mu + kappa * sigma, batched over rows of x."""
  x = jnp.asarray(x, dtype=float)
  mean, variance = predict(model, x)
  values = mean + kappa * jnp.sqrt(variance)
  return values[0] if x.ndim == 1 else values


def nonneg_shift(values):
  values = jnp.asarray(values, dtype=float)
  if values.size == 0:
    raise ValueError("nonneg_shift needs at least one value")
  if not bool(jnp.all(jnp.isfinite(values))):
    raise ValueError("Acquisition values must be finite")
  return values - jnp.min(values)


def estimate_min(observations):
  """Best (smallest) observed value."""
  observations = jnp.asarray(observations, dtype=float).reshape(-1)
  if observations.size == 0:
    raise ValueError("estimate_min needs at least one observation")
  return jnp.min(observations)


def lipschitz_from_points(model, points):
  """Largest posterior mean gradient norm over the given points, floored."""
  points = jnp.asarray(points, dtype=float).reshape(-1, model.hyperparams.dim)
  if points.shape[0] == 0:
    return LIPSCHITZ_FLOOR
  norms = jnp.linalg.norm(posterior_mean_gradients(model, points), axis=-1)
  return max(float(jnp.max(norms)), LIPSCHITZ_FLOOR)


def estimate_global_lipschitz(model, n_grid, rng, bounds=None):
  """Global L estimate over `n_grid` uniform points plus the training inputs."""
  if n_grid < 1:
    raise ValueError("n_grid must be positive, got {}".format(n_grid))
  d = model.hyperparams.dim
  points = jnp.concatenate([sample_box(rng, n_grid, d, bounds), model.X])
  return lipschitz_from_points(model, points)


def local_box(center, lengthscales):
  """Hypercube of side `lengthscales` around `center`, clipped to [-1, 1]^d."""
  center = jnp.asarray(center, dtype=float)
  half = 0.5 * jnp.asarray(lengthscales, dtype=float)
  return jnp.stack([jnp.maximum(center - half, -1.), jnp.minimum(center + half, 1.)], axis=1)


def estimate_local_lipschitz(model, center, lengthscales, n_grid, rng):
  if n_grid < 1:
    raise ValueError("n_grid must be positive, got {}".format(n_grid))
  bounds = local_box(center, lengthscales)
  return lipschitz_from_points(model, sample_box(rng, n_grid, bounds.shape[0], bounds))


def _distance(x, center):
  return jnp.linalg.norm(jnp.asarray(x, dtype=float) - center, axis=-1)


def hard_local_penaliser(x, params):
  """Smooth hard penaliser [(r / R)^p + 1]^(1/p); exactly 0 at the center."""
  dist = _distance(x, params.center)
  safe = jnp.maximum(dist, ZERO_DISTANCE)
  value = ((safe / params.radius_denominator)**params.p + 1.)**(1. / params.p)
  return jnp.where(dist <= ZERO_DISTANCE, 0., value)


def soft_local_penaliser(x, params):
  """Gaussian-tail penaliser 0.5 * erfc(-z), z = (L r - mu + M) / (sqrt(2) sigma)."""
  dist = _distance(x, params.center)
  sigma = max(params.sigma, SIGMA_FLOOR)
  z = (params.lipschitz * dist - params.mu + params.min_estimate) / (jnp.sqrt(2.) * sigma)
  return 0.5 * erfc(-z)


def get_penaliser(kind):
  if kind == PenaliserKind.HARD:
    return hard_local_penaliser
  elif kind == PenaliserKind.SOFT:
    return soft_local_penaliser
  else:
    raise NotImplementedError(f"Penaliser {kind} unknown.")


def penalised_acquisition(model, x, penalisers, kappa, penaliser_kind, shift):
  """Shifted UCB times the product of the penalisers around busy locations.

  Args:
    model: GPModel of the negated, standardised objective.
    x: d-vector or m x d matrix.
    penalisers: sequence of PenaliserParams, one per busy location.
    kappa: UCB exploration weight.
    penaliser_kind: PenaliserKind.
    shift: constant subtracted from UCB; values below it are clamped to 0.
  """
  x = jnp.asarray(x, dtype=float)
  values = jnp.maximum(ucb(model, x, kappa) - shift, 0.)
  if len(penalisers):
    penaliser = get_penaliser(penaliser_kind)
    for params in penalisers:
      values = values * penaliser(x, params)
  return values


def _pattern_search(utility, starts, values, budget, bounds):
  r, d = starts.shape
  directions = jnp.concatenate([jnp.eye(d), -jnp.eye(d)])
  steps = jnp.full(r, budget.refine_step_size)
  for _ in range(budget.refine_steps):
    proposals = starts[:, None, :] + steps[:, None, None] * directions[None, :, :]
    proposals = jnp.clip(proposals, bounds[:, 0], bounds[:, 1])
    proposal_values = utility(proposals.reshape(-1, d)).reshape(r, 2 * d)
    best = jnp.argmax(proposal_values, axis=1)
    best_values = proposal_values[jnp.arange(r), best]
    improved = best_values > values
    starts = jnp.where(improved[:, None], proposals[jnp.arange(r), best], starts)
    values = jnp.where(improved, best_values, values)
    steps = jnp.where(improved, steps, 0.5 * steps)
  return starts, values


def maximise_acquisition(utility, d, budget, rng, candidates=None, bounds=None):
  """Random search followed by pattern-search refinement of the best samples.

  Args:
    utility: vectorised function from an m x d matrix to m values.
    d: dimension.
    budget: AcqMaxBudget.
    rng: PRNG key for the random pool.
    candidates: optional pre-drawn pool, used instead of drawing one.
    bounds: (d, 2) box, [-1, 1]^d by default.
  Returns:
    The best point found, a d-vector inside the box.
  """
  if bounds is None:
    bounds = box_bounds(d)
  bounds = jnp.asarray(bounds, dtype=float)
  if candidates is None:
    candidates = sample_box(rng, budget.n_random, d, bounds)
  candidates = jnp.asarray(candidates, dtype=float)
  values = jnp.asarray(utility(candidates))
  n_refine = min(budget.n_refine, candidates.shape[0])
  top = jnp.argsort(-values)[:n_refine]
  refined, refined_values = _pattern_search(utility, candidates[top], values[top], budget, bounds)
  best = int(jnp.argmax(refined_values))
  return refined[best]
