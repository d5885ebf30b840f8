"""Point-selection strategies: PLAyBOOK local penalisation, Kriging Believer,
Thompson sampling and plain sequential UCB, in asynchronous and synchronous
batch form."""
import abc
import enum
import logging
from typing import Any, Tuple

import flax
import jax.numpy as jnp
import jax.random as random
import numpy as np

from asyncbojax.acquisition import (
  AcqMaxBudget, PenaliserKind, PenaliserParams, SIGMA_FLOOR,
  estimate_global_lipschitz, estimate_local_lipschitz, estimate_min,
  maximise_acquisition, penalised_acquisition, ucb)
from asyncbojax.gp import (
  HyperOptConfig, KernelHyperparams, build_model, condition_on_hallucinated,
  fit_gp, predict, sample_posterior)
from asyncbojax.utils import in_box, sample_box


logger = logging.getLogger(__name__)


class StrategyKind(enum.Enum):
  PLAYBOOK_L = "playbook-l"
  PLAYBOOK_LL = "playbook-ll"
  PLAYBOOK_H = "playbook-h"
  PLAYBOOK_HL = "playbook-hl"
  KB = "kb"
  TS = "ts"
  SEQUENTIAL = "sequential"

  @property
  def is_playbook(self):
    return self.name.startswith("PLAYBOOK")

  @property
  def penaliser(self):
    if self in (StrategyKind.PLAYBOOK_L, StrategyKind.PLAYBOOK_LL):
      return PenaliserKind.SOFT
    elif self in (StrategyKind.PLAYBOOK_H, StrategyKind.PLAYBOOK_HL):
      return PenaliserKind.HARD
    return None

  @property
  def local_lipschitz(self):
    return self in (StrategyKind.PLAYBOOK_LL, StrategyKind.PLAYBOOK_HL)


@flax.struct.dataclass
class BusySet:
  """Locations under evaluation and, once computed, their penaliser parameters."""
  locations: Any
  params: Tuple[PenaliserParams, ...] = ()

  @classmethod
  def create(cls, locations, d):
    locations = jnp.asarray(locations, dtype=float).reshape(-1, d)
    if locations.shape[0] and not in_box(locations):
      raise ValueError("Busy locations must lie in [-1, 1]^d")
    return cls(locations=locations)

  @classmethod
  def empty(cls, d):
    return cls(locations=jnp.zeros((0, d)))

  @property
  def size(self):
    return self.locations.shape[0]

  def add(self, x):
    return BusySet(locations=jnp.concatenate([self.locations, jnp.atleast_2d(x)]))


@flax.struct.dataclass
class SelectionConfig:
  kappa: float = flax.struct.field(pytree_node=False, default=2.)
  gamma: float = flax.struct.field(pytree_node=False, default=1.)
  p: float = flax.struct.field(pytree_node=False, default=-5.)
  ts_samples: int = flax.struct.field(pytree_node=False, default=10000)
  n_grid_per_dim: int = flax.struct.field(pytree_node=False, default=1000)
  exact_sample_limit: int = flax.struct.field(pytree_node=False, default=4096)
  n_features: int = flax.struct.field(pytree_node=False, default=1024)
  budget: AcqMaxBudget = flax.struct.field(pytree_node=False, default=AcqMaxBudget())

  def n_grid(self, d):
    return self.n_grid_per_dim * d


@flax.struct.dataclass
class SurrogateConfig:
  noise_variance: float = flax.struct.field(pytree_node=False, default=1e-6)
  hyperopt: HyperOptConfig = flax.struct.field(pytree_node=False, default=HyperOptConfig())
  refit_every: int = flax.struct.field(pytree_node=False, default=1)
  normalize_y: bool = flax.struct.field(pytree_node=False, default=True)


def initial_design(d, rng, n=None):
  """3 * d points uniform in [-1, 1]^d."""
  if d < 1:
    raise ValueError("Dimension must be at least 1, got {}".format(d))
  return sample_box(rng, 3 * d if n is None else n, d)


def objective_to_targets(y, normalize=True):
  """Map objective values to GP targets; the GP models the negated objective."""
  y = jnp.asarray(y, dtype=float)
  if normalize and y.size:
    y = (y - jnp.mean(y)) / jnp.maximum(jnp.std(y), 1e-12)
  return -y


def default_hyperparams(d):
  return KernelHyperparams.create(1., 0.5 * jnp.ones(d))


def fit_surrogate(X, y, config, rng, previous=None, refit=True):
  """Fit the surrogate to completed observations.

  Args:
    X: n x d completed inputs.
    y: n raw objective values.
    config: SurrogateConfig.
    rng: PRNG key for hyperparameter restarts.
    previous: earlier GPModel whose hyperparameters warm-start the fit.
    refit: when False the previous hyperparameters are reused as they are.
  """
  X = jnp.asarray(X, dtype=float)
  targets = objective_to_targets(y, config.normalize_y)
  hp_init = default_hyperparams(X.shape[1]) if previous is None else previous.hyperparams
  if refit or previous is None:
    return fit_gp(X, targets, config.noise_variance, hp_init, config.hyperopt, rng=rng)
  return build_model(X, targets, hp_init, config.noise_variance)


def penaliser_params(model, locations, kind, config, rng):
  """PenaliserParams for each busy location, in objective orientation."""
  if locations.shape[0] == 0:
    return ()
  d = model.hyperparams.dim
  means, variances = predict(model, locations)
  mu = -np.asarray(means)
  sigma = np.maximum(np.sqrt(np.asarray(variances)), SIGMA_FLOOR)
  min_estimate = float(estimate_min(-model.Y))
  keys = random.split(rng, locations.shape[0])
  if kind.local_lipschitz:
    lipschitz = [
      estimate_local_lipschitz(model, location, model.hyperparams.lengthscales, config.n_grid(d), key)
      for location, key in zip(locations, keys)]
  else:
    lipschitz = [estimate_global_lipschitz(model, config.n_grid(d), keys[0])] * locations.shape[0]
  params = tuple(
    PenaliserParams.create(locations[j], mu[j], sigma[j], lipschitz[j], min_estimate, config.gamma, config.p)
    for j in range(locations.shape[0]))
  for j, param in enumerate(params):
    logger.debug("Busy location %d: L=%.4g radius=%.4g", j, param.lipschitz, param.radius_denominator)
  return params


def _maximise_penalised(model, penalisers, penaliser_kind, config, rng):
  pool_rng, opt_rng = random.split(rng)
  d = model.hyperparams.dim
  candidates = sample_box(pool_rng, config.budget.n_random, d)
  shift = jnp.min(ucb(model, candidates, config.kappa))

  def utility(xs):
    return penalised_acquisition(model, xs, penalisers, config.kappa, penaliser_kind, shift)

  return maximise_acquisition(utility, d, config.budget, opt_rng, candidates=candidates)


def select_next_sequential(model, config, rng):
  """Plain UCB maximisation."""
  _, select_rng = random.split(rng)
  return _maximise_penalised(model, (), PenaliserKind.HARD, config, select_rng)


def select_next_playbook(model, busy, kind, config, rng):
  """Maximise UCB penalised around every busy location."""
  if not kind.is_playbook:
    raise ValueError("{} is not a PLAyBOOK variant".format(kind))
  params_rng, select_rng = random.split(rng)
  params = busy.params if len(busy.params) == busy.size else penaliser_params(
    model, busy.locations, kind, config, params_rng)
  return _maximise_penalised(model, params, kind.penaliser, config, select_rng)


def _batch_keys(rng, k):
  return [rng] + [random.fold_in(rng, j) for j in range(1, k)]


def select_batch_sync_playbook(model, k, kind, config, rng):
  """Greedy batch: each point is penalised by the earlier points of the batch."""
  if k < 1:
    raise ValueError("Batch size must be at least 1, got {}".format(k))
  busy = BusySet.empty(model.hyperparams.dim)
  for key in _batch_keys(rng, k):
    busy = busy.add(select_next_playbook(model, busy, kind, config, key))
  return busy.locations


def select_next_kb(model, busy, config, rng):
  """Hallucinate the posterior mean at busy locations, then maximise UCB."""
  _, select_rng = random.split(rng)
  if busy.size:
    means, _ = predict(model, busy.locations)
    model = condition_on_hallucinated(model, busy.locations, means)
  return _maximise_penalised(model, (), PenaliserKind.HARD, config, select_rng)


def select_next_ts(model, config, rng, candidates=None):
  """Best candidate under one joint posterior draw over a fresh uniform pool."""
  pool_rng, sample_rng = random.split(rng)
  if candidates is None:
    if config.ts_samples < 1:
      raise ValueError("ts_samples must be positive, got {}".format(config.ts_samples))
    candidates = sample_box(pool_rng, config.ts_samples, model.hyperparams.dim)
  candidates = jnp.asarray(candidates, dtype=float)
  draw = sample_posterior(
    model, candidates, sample_rng, exact_limit=config.exact_sample_limit, n_features=config.n_features)
  # the GP models the negated objective, so its argmax minimises the objective
  return candidates[jnp.argmax(draw)]


def select_batch_sync(model, k, kind, config, rng):
  """Synchronous batch for KB (iterative hallucination) and TS (k independent draws)."""
  if k < 1:
    raise ValueError("Batch size must be at least 1, got {}".format(k))
  d = model.hyperparams.dim
  if kind == StrategyKind.KB:
    busy = BusySet.empty(d)
    for key in _batch_keys(rng, k):
      busy = busy.add(select_next_kb(model, busy, config, key))
    return busy.locations
  elif kind == StrategyKind.TS:
    return jnp.stack([select_next_ts(model, config, key) for key in _batch_keys(rng, k)])
  raise ValueError("select_batch_sync handles KB and TS, got {}".format(kind))


class Strategy(abc.ABC):
  """Selection policy used by the simulator."""

  def __init__(self, kind, config):
    self.kind = kind
    self.config = config

  @abc.abstractmethod
  def select_next(self, model, busy, rng):
    """Select one point given the locations still under evaluation."""

  @abc.abstractmethod
  def select_batch(self, model, k, rng):
    """Select a synchronous batch of k points."""

  def select_replacements(self, model, busy, c, rng):
    """Select c points greedily, treating earlier picks as busy."""
    selected = []
    for key in _batch_keys(rng, c):
      x = self.select_next(model, busy, key)
      selected.append(x)
      busy = busy.add(x)
    return jnp.stack(selected)


class Playbook(Strategy):

  def select_next(self, model, busy, rng):
    return select_next_playbook(model, busy, self.kind, self.config, rng)

  def select_batch(self, model, k, rng):
    return select_batch_sync_playbook(model, k, self.kind, self.config, rng)


class KrigingBeliever(Strategy):

  def select_next(self, model, busy, rng):
    return select_next_kb(model, busy, self.config, rng)

  def select_batch(self, model, k, rng):
    return select_batch_sync(model, k, self.kind, self.config, rng)


class ThompsonSampling(Strategy):

  def select_next(self, model, busy, rng):
    return select_next_ts(model, self.config, rng)

  def select_batch(self, model, k, rng):
    return select_batch_sync(model, k, self.kind, self.config, rng)


class Sequential(Strategy):
  """UCB ignoring busy locations."""

  def select_next(self, model, busy, rng):
    return select_next_sequential(model, self.config, rng)

  def select_batch(self, model, k, rng):
    return jnp.stack([select_next_sequential(model, self.config, key) for key in _batch_keys(rng, k)])


def get_strategy(kind, config):
  if isinstance(kind, str):
    kind = StrategyKind(kind)
  if kind.is_playbook:
    return Playbook(kind, config)
  elif kind == StrategyKind.KB:
    return KrigingBeliever(kind, config)
  elif kind == StrategyKind.TS:
    return ThompsonSampling(kind, config)
  elif kind == StrategyKind.SEQUENTIAL:
    return Sequential(kind, config)
  else:
    raise NotImplementedError(f"Strategy {kind} unknown.")
