"""Gaussian process surrogate: Matern-5/2 ARD kernel, exact posterior,
marginal-likelihood fitting, posterior mean gradients and posterior sampling.
"""
import logging
from typing import Any, Tuple

import flax
import jax.numpy as jnp
import jax.random as random
from jax import jit, value_and_grad
from jax.scipy.linalg import cho_solve, solve_triangular
import numpy as np
import scipy.optimize

from asyncbojax.utils import cholesky_with_jitter


logger = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.)
_BAD_OBJECTIVE = 1e25


@flax.struct.dataclass
class KernelHyperparams:
  signal_variance: Any
  lengthscales: Any

  @classmethod
  def create(cls, signal_variance, lengthscales):
    signal_variance = float(signal_variance)
    lengthscales = jnp.atleast_1d(jnp.asarray(lengthscales, dtype=float))
    if lengthscales.ndim != 1:
      raise ValueError("lengthscales must be a vector, got shape {}".format(lengthscales.shape))
    if not (np.isfinite(signal_variance) and signal_variance > 0.):
      raise ValueError("signal_variance must be positive and finite, got {}".format(signal_variance))
    if not bool(jnp.all(jnp.isfinite(lengthscales)) & jnp.all(lengthscales > 0.)):
      raise ValueError("lengthscales must be positive and finite, got {}".format(lengthscales))
    return cls(signal_variance=jnp.asarray(signal_variance), lengthscales=lengthscales)

  @property
  def dim(self):
    return self.lengthscales.shape[0]

  def to_log(self):
    return jnp.concatenate([jnp.log(jnp.atleast_1d(self.signal_variance)), jnp.log(self.lengthscales)])

  @classmethod
  def from_log(cls, theta):
    theta = jnp.asarray(theta, dtype=float)
    return cls.create(jnp.exp(theta[0]), jnp.exp(theta[1:]))


@flax.struct.dataclass
class HyperOptConfig:
  n_restarts: int = flax.struct.field(pytree_node=False, default=5)
  max_iters: int = flax.struct.field(pytree_node=False, default=200)
  log_signal_variance_bounds: Tuple[float, float] = flax.struct.field(
    pytree_node=False, default=(float(np.log(1e-3)), float(np.log(1e3))))
  log_lengthscale_bounds: Tuple[float, float] = flax.struct.field(
    pytree_node=False, default=(float(np.log(1e-2)), float(np.log(10.))))

  def __post_init__(self):
    if self.n_restarts < 1:
      raise ValueError("n_restarts must be at least 1, got {}".format(self.n_restarts))
    if self.max_iters < 0:
      raise ValueError("max_iters must be non-negative, got {}".format(self.max_iters))
    for name in ("log_signal_variance_bounds", "log_lengthscale_bounds"):
      low, high = getattr(self, name)
      if not low < high:
        raise ValueError("{} must satisfy low < high, got {}".format(name, (low, high)))

  def bounds(self, d):
    """(d + 1, 2) array of log-space bounds, signal variance first."""
    return np.array([self.log_signal_variance_bounds] + [self.log_lengthscale_bounds] * d, dtype=float)


@flax.struct.dataclass
class GPModel:
  X: Any
  Y: Any
  hyperparams: KernelHyperparams
  noise_variance: Any
  factor: Any
  alpha: Any
  jitter: float = flax.struct.field(pytree_node=False, default=0.)

  @property
  def num_data(self):
    return self.X.shape[0]

  @property
  def dim(self):
    return self.X.shape[1]


def _matern52_from_sq_dist(r2, signal_variance):
  # sqrt floor keeps gradients finite at r = 0
  r = jnp.sqrt(jnp.maximum(r2, 1e-36))
  a = SQRT5 * r
  return signal_variance * (1. + a + a**2 / 3.) * jnp.exp(-a)


@jit
def _scaled_sq_dist(X1, X2, lengthscales):
  A = X1 / lengthscales
  B = X2 / lengthscales
  r2 = jnp.sum(A**2, axis=-1)[:, None] + jnp.sum(B**2, axis=-1)[None, :] - 2. * A @ B.T
  return jnp.maximum(r2, 0.)


@jit
def gram(X1, X2, signal_variance, lengthscales):
  """Matern-5/2 ARD cross-covariance matrix between the rows of X1 and X2."""
  return _matern52_from_sq_dist(_scaled_sq_dist(X1, X2, lengthscales), signal_variance)


def matern52_ard(x, x2, hp):
  """Matern-5/2 covariance with one lengthscale per input dimension.

  Args:
    x, x2: d-vectors.
    hp: KernelHyperparams.
  Returns:
    sigma_f^2 (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r) with r the
    lengthscale-weighted distance.
  """
  x = jnp.asarray(x, dtype=float)
  x2 = jnp.asarray(x2, dtype=float)
  if x.shape != x2.shape or x.shape != (hp.dim,):
    raise ValueError(
      "Expected two vectors of dimension {}, got shapes {} and {}".format(hp.dim, x.shape, x2.shape))
  r2 = jnp.sum(((x - x2) / hp.lengthscales)**2)
  return _matern52_from_sq_dist(r2, hp.signal_variance)


def _check_data(X, Y):
  X = jnp.asarray(X, dtype=float)
  Y = jnp.asarray(Y, dtype=float).reshape(-1)
  if X.ndim != 2:
    raise ValueError("X must be an n x d matrix, got shape {}".format(X.shape))
  if X.shape[0] != Y.shape[0]:
    raise ValueError("X has {} rows but Y has {} entries".format(X.shape[0], Y.shape[0]))
  return X, Y


def _neg_log_marginal_likelihood(theta, X, Y, noise_variance):
  signal_variance = jnp.exp(theta[0])
  lengthscales = jnp.exp(theta[1:])
  n = X.shape[0]
  K = gram(X, X, signal_variance, lengthscales) + noise_variance * jnp.eye(n)
  L = jnp.linalg.cholesky(K)
  alpha = cho_solve((L, True), Y)
  return 0.5 * Y @ alpha + jnp.sum(jnp.log(jnp.diag(L))) + 0.5 * n * jnp.log(2. * jnp.pi)


_nll_value_and_grad = jit(value_and_grad(_neg_log_marginal_likelihood))


def log_marginal_likelihood(X, Y, hp, noise_variance):
  """-1/2 Y^T K^-1 Y - 1/2 log|K| - n/2 log(2 pi), with K = K(X, X) + noise I.

  Raises:
    FactorizationError: if K cannot be factorised after jitter escalation.
  """
  X, Y = _check_data(X, Y)
  n = X.shape[0]
  K = gram(X, X, hp.signal_variance, hp.lengthscales) + noise_variance * jnp.eye(n)
  L, _ = cholesky_with_jitter(K)
  alpha = cho_solve((L, True), Y)
  return -0.5 * Y @ alpha - jnp.sum(jnp.log(jnp.diag(L))) - 0.5 * n * jnp.log(2. * jnp.pi)


def build_model(X, Y, hp, noise_variance):
  """Factorise K(X, X) + noise I for fixed hyperparameters."""
  X, Y = _check_data(X, Y)
  if noise_variance < 0.:
    raise ValueError("noise_variance must be non-negative, got {}".format(noise_variance))
  if X.shape[1] != hp.dim:
    raise ValueError("X has dimension {} but hyperparameters have {}".format(X.shape[1], hp.dim))
  n = X.shape[0]
  if n == 0:
    return GPModel(X=X, Y=Y, hyperparams=hp, noise_variance=jnp.asarray(float(noise_variance)),
                   factor=jnp.zeros((0, 0)), alpha=jnp.zeros((0,)), jitter=0.)
  K = gram(X, X, hp.signal_variance, hp.lengthscales) + noise_variance * jnp.eye(n)
  factor, jitter = cholesky_with_jitter(K)
  alpha = cho_solve((factor, True), Y)
  return GPModel(X=X, Y=Y, hyperparams=hp, noise_variance=jnp.asarray(float(noise_variance)),
                 factor=factor, alpha=alpha, jitter=float(jitter))


def _optimise_hyperparams(X, Y, noise_variance, hp_init, opt, rng):
  d = X.shape[1]
  bounds = opt.bounds(d)
  noise_variance = jnp.asarray(float(noise_variance))

  def objective(theta):
    value, grad = _nll_value_and_grad(jnp.asarray(theta), X, Y, noise_variance)
    value = float(value)
    grad = np.asarray(grad, dtype=float)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
      return _BAD_OBJECTIVE, np.zeros_like(theta)
    return value, grad

  theta_init = np.asarray(hp_init.to_log(), dtype=float)
  starts = [np.clip(theta_init, bounds[:, 0], bounds[:, 1])]
  if opt.n_restarts > 1:
    if rng is None:
      rng = random.PRNGKey(0)
    u = np.asarray(random.uniform(rng, (opt.n_restarts - 1, d + 1)))
    starts.extend(bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0]))

  best_theta = theta_init
  best_value = objective(theta_init)[0]
  for start in starts:
    result = scipy.optimize.minimize(
      objective, start, jac=True, method="L-BFGS-B", bounds=bounds,
      options={"maxiter": opt.max_iters})
    if np.isfinite(result.fun) and result.fun < best_value:
      best_theta, best_value = result.x, float(result.fun)
  if best_theta is theta_init:
    logger.warning("Hyperparameter search did not improve on the initial value")
  else:
    logger.debug("Fitted log hyperparameters %s, negative LML %.6g", best_theta, best_value)
  return KernelHyperparams.from_log(best_theta)


def fit_gp(X, Y, noise_variance, hp_init, opt, rng=None):
  """Fit kernel hyperparameters by maximising the log marginal likelihood.

  Args:
    X: n x d training inputs in [-1, 1]^d.
    Y: n training targets.
    noise_variance: fixed observation noise variance.
    hp_init: starting hyperparameters; kept if no restart improves on them.
    opt: HyperOptConfig.
    rng: PRNG key for the random restarts.
  Returns:
    A factorised GPModel.
  """
  X, Y = _check_data(X, Y)
  if noise_variance < 0.:
    raise ValueError("noise_variance must be non-negative, got {}".format(noise_variance))
  hp = hp_init
  if opt.max_iters > 0 and X.shape[0] > 0:
    hp = _optimise_hyperparams(X, Y, noise_variance, hp_init, opt, rng)
  return build_model(X, Y, hp, noise_variance)


@jit
def _predict(X, factor, alpha, signal_variance, lengthscales, Xs):
  Ks = gram(Xs, X, signal_variance, lengthscales)
  mean = Ks @ alpha
  V = solve_triangular(factor, Ks.T, lower=True)
  variance = signal_variance - jnp.sum(V**2, axis=0)
  return mean, jnp.maximum(variance, 0.)


def _as_batch(model, x):
  x = jnp.asarray(x, dtype=float)
  if x.shape[-1] != model.hyperparams.dim:
    raise ValueError("Expected inputs of dimension {}, got shape {}".format(model.hyperparams.dim, x.shape))
  return jnp.atleast_2d(x)


def predict(model, Xs):
  """Posterior means and clamped variances at the rows of Xs."""
  Xs = _as_batch(model, Xs)
  hp = model.hyperparams
  if model.num_data == 0:
    return jnp.zeros(Xs.shape[0]), jnp.full(Xs.shape[0], hp.signal_variance)
  return _predict(model.X, model.factor, model.alpha, hp.signal_variance, hp.lengthscales, Xs)


def posterior(model, x):
  """Posterior (mean, variance) at a single d-vector."""
  x = jnp.asarray(x, dtype=float)
  if x.ndim != 1:
    raise ValueError("Expected a d-vector, got shape {}".format(x.shape))
  mean, variance = predict(model, x[None, :])
  return mean[0], variance[0]


@jit
def _mean_gradients(X, alpha, signal_variance, lengthscales, Xs):
  diff = Xs[:, None, :] - X[None, :, :]
  r = jnp.sqrt(jnp.sum((diff / lengthscales)**2, axis=-1))
  coef = -(5. / 3.) * signal_variance * (1. + SQRT5 * r) * jnp.exp(-SQRT5 * r)
  return jnp.einsum("mn,n,mnd->md", coef, alpha, diff / lengthscales**2)


def posterior_mean_gradients(model, Xs):
  """Gradients of the posterior mean at the rows of Xs, shape (m, d)."""
  Xs = _as_batch(model, Xs)
  if model.num_data == 0:
    return jnp.zeros_like(Xs)
  hp = model.hyperparams
  return _mean_gradients(model.X, model.alpha, hp.signal_variance, hp.lengthscales, Xs)


def posterior_mean_gradient(model, x):
  x = jnp.asarray(x, dtype=float)
  return posterior_mean_gradients(model, x[None, :])[0]


def random_features(rng, d, n_features, hp):
  """Random Fourier features whose inner products approximate the Matern-5/2 kernel."""
  z_rng, g_rng, b_rng = random.split(rng, 3)
  z = random.normal(z_rng, (n_features, d))
  # chi-squared with 5 degrees of freedom gives the Student-t spectral density
  g = 2. * random.gamma(g_rng, 2.5, (n_features,))
  omega = z / hp.lengthscales * jnp.sqrt(5. / g)[:, None]
  b = random.uniform(b_rng, (n_features,), maxval=2. * jnp.pi)
  scale = jnp.sqrt(2. * hp.signal_variance / n_features)

  def features(Xs):
    return scale * jnp.cos(Xs @ omega.T + b)

  return features


def _pathwise_sample(model, candidates, rng, n_features):
  feature_rng, w_rng, noise_rng = random.split(rng, 3)
  hp = model.hyperparams
  features = random_features(feature_rng, model.hyperparams.dim, n_features, hp)
  w = random.normal(w_rng, (n_features,))
  prior_candidates = features(candidates) @ w
  if model.num_data == 0:
    return prior_candidates
  prior_data = features(model.X) @ w
  eps = jnp.sqrt(model.noise_variance) * random.normal(noise_rng, (model.num_data,))
  residual = cho_solve((model.factor, True), model.Y - prior_data - eps)
  return prior_candidates + gram(candidates, model.X, hp.signal_variance, hp.lengthscales) @ residual


def sample_posterior(model, candidates, rng, n_samples=None, exact_limit=4096, n_features=1024):
  """Joint draw(s) of the latent function at the candidate rows.

  Up to `exact_limit` candidates the draw is exact through a Cholesky factor
  of the posterior covariance. Above it, a random-feature prior sample is
  updated pathwise with the exact kernel.

  Args:
    model: GPModel.
    candidates: m x d matrix.
    rng: PRNG key.
    n_samples: number of independent draws, or `None` for a single draw.
  Returns:
    An m-vector, or an (n_samples, m) array.
  """
  candidates = _as_batch(model, candidates)
  m = candidates.shape[0]
  if m < 1:
    raise ValueError("sample_posterior needs at least one candidate")
  num = 1 if n_samples is None else n_samples
  if m <= exact_limit:
    hp = model.hyperparams
    mean, _ = predict(model, candidates)
    cov = gram(candidates, candidates, hp.signal_variance, hp.lengthscales)
    if model.num_data > 0:
      V = solve_triangular(model.factor, gram(model.X, candidates, hp.signal_variance, hp.lengthscales), lower=True)
      cov = cov - V.T @ V
    cov = 0.5 * (cov + cov.T)
    L, _ = cholesky_with_jitter(cov, jitter_scale=float(hp.signal_variance))
    draws = mean[None, :] + (L @ random.normal(rng, (m, num))).T
  else:
    draws = jnp.stack([
      _pathwise_sample(model, candidates, key, n_features) for key in random.split(rng, num)])
  return draws[0] if n_samples is None else draws


def condition_on_hallucinated(model, points, values):
  """Append pseudo-observations without re-fitting the hyperparameters."""
  points = jnp.asarray(points, dtype=float).reshape(-1, model.hyperparams.dim)
  values = jnp.asarray(values, dtype=float).reshape(-1)
  if points.shape[0] != values.shape[0]:
    raise ValueError("Got {} points but {} values".format(points.shape[0], values.shape[0]))
  if points.shape[0] == 0:
    return model
  return build_model(
    jnp.concatenate([model.X, points]), jnp.concatenate([model.Y, values]),
    model.hyperparams, float(model.noise_variance))
