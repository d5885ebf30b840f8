import pytest
import jax.numpy as jnp
import jax.random as random
import numpy as np
from scipy.special import erfc as np_erfc
import asyncbojax.acquisition as acquisition
from asyncbojax.acquisition import (
  AcqMaxBudget, PenaliserKind, PenaliserParams, estimate_global_lipschitz, estimate_local_lipschitz,
  estimate_min, hard_local_penaliser, lipschitz_from_points, local_box, maximise_acquisition,
  nonneg_shift, penalised_acquisition, radius, soft_local_penaliser, ucb)
from asyncbojax.gp import KernelHyperparams, build_model, predict


def _empty_model(d, signal_variance=1.):
  hp = KernelHyperparams.create(signal_variance, jnp.ones(d))
  return build_model(jnp.zeros((0, d)), jnp.zeros(0), hp, 1e-6)


def _flat_and_oscillatory_model():
  """Flat near both boundaries, oscillating in the centre."""
  flat = jnp.array([-1., -0.9, -0.8, -0.7, 0.7, 0.8, 0.9, 1.])
  centre = jnp.linspace(-0.4, 0.4, 13)
  X = jnp.concatenate([flat, centre])[:, None]
  Y = jnp.concatenate([jnp.zeros(8), jnp.sin(15. * centre)])
  hp = KernelHyperparams.create(1., jnp.array([0.1]))
  return build_model(X, Y, hp, 1e-6)


def test_ucb_arithmetic(monkeypatch):
  monkeypatch.setattr(acquisition, "predict", lambda model, x: (jnp.array([1.]), jnp.array([4.])))
  assert ucb(None, jnp.array([[0.]]), 3.)[0] == 7.


def test_ucb_kappa_zero_is_mean():
  hp = KernelHyperparams.create(1., jnp.array([0.4, 0.4]))
  model = build_model(jnp.array([[0., 0.], [0.5, -0.5]]), jnp.array([1., -1.]), hp, 1e-6)
  Xs = random.uniform(random.PRNGKey(0), (20, 2), minval=-1., maxval=1.)
  mean, _ = predict(model, Xs)
  assert jnp.array_equal(ucb(model, Xs, 0.), mean)


def test_ucb_prior():
  model = _empty_model(2)
  assert jnp.isclose(ucb(model, jnp.array([0.3, 0.1]), 2.), 2.)


def test_nonneg_shift():
  assert jnp.array_equal(nonneg_shift(jnp.array([-2., 0., 3.])), jnp.array([0., 2., 5.]))
  assert jnp.array_equal(nonneg_shift(jnp.array([1.5, 1.5])), jnp.zeros(2))
  rng = random.PRNGKey(0)
  for i in range(100):
    values = random.normal(random.fold_in(rng, i), (17,))
    shifted = nonneg_shift(values)
    assert jnp.min(shifted) == 0.
    assert jnp.argmax(values) == jnp.argmax(shifted)
  with pytest.raises(ValueError):
    nonneg_shift(jnp.array([0., jnp.inf]))
  with pytest.raises(ValueError):
    nonneg_shift(jnp.array([jnp.nan]))


def test_estimate_min():
  assert estimate_min(jnp.array([3., -1., 2.])) == -1.
  assert estimate_min(jnp.array([5.])) == 5.
  assert estimate_min(jnp.array([3., -1., 2., 10.])) == -1.
  with pytest.raises(ValueError):
    estimate_min(jnp.zeros(0))


def test_global_lipschitz_zero_data():
  assert estimate_global_lipschitz(_empty_model(2), 100, random.PRNGKey(0)) == 1e-6


def test_global_lipschitz_linear_mean():
  slope = 2.
  hp = KernelHyperparams.create(1., jnp.array([10.]))
  model = build_model(jnp.array([[-1.], [1.]]), jnp.array([-slope, slope]), hp, 1e-6)
  lipschitz = estimate_global_lipschitz(model, 1000, random.PRNGKey(0))
  assert abs(lipschitz - slope) <= 0.1 * slope


def test_lipschitz_monotone_over_nested_sets():
  model = _flat_and_oscillatory_model()
  points = random.uniform(random.PRNGKey(1), (400, 1), minval=-1., maxval=1.)
  values = [lipschitz_from_points(model, points[:n]) for n in (10, 50, 100, 400)]
  assert all(a <= b for a, b in zip(values[:-1], values[1:]))


def test_local_lipschitz_zero_data():
  assert estimate_local_lipschitz(_empty_model(1), jnp.array([0.]), jnp.array([0.5]), 100, random.PRNGKey(0)) == 1e-6


def test_local_box_clipped():
  box = local_box(jnp.array([0.9, 0.]), jnp.array([0.4, 0.4]))
  assert jnp.allclose(box, jnp.array([[0.7, 1.], [-0.2, 0.2]]))


def test_local_lipschitz_flat_smaller_than_oscillatory():
  model = _flat_and_oscillatory_model()
  lengthscales = model.hyperparams.lengthscales
  flat = estimate_local_lipschitz(model, jnp.array([-0.85]), lengthscales, 1000, random.PRNGKey(0))
  oscillatory = estimate_local_lipschitz(model, jnp.array([0.]), lengthscales, 1000, random.PRNGKey(0))
  global_lipschitz = estimate_global_lipschitz(model, 1000, random.PRNGKey(0))
  assert flat < oscillatory
  assert flat < 0.5 * global_lipschitz


def test_local_not_above_global_on_subset():
  model = _flat_and_oscillatory_model()
  points = random.uniform(random.PRNGKey(2), (1000, 1), minval=-1., maxval=1.)
  inside = points[jnp.abs(points[:, 0] - 0.2) <= 0.05]
  assert lipschitz_from_points(model, inside) <= lipschitz_from_points(model, points)


def test_penaliser_params_consistency():
  params = PenaliserParams.create(jnp.zeros(2), mu=0.7, sigma=0.2, lipschitz=3., min_estimate=-0.5, gamma=1., p=-5.)
  expected = abs(0.7 + 0.5) / 3. + 0.2 / 3.
  assert abs(params.radius_denominator - expected) <= 1e-12
  assert abs(params.expected_radius - 0.4) <= 1e-12
  with pytest.raises(ValueError):
    PenaliserParams.create(jnp.zeros(2), 0., 0.1, 1., 0., gamma=0.)
  with pytest.raises(ValueError):
    PenaliserParams.create(jnp.zeros(2), 0., 0.1, 1., 0., p=1.)
  with pytest.raises(ValueError):
    PenaliserParams.create(jnp.zeros(2), 0., 0.1, 0., 0.)


def test_radius_monotonicity():
  gaps = np.linspace(0., 3., 13)
  lipschitz = np.linspace(0.1, 5., 13)
  for sigma in (0.01, 0.5):
    by_gap = [radius(gap, sigma, 1.3, 0., 1.) for gap in gaps]
    by_lipschitz = [radius(1., sigma, L, 0., 1.) for L in lipschitz]
    assert np.all(np.diff(by_gap) > 0.)
    assert np.all(np.diff(by_lipschitz) < 0.)


def test_hard_penaliser_closed_form():
  params = PenaliserParams.create(jnp.array([0.1, -0.2]), mu=1., sigma=0.3, lipschitz=2., min_estimate=0.)
  R = params.radius_denominator
  direction = jnp.array([0.6, 0.8])
  assert hard_local_penaliser(params.center, params) == 0.
  assert abs(hard_local_penaliser(params.center + R * direction, params) - 2.**(-1. / 5.)) <= 1e-9
  assert abs(hard_local_penaliser(params.center + 0.5 * R * direction, params) - 33.**(-1. / 5.)) <= 1e-9
  assert jnp.isclose(2.**(-1. / 5.), 0.87055, atol=1e-5)
  assert jnp.isclose(33.**(-1. / 5.), 0.49694, atol=1e-5)


def test_hard_penaliser_monotone_along_rays():
  params = PenaliserParams.create(jnp.zeros(3), mu=0.4, sigma=0.1, lipschitz=1.5, min_estimate=-0.2)
  R = params.radius_denominator
  directions = random.normal(random.PRNGKey(0), (1000, 3))
  directions = directions / jnp.linalg.norm(directions, axis=1, keepdims=True)
  distances = jnp.linspace(0.01, 3., 60) * R
  for direction in directions:
    values = hard_local_penaliser(distances[:, None] * direction, params)
    assert jnp.all(jnp.diff(values) > 0.)
    assert jnp.all((values >= 0.) & (values < 1.))


def test_hard_penaliser_approaches_hard_min():
  params = PenaliserParams.create(jnp.zeros(1), mu=0.5, sigma=0.1, lipschitz=1., min_estimate=0., p=-50.)
  R = params.radius_denominator
  # the kink at r = R itself is 1 - 2^(-1/50), about 0.014
  ratios = np.array([r for r in np.arange(1, 31) * 0.1 if not np.isclose(r, 1.)])
  values = hard_local_penaliser(jnp.asarray(ratios * R)[:, None], params)
  assert jnp.all(jnp.abs(values - jnp.minimum(ratios, 1.)) <= 1e-2)


def test_soft_penaliser():
  params = PenaliserParams.create(jnp.zeros(1), mu=3., sigma=0.4, lipschitz=2., min_estimate=1.)
  assert jnp.isclose(soft_local_penaliser(jnp.array([1.]), params), 0.5)
  assert soft_local_penaliser(jnp.array([1e6]), params) > 1. - 1e-12
  params = PenaliserParams.create(jnp.zeros(1), mu=2., sigma=1., lipschitz=1., min_estimate=0.)
  expected = 0.5 * np_erfc(2. / np.sqrt(2.))
  assert jnp.isclose(soft_local_penaliser(jnp.zeros(1), params), expected, rtol=1e-10)
  assert jnp.isclose(expected, 0.02275, atol=1e-5)
  distances = jnp.linspace(0., 5., 50)[:, None]
  assert jnp.all(jnp.diff(soft_local_penaliser(distances, params)) > 0.)


def test_exclusion_radius_tail_probability():
  mu, sigma, lipschitz, min_estimate = 0.8, 0.3, 2., 0.1
  f = mu + sigma * np.asarray(random.normal(random.PRNGKey(0), (1000000,)))
  r = (f - min_estimate) / lipschitz
  expected_radius = abs(mu - min_estimate) / lipschitz
  frequency = np.mean(r > expected_radius + 1.5 * sigma / lipschitz)
  # Gaussian tail at 1.5 standard deviations, below the sub-Gaussian bound
  assert abs(frequency - 0.5 * np_erfc(1.5 / np.sqrt(2.))) < 2e-3
  assert frequency <= np.exp(-1.5**2 / 2.)
  # the exclusion ball covers f with 98% probability from gamma = 2.06 up
  assert np.mean(r > expected_radius + 2.06 * sigma / lipschitz) <= 0.02


def test_penalised_acquisition_composition():
  hp = KernelHyperparams.create(1., jnp.array([0.3, 0.3]))
  model = build_model(jnp.array([[0., 0.], [0.5, 0.5]]), jnp.array([1., -0.5]), hp, 1e-6)
  Xs = random.uniform(random.PRNGKey(3), (30, 2), minval=-1., maxval=1.)
  shift = jnp.min(ucb(model, Xs, 2.))
  base = penalised_acquisition(model, Xs, (), 2., PenaliserKind.HARD, shift)
  assert jnp.array_equal(base, jnp.maximum(ucb(model, Xs, 2.) - shift, 0.))
  assert jnp.argmax(base) == jnp.argmax(ucb(model, Xs, 2.))
  first = PenaliserParams.create(Xs[0], 0.2, 0.3, 1.5, -1.)
  second = PenaliserParams.create(Xs[1], -0.4, 0.5, 1.5, -1.)
  for kind, penaliser in ((PenaliserKind.HARD, hard_local_penaliser), (PenaliserKind.SOFT, soft_local_penaliser)):
    values = penalised_acquisition(model, Xs, (first, second), 2., kind, shift)
    assert jnp.allclose(values, base * penaliser(Xs, first) * penaliser(Xs, second), rtol=1e-14)
  at_busy = penalised_acquisition(model, Xs[0], (first,), 2., PenaliserKind.HARD, shift)
  assert at_busy == 0.


def test_busy_point_at_acquisition_peak():
  hp = KernelHyperparams.create(1., jnp.array([0.3]))
  model = build_model(jnp.array([[-0.9], [-0.3], [0.5]]), jnp.array([0., 1., 0.]), hp, 1e-6)
  grid = jnp.linspace(-1., 1., 2001)[:, None]
  values = ucb(model, grid, 2.)
  shift = jnp.min(values)
  busy = grid[jnp.argmax(values)]
  mean, variance = predict(model, busy)
  params = PenaliserParams.create(busy, -float(mean[0]), float(jnp.sqrt(variance[0])), 1., float(jnp.min(-model.Y)))
  hard = penalised_acquisition(model, busy, (params,), 2., PenaliserKind.HARD, shift)
  soft = penalised_acquisition(model, busy, (params,), 2., PenaliserKind.SOFT, shift)
  assert hard == 0.
  assert soft > 0.


def test_maximise_constant_utility():
  budget = AcqMaxBudget(n_random=200)
  x = maximise_acquisition(lambda X: jnp.full(X.shape[0], 3.), 2, budget, random.PRNGKey(0))
  assert x.shape == (2,)
  assert jnp.all(jnp.abs(x) <= 1.)


def test_maximise_quadratic():
  c = jnp.array([0.37])
  utility = lambda X: -jnp.sum((X - c)**2, axis=-1)
  x = maximise_acquisition(utility, 1, AcqMaxBudget(), random.PRNGKey(0))
  assert jnp.abs(x[0] - c[0]) < 0.05
  assert jnp.array_equal(x, maximise_acquisition(utility, 1, AcqMaxBudget(), random.PRNGKey(0)))


def test_maximise_improves_on_pool_and_stays_in_box():
  utility = lambda X: jnp.sum(X, axis=-1)
  rng = random.PRNGKey(4)
  budget = AcqMaxBudget(n_random=100)
  candidates = random.uniform(rng, (100, 3), minval=-1., maxval=1.)
  x = maximise_acquisition(utility, 3, budget, rng, candidates=candidates)
  assert jnp.all(jnp.abs(x) <= 1.)
  assert utility(x[None, :])[0] >= jnp.max(utility(candidates))


def test_budget_validation():
  with pytest.raises(ValueError):
    AcqMaxBudget(n_random=3, n_refine=5)
