import ml_collections
import numpy as np


def get_default_configs():
  config = ml_collections.ConfigDict()

  # problem
  config.problem = problem = ml_collections.ConfigDict()
  problem.name = 'ack-5'
  ## master seed of the per-seed PRNG streams, also the mat-d draw seed
  problem.seed = 0

  # strategy
  config.strategy = strategy = ml_collections.ConfigDict()
  strategy.name = 'playbook-l'
  strategy.kappa = 2.0
  strategy.gamma = 1.0
  strategy.p = -5.0
  strategy.ts_samples = 10000
  strategy.n_grid_per_dim = 1000
  strategy.exact_sample_limit = 4096
  strategy.n_features = 1024
  strategy.normalize_y = True

  # acquisition maximisation
  config.acquisition = acquisition = ml_collections.ConfigDict()
  acquisition.n_random = 3000
  acquisition.n_refine = 5
  acquisition.refine_steps = 20
  acquisition.refine_step_size = 0.01

  # surrogate
  config.gp = gp = ml_collections.ConfigDict()
  gp.noise_variance = 1e-6
  gp.n_restarts = 5
  gp.max_iters = 200
  gp.refit_every = 1
  gp.log_lengthscale_bounds = (float(np.log(1e-2)), float(np.log(10.)))
  gp.log_signal_variance_bounds = (float(np.log(1e-3)), float(np.log(1e3)))

  # simulation
  config.simulation = simulation = ml_collections.ConfigDict()
  simulation.mode = 'async'
  simulation.k = 4
  simulation.c = 1
  simulation.n_steps = 50
  simulation.max_sim_time = ml_collections.config_dict.placeholder(float)
  simulation.runtime = 'half-normal'
  simulation.runtime_scale = float(np.sqrt(np.pi / 2.))
  simulation.runtime_constant = 1.0

  # experiment
  config.experiment = experiment = ml_collections.ConfigDict()
  experiment.seeds = tuple(range(30))
  experiment.out = './results'
  experiment.num_workers = 1
  experiment.use_wandb = False
  experiment.sim_time_grid_points = 101
  experiment.checkpoints = (50, 75, 100)

  return config
