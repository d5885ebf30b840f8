"""Config for the paired synchronous/asynchronous head-to-head on simulated time."""
from asyncbojax.default_config import get_default_configs


def get_config():
    config = get_default_configs()
    config.problem.name = 'egg-2'
    config.strategy.name = 'playbook-hl'

    # cheap surrogate, the comparison is about scheduling
    gp = config.gp
    gp.refit_every = 10
    gp.n_restarts = 1
    gp.max_iters = 50

    acquisition = config.acquisition
    acquisition.n_random = 500
    config.strategy.n_grid_per_dim = 100

    simulation = config.simulation
    simulation.k = 4
    simulation.runtime = 'half-normal'
    ## the time budget binds first
    simulation.n_steps = 1000
    simulation.max_sim_time = 50.

    experiment = config.experiment
    experiment.seeds = tuple(range(30))
    experiment.out = './results/sync_vs_async'
    return config
