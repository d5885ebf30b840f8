"""Config for the ack-5, k=4 asynchronous PLAyBOOK-L regret reproduction."""
from asyncbojax.default_config import get_default_configs


def get_config():
    config = get_default_configs()
    config.problem.name = 'ack-5'

    strategy = config.strategy
    strategy.name = 'playbook-l'
    strategy.kappa = 2.0

    simulation = config.simulation
    simulation.mode = 'async'
    simulation.k = 4
    simulation.n_steps = 50

    experiment = config.experiment
    experiment.seeds = tuple(range(30))
    experiment.out = './results/ack5_playbook_l'
    return config
