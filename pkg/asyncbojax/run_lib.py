"""Experiment orchestration: configuration, multi-seed runs, persistence and aggregation."""
import ast
import dataclasses
import functools
import json
import logging
import multiprocessing as mp
import os
import re
from typing import Any, Dict

import jax.random as random
import ml_collections
import numpy as np
import pandas as pd
from tqdm import tqdm
import wandb

from asyncbojax.acquisition import AcqMaxBudget
from asyncbojax.benchmarks import BENCHMARKS, make_benchmark, regret_trace
from asyncbojax.default_config import get_default_configs
from asyncbojax.gp import HyperOptConfig
from asyncbojax.simulator import Budget, RuntimeDist, RuntimeKind, SimulationConfig, get_simulator
from asyncbojax.strategies import SelectionConfig, StrategyKind, SurrogateConfig, get_strategy as make_strategy
from asyncbojax.utils import get_time_grid, nearest_rank_quantile, step_interpolate


logger = logging.getLogger(__name__)

MODES = ("sync", "async")

# Flat names accepted in key-value files and on the command line.
ALIASES = {
  "problem": "problem.name",
  "strategy": "strategy.name",
  "mode": "simulation.mode",
  "k": "simulation.k",
  "c": "simulation.c",
  "steps": "simulation.n_steps",
  "max_sim_time": "simulation.max_sim_time",
  "seeds": "experiment.seeds",
  "kappa": "strategy.kappa",
  "gamma": "strategy.gamma",
  "p": "strategy.p",
  "ts_samples": "strategy.ts_samples",
  "ts-samples": "strategy.ts_samples",
  "runtime": "simulation.runtime",
  "out": "experiment.out",
  "workers": "experiment.num_workers",
}

_INT_TUPLES = ("experiment.seeds", "experiment.checkpoints")


def _flatten(config, prefix=""):
  flat = {}
  for key, value in config.items():
    if isinstance(value, ml_collections.ConfigDict):
      flat.update(_flatten(value, prefix + key + "."))
    else:
      flat[prefix + key] = value
  return flat


def _parse_value(text):
  text = text.strip()
  match = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", text)
  if match:
    return tuple(range(int(match.group(1)), int(match.group(2)) + 1))
  try:
    return ast.literal_eval(text)
  except (ValueError, SyntaxError):
    return text


def _format_seeds(seeds):
  seeds = tuple(int(s) for s in seeds)
  if len(seeds) > 1 and seeds == tuple(range(seeds[0], seeds[-1] + 1)):
    return "{}..{}".format(seeds[0], seeds[-1])
  return repr(seeds)


def _set(config, key, value):
  key = ALIASES.get(key, key)
  valid = _flatten(config)
  if key not in valid:
    raise ValueError("Unknown config key {}, valid keys are {}".format(
      key, ", ".join(sorted(valid) + sorted(ALIASES))))
  section, name = key.split(".", 1)
  target = config[section]
  if isinstance(value, str):
    parsed = _parse_value(value)
    if isinstance(valid[key], str):
      value = parsed if isinstance(parsed, str) else value.strip()
    else:
      value = parsed
  if key in _INT_TUPLES:
    value = tuple(int(v) for v in (value if isinstance(value, (tuple, list)) else (value,)))
  elif isinstance(valid[key], tuple) and isinstance(value, list):
    value = tuple(value)
  elif target.get_type(name) is float and isinstance(value, int) and not isinstance(value, bool):
    value = float(value)
  try:
    target[name] = value
  except TypeError as err:
    raise ValueError("Invalid value {!r} for {}: {}".format(value, key, err)) from err


def parse_config_text(text, overrides=None, base=None):
  """Apply `key = value` lines, then overrides, to a copy of the defaults."""
  config = get_default_configs() if base is None else base.copy_and_resolve_references()
  for number, line in enumerate(text.splitlines(), start=1):
    line = line.split("#", 1)[0].strip()
    if not line:
      continue
    separator = "=" if "=" in line else ":"
    if separator not in line:
      raise ValueError("Line {} is not of the form `key = value`: {!r}".format(number, line))
    key, value = line.split(separator, 1)
    _set(config, key.strip(), value)
  for key, value in (overrides or {}).items():
    _set(config, key, value)
  return validate_config(config)


def parse_config(path=None, overrides=None, base=None):
  """Build a validated experiment config.

  Args:
    path: optional key-value text file with dotted or flat keys.
    overrides: optional mapping applied after the file, e.g. from flags.
    base: optional ConfigDict used instead of the defaults.
  Returns:
    A validated `ml_collections.ConfigDict`.
  """
  text = ""
  if path is not None:
    with open(path, "r", encoding="utf-8") as infile:
      text = infile.read()
  return parse_config_text(text, overrides=overrides, base=base)


def emit_config(config):
  """Canonical key-value text that `parse_config_text` reads back unchanged."""
  lines = []
  for key, value in sorted(_flatten(config).items()):
    text = _format_seeds(value) if key == "experiment.seeds" else repr(value)
    lines.append("{} = {}".format(key, text))
  return "\n".join(lines) + "\n"


def validate_config(config):
  problem, strategy, simulation = config.problem, config.strategy, config.simulation
  if problem.name not in BENCHMARKS:
    raise ValueError("Unknown problem {}, valid names are {}".format(problem.name, ", ".join(BENCHMARKS)))
  kinds = [kind.value for kind in StrategyKind]
  if strategy.name not in kinds:
    raise ValueError("Unknown strategy {}, valid names are {}".format(strategy.name, ", ".join(kinds)))
  if simulation.mode not in MODES:
    raise ValueError("Unknown mode {}, valid modes are {}".format(simulation.mode, ", ".join(MODES)))
  runtimes = [kind.value for kind in RuntimeKind]
  if simulation.runtime not in runtimes:
    raise ValueError("Unknown runtime {}, valid names are {}".format(simulation.runtime, ", ".join(runtimes)))
  if simulation.k < 1:
    raise ValueError("k must be at least 1, got {}".format(simulation.k))
  if not 1 <= simulation.c <= simulation.k:
    raise ValueError("c must satisfy 1 <= c <= k, got c={} and k={}".format(simulation.c, simulation.k))
  if simulation.n_steps < 1:
    raise ValueError("n_steps must be at least 1, got {}".format(simulation.n_steps))
  if simulation.max_sim_time is not None and not simulation.max_sim_time > 0.:
    raise ValueError("max_sim_time must be positive, got {}".format(simulation.max_sim_time))
  if not len(config.experiment.seeds):
    raise ValueError("At least one seed is required")
  if not strategy.gamma > 0.:
    raise ValueError("gamma must be positive, got {}".format(strategy.gamma))
  if not strategy.p < 0.:
    raise ValueError("p must be negative, got {}".format(strategy.p))
  if strategy.kappa < 0.:
    raise ValueError("kappa must be non-negative, got {}".format(strategy.kappa))
  if strategy.ts_samples < 1:
    raise ValueError("ts_samples must be positive, got {}".format(strategy.ts_samples))
  if config.acquisition.n_refine > config.acquisition.n_random:
    raise ValueError("n_refine ({}) exceeds n_random ({})".format(
      config.acquisition.n_refine, config.acquisition.n_random))
  if config.experiment.num_workers < 1:
    raise ValueError("num_workers must be at least 1, got {}".format(config.experiment.num_workers))
  return config


@functools.lru_cache(maxsize=None)
def _cached_benchmark(name, seed):
  return make_benchmark(name, seed=seed)


def get_problem(config):
  if config.problem.name not in BENCHMARKS:
    raise NotImplementedError(f"Problem {config.problem.name} unknown.")
  return _cached_benchmark(config.problem.name, config.problem.seed)


def get_selection_config(config):
  acquisition, strategy = config.acquisition, config.strategy
  return SelectionConfig(
    kappa=strategy.kappa, gamma=strategy.gamma, p=strategy.p, ts_samples=strategy.ts_samples,
    n_grid_per_dim=strategy.n_grid_per_dim, exact_sample_limit=strategy.exact_sample_limit,
    n_features=strategy.n_features,
    budget=AcqMaxBudget(
      n_random=acquisition.n_random, n_refine=acquisition.n_refine,
      refine_steps=acquisition.refine_steps, refine_step_size=acquisition.refine_step_size))


def get_surrogate_config(config):
  gp = config.gp
  return SurrogateConfig(
    noise_variance=gp.noise_variance, refit_every=gp.refit_every, normalize_y=config.strategy.normalize_y,
    hyperopt=HyperOptConfig(
      n_restarts=gp.n_restarts, max_iters=gp.max_iters,
      log_signal_variance_bounds=tuple(gp.log_signal_variance_bounds),
      log_lengthscale_bounds=tuple(gp.log_lengthscale_bounds)))


def get_runtime_dist(config):
  simulation = config.simulation
  if simulation.runtime == RuntimeKind.HALF_NORMAL.value:
    return RuntimeDist(kind=RuntimeKind.HALF_NORMAL, scale=simulation.runtime_scale)
  elif simulation.runtime == RuntimeKind.CONSTANT.value:
    return RuntimeDist(kind=RuntimeKind.CONSTANT, constant_value=simulation.runtime_constant)
  else:
    raise NotImplementedError(f"Runtime distribution {simulation.runtime} unknown.")


def get_strategy(config):
  try:
    kind = StrategyKind(config.strategy.name)
  except ValueError:
    raise NotImplementedError(f"Strategy {config.strategy.name} unknown.")
  return make_strategy(kind, get_selection_config(config))


def get_budget(config):
  return Budget(max_evaluations=config.simulation.n_steps, max_sim_time=config.simulation.max_sim_time)


def seed_rng(config, seed):
  """Independent stream of one seed, derived from the master key."""
  return random.fold_in(random.PRNGKey(config.problem.seed), seed)


def run_seed(config, seed):
  """Simulate one seed and return its EventLog."""
  problem = get_problem(config)
  simulate = get_simulator(config.simulation.mode)
  sim_config = SimulationConfig(
    surrogate=get_surrogate_config(config), runtime=get_runtime_dist(config), c=config.simulation.c)
  return simulate(
    problem, get_strategy(config), config.simulation.k, get_budget(config), sim_config, seed_rng(config, seed))


def _run_seed_job(job):
  config_dict, seed = job
  config = ml_collections.ConfigDict(config_dict)
  try:
    return seed, run_seed(config, seed), None
  except Exception as err:
    return seed, None, "{}: {}".format(type(err).__name__, err)


def event_frame(event_log, problem, seed):
  """Design and finish rows of one seed as a DataFrame."""
  rows = []
  for record in event_log.observations():
    row = {"seed": seed, "event": record.event, "sim_time": record.sim_time, "worker_id": record.worker_id}
    row.update({"x_{}".format(i): v for i, v in enumerate(record.location)})
    row.update({
      "y": record.observed_value, "best_so_far": record.best_so_far,
      "log10_regret": problem.regret(record.best_so_far), "n_completed": record.n_completed})
    rows.append(row)
  columns = (["seed", "event", "sim_time", "worker_id"] + ["x_{}".format(i) for i in range(problem.d)]
             + ["y", "best_so_far", "log10_regret", "n_completed"])
  return pd.DataFrame(rows, columns=columns)


def write_event_csv(frame, path):
  frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


@dataclasses.dataclass
class AggregateTrace:
  steps: Any
  step_median: Any
  step_lower: Any
  step_upper: Any
  sim_times: Any
  time_median: Any
  time_lower: Any
  time_upper: Any
  checkpoints: Dict[int, Dict[str, float]]
  n_seeds: int
  n_failed: int = 0

  def to_dict(self):
    return {
      "steps": {
        "step": [int(s) for s in self.steps], "median": list(map(float, self.step_median)),
        "lower_quartile": list(map(float, self.step_lower)), "upper_quartile": list(map(float, self.step_upper))},
      "sim_time": {
        "time": list(map(float, self.sim_times)), "median": list(map(float, self.time_median)),
        "lower_quartile": list(map(float, self.time_lower)), "upper_quartile": list(map(float, self.time_upper))},
      "checkpoints": {str(step): values for step, values in self.checkpoints.items()},
      "n_seeds": self.n_seeds,
      "n_failed": self.n_failed,
    }


def _quartiles(values):
  return (nearest_rank_quantile(values, 0.25, axis=0), nearest_rank_quantile(values, 0.5, axis=0),
          nearest_rank_quantile(values, 0.75, axis=0))


def aggregate(event_logs, problem, checkpoints=(50, 75, 100), grid_points=101, max_sim_time=None):
  """Median and quartiles of best-so-far log10 regret across seeds.

  Step index s counts post-design completions (s = 0 is the design alone).
  Shorter traces carry their last value forward. The sim-time axis is a
  uniform grid on which each seed holds its last finished value.
  """
  if not len(event_logs):
    raise ValueError("aggregate needs at least one event log")
  traces = [regret_trace(log, problem) for log in event_logs]
  length = max(len(trace) for trace in traces)
  by_step = np.stack([np.pad(trace, (0, length - len(trace)), mode="edge") for trace in traces])
  step_lower, step_median, step_upper = _quartiles(by_step)

  times = [np.array([0.] + [r.sim_time for r in log.finishes()]) for log in event_logs]
  t1 = max_sim_time if max_sim_time is not None else max(t[-1] for t in times)
  grid, _ = get_time_grid(t1 if t1 > 0. else 1., grid_points)
  by_time = np.stack([step_interpolate(t, trace, grid) for t, trace in zip(times, traces)])
  time_lower, time_median, time_upper = _quartiles(by_time)

  table = {}
  for step in checkpoints:
    if step < length:
      values = by_step[:, step]
      table[int(step)] = {"mean": float(np.mean(values)), "std": float(np.std(values)), "n": int(len(values))}
  return AggregateTrace(
    steps=np.arange(length), step_median=step_median, step_lower=step_lower, step_upper=step_upper,
    sim_times=grid, time_median=time_median, time_lower=time_lower, time_upper=time_upper,
    checkpoints=table, n_seeds=len(event_logs))


def experiment_tag(config):
  simulation = config.simulation
  return "{}_{}_{}_k{}".format(config.problem.name, config.strategy.name, simulation.mode, simulation.k)


def run_experiment(config, use_wandb=None):
  """Run every seed, write one CSV per seed and an aggregate JSON.

  Args:
    config: validated experiment ConfigDict.
    use_wandb: overrides `config.experiment.use_wandb` when not `None`.
  Returns:
    A dict with the output directory, CSV paths, aggregate path and the AggregateTrace.
  """
  validate_config(config)
  use_wandb = config.experiment.use_wandb if use_wandb is None else use_wandb
  out_dir = os.path.join(config.experiment.out, experiment_tag(config))
  os.makedirs(out_dir, exist_ok=True)
  problem = get_problem(config)
  jobs = [(config.to_dict(), int(seed)) for seed in config.experiment.seeds]
  logger.info("Running %d seeds of %s", len(jobs), experiment_tag(config))

  if config.experiment.num_workers > 1:
    with mp.get_context("spawn").Pool(config.experiment.num_workers) as pool:
      results = list(tqdm(pool.imap(_run_seed_job, jobs), total=len(jobs), unit="seeds", disable=None))
  else:
    results = [_run_seed_job(job) for job in tqdm(jobs, unit="seeds", disable=None)]

  if use_wandb:
    run = wandb.init(project="asyncbojax", config=config.to_dict(), name=experiment_tag(config))

  logs, csv_paths, n_failed = [], [], 0
  for seed, event_log, error in sorted(results, key=lambda r: r[0]):
    if event_log is None:
      n_failed += 1
      logger.warning("Seed %d failed and is excluded from aggregation: %s", seed, error)
      continue
    path = os.path.join(out_dir, "seed_{:03d}.csv".format(seed))
    write_event_csv(event_frame(event_log, problem, seed), path)
    csv_paths.append(path)
    logs.append(event_log)
    final_regret = problem.regret(event_log.best)
    logger.info("Seed %d: %d completions, final log10 regret %.4f", seed, event_log.n_completed, final_regret)
    if use_wandb:
      wandb.log({"seed": seed, "final_log10_regret": final_regret})

  if not logs:
    raise ValueError("All {} seeds failed".format(n_failed))
  trace = aggregate(
    logs, problem, checkpoints=tuple(config.experiment.checkpoints),
    grid_points=config.experiment.sim_time_grid_points, max_sim_time=config.simulation.max_sim_time)
  trace.n_failed = n_failed
  aggregate_path = os.path.join(out_dir, "aggregate.json")
  with open(aggregate_path, "w", encoding="utf-8") as outfile:
    json.dump({
      "config": config.to_dict(), "problem": problem.name, "true_min_value": problem.true_min_value,
      "true_min_provenance": problem.true_min_provenance, **trace.to_dict()},
      outfile, indent=2, sort_keys=True)
  logger.info("Wrote %s", aggregate_path)
  if use_wandb:
    wandb.log({"checkpoint_{}_mean".format(step): v["mean"] for step, v in trace.checkpoints.items()})
    run.finish()  # type: ignore
  return {"out_dir": out_dir, "csv_paths": csv_paths, "aggregate_path": aggregate_path,
          "aggregate": trace, "config": config}


def compare_modes(config, use_wandb=None):
  """Run the same experiment synchronously and asynchronously with identical seeds."""
  results = {}
  for mode in MODES:
    mode_config = config.copy_and_resolve_references()
    mode_config.simulation.mode = mode
    results[mode] = run_experiment(mode_config, use_wandb=use_wandb)
  return results


def tabulate_checkpoints(results, path=None):
  """`mean (std)` log10 regret per experiment at each checkpoint step."""
  rows = []
  for result in results:
    config, trace = result["config"], result["aggregate"]
    row = {"problem": config.problem.name, "strategy": config.strategy.name,
           "mode": config.simulation.mode, "k": config.simulation.k}
    for step in config.experiment.checkpoints:
      entry = trace.checkpoints.get(int(step))
      row["step_{}".format(step)] = "" if entry is None else "{:.2f} ({:.2f})".format(entry["mean"], entry["std"])
    rows.append(row)
  frame = pd.DataFrame(rows)
  if path is not None:
    frame.to_csv(path, index=False, lineterminator="\n")
  return frame
