"""Discrete-event simulation of k parallel workers under synchronous or
asynchronous scheduling."""
import dataclasses
import enum
import heapq
import logging
from typing import List, Optional, Tuple

import flax
import jax.numpy as jnp
import jax.random as random
import numpy as np

from asyncbojax.strategies import BusySet, SurrogateConfig, fit_surrogate, initial_design


logger = logging.getLogger(__name__)


class RuntimeKind(enum.Enum):
  HALF_NORMAL = "half-normal"
  CONSTANT = "constant"


@flax.struct.dataclass
class RuntimeDist:
  kind: RuntimeKind = flax.struct.field(pytree_node=False, default=RuntimeKind.HALF_NORMAL)
  scale: float = flax.struct.field(pytree_node=False, default=float(np.sqrt(np.pi / 2.)))
  constant_value: float = flax.struct.field(pytree_node=False, default=1.)

  def __post_init__(self):
    if not self.scale > 0. or not self.constant_value > 0.:
      raise ValueError("Runtime scale and constant must be positive, got {}".format(self))

  @property
  def mean(self):
    if self.kind == RuntimeKind.CONSTANT:
      return self.constant_value
    return self.scale * np.sqrt(2. / np.pi)


def sample_runtimes(dist, rng, n):
  """n task durations from one key; |z| * scale for the half-normal."""
  if dist.kind == RuntimeKind.CONSTANT:
    return np.full(n, float(dist.constant_value))
  elif dist.kind == RuntimeKind.HALF_NORMAL:
    z = np.abs(np.asarray(random.normal(rng, (n,))))
    return np.maximum(z * dist.scale, np.finfo(float).tiny)
  else:
    raise NotImplementedError(f"Runtime distribution {dist.kind} unknown.")


def sample_runtime(dist, rng):
  """Task duration."""
  return float(sample_runtimes(dist, rng, 1)[0])


@flax.struct.dataclass
class Budget:
  max_evaluations: Optional[int] = flax.struct.field(pytree_node=False, default=None)
  max_sim_time: Optional[float] = flax.struct.field(pytree_node=False, default=None)

  def __post_init__(self):
    if self.max_evaluations is None and self.max_sim_time is None:
      raise ValueError("A budget needs max_evaluations or max_sim_time")
    if self.max_evaluations is not None and self.max_evaluations < 1:
      raise ValueError("max_evaluations must be positive, got {}".format(self.max_evaluations))
    if self.max_sim_time is not None and not self.max_sim_time > 0.:
      raise ValueError("max_sim_time must be positive, got {}".format(self.max_sim_time))


@flax.struct.dataclass
class SimulationConfig:
  surrogate: SurrogateConfig = flax.struct.field(pytree_node=False, default=SurrogateConfig())
  runtime: RuntimeDist = flax.struct.field(pytree_node=False, default=RuntimeDist())
  c: int = flax.struct.field(pytree_node=False, default=1)


@dataclasses.dataclass(frozen=True)
class Event:
  event: str
  sim_time: float
  worker_id: int
  location: Tuple[float, ...]
  observed_value: float
  best_so_far: float
  n_completed: int


class EventLog:
  """Time-ordered start, finish and initial-design records of one run."""

  def __init__(self, mode, k):
    self.mode = mode
    self.k = k
    self.records: List[Event] = []
    self.busy_sizes: List[int] = []
    self._best = np.inf
    self._n_completed = 0

  def __len__(self):
    return len(self.records)

  @property
  def n_completed(self):
    return self._n_completed

  @property
  def best(self):
    return self._best

  def _append(self, event, sim_time, worker_id, location, value):
    if self.records and sim_time < self.records[-1].sim_time:
      raise ValueError("Event at {} precedes the previous event at {}".format(
        sim_time, self.records[-1].sim_time))
    self.records.append(Event(
      event=event, sim_time=float(sim_time), worker_id=int(worker_id),
      location=tuple(float(v) for v in np.asarray(location)), observed_value=float(value),
      best_so_far=float(self._best), n_completed=self._n_completed))

  def record_design(self, location, value):
    self._best = min(self._best, float(value))
    self._append("design", 0., -1, location, value)

  def record_start(self, sim_time, worker_id, location):
    self._append("start", sim_time, worker_id, location, np.nan)

  def record_finish(self, sim_time, worker_id, location, value):
    self._best = min(self._best, float(value))
    self._n_completed += 1
    self._append("finish", sim_time, worker_id, location, value)

  def design(self):
    return [r for r in self.records if r.event == "design"]

  def starts(self):
    return [r for r in self.records if r.event == "start"]

  def finishes(self):
    return [r for r in self.records if r.event == "finish"]

  def observations(self):
    """Design and finish records, the rows persisted per seed."""
    return [r for r in self.records if r.event != "start"]

  def best_so_far(self):
    """Best observed value after the design and after each finish."""
    design_best = min(r.observed_value for r in self.design())
    return np.array([design_best] + [r.best_so_far for r in self.finishes()])

  def completed_at(self, sim_time):
    """Number of post-design completions with finish time <= sim_time."""
    return sum(1 for r in self.finishes() if r.sim_time <= sim_time)


class SimulationError(RuntimeError):
  """Failure inside the event loop; `event_log` holds the records so far."""

  def __init__(self, message, event_log):
    super().__init__(message)
    self.event_log = event_log


def _evaluate_design(problem, rng, log):
  X = initial_design(problem.d, rng)
  y = [problem.evaluate(x) for x in X]
  for x, value in zip(X, y):
    log.record_design(x, value)
  return list(X), y


def _stop(budget, n_completed):
  return budget.max_evaluations is not None and n_completed >= budget.max_evaluations


def run_async(problem, strategy, k, budget, config, rng):
  """Replace workers as soon as `config.c` of them have finished.

  The first k tasks are selected as a synchronous batch from the initial
  design. Selection takes no simulated time. Simultaneous finishes are
  handled in ascending worker order.
  """
  if k < 1:
    raise ValueError("Number of workers must be at least 1, got {}".format(k))
  c = config.c
  if not 1 <= c <= k:
    raise ValueError("c must satisfy 1 <= c <= k, got c={} and k={}".format(c, k))
  design_rng, runtime_rng, select_rng, fit_rng = random.split(rng, 4)
  log = EventLog("async", k)
  try:
    X, y = _evaluate_design(problem, design_rng, log)
    model = fit_surrogate(jnp.stack(X), y, config.surrogate, random.fold_in(fit_rng, 0))
    n_fits, since_refit = 1, 0
    queue = []
    in_flight = {}
    n_started = 0

    def start(worker_id, x, sim_time):
      nonlocal n_started
      runtime = sample_runtime(config.runtime, random.fold_in(runtime_rng, n_started))
      heapq.heappush(queue, (sim_time + runtime, worker_id, n_started))
      in_flight[worker_id] = x
      n_started += 1
      log.record_start(sim_time, worker_id, x)

    n_initial = k if budget.max_evaluations is None else min(k, budget.max_evaluations)
    batch = strategy.select_batch(model, n_initial, random.fold_in(select_rng, 0))
    for worker_id, x in enumerate(batch):
      start(worker_id, x, 0.)

    idle = []
    n_selections = 1
    while queue:
      sim_time, worker_id, _ = heapq.heappop(queue)
      if budget.max_sim_time is not None and sim_time > budget.max_sim_time:
        break
      x = in_flight.pop(worker_id)
      value = problem.evaluate(x)
      log.record_finish(sim_time, worker_id, x, value)
      X.append(x)
      y.append(value)
      since_refit += 1
      idle.append(worker_id)
      if _stop(budget, log.n_completed):
        break
      remaining = None if budget.max_evaluations is None else budget.max_evaluations - n_started
      if remaining is not None and remaining <= 0:
        continue
      if len(idle) < c and queue:
        continue
      refit = since_refit >= config.surrogate.refit_every
      model = fit_surrogate(
        jnp.stack(X), y, config.surrogate, random.fold_in(fit_rng, n_fits), previous=model, refit=refit)
      n_fits += 1
      if refit:
        since_refit = 0
      busy = BusySet.create([in_flight[w] for w in sorted(in_flight)], problem.d)
      log.busy_sizes.append(busy.size)
      n_new = len(idle) if remaining is None else min(len(idle), remaining)
      xs = strategy.select_replacements(model, busy, n_new, random.fold_in(select_rng, n_selections))
      n_selections += 1
      logger.debug("t=%.4f: %d completed, %d busy, best %.6g", sim_time, log.n_completed, busy.size, log.best)
      for w, x_new in zip(sorted(idle)[:n_new], xs):
        start(w, x_new, sim_time)
      idle = []
  except Exception as err:
    raise SimulationError("Asynchronous simulation failed: {}".format(err), log) from err
  return log


def run_sync(problem, strategy, k, budget, config, rng):
  """Rounds of k tasks; each round waits for its slowest task."""
  if k < 1:
    raise ValueError("Number of workers must be at least 1, got {}".format(k))
  design_rng, runtime_rng, select_rng, fit_rng = random.split(rng, 4)
  log = EventLog("sync", k)
  try:
    X, y = _evaluate_design(problem, design_rng, log)
    model = fit_surrogate(jnp.stack(X), y, config.surrogate, random.fold_in(fit_rng, 0))
    n_fits, since_refit = 1, 0
    n_started = 0
    round_start = 0.
    n_round = 0
    while True:
      size = k if budget.max_evaluations is None else min(k, budget.max_evaluations - log.n_completed)
      if size <= 0:
        break
      batch = strategy.select_batch(model, size, random.fold_in(select_rng, n_round))
      n_round += 1
      finishes = []
      for worker_id, x in enumerate(batch):
        runtime = sample_runtime(config.runtime, random.fold_in(runtime_rng, n_started))
        n_started += 1
        log.record_start(round_start, worker_id, x)
        finishes.append((round_start + runtime, worker_id, x))
      truncated = False
      for finish_time, worker_id, x in sorted(finishes, key=lambda f: (f[0], f[1])):
        if budget.max_sim_time is not None and finish_time > budget.max_sim_time:
          truncated = True
          break
        value = problem.evaluate(x)
        log.record_finish(finish_time, worker_id, x, value)
        X.append(x)
        y.append(value)
        since_refit += 1
      if truncated or _stop(budget, log.n_completed):
        break
      round_start = max(f[0] for f in finishes)
      logger.debug("Round %d ended at t=%.4f, best %.6g", n_round, round_start, log.best)
      refit = since_refit >= config.surrogate.refit_every
      model = fit_surrogate(
        jnp.stack(X), y, config.surrogate, random.fold_in(fit_rng, n_fits), previous=model, refit=refit)
      n_fits += 1
      if refit:
        since_refit = 0
  except Exception as err:
    raise SimulationError("Synchronous simulation failed: {}".format(err), log) from err
  return log


def get_simulator(mode):
  if mode == "async":
    return run_async
  elif mode == "sync":
    return run_sync
  else:
    raise NotImplementedError(f"Simulation mode {mode} unknown.")
