"""Command-line entry point for running experiments."""
from absl import app, flags
from ml_collections.config_flags import config_flags

from asyncbojax.run_lib import compare_modes, parse_config, run_experiment


FLAGS = flags.FLAGS
config_flags.DEFINE_config_file(
  "config", None, "Python config file exposing `get_config()`.", lock_config=True)
flags.DEFINE_string("config_file", None, "Key-value config file (`section.key = value` lines).")
flags.DEFINE_string("problem", None, "Benchmark name, e.g. ack-5.")
flags.DEFINE_string("strategy", None, "playbook-l, playbook-ll, playbook-h, playbook-hl, kb, ts or sequential.")
flags.DEFINE_enum("mode", None, ["sync", "async"], "Scheduling mode.")
flags.DEFINE_integer("k", None, "Number of workers.")
flags.DEFINE_integer("c", None, "Completions per asynchronous re-selection.")
flags.DEFINE_integer("steps", None, "Post-design completions budget.")
flags.DEFINE_float("max_sim_time", None, "Simulated time budget.")
flags.DEFINE_string("seeds", None, "Seeds as a range `0..29` or a list `1,2,3`.")
flags.DEFINE_float("kappa", None, "UCB exploration weight.")
flags.DEFINE_float("gamma", None, "Exclusion radius weight on the posterior std.")
flags.DEFINE_float("p", None, "Hard penaliser exponent, negative.")
flags.DEFINE_integer("ts-samples", None, "Thompson sampling candidate pool size.")
flags.DEFINE_string("runtime", None, "half-normal or constant.")
flags.DEFINE_string("out", None, "Output directory.")
flags.DEFINE_integer("workers", None, "Processes used to run seeds in parallel.")
flags.DEFINE_bool("compare", False, "Run both sync and async modes with identical seeds.")

_OVERRIDES = (
  "problem", "strategy", "mode", "k", "c", "steps", "max_sim_time", "seeds", "kappa",
  "gamma", "p", "ts-samples", "runtime", "out", "workers")


def main(argv):
  del argv
  overrides = {name: FLAGS[name].value for name in _OVERRIDES if FLAGS[name].value is not None}
  config = parse_config(FLAGS.config_file, overrides=overrides, base=FLAGS.config)
  if FLAGS.compare:
    compare_modes(config)
  else:
    run_experiment(config)


def run():
  app.run(main)


if __name__ == "__main__":
  run()
