"""asyncbojax: asynchronous batch Bayesian optimisation with local penalisation in JAX."""
import jax

# Oracle-level agreement of the GP linear algebra needs double precision.
jax.config.update("jax_enable_x64", True)
