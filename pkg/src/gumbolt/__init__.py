"""Discrete variational autoencoders with RBM priors.

Training goes through a temperature-relaxed proxy objective whose samples
stay differentiable; evaluation and generation use exact binary latents.
Includes block-Gibbs/persistent-chain samplers, a tempered-ladder bridge
estimator for the prior log-partition, and numerical verifiers for the
structural claims the training objective relies on.
"""

__version__ = "0.1.0"

from gumbolt.model import GumboltVae, StructureSpec
from gumbolt.rbm import PcdChains, Rbm, energy, exact_log_partition
from gumbolt.relaxation import discretize, log_pmf_proxy, proxy_log_prior, relax

__all__ = [
    "GumboltVae",
    "StructureSpec",
    "PcdChains",
    "Rbm",
    "energy",
    "exact_log_partition",
    "discretize",
    "log_pmf_proxy",
    "proxy_log_prior",
    "relax",
    "__version__",
]
