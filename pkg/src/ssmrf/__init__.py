"""Bayesian structure learning for binary pairwise Markov random fields with
a spike-and-slab prior over edges, sampled by brief Langevin dynamics plus
reversible-jump edge moves."""

__version__ = "0.1.0"

from .engine import (
    PosteriorChain,
    SamplerConfig,
    SpikeSlabState,
    posterior_mean_model,
    posterior_models,
    run,
    run_fixed_p0,
)
from .estimator import SpikeSlabMRF
from .hypers import HyperPriors
from .model import (
    DataStats,
    ModelSpec,
    Parameters,
    compute_stats,
    ising_to_boltzmann,
    log_unnormalized,
)
from .states import (
    ExactSummary,
    MomentEstimates,
    ParticleSet,
    estimate_moments,
    exact_sample,
    exact_summary,
    gibbs_sweep,
)
from .utils import CapabilityError, DivergenceError, FormatError

__all__ = [
    "CapabilityError",
    "DataStats",
    "DivergenceError",
    "ExactSummary",
    "FormatError",
    "HyperPriors",
    "ModelSpec",
    "MomentEstimates",
    "Parameters",
    "ParticleSet",
    "PosteriorChain",
    "SamplerConfig",
    "SpikeSlabMRF",
    "SpikeSlabState",
    "compute_stats",
    "estimate_moments",
    "exact_sample",
    "exact_summary",
    "gibbs_sweep",
    "ising_to_boltzmann",
    "log_unnormalized",
    "posterior_mean_model",
    "posterior_models",
    "run",
    "run_fixed_p0",
]
