"""Repulsive mixture models with determinantal point process priors."""

from .analysis import (
    PartitionEstimate,
    Trace,
    binder_partition,
    gating_weights,
    k_summary,
    lpml,
    mse,
    predictive_density,
    root_mse,
)
from .dpp import (
    DppWindow,
    build_window,
    c_app,
    log_density_rect,
    log_density_unit,
    prior_count_moments,
    prior_count_sample,
)
from .model import CovHyperparams, CovMixtureState, Hyperparams, MixtureState, NuPrior, log_prior_rho
from .spectral import Family, SpectralModel, m_threshold

__version__ = "0.1.0"
