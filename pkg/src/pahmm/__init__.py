"""Bayesian covariate-dependent hidden Markov models for wearable activity
series with missing observations."""

from .core import (
    ConfigError,
    DesignMatrix,
    ModelConfig,
    NiwHyper,
    NumericalError,
    PatientSeries,
    SeriesError,
    build_design_matrix,
    validate_series,
)
from .sampler import PosteriorDraws, fit, run_hmm, run_nhmm

__version__ = "0.1.0"
