"""Multifidelity ensemble Kalman filtering with reduced-order control variates."""

from .control_variates import (
    CostModel,
    CvGain,
    FidelityChain,
    GainFlavor,
    ancillary_gain,
    effective_ensemble_size,
    empirical_gain,
    estimator_cost,
    half_gain,
    optimal_gain,
    signed_measure_cov,
    telescoping_total_variate,
    total_variate_cov,
)
from .ensemble import GaussianSampler, anomalies, empirical_cov, empirical_mean, inflate, sample_gaussian
from .multifidelity import (
    FidelityLadder,
    MultifidelityEnsemble,
    NoiseMethod,
    TotalVariateTriple,
    mf_analysis,
    mf_forecast,
    telescopic_analysis,
    telescopic_forecast,
    total_variate_mean,
)
from .observations import LocalizationKernel, ObservationModel
from .projection import ProjectionPair

__version__ = "0.1.0"
