"""Flow matching with heteroscedastic uncertainty, propagation and guidance."""

from .data import Checkerboard, GaussianMixture, TwoMoons, marginal_velocity_oracle, ring_mixture
from .errors import (
    ConfigError,
    DegenerateDataError,
    DimensionMismatchError,
    FlowUQError,
    InsufficientSamplesError,
    NonFiniteError,
    SingularTimeError,
    UnknownClassError,
)
from .estimator import FlowMatcher
from .evaluate import EvalReport, energy_distance, filter_sweep, knn_precision_recall
from .guidance import (
    GuidanceConfig,
    GuidedOutput,
    GuidedVelocity,
    lambda_opt,
    pseudo_likelihood_f,
    cfg_combine,
    cg_correct,
)
from .model import ModelOutput, VelocityModel
from .paths import AffinePath, cg_coefficient, cond_velocity, interpolate, recover_x1
from .pipeline import GenerationResult, SampleRecord, generate
from .sample import FlowState, SamplerConfig, sample, step_euler, step_heun
from .train import LossBreakdown, TrainConfig, correction_term, conditional_nll, train, minibatch_marginal_velocity
from .uq import (
    HutchinsonJVP,
    MonteCarloCov,
    UqConfig,
    ZeroCov,
    aggregate_score,
    au_baseline_score,
    hutchinson_diag,
    propagate_variance,
)

__version__ = "0.1.0"

__all__ = [
    "AffinePath",
    "Checkerboard",
    "ConfigError",
    "DegenerateDataError",
    "DimensionMismatchError",
    "EvalReport",
    "FlowMatcher",
    "FlowState",
    "FlowUQError",
    "GaussianMixture",
    "GenerationResult",
    "GuidanceConfig",
    "GuidedOutput",
    "GuidedVelocity",
    "HutchinsonJVP",
    "InsufficientSamplesError",
    "LossBreakdown",
    "ModelOutput",
    "MonteCarloCov",
    "NonFiniteError",
    "SampleRecord",
    "SamplerConfig",
    "SingularTimeError",
    "TrainConfig",
    "TwoMoons",
    "UnknownClassError",
    "UqConfig",
    "VelocityModel",
    "ZeroCov",
    "aggregate_score",
    "au_baseline_score",
    "cg_coefficient",
    "cond_velocity",
    "correction_term",
    "conditional_nll",
    "energy_distance",
    "filter_sweep",
    "generate",
    "hutchinson_diag",
    "interpolate",
    "knn_precision_recall",
    "lambda_opt",
    "marginal_velocity_oracle",
    "propagate_variance",
    "pseudo_likelihood_f",
    "recover_x1",
    "ring_mixture",
    "sample",
    "step_euler",
    "step_heun",
    "train",
    "cfg_combine",
    "cg_correct",
    "minibatch_marginal_velocity",
]
