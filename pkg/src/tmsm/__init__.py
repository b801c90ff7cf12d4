"""Counterfactual outcome tensor completion for longitudinal treatment panels.

The package views the potential outcomes of N subjects over T time points
under the 2^k length-k treatment regimes as an (N, T, K) tensor of which only
one regime per (subject, time) is observed.  It recovers the missing entries
by low-rank Tucker completion with inverse-probability-of-treatment weights
and a sieve-basis constraint tying the subject factors to baseline
covariates, tunes the multilinear ranks by BIC, and ships the synthetic
benchmark designs used to validate the estimator.
"""

from .completion import FitConfig, FitReport, TuckerModel, bic, fit, initialize, tune_ranks
from .evaluate import (
    AteQuery,
    CvPlan,
    ate,
    cv_evaluate,
    fit_hrmsm,
    fit_unfolded,
    kernel_weights,
    normalized_error,
)
from .panel import (
    PanelDataset,
    RegimeCode,
    decode_regime,
    encode_regime,
    history_vector,
    load_panel_csv,
    observation_tensor,
    write_panel_csv,
)
from .propensity import (
    PropensityConfig,
    WeightTensor,
    default_lambda,
    fit_propensity,
    scad_penalty,
    weight_tensor,
    weights_from_probabilities,
)
from .sieve import SieveSpec, build_basis, projector
from .simulate import ExperimentSettings, SimDesign, SimResult, generate, run_experiment
from .tensor import (
    fold,
    hosvd,
    mode_product,
    norms,
    read_tensor,
    tucker_reconstruct,
    unfold,
    write_tensor,
)

__version__ = "0.1.0"
