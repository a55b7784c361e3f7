"""Noise-regularised neural network Gaussian processes with ReLU kernels."""

__version__ = "0.1.0"

from .errors import (
    DatasetError,
    ExperimentError,
    FactorisationError,
    InvariantError,
    KernelOverflowError,
    KernelParamError,
    NNGPError,
)
from .kernel import (
    KernelParams,
    KernelState,
    NoiseMode,
    NoiseSpec,
    Regime,
    RegimeLabel,
    TableCase,
    classify_regime,
    closed_form_diag,
    critical_params,
    rho_g,
    step_diag,
    step_offdiag,
)
from .gram import GramMatrix, build_cross_matrix, build_cross_vector, build_train_gram, frobenius_norm
from .gp import Posterior, fit, log_marginal_likelihood, predict, predict_batch, sample_prior
from .data import Dataset, load_split, make_sinusoid, normalize_inputs
from .tasks import decode_prediction, encode_labels
