"""
Residual entropy model for NLLC

- MixtureParams / discrete_pmf / autoregress_means: logistic mixture math
- ResidualEntropyModel: features, causal context and mixture estimators
- PixelEvaluator: float64 per-pixel evaluation shared by encoder and decoder
- save_weights / load_weights / weights_fingerprint: weights files
"""

from .mixture import (
    NUM_MIXTURES,
    SIGMA_MIN,
    MixtureParams,
    autoregress_means,
    discrete_pmf,
    discrete_pmf_mass,
    log_likelihood,
    log_pmf_table,
)
from .context_model import (
    FeatureExtractor,
    MaskedContextConv,
    ConditionalScaleShift,
    ParameterEstimator,
)
from .residual_model import (
    GradientSet,
    LossSelection,
    TrainingInputs,
    ResidualEntropyModel,
    PixelEvaluator,
    copy_as_float64,
    image_tensor,
)
from .weights_store import (
    save_weights,
    load_weights,
    weights_fingerprint,
    weights_to_bytes,
    weights_from_bytes,
    pack_tensors,
    unpack_tensors,
)

__all__ = [
    "NUM_MIXTURES",
    "SIGMA_MIN",
    "MixtureParams",
    "autoregress_means",
    "discrete_pmf",
    "discrete_pmf_mass",
    "log_likelihood",
    "log_pmf_table",
    "FeatureExtractor",
    "MaskedContextConv",
    "ConditionalScaleShift",
    "ParameterEstimator",
    "GradientSet",
    "LossSelection",
    "TrainingInputs",
    "ResidualEntropyModel",
    "PixelEvaluator",
    "copy_as_float64",
    "image_tensor",
    "save_weights",
    "load_weights",
    "weights_fingerprint",
    "weights_to_bytes",
    "weights_from_bytes",
    "pack_tensors",
    "unpack_tensors",
]
