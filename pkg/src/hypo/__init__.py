"""Clipped-reference preference objectives on analytically tractable policies."""

from .core_math import (
    HyperParams,
    MarginPair,
    clip_ref_margin,
    smooth_ref_margin,
    stable_log1pexp,
    stable_sigmoid,
)
from .errors import (
    CalibrationError,
    ConfigError,
    DomainError,
    HypoError,
    ParameterError,
    TrainingError,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .objectives import (
    LossEval,
    ObjectiveKind,
    absolute_loss,
    attenuation_bound,
    dpo_loss,
    dpo_plus_sft_loss,
    evaluate,
    hypo_loss,
)

__version__ = "0.1.0"
