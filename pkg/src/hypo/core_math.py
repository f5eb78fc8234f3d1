"""Scalar kernels shared by every objective.

All math is float64.  Non-finite inputs are rejected with :class:`DomainError`
instead of being propagated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, ParameterError

__all__ = [
    "MarginPair",
    "HyperParams",
    "stable_sigmoid",
    "stable_log1pexp",
    "clip_ref_margin",
    "smooth_ref_margin",
]


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class MarginPair:
    """Policy and reference log-likelihood margins (nats) for one preference pair."""

    delta_theta: float
    delta_ref: float

    def __post_init__(self):
        object.__setattr__(self, "delta_theta", _check_finite("delta_theta", self.delta_theta))
        object.__setattr__(self, "delta_ref", _check_finite("delta_ref", self.delta_ref))


@dataclass(frozen=True)
class HyperParams:
    """Every tunable scalar of the objective family.

    ``alpha=None`` means hard clipping.  ``tau`` is the reciprocal smoothness
    used by configs (``tau = 1/alpha``).
    """

    beta: float = 0.1
    gamma: float = 0.0
    alpha: float | None = None
    h: float = 0.0
    lambda_sft: float = 0.0

    def __post_init__(self):
        for name in ("beta", "gamma", "h", "lambda_sft"):
            _check_finite(name, getattr(self, name))
        if not self.beta > 0:
            raise ParameterError(f"beta must be > 0, got {self.beta}")
        if self.alpha is not None:
            _check_finite("alpha", self.alpha)
            if not self.alpha > 0:
                raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if self.h < 0:
            raise ParameterError(f"h must be >= 0, got {self.h}")
        if self.lambda_sft < 0:
            raise ParameterError(f"lambda_sft must be >= 0, got {self.lambda_sft}")

    @property
    def tau(self) -> float | None:
        return None if self.alpha is None else 1.0 / self.alpha

    @classmethod
    def from_tau(cls, tau: float | None, **kwargs) -> "HyperParams":
        """Build from the ``tau`` spelling; ``tau`` of None or 0 selects hard clipping."""
        if tau is None or tau == 0:
            return cls(alpha=None, **kwargs)
        if not tau > 0:
            raise ParameterError(f"tau must be > 0, got {tau}")
        return cls(alpha=1.0 / tau, **kwargs)


def stable_sigmoid(x: float) -> float:
    """Logistic function, evaluated on the branch that cannot overflow."""
    x = _check_finite("x", x)
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def stable_log1pexp(x: float) -> float:
    """Softplus ``log(1 + e^x)``."""
    x = _check_finite("x", x)
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def clip_ref_margin(delta_ref: float, gamma: float) -> float:
    delta_ref = _check_finite("delta_ref", delta_ref)
    gamma = _check_finite("gamma", gamma)
    return max(delta_ref, gamma)


def smooth_ref_margin(delta_ref: float, gamma: float, alpha: float) -> float:
    """Softplus relaxation of ``max(delta_ref, gamma)``.

    Exceeds the hard clip by at most ``ln 2 / alpha`` and converges to it as
    ``alpha`` grows.
    """
    delta_ref = _check_finite("delta_ref", delta_ref)
    gamma = _check_finite("gamma", gamma)
    alpha = _check_finite("alpha", alpha)
    if not alpha > 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    # max(x, g) + log1p(e^{-a|x-g|})/a: same value, never rounds below the hard clip
    return max(delta_ref, gamma) + math.log1p(math.exp(-alpha * abs(delta_ref - gamma))) / alpha
