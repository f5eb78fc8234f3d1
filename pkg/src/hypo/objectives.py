"""Logistic pairwise objectives: DPO, reference-free, HyPO (hard/soft), DPO+SFT.

Every objective is ``log(1 + exp(-beta * u))`` for some argument ``u`` built
from the policy margin, so each one reports its gradient through a single
weight ``w = sigmoid(-beta * u)`` with ``d loss / d delta_theta = -beta * w``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core_math import (
    HyperParams,
    MarginPair,
    clip_ref_margin,
    smooth_ref_margin,
    stable_log1pexp,
    stable_sigmoid,
)
from .errors import DomainError, ParameterError


class ObjectiveKind(str, enum.Enum):
    DPO = "dpo"
    REF_FREE = "ref_free"
    HYPO_HARD = "hypo_hard"
    HYPO_SOFT = "hypo_soft"
    DPO_PLUS_SFT = "dpo_sft"

    @property
    def kernel_code(self) -> int:
        return _KERNEL_CODES[self]

    def validate(self, hp: HyperParams) -> None:
        if self is ObjectiveKind.HYPO_SOFT and hp.alpha is None:
            raise ParameterError("hypo_soft requires alpha (or tau) to be set")


_KERNEL_CODES = {
    ObjectiveKind.DPO: kernels.DPO,
    ObjectiveKind.REF_FREE: kernels.REF_FREE,
    ObjectiveKind.HYPO_HARD: kernels.HYPO_HARD,
    ObjectiveKind.HYPO_SOFT: kernels.HYPO_SOFT,
    ObjectiveKind.DPO_PLUS_SFT: kernels.DPO,
}


@dataclass(frozen=True)
class LossEval:
    """Per-example loss, gradient weight, and the reference margin actually used.

    For DPO+SFT ``weight`` is the logistic component only; the SFT term acts on
    parameters directly, not through the margin.
    """

    loss: float
    weight: float
    effective_ref_margin: float


def _logistic(arg: float, beta: float, eff_ref: float) -> LossEval:
    z = beta * arg
    return LossEval(stable_log1pexp(-z), stable_sigmoid(-z), eff_ref)


def dpo_loss(pair: MarginPair, hp: HyperParams) -> LossEval:
    """``log(1 + exp(-beta (dtheta - dref - h)))``; ``h`` is 0 unless set for ablations."""
    return _logistic(pair.delta_theta - pair.delta_ref - hp.h, hp.beta, pair.delta_ref)


def absolute_loss(delta_theta: float, hp: HyperParams) -> LossEval:
    """Reference-free loss on the absolute policy margin."""
    if not math.isfinite(delta_theta):
        raise DomainError(f"delta_theta must be finite, got {delta_theta!r}")
    return _logistic(delta_theta - hp.h, hp.beta, 0.0)


def hypo_loss(pair: MarginPair, hp: HyperParams, hard: bool = True) -> LossEval:
    """DPO loss with the reference margin clipped from below at ``gamma``.

    ``hard=False`` swaps the max for its softplus relaxation with smoothness
    ``hp.alpha``.  The home advantage ``hp.h`` is subtracted from the argument.
    """
    if hard:
        eff = clip_ref_margin(pair.delta_ref, hp.gamma)
    else:
        if hp.alpha is None:
            raise ParameterError("soft clipping requires alpha (or tau) to be set")
        eff = smooth_ref_margin(pair.delta_ref, hp.gamma, hp.alpha)
    return _logistic(pair.delta_theta - eff - hp.h, hp.beta, eff)


def dpo_plus_sft_loss(pair: MarginPair, logp_chosen: float, hp: HyperParams) -> LossEval:
    if not math.isfinite(logp_chosen):
        raise DomainError(f"logp_chosen must be finite, got {logp_chosen!r}")
    if logp_chosen > 0:
        raise DomainError(f"logp_chosen is a log-probability and cannot be positive: {logp_chosen}")
    base = dpo_loss(pair, hp)
    if hp.lambda_sft == 0:
        return base
    return LossEval(base.loss + hp.lambda_sft * (-logp_chosen), base.weight, base.effective_ref_margin)


def attenuation_bound(z: float) -> float:
    """Upper bound ``e^{-z}`` on the DPO weight ``sigmoid(-z)``, valid for ``z >= 0``."""
    return math.exp(-z)


def evaluate(
    kind: ObjectiveKind,
    pair: MarginPair,
    logp_chosen: float | None,
    hp: HyperParams,
) -> LossEval:
    kind = ObjectiveKind(kind)
    if kind is ObjectiveKind.DPO_PLUS_SFT:
        if logp_chosen is None:
            raise ParameterError("dpo_sft requires logp_chosen")
        return dpo_plus_sft_loss(pair, logp_chosen, hp)
    if logp_chosen is not None:
        raise ParameterError(f"logp_chosen is only accepted by dpo_sft, not {kind.value}")
    if kind is ObjectiveKind.DPO:
        return dpo_loss(pair, hp)
    if kind is ObjectiveKind.REF_FREE:
        return absolute_loss(pair.delta_theta, hp)
    if kind is ObjectiveKind.HYPO_HARD:
        return hypo_loss(pair, hp, hard=True)
    return hypo_loss(pair, hp, hard=False)


def batch_terms(kind: ObjectiveKind, delta_theta, delta_ref, hp: HyperParams):
    """Vectorized logistic component over many pairs.

    Returns ``(loss, weight, effective_ref_margin)`` arrays.  The SFT term of
    ``dpo_sft`` is not included (it needs the policy).
    """
    kind = ObjectiveKind(kind)
    kind.validate(hp)
    delta_theta = np.asarray(delta_theta, dtype=np.float64)
    delta_ref = np.asarray(delta_ref, dtype=np.float64)
    if delta_theta.shape != delta_ref.shape:
        raise ValueError("delta_theta and delta_ref must have the same shape")
    if not (np.isfinite(delta_theta).all() and np.isfinite(delta_ref).all()):
        raise DomainError("margins must be finite")
    shape = delta_theta.shape
    loss, weight, eff = kernels.objective_terms(
        kind.kernel_code,
        delta_theta.ravel(),
        delta_ref.ravel(),
        hp.beta,
        hp.gamma,
        hp.alpha,
        hp.h,
    )
    return loss.reshape(shape), weight.reshape(shape), eff.reshape(shape)


def batch_loss(
    kind: ObjectiveKind,
    delta_theta,
    delta_ref,
    hp: HyperParams,
    logp_chosen=None,
    weights=None,
) -> float:
    """Mean per-example loss, optionally weighted; adds the SFT term for ``dpo_sft``."""
    kind = ObjectiveKind(kind)
    loss, _, _ = batch_terms(kind, delta_theta, delta_ref, hp)
    if kind is ObjectiveKind.DPO_PLUS_SFT:
        if logp_chosen is None:
            raise ParameterError("dpo_sft requires logp_chosen")
        logp_chosen = np.asarray(logp_chosen, dtype=np.float64)
        if (logp_chosen > 0).any():
            raise DomainError("log-probabilities cannot be positive")
        loss = loss + hp.lambda_sft * (-logp_chosen)
    if weights is None:
        return float(loss.mean())
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.dot(weights, loss) / weights.sum())
