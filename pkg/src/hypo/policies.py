"""Toy policy classes with exact log-probabilities and analytic gradients.

Responses are single categorical draws per prompt, so a sequence likelihood is
one log-softmax entry.  Two classes share one interface:

* :class:`TabularPolicy` - one free logit per (prompt, response) cell.
* :class:`LogLinearPolicy` - logits ``theta . phi(x, y)`` over a fixed feature
  tensor.

Parameters are exposed as a flat float64 vector (``policy.params``) so the
optimizer and the finite-difference oracle are class-agnostic.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .errors import DomainError, ParameterError

MAX_VOCAB = 64
CHECKPOINT_FORMAT = "hypo-checkpoint"
CHECKPOINT_VERSION = 1


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shift = logits.max(axis=-1, keepdims=True)
    z = logits - shift
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_vocab(n_prompts: int, n_responses: int) -> None:
    if not 1 <= n_prompts <= MAX_VOCAB:
        raise ParameterError(f"n_prompts must be in [1, {MAX_VOCAB}], got {n_prompts}")
    if not 1 <= n_responses <= MAX_VOCAB:
        raise ParameterError(f"n_responses must be in [1, {MAX_VOCAB}], got {n_responses}")


class _Policy:
    policy_class = "abstract"

    n_prompts: int
    n_responses: int

    def _check_index(self, prompt_id, response_id=None) -> None:
        prompt_id = np.asarray(prompt_id)
        if prompt_id.size and (prompt_id.min() < 0 or prompt_id.max() >= self.n_prompts):
            raise IndexError(f"prompt id out of range [0, {self.n_prompts})")
        if response_id is not None:
            response_id = np.asarray(response_id)
            if response_id.size and (response_id.min() < 0 or response_id.max() >= self.n_responses):
                raise IndexError(f"response id out of range [0, {self.n_responses})")

    def logits(self) -> np.ndarray:
        raise NotImplementedError

    def log_probs(self) -> np.ndarray:
        """Full ``(n_prompts, n_responses)`` table of log-probabilities."""
        return _log_softmax(self.logits())

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def sequence_log_probs(self, prompts, responses) -> np.ndarray:
        prompts = np.asarray(prompts, dtype=np.int64)
        responses = np.asarray(responses, dtype=np.int64)
        self._check_index(prompts, responses)
        return self.log_probs()[prompts, responses]

    def greedy(self) -> np.ndarray:
        """Highest-probability response per prompt (lowest index on ties)."""
        return np.argmax(self.logits(), axis=1)

    def copy(self):
        raise NotImplementedError

    @property
    def params(self) -> np.ndarray:
        raise NotImplementedError

    @params.setter
    def params(self, value) -> None:
        raise NotImplementedError


class TabularPolicy(_Policy):
    policy_class = "tabular"

    def __init__(self, logits):
        logits = np.array(logits, dtype=np.float64, order="C")
        if logits.ndim != 2:
            raise ParameterError("tabular logits must be a 2-D (prompt, response) array")
        _check_vocab(*logits.shape)
        if not np.isfinite(logits).all():
            raise DomainError("logits must be finite")
        self._logits = logits

    @classmethod
    def uniform(cls, n_prompts: int, n_responses: int) -> "TabularPolicy":
        return cls(np.zeros((n_prompts, n_responses)))

    @property
    def n_prompts(self) -> int:
        return self._logits.shape[0]

    @property
    def n_responses(self) -> int:
        return self._logits.shape[1]

    @property
    def n_params(self) -> int:
        return self._logits.size

    def logits(self) -> np.ndarray:
        return self._logits

    @property
    def params(self) -> np.ndarray:
        return self._logits.reshape(-1)

    @params.setter
    def params(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {value.shape}")
        self._logits[...] = value.reshape(self._logits.shape)

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self._logits.copy())

    def margins(self, prompts, chosen, rejected) -> np.ndarray:
        self._check_index(prompts, chosen)
        self._check_index(prompts, rejected)
        return kernels.tabular_margins(self._logits, prompts, chosen, rejected)

    def accumulate_margin_grad(self, coef, prompts, chosen, rejected, out: np.ndarray) -> None:
        """``out += sum_i coef_i * grad(margin_i)`` where ``out`` is a flat param vector."""
        kernels.scatter_pairs(
            out.reshape(self._logits.shape), prompts, chosen, rejected, coef
        )

    def accumulate_logprob_grad(self, coef, prompts, responses, out: np.ndarray) -> None:
        """``out += sum_i coef_i * grad(log pi(y_i | x_i))``."""
        prompts = np.asarray(prompts, dtype=np.int64)
        responses = np.asarray(responses, dtype=np.int64)
        coef = np.asarray(coef, dtype=np.float64)
        grid = out.reshape(self._logits.shape)
        n_resp = self.n_responses
        grid.reshape(-1)[:] += np.bincount(
            prompts * n_resp + responses, weights=coef, minlength=grid.size
        )
        # the softmax term only depends on the prompt's total coefficient
        per_prompt = np.bincount(prompts, weights=coef, minlength=self.n_prompts)
        grid -= per_prompt[:, None] * self.probs()

    def to_dict(self) -> dict:
        return {
            "policy_class": self.policy_class,
            "n_prompts": self.n_prompts,
            "n_responses": self.n_responses,
            "params": self.params.tolist(),
        }


class LogLinearPolicy(_Policy):
    """``log pi(y|x) = theta . phi(x, y) - logsumexp_y' theta . phi(x, y')``."""

    policy_class = "loglinear"

    def __init__(self, theta, features):
        features = np.array(features, dtype=np.float64, order="C")
        theta = np.array(theta, dtype=np.float64)
        if features.ndim != 3:
            raise ParameterError("features must have shape (n_prompts, n_responses, dim)")
        _check_vocab(features.shape[0], features.shape[1])
        if theta.shape != (features.shape[2],):
            raise ParameterError(f"theta must have shape ({features.shape[2]},), got {theta.shape}")
        if not (np.isfinite(features).all() and np.isfinite(theta).all()):
            raise DomainError("theta and features must be finite")
        self.theta = theta
        self.features = features

    @classmethod
    def random_features(cls, n_prompts: int, n_responses: int, dim: int, seed: int,
                        theta=None) -> "LogLinearPolicy":
        rng = np.random.default_rng(seed)
        features = rng.standard_normal((n_prompts, n_responses, dim))
        return cls(np.zeros(dim) if theta is None else theta, features)

    @property
    def n_prompts(self) -> int:
        return self.features.shape[0]

    @property
    def n_responses(self) -> int:
        return self.features.shape[1]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def feature_map(self, prompt_id: int, response_id: int) -> np.ndarray:
        self._check_index(prompt_id, response_id)
        return self.features[prompt_id, response_id]

    def logits(self) -> np.ndarray:
        return self.features @ self.theta

    @property
    def params(self) -> np.ndarray:
        return self.theta

    @params.setter
    def params(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.theta.shape:
            raise ValueError(f"expected {self.theta.size} parameters, got shape {value.shape}")
        self.theta[...] = value

    def copy(self) -> "LogLinearPolicy":
        return LogLinearPolicy(self.theta.copy(), self.features)

    def _diff(self, prompts, chosen, rejected) -> np.ndarray:
        prompts = np.asarray(prompts, dtype=np.int64)
        chosen = np.asarray(chosen, dtype=np.int64)
        rejected = np.asarray(rejected, dtype=np.int64)
        self._check_index(prompts, chosen)
        self._check_index(prompts, rejected)
        return self.features[prompts, chosen] - self.features[prompts, rejected]

    def margins(self, prompts, chosen, rejected) -> np.ndarray:
        return self._diff(prompts, chosen, rejected) @ self.theta

    def accumulate_margin_grad(self, coef, prompts, chosen, rejected, out: np.ndarray) -> None:
        out += np.asarray(coef, dtype=np.float64) @ self._diff(prompts, chosen, rejected)

    def accumulate_logprob_grad(self, coef, prompts, responses, out: np.ndarray) -> None:
        prompts = np.asarray(prompts, dtype=np.int64)
        responses = np.asarray(responses, dtype=np.int64)
        coef = np.asarray(coef, dtype=np.float64)
        expected = np.einsum("pr,prd->pd", self.probs(), self.features)
        out += coef @ (self.features[prompts, responses] - expected[prompts])

    def to_dict(self) -> dict:
        return {
            "policy_class": self.policy_class,
            "n_prompts": self.n_prompts,
            "n_responses": self.n_responses,
            "feature_dim": self.theta.size,
            "params": self.params.tolist(),
            "features": self.features.tolist(),
        }


Policy = TabularPolicy | LogLinearPolicy


def log_prob(policy: Policy, prompt_id: int, response_id: int) -> float:
    policy._check_index(prompt_id, response_id)
    return float(policy.log_probs()[prompt_id, response_id])


def _check_pair(chosen_id, rejected_id) -> None:
    if np.any(np.asarray(chosen_id) == np.asarray(rejected_id)):
        raise ValueError("chosen and rejected responses must differ")


def policy_margin(policy: Policy, prompt_id: int, chosen_id: int, rejected_id: int) -> float:
    """``log pi(chosen|x) - log pi(rejected|x)``; the partition function cancels."""
    _check_pair(chosen_id, rejected_id)
    return float(policy.margins([prompt_id], [chosen_id], [rejected_id])[0])


def margin_gradient(policy: Policy, prompt_id: int, chosen_id: int, rejected_id: int) -> np.ndarray:
    """Analytic gradient of :func:`policy_margin` w.r.t. ``policy.params``."""
    _check_pair(chosen_id, rejected_id)
    grad = np.zeros(policy.n_params)
    policy.accumulate_margin_grad(np.ones(1), [prompt_id], [chosen_id], [rejected_id], grad)
    return grad


def finite_diff_gradient(fn: Callable[[Policy], float], policy: Policy, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``fn(policy)`` w.r.t. every parameter.

    ``policy`` is not modified; a scratch copy is perturbed one coordinate at a time.
    """
    if not step > 0:
        raise ParameterError(f"step must be > 0, got {step}")
    work = policy.copy()
    base = work.params.copy()
    grad = np.empty_like(base)
    for k in range(base.size):
        shifted = base.copy()
        shifted[k] = base[k] + step
        work.params = shifted
        f_plus = fn(work)
        shifted[k] = base[k] - step
        work.params = shifted
        f_minus = fn(work)
        grad[k] = (f_plus - f_minus) / (2.0 * step)
    return grad


def gibbs_optimum(ref: TabularPolicy, reward, tau: float) -> TabularPolicy:
    """Tilt ``ref`` by ``exp(reward / tau)`` and renormalize per prompt."""
    if not tau > 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != (ref.n_prompts, ref.n_responses):
        raise ParameterError(
            f"reward shape {reward.shape} does not match policy ({ref.n_prompts}, {ref.n_responses})"
        )
    if not np.isfinite(reward).all():
        raise DomainError("reward must be finite")
    return TabularPolicy(_log_softmax(ref.log_probs() + reward / tau))


def policy_from_dict(data: dict) -> Policy:
    cls = data["policy_class"]
    if cls == "tabular":
        params = np.asarray(data["params"], dtype=np.float64)
        return TabularPolicy(params.reshape(data["n_prompts"], data["n_responses"]))
    if cls == "loglinear":
        return LogLinearPolicy(data["params"], data["features"])
    raise ParameterError(f"unknown policy class {cls!r}")


def save_checkpoint(policy: Policy, path, seed_lineage: dict | None = None, **meta) -> Path:
    """Write a versioned JSON checkpoint; identical inputs give identical bytes."""
    record = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION}
    record.update(meta)
    record["seed_lineage"] = dict(seed_lineage or {})
    record["policy"] = policy.to_dict()
    path = Path(path)
    path.write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[Policy, dict]:
    """Return ``(policy, metadata)`` from a file written by :func:`save_checkpoint`."""
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ParameterError(f"{path} is not a policy checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {record.get('version')}")
    policy = policy_from_dict(record.pop("policy"))
    return policy, record
