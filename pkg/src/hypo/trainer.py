"""Deterministic mini-batch training with Adam(W) and warmup + cosine decay."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core_math import HyperParams
from .datagen import PreferenceDataset
from .errors import DomainError, ParameterError, TrainingError
from .metrics import agreement_rate, pessimistic_margin
from .objectives import ObjectiveKind, batch_terms


@dataclass(frozen=True)
class TrainConfig:
    objective: ObjectiveKind = ObjectiveKind.DPO
    hp: HyperParams = field(default_factory=HyperParams)
    peak_lr: float = 1e-2
    epochs: int = 1
    batch_size: int = 128
    warmup_fraction: float = 0.10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float | None = None
    seed: int = 0
    eval_every: int = 10
    recompute_ref: bool = False

    def __post_init__(self):
        object.__setattr__(self, "objective", ObjectiveKind(self.objective))
        self.objective.validate(self.hp)
        if not self.peak_lr >= 0:
            raise ParameterError(f"peak_lr must be >= 0, got {self.peak_lr}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ParameterError("epochs, batch_size and eval_every must be >= 1")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ParameterError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ParameterError("adam betas must be in [0, 1)")
        if not self.adam_epsilon > 0:
            raise ParameterError("adam_epsilon must be > 0")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be >= 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ParameterError("grad_clip must be > 0 when set")


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` then half-cosine decay to 0 at ``total_steps``."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    peak = config.peak_lr
    warmup = config.warmup_fraction * total_steps
    if step < warmup:
        return peak * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              config: TrainConfig) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update with decoupled weight decay, in place.

    Returns the same ``params`` array and ``state`` object for chaining.
    """
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("params, grads and optimizer state must share a shape")
    if not np.isfinite(grads).all():
        raise TrainingError("non-finite gradient", state.t + 1)
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    if config.weight_decay:
        params -= lr * config.weight_decay * params
    params -= lr * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return params, state


def objective_and_grad(policy, kind: ObjectiveKind, hp: HyperParams, prompts, chosen, rejected,
                       ref_margins, weights=None) -> tuple[float, np.ndarray]:
    """Batch loss (weighted mean over records) and its gradient w.r.t. ``policy.params``.

    The logistic part contributes ``-beta * w_i * grad(margin_i)`` per record;
    for ``dpo_sft`` the SFT term adds ``-lambda * grad(log pi(chosen_i))``.
    """
    kind = ObjectiveKind(kind)
    margins = policy.margins(prompts, chosen, rejected)
    loss, weight, _ = batch_terms(kind, margins, ref_margins, hp)
    n = loss.size
    share = np.full(n, 1.0 / n) if weights is None else np.asarray(weights) / np.sum(weights)
    grad = np.zeros(policy.n_params)
    total = float(np.dot(share, loss))
    policy.accumulate_margin_grad(-hp.beta * weight * share, prompts, chosen, rejected, grad)
    if kind is ObjectiveKind.DPO_PLUS_SFT and hp.lambda_sft:
        logp = policy.sequence_log_probs(prompts, chosen)
        total += hp.lambda_sft * float(np.dot(share, -logp))
        policy.accumulate_logprob_grad(-hp.lambda_sft * share, prompts, chosen, grad)
    return total, grad


def dataset_objective(policy, kind, hp, dataset: PreferenceDataset, ref_margins=None) -> float:
    ref = dataset.ref_margins if ref_margins is None else ref_margins
    return objective_and_grad(policy, kind, hp, dataset.prompt_ids, dataset.chosen_ids,
                              dataset.rejected_ids, ref, dataset.weights)[0]


@dataclass(frozen=True)
class LogEntry:
    step: int
    learning_rate: float
    train_loss: float
    agreement_rate: float
    pessimistic_margin: float | None
    wall_time: float


METRIC_FIELDS = ("learning_rate", "train_loss", "agreement_rate", "pessimistic_margin")


@dataclass
class RunLog:
    """Append-only series of evaluation points with strictly increasing steps."""

    name: str = "run"
    entries: list = field(default_factory=list)

    def append(self, entry: LogEntry) -> None:
        if self.entries and entry.step <= self.entries[-1].step:
            raise ValueError(f"step {entry.step} does not follow {self.entries[-1].step}")
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def final(self) -> LogEntry:
        return self.entries[-1]

    def to_records(self, include_wall_time: bool = False) -> list[dict]:
        out = []
        for e in self.entries:
            rec = asdict(e)
            if not include_wall_time:
                rec.pop("wall_time")
            out.append(rec)
        return out

    def save(self, path, meta: dict | None = None, include_wall_time: bool = False) -> Path:
        """JSON lines: a header with ``meta`` then one record per eval point.

        Wall time is left out by default so identical runs give identical files.
        """
        lines = [json.dumps({"run_name": self.name, **(meta or {})}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.to_records(include_wall_time)]
        path = Path(path)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        log = cls(header.get("run_name", "run"))
        for line in lines[1:]:
            rec = json.loads(line)
            rec.setdefault("wall_time", float("nan"))
            log.append(LogEntry(**rec))
        return log


def total_steps(n_records: int, config: TrainConfig) -> int:
    return math.ceil(n_records / config.batch_size) * config.epochs


def train(policy, ref_policy, dataset: PreferenceDataset, config: TrainConfig,
          eval_set: PreferenceDataset | None = None, name: str = "run", on_epoch_end=None):
    """Train a copy of ``policy`` against the frozen ``ref_policy``.

    Returns ``(trained_policy, RunLog)``.  Metrics are logged at step 0, every
    ``eval_every`` updates, and after the last update, on ``eval_set`` (the
    training set when omitted).  Reference margins come from the dataset cache
    unless ``config.recompute_ref`` is set.  ``on_epoch_end(epoch, policy)`` is
    called after each epoch (1-based) and must not modify the policy.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if ref_policy is policy:
        raise ValueError("ref_policy must be a frozen snapshot, not the trained policy itself")
    eval_set = dataset if eval_set is None else eval_set
    kind, hp = config.objective, config.hp
    policy = policy.copy()
    ref_snapshot = ref_policy.copy()

    prompts, chosen, rejected = dataset.prompt_ids, dataset.chosen_ids, dataset.rejected_ids
    if config.recompute_ref:
        ref_margins = ref_snapshot.margins(prompts, chosen, rejected)
    else:
        ref_margins = dataset.ref_margins
    weights = dataset.weights

    n = len(dataset)
    steps = total_steps(n, config)
    per_epoch = math.ceil(n / config.batch_size)
    state = AdamState.zeros(policy.n_params)
    rng = np.random.default_rng(config.seed)
    log = RunLog(name)
    start = time.perf_counter()

    def record(step: int) -> None:
        try:
            loss = dataset_objective(policy, kind, hp, dataset, ref_margins)
        except DomainError:
            loss = math.nan
        if not math.isfinite(loss):
            bad = np.flatnonzero(~np.isfinite(policy.margins(prompts, chosen, rejected)))
            raise TrainingError("non-finite training loss", step, bad.tolist())
        pess = pessimistic_margin(policy, eval_set, step)
        log.append(LogEntry(
            step=step,
            learning_rate=lr_at(step, steps, config),
            train_loss=loss,
            agreement_rate=agreement_rate(policy, eval_set, step).agree_rate,
            pessimistic_margin=pess.mean_margin,
            wall_time=time.perf_counter() - start,
        ))

    record(0)
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for b in range(per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            if config.recompute_ref:
                batch_ref = ref_snapshot.margins(prompts[idx], chosen[idx], rejected[idx])
            else:
                batch_ref = ref_margins[idx]
            try:
                loss, grad = objective_and_grad(
                    policy, kind, hp, prompts[idx], chosen[idx], rejected[idx], batch_ref,
                    None if weights is None else weights[idx],
                )
            except DomainError:
                loss, grad = math.nan, np.full(policy.n_params, np.nan)
            if not (math.isfinite(loss) and np.isfinite(grad).all()):
                margins = policy.margins(prompts[idx], chosen[idx], rejected[idx])
                bad = idx[~np.isfinite(margins)]
                raise TrainingError("non-finite loss or gradient", step + 1,
                                    (bad if bad.size else idx).tolist())
            if config.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > config.grad_clip:
                    grad *= config.grad_clip / norm
            params = policy.params.copy()
            adam_step(params, grad, state, lr_at(step, steps, config), config)
            policy.params = params
            step += 1
            if step % config.eval_every == 0 or step == steps:
                record(step)
        if on_epoch_end is not None:
            on_epoch_end(epoch, policy)
    return policy, log


def with_objective(config: TrainConfig, kind: ObjectiveKind, **hp_changes) -> TrainConfig:
    """Copy of ``config`` with a different objective; everything else identical."""
    return replace(config, objective=ObjectiveKind(kind), hp=replace(config.hp, **hp_changes))
