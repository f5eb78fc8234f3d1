"""Inference-aligned evaluation metrics and a reward-judged win matrix."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class AgreementReport:
    step: int
    agree_rate: float
    n_pairs: int


@dataclass(frozen=True)
class PessimisticMarginReport:
    """Mean policy margin over eval pairs whose cached reference margin is negative.

    ``mean_margin`` is ``None`` when that subset is empty.
    """

    step: int
    mean_margin: float | None
    subset_size: int


@dataclass
class WinMatrix:
    """Pairwise win rates in percent.

    ``entries[i, j]`` counts ties as half a win, so ``entries[i, j] +
    entries[j, i] == 100``.  ``tie_mass`` is the raw tie percentage and
    ``strict_wins = entries - tie_mass / 2``.  Diagonals are NaN.
    """

    labels: list
    entries: np.ndarray
    tie_mass: np.ndarray
    mode: str = "greedy"
    judge: str = "synthetic true reward (analogue of a model judge)"

    @property
    def strict_wins(self) -> np.ndarray:
        return self.entries - self.tie_mass / 2.0


def agreement_rate(policy, eval_set, step: int = 0) -> AgreementReport:
    """Fraction of pairs with a strictly positive policy margin; ties count as misses."""
    n = len(eval_set)
    if n == 0:
        raise ValueError("agreement_rate needs a nonempty eval set")
    margins = policy.margins(eval_set.prompt_ids, eval_set.chosen_ids, eval_set.rejected_ids)
    return AgreementReport(step, int(np.count_nonzero(margins > 0)) / n, n)


def pessimistic_margin(policy, eval_set, step: int = 0) -> PessimisticMarginReport:
    # membership uses the frozen reference cache, never the current policy
    mask = eval_set.ref_margins < 0
    k = int(np.count_nonzero(mask))
    if k == 0:
        return PessimisticMarginReport(step, None, 0)
    margins = policy.margins(
        eval_set.prompt_ids[mask], eval_set.chosen_ids[mask], eval_set.rejected_ids[mask]
    )
    return PessimisticMarginReport(step, float(margins.mean()), k)


def ref_margin_stats(ref_policy, dataset) -> dict:
    """Mean, lower median and pessimistic fraction of reference margins.

    For an even count the median is the lower of the two central values.
    """
    if len(dataset) == 0:
        raise ValueError("ref_margin_stats needs a nonempty dataset")
    margins = ref_policy.margins(dataset.prompt_ids, dataset.chosen_ids, dataset.rejected_ids)
    ordered = np.sort(margins)
    return {
        "mean": float(margins.mean()),
        "median": float(ordered[(ordered.size - 1) // 2]),
        "fraction_pessimistic": int(np.count_nonzero(margins < 0)) / margins.size,
    }


def win_matrix(policies, world, n_prompts_eval: int, mode: str = "greedy", seed: int = 0) -> WinMatrix:
    """Head-to-head win rates judged by the world's true reward.

    ``policies`` is a mapping or a sequence of ``(name, policy)`` pairs.  For
    each of ``n_prompts_eval`` prompts (drawn with replacement), every policy
    emits one response, greedily or by sampling; the higher-reward response
    wins and equal rewards split the point.
    """
    items = list(policies.items()) if isinstance(policies, dict) else list(policies)
    if len(items) < 2:
        raise ValueError("win_matrix needs at least two policies")
    if mode not in ("greedy", "sampled"):
        raise ValueError(f"mode must be greedy or sampled, got {mode!r}")
    if n_prompts_eval < 1:
        raise ValueError("n_prompts_eval must be >= 1")
    for name, pol in items:
        if (pol.n_prompts, pol.n_responses) != world.true_reward.shape:
            raise ValueError(f"policy {name!r} does not match the world's vocabulary")
    rng = np.random.default_rng(seed)
    prompts = rng.integers(0, world.n_prompts, size=n_prompts_eval)
    rewards = []
    for _, pol in items:
        if mode == "greedy":
            responses = pol.greedy()[prompts]
        else:
            cdf = np.cumsum(pol.probs()[prompts], axis=1)
            u = rng.random(n_prompts_eval)[:, None] * cdf[:, -1:]
            responses = np.minimum((cdf < u).sum(axis=1), world.n_responses - 1)
        rewards.append(world.true_reward[prompts, responses])
    k = len(items)
    entries = np.full((k, k), np.nan)
    ties = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            win = np.count_nonzero(rewards[i] > rewards[j])
            tie = np.count_nonzero(rewards[i] == rewards[j])
            entries[i, j] = 100.0 * (win + 0.5 * tie) / n_prompts_eval
            ties[i, j] = 100.0 * tie / n_prompts_eval
    return WinMatrix([name for name, _ in items], entries, ties, mode)


def reports_to_jsonl(reports, path) -> Path:
    path = Path(path)
    path.write_text("".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in reports),
                    encoding="utf-8")
    return path


def reports_to_csv(reports, path) -> Path:
    rows = [asdict(r) for r in reports]
    if not rows:
        raise ValueError("no reports to write")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return path


def win_matrix_to_csv(wm: WinMatrix, path) -> Path:
    """One row per off-diagonal cell: row, column, win rate, tie rate."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "column", "win_rate_pct", "tie_rate_pct", "mode", "judge"])
        for i, a in enumerate(wm.labels):
            for j, b in enumerate(wm.labels):
                if i != j:
                    writer.writerow([a, b, f"{wm.entries[i, j]:.6g}", f"{wm.tie_mass[i, j]:.6g}",
                                     wm.mode, wm.judge])
    return path
