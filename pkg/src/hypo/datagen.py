"""Synthetic preference worlds with a tunable fraction of pessimistic pairs.

A world holds a true reward table and a reference policy that is the Gibbs
tilt of a *perturbed* reward.  Raising ``ref_misalignment`` decorrelates the
reference from the judge, which moves the share of pairs on which the
reference prefers the rejected response (``delta_ref < 0``) toward one half.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, DomainError, ParameterError
from .policies import MAX_VOCAB, TabularPolicy, gibbs_optimum, policy_from_dict

WORLD_FORMAT = "hypo-world"
DATASET_FORMAT = "hypo-preferences"
FILE_VERSION = 1
PROBE_PAIRS = 10_000


@dataclass(frozen=True)
class WorldConfig:
    n_prompts: int = 32
    n_responses: int = 8
    ref_misalignment: float = 0.0
    reward_scale: float = 1.0
    ref_temperature: float = 1.0

    def __post_init__(self):
        if not 1 <= self.n_prompts <= MAX_VOCAB:
            raise ParameterError(f"n_prompts must be in [1, {MAX_VOCAB}], got {self.n_prompts}")
        if not 2 <= self.n_responses <= MAX_VOCAB:
            raise ParameterError(f"n_responses must be in [2, {MAX_VOCAB}], got {self.n_responses}")
        if not (np.isfinite(self.ref_misalignment) and self.ref_misalignment >= 0):
            raise ParameterError(f"ref_misalignment must be finite and >= 0, got {self.ref_misalignment}")
        if not self.reward_scale > 0:
            raise ParameterError("reward_scale must be > 0")
        if not self.ref_temperature > 0:
            raise ParameterError("ref_temperature must be > 0")


def config_hash(obj) -> str:
    """Short stable hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SyntheticWorld:
    config: WorldConfig
    true_reward: np.ndarray
    ref_policy: TabularPolicy
    seed: int

    @property
    def n_prompts(self) -> int:
        return self.true_reward.shape[0]

    @property
    def n_responses(self) -> int:
        return self.true_reward.shape[1]

    @classmethod
    def from_rewards(cls, true_reward, ref_policy: TabularPolicy | None = None, seed: int = 0):
        """Wrap explicit rewards; the reference defaults to their Gibbs policy."""
        true_reward = np.asarray(true_reward, dtype=np.float64)
        n_p, n_r = true_reward.shape
        if ref_policy is None:
            ref_policy = gibbs_optimum(TabularPolicy.uniform(n_p, n_r), true_reward, 1.0)
        return cls(WorldConfig(n_p, n_r), true_reward, ref_policy, seed)

    def to_dict(self) -> dict:
        return {
            "format": WORLD_FORMAT,
            "version": FILE_VERSION,
            "seed": self.seed,
            "config": asdict(self.config),
            "config_hash": config_hash(asdict(self.config)),
            "true_reward": self.true_reward.tolist(),
            "ref_policy": self.ref_policy.to_dict(),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format") != WORLD_FORMAT or data.get("version") != FILE_VERSION:
            raise ParameterError(f"{path} is not a version-{FILE_VERSION} world file")
        return cls(
            WorldConfig(**data["config"]),
            np.asarray(data["true_reward"], dtype=np.float64),
            policy_from_dict(data["ref_policy"]),
            int(data["seed"]),
        )


def build_world(
    n_prompts: int,
    n_responses: int,
    ref_misalignment: float,
    seed: int,
    *,
    reward_scale: float = 1.0,
    ref_temperature: float = 1.0,
) -> SyntheticWorld:
    """Draw rewards and the reference policy.

    Rewards are i.i.d. ``N(0, reward_scale^2)``; the reference is
    ``gibbs(uniform, reward + ref_misalignment * noise, ref_temperature)`` with
    independent standard-normal noise.  Rewards and noise are drawn before the
    misalignment is applied, so worlds that share a seed differ only in how
    strongly the same noise is mixed in.
    """
    cfg = WorldConfig(n_prompts, n_responses, float(ref_misalignment), reward_scale, ref_temperature)
    rng = np.random.default_rng(seed)
    reward = rng.standard_normal((n_prompts, n_responses)) * reward_scale
    noise = rng.standard_normal((n_prompts, n_responses))
    ref = gibbs_optimum(
        TabularPolicy.uniform(n_prompts, n_responses),
        reward + cfg.ref_misalignment * noise,
        ref_temperature,
    )
    return SyntheticWorld(cfg, reward, ref, int(seed))


@dataclass
class PreferenceDataset:
    """Columnar (prompt, chosen, rejected) triples with cached reference margins.

    ``weights`` is ``None`` for plain samples; exhaustive population datasets
    carry per-record Bradley-Terry probabilities there.
    """

    prompt_ids: np.ndarray
    chosen_ids: np.ndarray
    rejected_ids: np.ndarray
    ref_margins: np.ndarray
    split: str = "all"
    weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.prompt_ids = np.asarray(self.prompt_ids, dtype=np.int64)
        self.chosen_ids = np.asarray(self.chosen_ids, dtype=np.int64)
        self.rejected_ids = np.asarray(self.rejected_ids, dtype=np.int64)
        self.ref_margins = np.asarray(self.ref_margins, dtype=np.float64)
        n = self.prompt_ids.shape[0]
        for name in ("chosen_ids", "rejected_ids", "ref_margins"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if np.any(self.chosen_ids == self.rejected_ids):
            raise ValueError("chosen and rejected responses must differ in every record")
        if not np.isfinite(self.ref_margins).all():
            raise DomainError("reference margins must be finite")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (n,) or (self.weights < 0).any():
                raise ValueError("weights must be a non-negative vector aligned with records")
        if self.split not in ("all", "train", "eval"):
            raise ValueError(f"split must be all, train or eval, got {self.split!r}")

    def __len__(self) -> int:
        return self.prompt_ids.shape[0]

    @property
    def records(self) -> list[tuple[int, int, int, float]]:
        return list(
            zip(
                self.prompt_ids.tolist(),
                self.chosen_ids.tolist(),
                self.rejected_ids.tolist(),
                self.ref_margins.tolist(),
            )
        )

    def subset(self, index, split: str | None = None) -> "PreferenceDataset":
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.intp)
        return PreferenceDataset(
            self.prompt_ids[index],
            self.chosen_ids[index],
            self.rejected_ids[index],
            self.ref_margins[index],
            split=self.split if split is None else split,
            weights=None if self.weights is None else self.weights[index],
            meta=dict(self.meta),
        )

    def swapped(self) -> "PreferenceDataset":
        """Every label flipped; reference margins change sign."""
        return PreferenceDataset(
            self.prompt_ids,
            self.rejected_ids,
            self.chosen_ids,
            -self.ref_margins,
            split=self.split,
            weights=self.weights,
            meta=dict(self.meta),
        )

    def train_eval_split(self, seed: int) -> tuple["PreferenceDataset", "PreferenceDataset"]:
        """Seeded shuffle, then the first ``n - n // 10`` records train and the rest evaluate."""
        order = np.random.default_rng(seed).permutation(len(self))
        n_eval = len(self) // 10
        n_train = len(self) - n_eval
        return self.subset(order[:n_train], "train"), self.subset(order[n_train:], "eval")

    def save(self, path) -> Path:
        header = {"format": DATASET_FORMAT, "version": FILE_VERSION, "split": self.split,
                  "n_records": len(self)}
        header.update(self.meta)
        lines = [json.dumps(header, sort_keys=True)]
        for i, (x, c, r, m) in enumerate(self.records):
            rec = {"prompt_id": x, "chosen_id": c, "rejected_id": r, "ref_margin": m}
            if self.weights is not None:
                rec["weight"] = float(self.weights[i])
            lines.append(json.dumps(rec, sort_keys=True))
        path = Path(path)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "PreferenceDataset":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text:
            raise ParameterError(f"{path} is empty")
        header = json.loads(text[0])
        if header.get("format") != DATASET_FORMAT or header.get("version") != FILE_VERSION:
            raise ParameterError(f"{path} is not a version-{FILE_VERSION} preference file")
        rows = [json.loads(line) for line in text[1:] if line.strip()]
        if len(rows) != header["n_records"]:
            raise ParameterError(f"{path}: header promises {header['n_records']} records, found {len(rows)}")
        weights = None
        if rows and "weight" in rows[0]:
            weights = [r["weight"] for r in rows]
        meta = {k: v for k, v in header.items() if k not in ("format", "version", "split", "n_records")}
        return cls(
            [r["prompt_id"] for r in rows],
            [r["chosen_id"] for r in rows],
            [r["rejected_id"] for r in rows],
            [r["ref_margin"] for r in rows],
            split=header["split"],
            weights=weights,
            meta=meta,
        )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sample_preferences(
    world: SyntheticWorld,
    n_pairs: int,
    label_noise: float = 0.0,
    seed: int = 0,
    *,
    clean: bool = False,
) -> PreferenceDataset:
    """Sample labeled pairs under a Bradley-Terry judge.

    Each record draws a prompt and two distinct responses uniformly, orders them
    with ``P(a > b) = sigmoid(r_a - r_b)``, then flips the label with
    probability ``label_noise``.  ``clean=True`` replaces the Bradley-Terry
    draw with the true reward ordering (exact ties still use the draw).
    """
    if n_pairs < 1:
        raise ParameterError(f"n_pairs must be >= 1, got {n_pairs}")
    if not 0.0 <= label_noise < 1.0:
        raise ParameterError(f"label_noise must be in [0, 1), got {label_noise}")
    rng = np.random.default_rng(seed)
    n_r = world.n_responses
    prompts = rng.integers(0, world.n_prompts, size=n_pairs)
    a = rng.integers(0, n_r, size=n_pairs)
    b = (a + rng.integers(1, n_r, size=n_pairs)) % n_r
    gap = world.true_reward[prompts, a] - world.true_reward[prompts, b]
    a_wins = rng.random(n_pairs) < _sigmoid(gap)
    if clean:
        a_wins = np.where(gap != 0, gap > 0, a_wins)
    flips = rng.random(n_pairs) < label_noise
    a_wins ^= flips
    chosen = np.where(a_wins, a, b)
    rejected = np.where(a_wins, b, a)
    return PreferenceDataset(
        prompts,
        chosen,
        rejected,
        world.ref_policy.margins(prompts, chosen, rejected),
        meta={
            "seed": int(seed),
            "world_seed": world.seed,
            "config_hash": config_hash(
                {"world": asdict(world.config), "n_pairs": n_pairs, "label_noise": label_noise,
                 "clean": clean}
            ),
        },
    )


def exhaustive_pairs(world: SyntheticWorld) -> PreferenceDataset:
    """Every ordered pair of distinct responses per prompt, weighted by its
    Bradley-Terry probability of being the observed label.

    Minimizing the weighted mean loss over this set is minimizing the population
    objective under the world's judge.
    """
    n_p, n_r = world.n_prompts, world.n_responses
    x, c, r = [], [], []
    for p in range(n_p):
        for i in range(n_r):
            for j in range(n_r):
                if i != j:
                    x.append(p)
                    c.append(i)
                    r.append(j)
    x, c, r = np.array(x), np.array(c), np.array(r)
    gap = world.true_reward[x, c] - world.true_reward[x, r]
    return PreferenceDataset(
        x, c, r, world.ref_policy.margins(x, c, r), weights=_sigmoid(gap),
        meta={"world_seed": world.seed, "exhaustive": True},
    )


def pessimism_fraction(dataset: PreferenceDataset, ref_policy: TabularPolicy) -> float:
    """Share of records on which ``ref_policy`` prefers the rejected response."""
    if len(dataset) == 0:
        raise ValueError("pessimism_fraction of an empty dataset is undefined")
    margins = ref_policy.margins(dataset.prompt_ids, dataset.chosen_ids, dataset.rejected_ids)
    return float(np.count_nonzero(margins < 0) / margins.size)


def probe_pessimism(world: SyntheticWorld, seed: int, probe_pairs: int = PROBE_PAIRS) -> float:
    """Pessimism fraction on ``probe_pairs`` clean (reward-ordered) pairs."""
    probe = sample_preferences(world, probe_pairs, 0.0, seed, clean=True)
    return pessimism_fraction(probe, world.ref_policy)


def calibrate_pessimism(
    world_config: WorldConfig,
    target_fraction: float,
    tolerance: float,
    seed: int,
    *,
    probe_seed: int | None = None,
    probe_pairs: int = PROBE_PAIRS,
    max_iter: int = 40,
    bounds: tuple[float, float] = (0.0, 100.0),
) -> SyntheticWorld:
    """Bisect ``ref_misalignment`` until a clean-label probe hits ``target_fraction``.

    The probe is ``probe_pairs`` reward-ordered pairs, so the measured fraction
    reflects only reference disagreement with the judge.  Rewards and noise are
    shared across iterations (same seed), which keeps the measured fraction
    close to monotone in the misalignment.  ``probe_seed`` defaults to ``seed + 1``.
    """
    if not 0.0 < target_fraction < 1.0:
        raise ParameterError(f"target_fraction must be in (0, 1), got {target_fraction}")
    if not tolerance > 0:
        raise ParameterError("tolerance must be > 0")
    probe_seed = seed + 1 if probe_seed is None else probe_seed
    lo, hi = bounds
    best = (np.inf, lo, None)

    def consider(m):
        nonlocal best
        world = build_world(world_config.n_prompts, world_config.n_responses, m, seed,
                            reward_scale=world_config.reward_scale,
                            ref_temperature=world_config.ref_temperature)
        frac = probe_pessimism(world, probe_seed, probe_pairs)
        err = abs(frac - target_fraction)
        if err < best[0]:
            best = (err, m, (world, frac))
        return world, frac

    world, f_lo = consider(lo)
    if abs(f_lo - target_fraction) <= tolerance:
        return world
    hi_world, f_hi = consider(hi)
    if not f_lo < target_fraction < f_hi + tolerance:
        _, m, (_, frac) = best
        raise CalibrationError(
            f"target {target_fraction} outside reachable range [{f_lo:.4f}, {f_hi:.4f}]", frac, m
        )
    # bisect even when the upper bound already qualifies, to prefer milder misalignment
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        world, f_mid = consider(mid)
        if abs(f_mid - target_fraction) <= tolerance:
            return world
        if f_mid < target_fraction:
            lo = mid
        else:
            hi = mid
    if abs(f_hi - target_fraction) <= tolerance:
        return hi_world
    _, m, (_, frac) = best
    raise CalibrationError(f"no world within {tolerance} of {target_fraction} after {max_iter} steps",
                           frac, m)
