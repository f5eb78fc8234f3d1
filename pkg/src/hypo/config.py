"""Experiment configs: INI files with ``experiment``, ``world``, ``train`` and ``objective`` sections.

Parsing is strict: unknown sections or keys, malformed values and conflicting
spellings raise :class:`ConfigError` naming the offending key.  The objective
section accepts both ``gamma``/``hypo_gamma`` and ``alpha``/``hypo_tau``
(``tau = 1/alpha``); ``hypo_tau > 0`` selects the soft clip and ``hypo_tau = 0``
the hard one.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .core_math import HyperParams
from .datagen import WorldConfig
from .errors import ConfigError, HypoError
from .objectives import ObjectiveKind
from .trainer import TrainConfig

OBJECTIVE_NAMES = ("dpo", "ref_free", "hypo", "hypo_hard", "hypo_soft", "dpo_sft")
POLICY_CLASSES = ("tabular", "loglinear")


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    out = float(v)
    if not math.isfinite(out):
        raise ValueError("must be finite")
    return out


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _str(v: str) -> str:
    return v.strip()


# section -> key -> value parser; defaults live on the section dataclasses
SCHEMA = {
    "experiment": {"seed": _int, "output_dir": _str},
    "world": {
        "n_prompts": _int,
        "n_responses": _int,
        "ref_misalignment": _float,
        "target_pessimism": _float,
        "pessimism_tolerance": _float,
        "reward_scale": _float,
        "ref_temperature": _float,
        "n_pairs": _int,
        "label_noise": _float,
    },
    "train": {
        "policy": _str,
        "feature_dim": _int,
        "peak_lr": _float,
        "epochs": _int,
        "batch_size": _int,
        "warmup_fraction": _float,
        "adam_beta1": _float,
        "adam_beta2": _float,
        "adam_epsilon": _float,
        "weight_decay": _float,
        "grad_clip": _float,
        "eval_every": _int,
        "recompute_ref": _bool,
    },
    "objective": {
        "kind": _str,
        "beta": _float,
        "gamma": _float,
        "hypo_gamma": _float,
        "alpha": _float,
        "hypo_tau": _float,
        "h": _float,
        "lambda_sft": _float,
    },
}

DEFAULT_LR = {"tabular": 1e-2, "loglinear": 1e-3}


@dataclass(frozen=True)
class WorldSection:
    n_prompts: int = 32
    n_responses: int = 8
    ref_misalignment: float = 0.0
    target_pessimism: float | None = None
    pessimism_tolerance: float = 0.02
    reward_scale: float = 1.0
    ref_temperature: float = 1.0
    n_pairs: int = 2000
    label_noise: float = 0.0

    def world_config(self) -> WorldConfig:
        return WorldConfig(self.n_prompts, self.n_responses, self.ref_misalignment,
                           self.reward_scale, self.ref_temperature)


@dataclass(frozen=True)
class TrainSection:
    policy: str = "tabular"
    feature_dim: int = 8
    peak_lr: float | None = None
    epochs: int = 1
    batch_size: int = 128
    warmup_fraction: float = 0.10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float | None = None
    eval_every: int = 10
    recompute_ref: bool = False

    @property
    def resolved_lr(self) -> float:
        return DEFAULT_LR[self.policy] if self.peak_lr is None else self.peak_lr


@dataclass(frozen=True)
class ObjectiveSection:
    """Raw objective keys as written; :meth:`resolve` maps them to a kind and params."""

    kind: str = "dpo"
    beta: float = 0.1
    gamma: float | None = None
    hypo_gamma: float | None = None
    alpha: float | None = None
    hypo_tau: float | None = None
    h: float = 0.0
    lambda_sft: float = 0.0

    def resolve(self) -> tuple[ObjectiveKind, HyperParams]:
        if self.kind not in OBJECTIVE_NAMES:
            raise ConfigError("objective.kind",
                              f"unknown objective {self.kind!r}; valid kinds: {', '.join(OBJECTIVE_NAMES)}")
        if self.gamma is not None and self.hypo_gamma is not None:
            raise ConfigError("objective.hypo_gamma", "gamma and hypo_gamma are the same setting; give one")
        if self.alpha is not None and self.hypo_tau is not None:
            raise ConfigError("objective.hypo_tau", "alpha and hypo_tau are mutually exclusive")
        gamma = self.hypo_gamma if self.hypo_gamma is not None else self.gamma
        is_hypo = self.kind.startswith("hypo")
        if not is_hypo and (gamma is not None or self.alpha is not None or self.hypo_tau is not None):
            raise ConfigError("objective.kind", f"clipping settings only apply to hypo objectives, not {self.kind}")
        if self.hypo_tau is not None and self.hypo_tau < 0:
            raise ConfigError("objective.hypo_tau", "must be >= 0")
        alpha = self.alpha
        if self.hypo_tau is not None and self.hypo_tau > 0:
            alpha = 1.0 / self.hypo_tau
        if self.kind == "hypo":
            kind = ObjectiveKind.HYPO_SOFT if alpha is not None else ObjectiveKind.HYPO_HARD
        else:
            kind = ObjectiveKind(self.kind)
        if kind is ObjectiveKind.HYPO_HARD and alpha is not None:
            raise ConfigError("objective.kind", "hypo_hard does not take alpha/hypo_tau; use hypo or hypo_soft")
        if kind is ObjectiveKind.HYPO_SOFT and alpha is None:
            raise ConfigError("objective.hypo_tau", "hypo_soft needs hypo_tau > 0 or alpha")
        if self.lambda_sft and kind is not ObjectiveKind.DPO_PLUS_SFT:
            raise ConfigError("objective.lambda_sft", "only dpo_sft uses lambda_sft")
        try:
            hp = HyperParams(beta=self.beta, gamma=0.0 if gamma is None else gamma,
                             alpha=alpha, h=self.h, lambda_sft=self.lambda_sft)
        except HypoError as exc:
            raise ConfigError("objective", str(exc)) from exc
        return kind, hp


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "hypo-out"
    world: WorldSection = field(default_factory=WorldSection)
    train: TrainSection = field(default_factory=TrainSection)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)

    # derived seeds keep world, labels, split and training streams independent
    @property
    def seed_lineage(self) -> dict:
        s = self.seed
        return {"experiment": s, "world": s, "pairs": s + 1, "split": s + 2, "train": s + 3,
                "features": s + 4, "probe": s + 5}

    def train_config(self) -> TrainConfig:
        kind, hp = self.objective.resolve()
        t = self.train
        try:
            return TrainConfig(
                objective=kind, hp=hp, peak_lr=t.resolved_lr, epochs=t.epochs,
                batch_size=t.batch_size, warmup_fraction=t.warmup_fraction,
                adam_beta1=t.adam_beta1, adam_beta2=t.adam_beta2, adam_epsilon=t.adam_epsilon,
                weight_decay=t.weight_decay, grad_clip=t.grad_clip,
                seed=self.seed_lineage["train"], eval_every=t.eval_every,
                recompute_ref=t.recompute_ref,
            )
        except HypoError as exc:
            raise ConfigError("train", str(exc)) from exc

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(seed, self.output_dir, self.world, self.train, self.objective)

    def with_output_dir(self, output_dir: str) -> "ExperimentConfig":
        return ExperimentConfig(self.seed, output_dir, self.world, self.train, self.objective)

    def data_section(self) -> dict:
        """Everything that determines the generated world and dataset."""
        return {"seed": self.seed, "world": asdict(self.world)}

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser["experiment"] = {"seed": str(self.seed), "output_dir": self.output_dir}
        for name in ("world", "train", "objective"):
            section = getattr(self, name)
            parser[name] = {
                f.name: _dump(getattr(section, f.name))
                for f in fields(section)
                if getattr(section, f.name) is not None
            }
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_ini(), encoding="utf-8")
        return path


def _dump(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_SECTION_TYPES = {"world": WorldSection, "train": TrainSection, "objective": ObjectiveSection}


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"malformed config: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section; valid sections: {', '.join(SCHEMA)}")
        values[section] = {}
        for key, raw in parser[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            conv = SCHEMA[section][key]
            if raw.strip() == "":
                continue
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", f"bad value {raw!r}: {exc}") from exc
    exp = values.get("experiment", {})
    built = {name: cls(**values.get(name, {})) for name, cls in _SECTION_TYPES.items()}
    cfg = ExperimentConfig(seed=exp.get("seed", 0), output_dir=exp.get("output_dir", "hypo-out"), **built)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    w, t = cfg.world, cfg.train
    try:
        w.world_config()
    except HypoError as exc:
        raise ConfigError("world", str(exc)) from exc
    if w.n_pairs < 10:
        raise ConfigError("world.n_pairs", "need at least 10 pairs for a train/eval split")
    if not 0.0 <= w.label_noise < 1.0:
        raise ConfigError("world.label_noise", "must be in [0, 1)")
    if w.target_pessimism is not None and not 0.0 < w.target_pessimism < 1.0:
        raise ConfigError("world.target_pessimism", "must be in (0, 1)")
    if not w.pessimism_tolerance > 0:
        raise ConfigError("world.pessimism_tolerance", "must be > 0")
    if t.policy not in POLICY_CLASSES:
        raise ConfigError("train.policy", f"unknown policy class {t.policy!r}; valid: {', '.join(POLICY_CLASSES)}")
    if t.feature_dim < 1:
        raise ConfigError("train.feature_dim", "must be >= 1")
    cfg.train_config()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
