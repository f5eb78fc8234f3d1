"""Command-line entry point: ``hypo {datagen,train,compare,heatmap,refstats}``.

Exit codes: 0 success, 2 config validation, 3 I/O, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .config import ExperimentConfig, OBJECTIVE_NAMES, ObjectiveSection, load_config
from .datagen import (
    PreferenceDataset,
    SyntheticWorld,
    build_world,
    calibrate_pessimism,
    config_hash,
    pessimism_fraction,
    probe_pessimism,
    sample_preferences,
)
from .errors import CalibrationError, ConfigError, HypoError, ParameterError, TrainingError
from .metrics import ref_margin_stats, win_matrix, win_matrix_to_csv
from .policies import LogLinearPolicy, save_checkpoint
from .trainer import train
from .viz_export import GridSpec, export_curves, export_heatmap_csv, export_margin_histogram, weight_heatmap

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

WORLD_FILE = "world.json"
TRAIN_FILE = "train.jsonl"
EVAL_FILE = "eval.jsonl"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load(args, seed_override=True) -> ExperimentConfig:
    if not args.config:
        raise CliError("--config is required for this command", EXIT_CONFIG)
    cfg = load_config(args.config[0])
    if seed_override and args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def generate_data(cfg: ExperimentConfig):
    """Build (or calibrate) the world and sample its train/eval splits."""
    w = cfg.world
    seeds = cfg.seed_lineage
    if w.target_pessimism is not None:
        world = calibrate_pessimism(w.world_config(), w.target_pessimism, w.pessimism_tolerance,
                                    seeds["world"], probe_seed=seeds["probe"])
    else:
        world = build_world(w.n_prompts, w.n_responses, w.ref_misalignment, seeds["world"],
                            reward_scale=w.reward_scale, ref_temperature=w.ref_temperature)
    data = sample_preferences(world, w.n_pairs, w.label_noise, seeds["pairs"])
    data.meta["config_hash"] = config_hash(cfg.data_section())
    train_set, eval_set = data.train_eval_split(seeds["split"])
    return world, train_set, eval_set


def write_data(out: Path, world, train_set, eval_set) -> None:
    out.mkdir(parents=True, exist_ok=True)
    world.save(out / WORLD_FILE)
    train_set.save(out / TRAIN_FILE)
    eval_set.save(out / EVAL_FILE)


def read_data(data_dir: Path):
    for name in (WORLD_FILE, TRAIN_FILE, EVAL_FILE):
        if not (data_dir / name).is_file():
            raise CliError(f"missing {data_dir / name}; run `hypo datagen` first", EXIT_IO)
    return (SyntheticWorld.load(data_dir / WORLD_FILE), PreferenceDataset.load(data_dir / TRAIN_FILE),
            PreferenceDataset.load(data_dir / EVAL_FILE))


def initial_policy(cfg: ExperimentConfig, world):
    if cfg.train.policy == "tabular":
        return world.ref_policy.copy()
    return LogLinearPolicy.random_features(world.n_prompts, world.n_responses, cfg.train.feature_dim,
                                           cfg.seed_lineage["features"])


def run_training(cfg: ExperimentConfig, world, train_set, eval_set, run_dir: Path, name: str):
    """Train one leg and write its run directory: config snapshot, run log, epoch checkpoints."""
    tcfg = cfg.train_config()
    run_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg.to_ini())
    cfg.save(run_dir / "config.ini")
    meta = {"config_hash": chash, "seed": cfg.seed}

    def checkpoint(epoch, policy):
        save_checkpoint(policy, run_dir / f"checkpoint-epoch{epoch:03d}.json",
                        seed_lineage=cfg.seed_lineage, config_hash=chash, epoch=epoch)

    policy, log = train(initial_policy(cfg, world), world.ref_policy, train_set, tcfg,
                        eval_set=eval_set, name=name, on_epoch_end=checkpoint)
    log.save(run_dir / "runlog.jsonl", meta=meta)
    with (run_dir / "timing.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "wall_time_s"])
        for e in log.entries:
            writer.writerow([e.step, f"{e.wall_time:.6f}"])
    return policy, log


def cmd_datagen(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "data"
    world, train_set, eval_set = generate_data(cfg)
    write_data(out, world, train_set, eval_set)
    probe = probe_pessimism(world, cfg.seed_lineage["probe"])
    print(f"world: {world.n_prompts} prompts x {world.n_responses} responses, "
          f"ref_misalignment={world.config.ref_misalignment:.6g}")
    print(f"pessimism fraction: clean-probe={probe:.4f} "
          f"train={pessimism_fraction(train_set, world.ref_policy):.4f} "
          f"eval={pessimism_fraction(eval_set, world.ref_policy):.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def _run_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.train_config().objective.value}-seed{cfg.seed}"


def cmd_train(args) -> int:
    cfg = _load(args)
    data_dir = Path(args.data) if args.data else Path(cfg.output_dir) / "data"
    world, train_set, eval_set = read_data(data_dir)
    name = _run_name(cfg)
    run_dir = Path(args.out) if args.out else Path(cfg.output_dir) / "runs" / name
    _, log = run_training(cfg, world, train_set, eval_set, run_dir, name)
    f = log.final
    pess = "n/a" if f.pessimistic_margin is None else f"{f.pessimistic_margin:.4f}"
    print(f"{name}: step {f.step} loss {f.train_loss:.4f} agreement {f.agreement_rate:.4f} "
          f"pessimistic margin {pess}")
    print(f"wrote {run_dir}")
    return EXIT_OK


def _compare_key(cfg: ExperimentConfig) -> dict:
    return {"seed": cfg.seed, "world": asdict(cfg.world), "train": asdict(cfg.train)}


def cmd_compare(args) -> int:
    if not args.config or len(args.config) < 2:
        raise CliError("compare needs at least two --config files", EXIT_CONFIG)
    cfgs = [load_config(p) for p in args.config]
    if args.seed is not None:
        cfgs = [c.with_seed(args.seed) for c in cfgs]
    ref_key = _compare_key(cfgs[0])
    for path, c in zip(args.config[1:], cfgs[1:]):
        key = _compare_key(c)
        for part in ("seed", "world", "train"):
            if key[part] != ref_key[part]:
                raise ConfigError(f"{path}:{part}",
                                  "compared configs may differ only in the objective section")
    out = Path(args.out) if args.out else Path(cfgs[0].output_dir) / "compare"
    world, train_set, eval_set = generate_data(cfgs[0])
    write_data(out / "data", world, train_set, eval_set)

    names, logs, policies = [], [], []
    for c in cfgs:
        base = c.train_config().objective.value
        repeats = sum(n.rsplit("-", 1)[0] == base or n == base for n in names)
        name = f"{base}-{repeats + 1}" if repeats else base
        policy, log = run_training(c, world, train_set, eval_set, out / "runs" / name, name)
        names.append(name)
        logs.append(log)
        policies.append(policy)

    export_curves(logs, out / "curves.csv")
    wm = win_matrix([("reference", world.ref_policy)] + list(zip(names, policies)), world,
                    args.win_prompts, mode=args.win_mode, seed=cfgs[0].seed)
    win_matrix_to_csv(wm, out / "win_matrix.csv")

    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_name", "final_step", "train_loss", "agreement_rate", "pessimistic_margin",
                         "win_rate_vs_reference_pct"])
        print(f"{'run':<14}{'agreement':>11}{'pess.margin':>13}{'win% vs ref':>13}")
        for k, (name, log) in enumerate(zip(names, logs)):
            f = log.final
            pess = "" if f.pessimistic_margin is None else repr(f.pessimistic_margin)
            win = wm.entries[k + 1, 0]
            writer.writerow([name, f.step, repr(f.train_loss), repr(f.agreement_rate), pess, f"{win:.6g}"])
            shown = "n/a" if f.pessimistic_margin is None else f"{f.pessimistic_margin:.4f}"
            print(f"{name:<14}{f.agreement_rate:>11.4f}{shown:>13}{win:>13.2f}")
    print(f"wrote {out} (win matrix judged by the synthetic true reward)")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    section = ObjectiveSection(
        kind=args.objective, beta=args.beta, gamma=args.gamma, alpha=args.alpha,
        hypo_tau=args.tau, h=args.h, lambda_sft=args.lambda_sft,
    )
    kind, hp = section.resolve()
    try:
        grid = GridSpec(tuple(args.theta_range), tuple(args.ref_range))
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from exc
    out = Path(args.out) if args.out else Path(f"heatmap-{kind.value}.csv")
    export_heatmap_csv(weight_heatmap(kind, hp, grid), grid, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_refstats(args) -> int:
    if args.data:
        world_path, data_path = Path(args.data) / WORLD_FILE, Path(args.data) / TRAIN_FILE
    elif args.world and args.dataset:
        world_path, data_path = Path(args.world), Path(args.dataset)
    elif args.config:
        data_dir = Path(_load(args).output_dir) / "data"
        world_path, data_path = data_dir / WORLD_FILE, data_dir / TRAIN_FILE
    else:
        raise CliError("refstats needs --data DIR, --world/--dataset, or --config", EXIT_CONFIG)
    for p in (world_path, data_path):
        if not p.is_file():
            raise CliError(f"missing {p}", EXIT_IO)
    world = SyntheticWorld.load(world_path)
    dataset = PreferenceDataset.load(data_path)
    if len(dataset) == 0:
        raise CliError(f"{data_path} has no records", EXIT_IO)
    out = Path(args.out) if args.out else data_path.with_name("ref_margin_hist.csv")
    export_margin_histogram(world.ref_policy, dataset, args.bins, out)
    stats = ref_margin_stats(world.ref_policy, dataset)
    print(json.dumps(stats, sort_keys=True))
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", help="experiment config (INI); repeat for compare")
    common.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    common.add_argument("--out", default=None, help="output file or directory")

    parser = argparse.ArgumentParser(prog="hypo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", parents=[common], help="build a world and sample preference pairs")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", parents=[common], help="train one objective on generated data")
    p.add_argument("--data", default=None, help="data directory (default: <output_dir>/data)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", parents=[common], help="train several objectives on one world")
    p.add_argument("--win-prompts", type=int, default=2000)
    p.add_argument("--win-mode", choices=("greedy", "sampled"), default="greedy")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("heatmap", parents=[common], help="gradient-weight grid as CSV")
    p.add_argument("--objective", default="dpo", help=f"one of {', '.join(OBJECTIVE_NAMES)}")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=None)
    smooth = p.add_mutually_exclusive_group()
    smooth.add_argument("--alpha", type=float, default=None)
    smooth.add_argument("--tau", type=float, default=None, help="1/alpha")
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--lambda-sft", type=float, default=0.0)
    p.add_argument("--theta-range", type=float, nargs=3, default=(-6.0, 6.0, 121), metavar=("LO", "HI", "N"))
    p.add_argument("--ref-range", type=float, nargs=3, default=(-6.0, 6.0, 121), metavar=("LO", "HI", "N"))
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("refstats", parents=[common], help="reference-margin histogram and summary")
    p.add_argument("--data", default=None, help="data directory holding world.json and train.jsonl")
    p.add_argument("--world", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_refstats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, CalibrationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HypoError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
