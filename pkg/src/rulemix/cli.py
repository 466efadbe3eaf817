"""Command-line entry point: data generation, training, sweeps, selection.

Every command is reproducible from its config file and seed alone; resolved
configs are dumped next to the outputs and checkpoints embed them, so a
sweep can rebuild its evaluation data without extra arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_from_dict, default_config, load_config
from .data import Dataset, write_dataset_csv
from .errors import (
    CheckpointError,
    ConfigError,
    GenerationError,
    InfeasibleSelectionError,
    SimulationBlowup,
    TrainingAborted,
    UndefinedRatioError,
)
from .evaluate import alpha_sweep, select_alpha, sweep_from_csv, sweep_to_csv
from .model import latent_values
from .pendulum import PENDULUM_CSV_COLUMNS
from .train import fit

_HANDLED = (
    CheckpointError,
    ConfigError,
    GenerationError,
    InfeasibleSelectionError,
    SimulationBlowup,
    TrainingAborted,
    UndefinedRatioError,
    ValueError,
    OSError,
)


def _dataset_columns(cfg: ExperimentConfig, dataset: Dataset) -> list[str]:
    if cfg.task == "pendulum":
        return list(PENDULUM_CSV_COLUMNS)
    return [f"x{i}" for i in range(dataset.x.shape[1])] + ["y", "split"]


def _load_experiment(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        raw = cfg.raw
    elif getattr(args, "task", None):
        raw = default_config(args.task)
    else:
        raise ConfigError("provide --config or --task")
    if getattr(args, "task", None):
        if raw["task"] != args.task:
            raise ConfigError(f"--task {args.task} conflicts with config task {raw['task']}")
    if getattr(args, "seed", None) is not None:
        raw = {**raw, "seed": args.seed}
        raw["data"] = {**raw["data"], "seed": args.seed}
    return config_from_dict(raw)


def cmd_gen_data(args) -> int:
    cfg = _load_experiment(args)
    dataset = cfg.build_dataset()
    out = Path(args.out) if args.out else cfg.output_dir / "dataset.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(out, dataset, _dataset_columns(cfg, dataset))
    counts = dataset.counts()
    print(f"wrote {out} rows={len(dataset)} train={counts['train']} val={counts['val']} test={counts['test']}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_experiment(args)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved.yaml").write_text(cfg.resolved_yaml())
    print(cfg.resolved_yaml(), end="")
    dataset = cfg.build_dataset()
    spec = cfg.model_spec()
    rule = cfg.rule()
    rows = []
    for i in range(args.seeds):
        seed = cfg.seed + i
        train_cfg = cfg.train_config()
        train_cfg = type(train_cfg)(**{**train_cfg.__dict__, "seed": seed})
        result = fit(spec, train_cfg, dataset, rule)
        ck_path = out_dir / f"checkpoint_seed{seed}.npz"
        save_checkpoint(ck_path, result, cfg.raw, seed)
        result.report.to_csv(out_dir / f"report_seed{seed}.csv")
        rows.append((seed, result.report.best_val, result.report.final_epoch, result.report.wall_seconds))
        print(
            f"seed={seed} best_val={result.report.best_val:.6g} "
            f"epochs={result.report.final_epoch} seconds={result.report.wall_seconds:.1f} -> {ck_path}"
        )
    if args.seeds > 1:
        vals = np.array([r[1] for r in rows])
        with open(out_dir / "summary.csv", "w") as fh:
            fh.write("seed,best_val,final_epoch,wall_seconds\n")
            for seed, best, epochs, secs in rows:
                fh.write(f"{seed},{best:.17g},{epochs},{secs:.3f}\n")
        print(f"best_val mean={vals.mean():.6g} std={vals.std(ddof=1):.6g} over {args.seeds} seeds")
    return 0


def _sweep_grid_from_args(args, cfg: ExperimentConfig) -> list[float]:
    if args.extended:
        start, stop, step = -0.2, 1.4, float(cfg.raw["sweep"]["step"])
    else:
        start = float(cfg.raw["sweep"]["start"])
        stop = float(cfg.raw["sweep"]["stop"])
        step = float(cfg.raw["sweep"]["step"])
    if args.start is not None:
        start = args.start
    if args.stop is not None:
        stop = args.stop
    if args.step is not None:
        step = args.step
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


def cmd_sweep(args) -> int:
    ck: Checkpoint = load_checkpoint(args.checkpoint)
    cfg = config_from_dict(ck.config)
    if args.data_csv:
        cfg.raw["data"]["csv"] = args.data_csv
    dataset = cfg.build_dataset()
    rule = cfg.rule()
    if rule is None:
        raise ConfigError("sweep needs a rule for verification; config has rule.kind=none")
    grid = _sweep_grid_from_args(args, cfg)
    splits = args.splits.split(",") if args.splits else cfg.raw["sweep"]["splits"]
    records = []
    for split in splits:
        x, y = dataset.subset(split)
        if x.shape[0] == 0:
            raise ConfigError(f"split {split!r} is empty in the evaluation dataset")
        records.extend(
            alpha_sweep(
                ck.spec, ck.params, x, y, rule, grid, cfg.metric_kind,
                split=split, perturb_seed=int(cfg.raw["sweep"]["perturb_seed"]),
            )
        )
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".sweep.csv")
    sweep_to_csv(records, out)
    print(f"wrote {out} records={len(records)} alphas={len(grid)} splits={','.join(splits)}")
    if args.embeddings_out:
        x, _ = dataset.subset(splits[-1])
        latents = latent_values(ck.spec, ck.params, x, args.embeddings_alpha)
        with open(args.embeddings_out, "w") as fh:
            names = []
            for key, mat in latents.items():
                names.extend(f"{key}{j}" for j in range(mat.shape[1]))
            fh.write(",".join(names) + "\n")
            stacked = np.concatenate(list(latents.values()), axis=1)
            for row in stacked:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        print(f"wrote {args.embeddings_out} rows={x.shape[0]}")
    return 0


def cmd_select(args) -> int:
    records = sweep_from_csv(args.sweep)
    pool = [r for r in records if r.split == args.split]
    if not pool:
        raise ConfigError(f"no sweep records for split {args.split!r}")
    selection = select_alpha(pool, min_verification=args.min_verification)
    payload = {
        "alpha": selection.alpha,
        "objective": selection.objective,
        "split": args.split,
        "task_metric": selection.task_metric,
        "verification": selection.verification,
    }
    others = {}
    for r in records:
        if r.split != args.split and r.alpha == selection.alpha:
            others[r.split] = {"task_metric": r.task_metric, "verification": r.verification}
    if others:
        payload["at_same_alpha"] = others
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_experiment(args)
    out_dir = Path(args.out_dir) if args.out_dir else cfg.output_dir / f"ablate_{args.what}"
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = cfg.build_dataset()
    values = args.values.split(",")
    rows = []
    for value in values:
        raw = json.loads(json.dumps(cfg.raw))  # deep copy
        if args.what == "beta":
            raw["train"]["beta"] = float(value)
        elif args.what == "coupling":
            raw["model"]["coupling"] = value
        elif args.what == "lambda":
            raw["train"]["mode"] = "task_and_rule"
            raw["train"]["rule_weight"] = float(value)
            raw["model"]["coupling"] = "single"
        else:
            raise ConfigError(f"unknown ablation {args.what!r}")
        sub = config_from_dict(raw)
        result = fit(sub.model_spec(), sub.train_config(), dataset, sub.rule())
        tag = f"{args.what}_{value}".replace("/", "_")
        save_checkpoint(out_dir / f"checkpoint_{tag}.npz", result, sub.raw, sub.seed)
        x, y = dataset.subset("test")
        records = alpha_sweep(
            sub.model_spec(), result.params, x, y, sub.rule(), sub.sweep_grid(),
            sub.metric_kind, split="test", perturb_seed=int(sub.raw["sweep"]["perturb_seed"]),
        )
        sweep_to_csv(records, out_dir / f"sweep_{tag}.csv")
        best = min(records, key=lambda r: r.task_metric)
        rows.append((value, result.report.best_val, best.alpha, best.task_metric, records[-1].verification))
        print(
            f"{args.what}={value} best_val={result.report.best_val:.6g} "
            f"best_alpha={best.alpha:g} test_metric={best.task_metric:.6g}"
        )
    with open(out_dir / "summary.csv", "w") as fh:
        fh.write(f"{args.what},best_val,best_alpha,best_test_metric,verification_at_grid_end\n")
        for value, best_val, alpha, metric, ver in rows:
            fh.write(f"{value},{best_val:.17g},{alpha:g},{metric:.17g},{ver:.17g}\n")
    print(f"wrote {out_dir / 'summary.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulemix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset CSV from a config or task defaults")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--task", choices=("pendulum", "monotone-regression", "shifted-classification"))
    p.add_argument("--seed", type=int, help="override experiment and data seeds")
    p.add_argument("--out", help="output CSV path (default <output_dir>/dataset.csv)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model per config; writes checkpoint + report CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=1, help="number of seed replicates (seed, seed+1, ...)")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out-dir", help="override the config output_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="rule-strength sweep over a checkpoint; writes CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.add_argument("--splits", help="comma-separated splits (default from config)")
    p.add_argument("--extended", action="store_true", help="use the extrapolation grid [-0.2, 1.4]")
    p.add_argument("--start", type=float)
    p.add_argument("--stop", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--data-csv", help="evaluate on a CSV instead of regenerating from the config")
    p.add_argument("--embeddings-out", help="also export latent representations as CSV")
    p.add_argument("--embeddings-alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select", help="pick the operating strength from a sweep CSV")
    p.add_argument("--sweep", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--min-verification", type=float)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("ablate", help="batch runs over beta / coupling / lambda grids")
    p.add_argument("--config", required=True)
    p.add_argument("--what", required=True, choices=("beta", "coupling", "lambda"))
    p.add_argument("--values", required=True, help="comma-separated grid values")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _HANDLED as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
