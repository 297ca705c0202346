"""Command-line entry point.

Subcommands: train, eval, ablate, transfer, rollout, truncdump. Every run
writes one resolved-config echo and one manifest into its output directory
and refuses to overwrite an existing run unless forced. Exit codes: 0
success, 2 configuration error, 3 numeric abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, default_config, dump_config, load_config, to_train_config
from .envs import PERTURBABLE_FIELDS
from .errors import ContractViolation, NumericError
from .trainer import (
    METRICS_COLUMNS,
    Trainer,
    export_latents,
    rollout_error_eval,
    transfer_eval,
)
from .truncation import (
    TruncationConfig,
    sliding_q_average,
    stepwise_relative_diff,
    truncation_mask,
)
from .worldmodel import load_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _fmt_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt_cell(v) for v in row])


def _prepare_out(args, cfg: dict, subcommand: str) -> Path:
    root = args.out or os.environ.get("RETRACEWM_OUT", "runs")
    out = Path(root) / cfg["run_name"]
    manifest = out / "manifest.json"
    if manifest.exists() and not args.force:
        raise FileExistsError(f"output dir {out} already holds a run (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(cfg))
    reading = "disjunctive" if cfg["truncation"]["disjunctive"] else "conjunctive"
    manifest.write_text(json.dumps({
        "subcommand": subcommand,
        "run_name": cfg["run_name"],
        "seed": cfg["seed"],
        "code_version": __version__,
        "mask_reading": reading,
        "config_hash": config_hash(cfg),
    }, indent=2, sort_keys=True) + "\n")
    return out


def _write_metrics(path: Path, cfg: dict, metrics: list[dict]) -> None:
    reading = "disjunctive" if cfg["truncation"]["disjunctive"] else "conjunctive"
    with open(path, "w", newline="") as fh:
        fh.write(f"# mask_reading={reading}\n")
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in metrics:
            writer.writerow([_fmt_cell(row[c]) for c in METRICS_COLUMNS])


def _trainer_from_checkpoint(cfg: dict, checkpoint: str) -> Trainer:
    blocks, meta = load_checkpoint(checkpoint)
    trainer = Trainer(to_train_config(cfg))
    try:
        trainer.load_blocks(blocks, meta)
    except (KeyError, ValueError) as err:
        raise ContractViolation(
            f"checkpoint {checkpoint} does not match the configuration: {err}") from err
    return trainer


def _run_training(cfg: dict, out: Path) -> Trainer:
    trainer = Trainer(to_train_config(cfg))

    def on_eval(tr, mean, sd):
        tr.save(out / f"checkpoint_{tr.global_step}.ckpt", extra_meta={"config": cfg})
        _write_metrics(out / "metrics.csv", cfg, tr.metrics)

    try:
        trainer.train(on_eval=on_eval)
    except NumericError:
        _write_metrics(out / "metrics.csv", cfg, trainer.metrics)
        (out / "diagnostic.json").write_text(json.dumps(
            {"step": trainer.global_step, "note": "numeric abort; see metrics.csv"}) + "\n")
        raise
    trainer.save(out / "checkpoint.ckpt", extra_meta={"config": cfg})
    _write_metrics(out / "metrics.csv", cfg, trainer.metrics)
    return trainer


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = _prepare_out(args, cfg, "train")
    _run_training(cfg, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = _prepare_out(args, cfg, "eval")
    trainer = _trainer_from_checkpoint(cfg, args.checkpoint)
    mean, sd, returns = trainer.evaluate(args.episodes, seed=cfg["seed"])
    rows = [[i, r] for i, r in enumerate(returns)]
    _write_csv(out / "eval.csv", ["episode", "return"], rows)
    _write_csv(out / "eval_summary.csv", ["mean", "sd", "episodes"],
               [[mean, sd, args.episodes]])
    print(f"eval return mean {mean:.4f} sd {sd:.4f} over {args.episodes} episodes")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = _prepare_out(args, cfg, "ablate")
    ab = cfg["ablate"]
    summary = []
    for weight in ab["retrace_weights"]:
        for mode in ab["truncation_modes"]:
            for variant in ab["variants"]:
                for seed in ab["seeds"]:
                    cell = copy.deepcopy(cfg)
                    cell["losses"]["retrace_weight"] = float(weight)
                    cell["truncation"]["mode"] = str(mode)
                    cell["losses"]["retrace_variant"] = str(variant)
                    cell["seed"] = int(seed)
                    if ab["total_steps"]:
                        cell["trainer"]["total_steps"] = int(ab["total_steps"])
                    name = f"w{weight}_{mode}_{variant}_s{seed}"
                    cell["run_name"] = name
                    cell_dir = out / name
                    cell_dir.mkdir(parents=True, exist_ok=True)
                    (cell_dir / "config.toml").write_text(dump_config(cell))
                    trainer = _run_training_cell(cell, cell_dir)
                    mean, sd, _ = trainer.evaluate(cfg["trainer"]["eval_episodes"])
                    last = trainer.metrics[-1]
                    summary.append([name, weight, mode, variant, seed, mean, sd,
                                    last["total"], last["retrace"], last["masked_fraction"]])
    _write_csv(out / "summary.csv",
               ["cell", "retrace_weight", "truncation_mode", "variant", "seed",
                "eval_return_mean", "eval_return_sd", "final_total", "final_retrace",
                "final_masked_fraction"], summary)
    return EXIT_OK


def _run_training_cell(cell_cfg: dict, cell_dir: Path) -> Trainer:
    trainer = Trainer(to_train_config(cell_cfg))
    trainer.train()
    trainer.save(cell_dir / "checkpoint.ckpt", extra_meta={"config": cell_cfg})
    _write_metrics(cell_dir / "metrics.csv", cell_cfg, trainer.metrics)
    return trainer


def cmd_transfer(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = _prepare_out(args, cfg, "transfer")
    trainer = _trainer_from_checkpoint(cfg, args.checkpoint)
    compare = _trainer_from_checkpoint(cfg, args.compare) if args.compare else None
    for cs in cfg["transfer"]["change_sets"]:
        for key in cs:
            if key not in PERTURBABLE_FIELDS:
                raise ConfigError(f"unknown perturbable field '{key}' in transfer.change_sets")
    rows = transfer_eval(trainer, cfg["transfer"]["change_sets"],
                         n_seeds=cfg["transfer"]["n_seeds"],
                         eval_episodes=cfg["transfer"]["eval_episodes"], compare=compare)
    table = []
    for row in rows:
        changes = ";".join(f"{k}={v}" for k, v in row["changes"].items()) or "none"
        table.append([changes, row["mean"], row["sd"],
                      row.get("compare_mean", ""), row.get("t", ""), row.get("p_value", "")])
    _write_csv(out / "transfer.csv",
               ["changes", "mean", "sd", "compare_mean", "t", "p_value"], table)
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = _prepare_out(args, cfg, "rollout")
    trainer = _trainer_from_checkpoint(cfg, args.checkpoint)
    ro = cfg["rollout"]
    table = rollout_error_eval(trainer, ro["horizons"], n_trajectories=ro["n_trajectories"],
                               context=ro["context"], seed=cfg["seed"],
                               action_source=ro["action_source"])
    _write_csv(out / "rollout_mse.csv", ["horizon", "mse"],
               [[h, table[h]] for h in sorted(table)])
    if ro["export_latents"]:
        episode = trainer.collect_episode(explore=True, seed=cfg["seed"], random_policy=True)
        rows = export_latents(trainer, episode)
        z = cfg["model"]["z_dim"]
        header = (["step_in_episode"] + [f"z_post_{i}" for i in range(z)]
                  + [f"z_retraced_{i}" for i in range(z)])
        _write_csv(out / "latents.csv", header, rows.tolist())
    return EXIT_OK


def cmd_truncdump(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = _prepare_out(args, cfg, "truncdump")
    path = Path(args.q_csv)
    if not path.exists():
        raise FileNotFoundError(f"trajectory file not found: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if lines and not _is_number(lines[0].split(",")[0]):
        lines = lines[1:]  # header row
    q = np.array([float(ln.split(",")[0]) for ln in lines])
    t = cfg["truncation"]
    tc = TruncationConfig(**t)
    avg = sliding_q_average(q, tc.window)
    delta = stepwise_relative_diff(avg)
    mask = truncation_mask(delta, tc.eta, tc.window, len(q), tc.disjunctive)
    from .truncation import _zero_before_changes

    _zero_before_changes(mask, delta, tc.eta, tc.back_steps)
    rows = []
    for k in range(len(q)):
        rows.append([k + 1, q[k],
                     avg[k] if k < len(avg) else "",
                     delta[k] if k < len(delta) else "",
                     int(mask[k])])
    _write_csv(out / "truncdump.csv", ["index", "q", "q_avg", "delta", "mask"], rows)
    return EXIT_OK


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retracewm",
                                     description="World-model training with retrace losses")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override (repeatable)")
        p.add_argument("--out", default=None, help="output root directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--force", action="store_true", help="overwrite an existing run")

    p = sub.add_parser("train", help="run the training loop")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="retrace/truncation ablation matrix")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("transfer", help="zero-shot transfer table")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--compare", default=None, help="comparison checkpoint for the t-test")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("rollout", help="open-loop prediction error table")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("truncdump", help="dump (Q, Q_avg, delta, mask) for a Q trajectory")
    common(p)
    p.add_argument("--q-csv", required=True, help="CSV with one Q value per row")
    p.set_defaults(func=cmd_truncdump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractViolation) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FileExistsError, FileNotFoundError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
