"""Command-line entry point: train, eval, gradcheck, list-cells.

Exit codes: 0 success, 1 bad configuration (or failed gradcheck), 2 numeric
abort during training, 3 corrupt checkpoint, 4 checkpoint/manifest mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint
from .cells import REGISTRY
from .config import RunConfig, apply_overrides, load_file, resolve
from .errors import CheckpointError, ConfigError, ContractError, ManifestError
from .gradcheck import TOLERANCE, gradcheck_cell, gradcheck_names
from .rng import Rng
from .train import (STREAM_INIT, MetricRow, TrainAbort, build_model, evaluate,
                    make_val_set, optimizer_records, train_run)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="override the output directory")


def _resolve_config(args) -> RunConfig:
    raw = load_file(args.config)
    raw = apply_overrides(raw, args.overrides)
    # dedicated flags take precedence over --set
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out_dir"] = args.out
    return resolve(raw)


def _csv_rows(history: list[MetricRow]) -> str:
    lines = ["epoch,split,loss,metric,seconds"]
    for r in history:
        lines.append(f"{r.epoch},{r.split},{r.loss!r},{r.metric!r},{r.seconds!r}")
    return "\n".join(lines) + "\n"


def _jsonl_rows(history: list[MetricRow]) -> str:
    return "".join(
        json.dumps({"epoch": r.epoch, "split": r.split, "loss": r.loss,
                    "metric": r.metric, "seconds": r.seconds}) + "\n"
        for r in history)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)

    def show(train_row: MetricRow, val_row: MetricRow) -> None:
        print(f"epoch {train_row.epoch:3d}  "
              f"train loss {train_row.loss:.6f}  "
              f"val loss {val_row.loss:.6f}  val metric {val_row.metric:.6f}")

    result = train_run(cfg, on_epoch=show)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write(_csv_rows(result.history))
    with open(os.path.join(out, "metrics.jsonl"), "w") as fh:
        fh.write(_jsonl_rows(result.history))
    with open(os.path.join(out, "resolved-config.json"), "w") as fh:
        json.dump(cfg.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    checkpoint.save(os.path.join(out, "final.ckpt"), result.model.params,
                    optimizer_records(result.optimizer))
    best_opt = dict(result.best_opt_slots)
    best_opt["t"] = np.array([float(result.best_opt_t)])
    checkpoint.save(os.path.join(out, "best.ckpt"), result.best_params, best_opt)
    print(f"best epoch {result.best_epoch}  "
          f"({result.total_seconds:.1f}s total); artifacts in {out}/")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    params, _ = checkpoint.load(args.ckpt)
    model, task = build_model(cfg, Rng(cfg.seed).split(STREAM_INIT))
    model.load_params(params)
    val_set = make_val_set(cfg, task)
    loss, metric = evaluate(model, task, val_set)
    print(json.dumps({"task": cfg.task, "cell": cfg.cell, "split": "val",
                      "loss": loss, "metric": metric}))
    return 0


def cmd_gradcheck(args) -> int:
    names = gradcheck_names(args.cell)
    ok = True
    for name in names:
        err = gradcheck_cell(name, size=args.size, batch=args.batch,
                             time_steps=args.time, eps=args.eps)
        passed = err < TOLERANCE
        ok = ok and passed
        print(f"{name:16s} max_rel_err={err:.3e}  "
              f"{'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_list_cells(args) -> int:
    size = 128
    header = f"{'name':16s} {'family':24s} {'state':7s} {'params@I=H=128':>14s}  hyperparameters"
    print(header)
    print("-" * len(header))
    for name, cls in REGISTRY.items():
        cell = cls(size, size)
        hyper = ", ".join(f"{k}={v}" for k, v in cls.hyperparams.items()) or "-"
        print(f"{name:16s} {cell.family:24s} {cell.state_kind:7s} "
              f"{cell.param_count():>14,d}  {hyper}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnnkit",
        description="Train and inspect recurrent sequence models on "
                    "synthetic long-memory benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training config")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint to load")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck",
                            help="compare tape gradients to finite differences")
    p_grad.add_argument("cell", nargs="?", default="all",
                        help="cell name or 'all'")
    p_grad.add_argument("--eps", type=float, default=1e-6,
                        help="finite-difference step")
    p_grad.add_argument("--size", type=int, default=4, help="I = H = size")
    p_grad.add_argument("--batch", type=int, default=2)
    p_grad.add_argument("--time", type=int, default=4, help="scan length")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_list = sub.add_parser("list-cells", help="show the cell registry")
    p_list.set_defaults(func=cmd_list_cells)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
