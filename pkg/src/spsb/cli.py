"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 non-finite loss.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigurationError, DataError, SPSBError
from .plot import emit_plot
from .tasks.history import write_csv
from .tasks.stats import aggregate_runs
from .tasks.training import ExperimentConfig, run_experiment

log = logging.getLogger("spsb")

DEFAULT_LRS = (0.01, 0.05, 0.1, 0.5, 1.0)

# CLI flag -> ExperimentConfig field
FLAG_FIELDS = {
    "qubits": "n_qubits",
    "layers": "n_layers",
    "batch": "batch_size",
    "lr": "learning_rate",
    "method": "differentiator",
    "epsilon": "epsilon",
    "spsb_samples": "spsb_samples",
    "seed": "seed",
    "runs": "n_runs",
    "epochs": "epochs",
    "steps": "max_steps",
    "optimizer": "optimizer",
    "shots": "shots",
    "workers": "workers",
    "points": "n_points",
    "images": "images",
    "labels": "labels",
    "n_images": "n_images",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _experiment_flags(p: argparse.ArgumentParser, images: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON file with flat ExperimentConfig keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--qubits", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--method", choices=("spsb", "param-shift", "finite-diff"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--spsb-samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int, help="stop after this many optimiser steps")
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--shots", type=int, help="sample expectations from this many shots")
    p.add_argument("--workers", type=int)
    p.add_argument("--points", type=int, help="random-task dataset size")
    p.add_argument("--deterministic", action="store_true", default=None, help="sequential canonical mode")
    p.add_argument("--out", type=Path, help="output directory (default $SPSB_OUT_DIR or ./runs)")
    if images:
        p.add_argument("--images", help="IDX image file (default: bundled synthetic fixture)")
        p.add_argument("--labels", help="IDX label file")
        p.add_argument("--n-images", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spsb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("random-task", help="train on random binary data (models a/b)")
    p.add_argument("--model", choices=("a", "b"), default=None)
    _experiment_flags(p)

    p = sub.add_parser("quanv", help="train the quanvolutional image classifier")
    _experiment_flags(p, images=True)

    p = sub.add_parser("lr-sweep", help="train every (method, lr) pair")
    p.add_argument("--task", choices=("random-a", "random-b", "quanv"))
    p.add_argument("--lrs", default=",".join(map(str, DEFAULT_LRS)))
    p.add_argument("--methods", default="spsb,param-shift")
    _experiment_flags(p, images=True)

    p = sub.add_parser("verify", help="run gradient and simulator oracle checks")
    p.add_argument("--samples", type=int, default=10_000, help="SPSB samples for the bias check")

    p = sub.add_parser("plot", help="SVG loss curves from history CSVs")
    p.add_argument("csv", nargs="+", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--window", action="append", default=[], metavar="METHOD=N",
                   help="rolling-mean window per method (default spsb=10, param-shift=3)")
    p.add_argument("--raw", action="store_true", help="overlay unsmoothed medians")
    p.add_argument("--accuracy", action="store_true", help="add an accuracy panel")
    return parser


def _parse_pairs(pairs: list[str], what: str) -> dict[str, str]:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"{what}: expected KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_config(args: argparse.Namespace, base: dict) -> ExperimentConfig:
    """File < --set < explicit flags."""
    data = dict(base)
    if args.config is not None:
        try:
            loaded = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigurationError(f"{args.config}: cannot read ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{args.config}: expected a flat JSON object")
        data.update(loaded)
    data.update(_parse_pairs(args.set, "--set"))
    for flag, key in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if args.deterministic:
        data["deterministic"] = True
    return ExperimentConfig.from_dict(data)


def output_dir(args: argparse.Namespace) -> Path:
    out = args.out or Path(os.environ.get("SPSB_OUT_DIR", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def stem(cfg: ExperimentConfig) -> str:
    return f"{cfg.task}_{cfg.differentiator}_lr{cfg.learning_rate:g}"


def run_and_save(cfg: ExperimentConfig, out: Path) -> Path:
    histories = run_experiment(cfg)
    name = stem(cfg)
    (out / f"{name}.config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    csv_path = write_csv(out / f"{name}.csv", histories)
    summary = aggregate_runs(histories)
    last = len(summary.circuit_evals) - 1
    print(
        f"{name}: seeds {cfg.seed}..{cfg.seed + cfg.n_runs - 1}, "
        f"{summary.circuit_evals[last]} circuit evals, median loss {summary.median_loss[last]:.4f}, "
        f"median accuracy {summary.median_accuracy[last]:.3f} -> {csv_path}"
    )
    return csv_path


def cmd_random_task(args) -> int:
    base = {"task": "random-b"}
    if args.model:
        base["task"] = f"random-{args.model}"
    cfg = resolve_config(args, base)
    if args.model and cfg.task != f"random-{args.model}":
        raise ConfigurationError(f"--model {args.model} conflicts with task {cfg.task!r}")
    if cfg.task == "quanv":
        raise ConfigurationError("random-task: use the quanv subcommand for task 'quanv'")
    run_and_save(cfg, output_dir(args))
    return 0


def cmd_quanv(args) -> int:
    cfg = resolve_config(args, {"task": "quanv", "n_qubits": 4, "batch_size": 50})
    if cfg.task != "quanv":
        raise ConfigurationError(f"quanv: config task is {cfg.task!r}")
    explicit = args.lr is not None or "learning_rate" in _parse_pairs(args.set, "--set")
    if not explicit and args.config is None:
        raise ConfigurationError("quanv: --lr is required")
    run_and_save(cfg, output_dir(args))
    return 0


def cmd_lr_sweep(args) -> int:
    task = args.task or "random-b"
    base = {"task": task}
    if task == "quanv":
        base.update(n_qubits=4, batch_size=50)
    try:
        lrs = [float(x) for x in args.lrs.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--lrs: {exc}") from exc
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cfg = resolve_config(args, base)
    out = output_dir(args)
    for method in methods:
        for lr in lrs:
            run_and_save(ExperimentConfig.from_dict(cfg.to_dict() | {"differentiator": method, "learning_rate": lr}), out)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    checks = run_all(args.samples)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{c.name:<{width}}  {'pass' if c.passed else 'FAIL'}  {c.seconds:6.2f}s  {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


def cmd_plot(args) -> int:
    windows = {}
    for k, v in _parse_pairs(args.window, "--window").items():
        try:
            windows[k] = int(v)
        except ValueError as exc:
            raise ConfigurationError(f"--window {k}: {v!r} is not an integer") from exc
    for p in args.csv:
        if not p.exists():
            raise DataError(f"{p}: no such file")
    path = emit_plot(args.csv, args.output, windows, show_raw=args.raw, accuracy=args.accuracy)
    print(path)
    return 0


COMMANDS = {
    "random-task": cmd_random_task,
    "quanv": cmd_quanv,
    "lr-sweep": cmd_lr_sweep,
    "verify": cmd_verify,
    "plot": cmd_plot,
}


def run_command(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except SPSBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
