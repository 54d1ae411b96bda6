"""Command line: run one cell, the full grid, or regenerate curves."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import PRESETS, REGIMES, ExperimentConfig, load_config
from .curves import emit_curves
from .train import run_grid, train_cell


def _config(args) -> ExperimentConfig:
    cfg = PRESETS[args.preset]
    if args.config:
        cfg = load_config(Path(args.config).read_text(), base=cfg)
    return cfg


def cmd_cell(args) -> int:
    cfg = _config(args)
    res = train_cell(cfg, args.regime, args.length, args.seed, args.out)
    print(
        f"{res.regime} length={res.length} seed={res.seed} "
        f"best_val={res.best_val_accuracy:.4f} test={res.test_accuracy:.4f}"
    )
    return 0


def cmd_grid(args) -> int:
    cfg = _config(args)
    if args.regimes:
        cfg = replace(cfg, regimes=tuple(args.regimes.split(",")))
    results = run_grid(cfg, args.out)
    for res in results:
        print(
            f"{res.regime} length={res.length} seed={res.seed} "
            f"test={res.test_accuracy:.4f}"
        )
    plot, table = emit_curves(Path(args.out) / "results.csv", args.out)
    print(f"wrote {plot}")
    print(f"wrote {table}")
    return 0


def cmd_curves(args) -> int:
    plot, table = emit_curves(args.results, args.out)
    print(f"wrote {plot}")
    print(f"wrote {table}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="parity-lab",
        description="Train 2-layer Transformers on parity under three "
        "regimes (causal instant, non-causal instant, causal with pause "
        "tokens) and plot accuracy against sequence length.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cell", help="train one (regime, length, seed) cell")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", default=None, help="key-value overrides file")
    p.add_argument("--regime", choices=REGIMES, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_cell)

    p = sub.add_parser("grid", help="train every cell of the preset grid")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", default=None)
    p.add_argument("--regimes", default=None, help="comma-separated subset")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("curves", help="plot curves from a results.csv")
    p.add_argument("results")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_curves)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
