"""Command-line interface.

Batch-oriented: every subcommand is deterministic given its flags and seed,
state flows only through files, and stdout is stable enough to parse.

Exit codes: 0 success or verification pass, 1 verification fail, 2 usage
error, 3 I/O or format error.

The PADTF_PRECISION environment variable, when set, replaces the default
precision policy wherever --precision is not given.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import circuit as circ
from . import compiler as comp
from . import verify as ver
from . import vm

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _env_precision() -> int | None:
    raw = os.environ.get("PADTF_PRECISION")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise comp.PrecisionError(f"PADTF_PRECISION={raw!r} is not an integer")


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_circuit(path: str) -> circ.Circuit:
    return circ.parse_circuit(_read(path))


def _load_model(path: str, allow_round: bool) -> comp.Model:
    return comp.parse_model(_read(path), allow_round=allow_round)


def cmd_compile(args) -> int:
    c = _load_circuit(args.circuit)
    precision = args.precision if args.precision is not None else _env_precision()
    model = comp.compile_circuit(c, p=precision, compat_g=args.compat_g)
    _write(args.out, comp.serialize_model(model))
    stats = circ.desc_stats(c)
    print(
        f"compiled {model.family} circuit: depth {stats.depth}, "
        f"{len(model.tokens)} tokens, {model.pause_token_count} pause tokens, "
        f"precision {model.p}, certified {'yes' if model.certified else 'no'}"
    )
    for note in model.certification_notes:
        print(f"note {note}")
    if args.dump_tokens:
        from . import fixedpoint as fx

        for idx, tok in enumerate(model.tokens):
            ids = f"{tok.vertex_id}" + (f",{tok.source_id}" if tok.source_id else "")
            channels = " ".join(fx.render(v) for v in tok.static_channels())
            print(f"token {idx} {tok.kind} {ids}: {channels}")
    print(f"wrote {args.out}")
    return EXIT_PASS


def cmd_run(args) -> int:
    model = _load_model(args.model, args.round)
    bits = _parse_bits(args.input, model.n_inputs)
    if args.trace:
        bit, trace = vm.forward(model, bits, trace=True)
        print(bit)
        print(trace.dump(), end="")
    else:
        print(vm.forward(model, bits))
    return EXIT_PASS


def _parse_bits(text: str, n: int) -> list[int]:
    s = text.strip()
    if len(s) != n or any(ch not in "01" for ch in s):
        raise ValueError(f"input must be {n} bits of 0/1, got {text!r}")
    return [int(ch) for ch in s]


def cmd_verify(args) -> int:
    c = _load_circuit(args.circuit)
    model = _load_model(args.model, args.round) if args.model else None
    precision = args.precision if args.precision is not None else _env_precision()
    if (
        model is not None
        and args.force
        and model.circuit_hash != circ.circuit_sha256(c)
    ):
        print(
            "padtf: warning: circuit hash mismatch, verifying anyway (--force)",
            file=sys.stderr,
        )
    report = ver.check_equivalence(
        c,
        model,
        precision=precision,
        exhaustive_limit=args.exhaustive_limit,
        samples=args.samples,
        seed=args.seed,
        force=args.force,
    )
    if args.json:
        print(report.to_json())
    else:
        print(report.render(), end="")
    return EXIT_PASS if report.verdict == "pass" else EXIT_FAIL


def cmd_parity(args) -> int:
    c = circ.build_parity_circuit(args.n)
    _write(args.out, circ.serialize_circuit(c))
    stats = circ.desc_stats(c)
    print(
        f"wrote {args.out}: parity over {args.n} bits, "
        f"{stats.size} gates, description length {stats.desc_length}"
    )
    return EXIT_PASS


def cmd_gen(args) -> int:
    c = circ.random_circuit(
        args.family, args.inputs, args.depth, args.max_fanin, args.size_budget,
        seed=args.seed,
    )
    _write(args.out, circ.serialize_circuit(c))
    stats = circ.desc_stats(c)
    print(
        f"wrote {args.out}: {args.family} circuit, n={args.inputs}, "
        f"depth {stats.depth}, {stats.size} gates, "
        f"description length {stats.desc_length}"
    )
    return EXIT_PASS


def cmd_sweep(args) -> int:
    c = _load_circuit(args.circuit)
    report = ver.precision_sweep(
        c, args.p_lo, args.p_hi, samples=args.samples, seed=args.seed
    )
    print(report.render(), end="")
    return EXIT_PASS if report.minimal_passing is not None else EXIT_FAIL


def cmd_campaign(args) -> int:
    precision = args.precision if args.precision is not None else _env_precision()
    cfg = ver.CampaignConfig(
        family=args.family,
        count=args.count,
        n_range=(args.n_lo, args.n_hi),
        depth_range=(args.depth_lo, args.depth_hi),
        max_fanin=args.max_fanin,
        size_budget=args.size_budget,
        seed=args.seed,
        precision=precision,
        samples=args.samples,
    )
    report = ver.campaign(cfg, jobs=args.jobs)
    print(report.render(), end="")
    return EXIT_PASS if report.verdict == "pass" else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="padtf",
        description="Compile Boolean circuits to exact fixed-point Transformer "
        "models, run them, and verify bit-exact equivalence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a circuit file to a model file")
    p.add_argument("circuit")
    p.add_argument("out")
    p.add_argument("--precision", type=int, default=None)
    p.add_argument(
        "--compat-g",
        action="store_true",
        help="use the two-ReLU indicator shortcut instead of the exact chain",
    )
    p.add_argument(
        "--dump-tokens",
        action="store_true",
        help="print every token's encoding channels as exact decimals",
    )
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="run a model on an input bit string")
    p.add_argument("model")
    p.add_argument("--input", required=True, help="bit string, e.g. 1011")
    p.add_argument("--trace", action="store_true", help="dump per-layer state")
    p.add_argument(
        "--round", action="store_true",
        help="accept off-grid decimals in the model file by rounding",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check a model against the circuit oracle")
    p.add_argument("circuit")
    p.add_argument("model", nargs="?", default=None,
                   help="model file (omitted: compile in memory)")
    p.add_argument("--precision", type=int, default=None)
    p.add_argument("--samples", type=int, default=ver.DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exhaustive-limit", type=int, default=ver.DEFAULT_EXHAUSTIVE_LIMIT)
    p.add_argument("--force", action="store_true",
                   help="verify even when the model hash does not match")
    p.add_argument("--round", action="store_true")
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("parity", help="write the two-layer parity circuit")
    p.add_argument("n", type=int)
    p.add_argument("out")
    p.set_defaults(func=cmd_parity)

    p = sub.add_parser("gen", help="write a seeded random circuit")
    p.add_argument("family", choices=circ.FAMILIES)
    p.add_argument("out")
    p.add_argument("--inputs", type=int, default=6)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--max-fanin", type=int, default=4)
    p.add_argument("--size-budget", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sweep", help="verdict per precision over a range")
    p.add_argument("circuit")
    p.add_argument("p_lo", type=int)
    p.add_argument("p_hi", type=int)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("campaign", help="seeded random-circuit verification run")
    p.add_argument("family", choices=circ.FAMILIES)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--n-lo", type=int, default=2)
    p.add_argument("--n-hi", type=int, default=8)
    p.add_argument("--depth-lo", type=int, default=1)
    p.add_argument("--depth-hi", type=int, default=3)
    p.add_argument("--max-fanin", type=int, default=4)
    p.add_argument("--size-budget", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=ver.DEFAULT_SAMPLES)
    p.add_argument("--precision", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_campaign)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, ArithmeticError) as e:
        print(f"padtf: error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
