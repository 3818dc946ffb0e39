"""Command-line entry point: ``uepfec <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import COMMANDS, ExperimentSpec, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uepfec", description="UEP matrix-FEC optimization experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--spec", type=Path, help="JSON file with ExperimentSpec fields")
        p.add_argument("--out-dir", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int, action="append", dest="seeds",
                       help="seed for the optimizer (repeat for several runs)")
        p.add_argument("--seeds", type=int, dest="n_seeds", help="use seeds 0..N-1")
        p.add_argument("--evaluator", choices=("iid", "markov", "mc"))
        p.add_argument("--trials", type=int, help="Monte-Carlo trials per evaluation in mc mode")
        p.add_argument("--tau", type=float)
        p.add_argument("--imax", type=int)
        p.add_argument("--clock", choices=("virtual", "wall"),
                       help="virtual clock makes time-based runs reproducible")
        p.add_argument("--plr", type=float, action="append", dest="plrs")
        p.add_argument("--abl-ms", type=float, action="append", dest="abls_ms")
        p.add_argument("--duration", type=float, dest="duration_s")
        p.add_argument("--bitrate", type=float, dest="bitrate_mbps", help="Mbps")
        p.add_argument("--latency", type=float, dest="latency_s", help="total FEC latency in seconds")
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    text = args.spec.read_text() if args.spec else ""
    seeds = args.seeds
    if args.n_seeds is not None:
        seeds = list(range(args.n_seeds))
    overrides = {
        "seeds": seeds, "evaluator": args.evaluator, "trials": args.trials, "tau": args.tau, "imax": args.imax,
        "clock": args.clock, "plrs": args.plrs, "abls_ms": args.abls_ms, "duration_s": args.duration_s,
        "bitrate_mbps": args.bitrate_mbps, "latency_s": args.latency_s,
    }
    return ExperimentSpec.from_json(text, **overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = spec_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"uepfec: bad spec: {exc}", file=sys.stderr)
        return 2
    result = run(args.command, spec)
    for path in result.write(args.out_dir):
        print(path)
    failed = [g for g in result.guards if not g.ok]
    for g in result.guards:
        print(f"{'PASS' if g.ok else 'FAIL'} {g.name}: {g.detail}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
