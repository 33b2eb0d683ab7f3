"""``icsim`` command line.

Exit codes: 0 success, 1 invalid scenario or arguments, 2 runtime failure
(including a failed ``verify``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..decision import make_decider
from ..decision.llm import TransportError
from ..scenario import ScenarioError, load_scenario
from .experiment import compare, format_table, run_experiment, verify
from .scalability import DEFAULT_NODES, run_scale

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v < 2 for v in vals):
        raise argparse.ArgumentTypeError("node counts must be integers >= 2")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icsim", description="Intent-driven continuum simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario with one decider")
    r.add_argument("scenario", help="scenario YAML path or packaged name (computing, networking)")
    r.add_argument("--decider", default=None,
                   help="llm | heuristic | fixture:<file> | hpa:<target> (default: the scenario's)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--duration", type=float, default=None, help="horizon in seconds")
    r.add_argument("--out", required=True, type=Path)

    c = sub.add_parser("compare", help="run several deciders on the same scenario and seed")
    c.add_argument("scenario")
    c.add_argument("--deciders", required=True, nargs="+",
                   help="decider specs, space or comma separated")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--duration", type=float, default=None)
    c.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("scale", help="prompt size against topology size")
    s.add_argument("--nodes", type=_int_list, default=list(DEFAULT_NODES))
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--live", action="store_true", help="also send each prompt to the configured endpoint")
    s.add_argument("--out", required=True, type=Path)

    v = sub.add_parser("verify", help="recompute summary.json from a run directory")
    v.add_argument("run_dir", type=Path)
    return p


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    spec = args.decider or sc.control.decider
    try:
        decider = make_decider(spec, sc.intent.decision_latency)
    except (ValueError, OSError) as exc:
        print(f"icsim: bad decider {spec!r}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    res = run_experiment(sc, args.out, decider, args.seed, args.duration)
    s = res.summary
    print(f"{s['scenario']} / {s['decider']} seed={s['seed']}: satisfaction {s['intent_satisfaction']:.2f}% "
          f"violations {s['violations']['total']} decisions {s['decisions']} fallbacks {s['fallbacks']} "
          f"-> {args.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    sc = load_scenario(args.scenario)
    specs = [x for item in args.deciders for x in item.split(",") if x]
    for spec in specs:
        try:
            make_decider(spec, sc.intent.decision_latency)
        except (ValueError, OSError) as exc:
            print(f"icsim: bad decider {spec!r}: {exc}", file=sys.stderr)
            return EXIT_INVALID
    if len(specs) < 2:
        print("icsim: compare needs at least two deciders", file=sys.stderr)
        return EXIT_INVALID
    rows = compare(sc, specs, args.out, args.seed, args.duration)
    print(format_table(rows))
    return EXIT_OK


def _cmd_scale(args) -> int:
    res = run_scale(args.nodes, args.out, args.seed, args.live)
    for pt in res["points"]:
        print(f"{pt['nodes']:>5} nodes  {pt['tokens_estimated']:>7} tokens")
    fit = res["fit"]
    print(f"slope {fit['slope']:.2f} tokens/node, R^2 {fit['r2']:.4f}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    try:
        problems = verify(args.run_dir)
    except FileNotFoundError as exc:
        print(f"icsim: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"icsim: unreadable run directory: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if problems:
        for p in problems:
            print(f"MISMATCH {p}")
        return EXIT_RUNTIME
    print(f"OK {args.run_dir}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "compare": _cmd_compare, "scale": _cmd_scale, "verify": _cmd_verify}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"icsim: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TransportError, OSError, RuntimeError, ValueError) as exc:
        print(f"icsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
