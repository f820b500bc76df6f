"""Command-line entry point: ``python -m cascadeplace <subcommand> [--config F] [--seed S] [--out DIR]``.

Exit status is 0 on success, 2 for configuration errors and 3 when a
placement instance has too little capacity for its demand.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gan, pipeline
from .config import Settings, load_config
from .errors import CascadePlaceError, ConfigError, InfeasibleError, ParseError, StageError
from .placement import (distance_aware_place, exact_solve, format_decision, greedy_place,
                        heuristic_place, read_instance, transport_solve)

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3

STAGE_COMMANDS = {
    "generate": "write a synthetic corpus and region table",
    "extract": "featurize the corpus and split it into train/test",
    "train-burst": "train the window-chained burst model",
    "train-geo": "train the regional-distribution model",
    "solve-labels": "label training cascades with the exact placement solver",
    "train-gan": "train the adversarial placement model for each C",
    "evaluate": "write placement, burst and geo reports",
    "bench": "time greedy and learned decisions over the C grid",
}


def _global_flags(parser, default):
    # subcommands repeat the global flags; SUPPRESS keeps them from resetting earlier values
    kw = {} if default else {"default": argparse.SUPPRESS}
    parser.add_argument("--config", type=Path, help="key = value settings file", **kw)
    parser.add_argument("--seed", type=int, help="overrides the seed in the config", **kw)
    parser.add_argument("--out", type=Path, help="artifact directory (default ./out)",
                        **(kw or {"default": Path("out")}))
    return parser


def _parser():
    common = _global_flags(argparse.ArgumentParser(add_help=False), default=False)
    p = _global_flags(argparse.ArgumentParser(prog="cascadeplace", description=__doc__.splitlines()[0]),
                      default=True)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in STAGE_COMMANDS.items():
        sub.add_parser(name, help=help_text, parents=[common])
    pp = sub.add_parser("pipeline", help="run every stage in order", parents=[common])
    pp.add_argument("--bench", action="store_true", help="also run the timing benchmark")

    d = sub.add_parser("decide", help="placement decisions for distributions read from a file or stdin",
                       parents=[common])
    d.add_argument("input", nargs="?", default="-", help="one distribution per line ('-' = stdin)")
    d.add_argument("--C", type=int, required=True, dest="C", help="number of replicas")
    d.add_argument("--model", type=Path, help="checkpoint (default OUT/gan_C<C>.ckpt)")

    pr = sub.add_parser("predict", help="per-cascade burst verdict lines for the test split",
                        parents=[common])
    pr.add_argument("--output", default="-", help="file to write ('-' = stdout)")

    s = sub.add_parser("solve", help="solve one instance file and print the decision", parents=[common])
    s.add_argument("instance", type=Path)
    s.add_argument("--method", choices=("exact", "greedy", "heuristic", "distance-aware"), default="exact")
    return p


def _settings(args):
    values = load_config(args.config) if args.config else {}
    s = Settings(values)
    if args.seed is not None:
        s.values["seed"] = str(args.seed)
    return s


def _read_distributions(src):
    fh = sys.stdin if src == "-" else open(src, encoding="utf-8")
    try:
        rows = []
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                rows.append(np.array([float(v) for v in text.replace(",", " ").split()]))
            except ValueError:
                raise ParseError("distribution values must be numbers", lineno) from None
        return rows
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_decide(args, out=None):
    out = out or sys.stdout
    path = args.model or args.out / f"gan_C{args.C}.ckpt"
    _, D = gan.load_models(path)
    if not 1 <= args.C <= D.n_regions:
        raise ConfigError(f"--C {args.C} outside 1..{D.n_regions}")
    for x in _read_distributions(args.input):
        I = gan.infer_placement(D, x, args.C)
        out.write(",".join(str(int(b)) for b in I) + "\n")


def cmd_solve(args, out=None):
    out = out or sys.stdout
    inst = read_instance(args.instance)
    if args.method == "exact":
        I, a = exact_solve(inst)
    elif args.method == "greedy":
        I, a = greedy_place(inst)
    elif args.method == "heuristic":
        I, a = heuristic_place(inst, inst.S / max(inst.demand, 1))
    else:
        I = distance_aware_place(inst)
        a = transport_solve(inst, I)
    out.write(format_decision(I, a))


def cmd_predict(args, settings):
    ctx = pipeline.make_context(settings, args.out)
    _, test = ctx.split()
    target = args.output
    if target == "-":
        tmp = args.out / "predictions.csv"
        pipeline.write_predictions(ctx, tmp, test)
        sys.stdout.write(tmp.read_text(encoding="utf-8"))
    else:
        pipeline.write_predictions(ctx, target, test)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        settings = _settings(args)
        if args.command in STAGE_COMMANDS:
            pipeline.run_pipeline(settings, args.out, [args.command])
        elif args.command == "pipeline":
            stages = list(pipeline.STAGES) + (["bench"] if args.bench else [])
            pipeline.run_pipeline(settings, args.out, stages)
        elif args.command == "decide":
            cmd_decide(args)
        elif args.command == "predict":
            cmd_predict(args, settings)
        elif args.command == "solve":
            cmd_solve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, InfeasibleError):
            return EXIT_INFEASIBLE
        if isinstance(exc.cause, ConfigError):
            return EXIT_CONFIG
        return EXIT_ERROR
    except (CascadePlaceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
