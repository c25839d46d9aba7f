"""Command-line entry point: ``mbprox run|compare|diagnose|regime-table``.

Exit status: 0 on success, 2 for configuration errors, 3 when a run diverged.
The output directory is ``--out``, else the config's ``output.directory``,
else ``$MBPROX_OUT``, else ``./mbprox-out``.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .errors import ConfigError, DivergenceError, InvalidInputError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or len(set(seeds)) != len(seeds) or min(seeds) < 0:
        raise argparse.ArgumentTypeError("seeds must be distinct nonnegative integers")
    return seeds


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p = argparse.ArgumentParser(prog="mbprox", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run all seeds of a config")
    r.add_argument("config")
    r.add_argument("--seeds", type=_seeds, help="comma-separated seeds overriding the config")
    c = sub.add_parser("compare", parents=[common], help="median summaries per method setting")
    c.add_argument("summaries", nargs="+")
    d = sub.add_parser("diagnose", parents=[common], help="estimate regularity constants")
    d.add_argument("config")
    t = sub.add_parser("regime-table", parents=[common], help="emit the regime table CSV")
    t.add_argument("config")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        if args.command == "run":
            cfg = harness.load_config(args.config)
            return harness.run_experiment(cfg, args.out, args.seeds, log=log)
        if args.command == "compare":
            table = harness.compare(args.summaries, args.out or harness.resolve_out(
                harness.RunConfig()))
            if log:
                log(f"{len(table)} groups compared")
            return EXIT_OK
        cfg = harness.load_config(args.config)
        if args.command == "diagnose":
            report = harness.diagnose(cfg, args.out)
            if not args.quiet:
                print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK
        text = harness.emit_regime_table(cfg, args.out)
        if not args.quiet:
            sys.stdout.write(text)
        return EXIT_OK
    except (ConfigError, InvalidInputError) as err:
        print(f"mbprox: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"mbprox: diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
