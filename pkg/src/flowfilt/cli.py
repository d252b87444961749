"""Command line entry point: ``flowfilt run|validate|version``."""

import argparse
import json
import sys

from . import __version__
from .errors import ValidationError
from .scenario import ScenarioError, load_scenario, run

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def _parser():
    p = argparse.ArgumentParser(prog="flowfilt", description="Stochastic particle flow filter harness")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write trace CSV + summary JSON")
    r.add_argument("config")
    r.add_argument("--out-dir", default=None)
    r.add_argument("--seed-override", type=int, default=None, metavar="U64")
    r.add_argument("--quiet", action="store_true")

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("config")

    sub.add_parser("version", help="print the package version")
    return p


def _load(path):
    try:
        return load_scenario(path), None
    except ScenarioError as exc:
        lines = [f"{exc.source}: validation failed"] + [f"  - {f}" for f in exc.failures]
        print("\n".join(lines), file=sys.stderr)
        return None, EXIT_VALIDATION
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return None, EXIT_IO


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK

    cfg, code = _load(args.config)
    if cfg is None:
        return code
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.mode}, n={cfg.dimension}, N={cfg.particles})")
        return EXIT_OK

    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    try:
        summary = run(cfg, out_dir=args.out_dir)
    except ValidationError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not args.quiet:
        json.dump(summary.to_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")
    if not summary.ok:
        print(f"run {summary.status}: {summary.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
