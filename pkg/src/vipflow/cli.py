"""Command-line front end.

Subcommands
-----------
run <config> [--resume snapshot]   march one case (or a refinement suite)
sweep <config> --param p --values a,b,c   repeat a case over parameter values
verify <suite>                     run a named acceptance suite, or ``all``
presets                            list bundled configuration files

Exit codes: 0 success, 1 configuration error, 2 solver failure,
3 verification failure, 130 interrupted.
"""

from __future__ import annotations

import argparse
import importlib.resources
import logging
import sys

from .config import ConfigError, parse_config
from .runner import EXIT_ACCEPTANCE, EXIT_CONFIG, run_case, sweep


def _preset_path(name):
    ref = importlib.resources.files("vipflow") / "presets" / f"{name}.cfg"
    return ref if ref.is_file() else None


def _load(source):
    """Parse a config from a path, or fall back to a bundled preset name."""
    import os

    if not os.path.exists(source):
        ref = _preset_path(source)
        if ref is None:
            raise ConfigError(
                f"no config file {source!r} and no bundled preset of that name")
        return parse_config(ref.read_text())
    return parse_config(source)


def _cmd_run(args):
    cfg = _load(args.config)
    code, summary = run_case(cfg, resume=args.resume)
    for key in ("status", "error"):
        if key in summary:
            print(f"{key}: {summary[key]}")
    return code


def _cmd_sweep(args):
    cfg = _load(args.config)
    values = [v for v in args.values.split(",") if v]
    if not values:
        print("sweep: --values is empty", file=sys.stderr)
        return EXIT_CONFIG
    return sweep(cfg, args.param, values)


def _cmd_verify(args):
    from . import verify

    try:
        ok, lines = verify.run_suite(args.suite)
    except ValueError as exc:
        print(f"verify: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in lines:
        print(line)
    print(f"verify {args.suite}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else EXIT_ACCEPTANCE


def _cmd_presets(args):
    base = importlib.resources.files("vipflow") / "presets"
    names = sorted(p.name[:-4] for p in base.iterdir() if p.name.endswith(".cfg"))
    for name in names:
        print(name)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vipflow",
        description="Meshfree incompressible flow benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logging")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured case or suite")
    p_run.add_argument("config", help="config file path or bundled preset name")
    p_run.add_argument("--resume", default=None, metavar="SNAPSHOT",
                       help="restart from a saved resume.npz")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="repeat a case over parameter values")
    p_sweep.add_argument("config", help="config file path or bundled preset name")
    p_sweep.add_argument("--param", required=True, help="config field to vary")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values for the field")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_verify = sub.add_parser("verify", help="run an acceptance suite")
    from .verify import SUITES

    p_verify.add_argument("suite", choices=sorted(SUITES) + ["all"])
    p_verify.set_defaults(func=_cmd_verify)

    p_presets = sub.add_parser("presets", help="list bundled configurations")
    p_presets.set_defaults(func=_cmd_presets)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else (
        logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
