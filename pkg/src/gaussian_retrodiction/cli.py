"""Command-line entry point: ``run``, ``validate`` and ``list-builtins``.

Exit codes: 0 success, 2 invalid configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import InputError
from .scenarios import ConfigError, builtin_names, load_raw, parse_config, run_scenario, validate_config

log = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaussian-retrodiction", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write CSV/JSON outputs")
    run.add_argument("--config", required=True, help="YAML file or builtin name")
    run.add_argument("--seed", type=int, help="override the configured seed")
    run.add_argument("--out", default="scenario_output", help="output directory (default: %(default)s)")
    val = sub.add_parser("validate", help="check a config and list every problem")
    val.add_argument("--config", required=True, help="YAML file or builtin name")
    sub.add_parser("list-builtins", help="print the names of the shipped scenarios")
    return p


def _load(source) -> dict | None:
    try:
        return load_raw(source)
    except ConfigError as exc:
        for e in exc.errors:
            print(e, file=sys.stderr)
    except (InputError, OSError) as exc:
        print(f"config: {exc}", file=sys.stderr)
    return None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "list-builtins":
        print("\n".join(builtin_names()))
        return EXIT_OK

    raw = _load(args.config)
    if raw is None:
        return EXIT_INVALID
    errors = validate_config(raw)
    if args.command == "validate":
        for e in errors:
            print(e, file=sys.stderr)
        if not errors:
            print("ok")
        return EXIT_INVALID if errors else EXIT_OK

    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None and args.seed < 0:
        print("--seed: must be non-negative", file=sys.stderr)
        return EXIT_INVALID
    try:
        result = run_scenario(parse_config(raw), args.out, seed=args.seed)
    except Exception as exc:  # any numerical failure maps to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, path in result.files.items():
        log.info("%s: %s", name, path)
    print(args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
