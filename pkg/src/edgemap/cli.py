"""Command-line entry point.

    edgemap [run|udt-eval] [--config FILE] [--scheme S] [--seeds 1,2,3]
            [--frames FILE] [--out DIR] [--sweep key=a..b:step] [--workers N]
            [--set key=value ...]

Precedence: config file < EDGEMAP_<KEY> environment variables < flags.
Exit status: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    RunError,
    build_config,
    env_overrides,
    parse_config_text,
    run_experiment,
    run_udt_eval,
    sweep_configs,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("edgemap")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgemap", description="AR map-management simulator")
    p.add_argument("command", nargs="?", default="run", choices=["run", "udt-eval"])
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--scheme", help="lff | pu | adapt | mbrl")
    p.add_argument("--seeds", help="comma list, ranges like 0..4 allowed")
    p.add_argument("--frames", help="precomputed frame file (default: synthetic)")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--name", help="experiment name")
    p.add_argument("--sweep", help="key=a..b:step, one experiment group per value")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args, environ=None):
    layers = []
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc.strerror}") from exc
        layers.append(parse_config_text(text))
    layers.append(env_overrides(environ))
    flags = {k: getattr(args, k) for k in ("scheme", "seeds", "frames", "out", "name")
             if getattr(args, k) is not None}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        flags[key.strip()] = value
    layers.append(flags)
    return sweep_configs(build_config(*layers), args.sweep)


def main(argv=None, environ=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        configs = resolve(args, environ)
        if args.workers < 1:
            raise ConfigError("workers: must be positive")
    except ConfigError as exc:
        print(f"edgemap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        for cfg in configs:
            if args.command == "udt-eval":
                run_udt_eval(cfg, args.workers)
            else:
                for row in run_experiment(cfg, args.workers):
                    print(f"{row['run_id']}\tfinal_interval_upsilon={row['final_interval_upsilon']:.4f}")
    except (RunError, OSError, ValueError) as exc:
        print(f"edgemap: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
