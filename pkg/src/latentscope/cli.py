"""Command line entry point.

Exit codes: 0 success, 2 configuration or missing-input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as config_mod
from . import pipeline
from .mixture import DegenerateFitError
from .signalgen import SignalConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("latentscope")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentscope", description=__doc__.splitlines()[0])
    parser.add_argument("stage", choices=[*pipeline.STAGES, "all", "show-config"],
                        help="pipeline stage to run; show-config prints the default config")
    parser.add_argument("--config", help="INI config file; omitted keys take their defaults")
    parser.add_argument("--out", help="output directory (overrides run.out_dir)")
    parser.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _resolve(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.parse("")
    if args.seed is not None:
        if args.seed < 0:
            raise config_mod.ConfigError("--seed must be non-negative")
        cfg.values["run"]["seed"] = args.seed
    if args.out is not None:
        cfg.values["run"]["out_dir"] = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.stage == "show-config":
        print(config_mod.default_text(), end="")
        return EXIT_OK
    try:
        cfg = _resolve(args)
        if args.stage == "all":
            pipeline.run_all(cfg)
        else:
            pipeline.run_stage(args.stage, cfg)
    except (config_mod.ConfigError, SignalConfigError, pipeline.MissingInputError,
            pipeline.InputMismatchError) as exc:
        print(f"latentscope: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, DegenerateFitError, ArithmeticError) as exc:
        print(f"latentscope: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
