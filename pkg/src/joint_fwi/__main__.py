#!/usr/bin/python3
"""
Defines the `invert` command.
- parse_args: Builds the argument namespace from command-line flags.
- main: Loads the configuration, runs the experiment and returns its exit code.
- run: Console-script entry point.
"""

from joint_fwi import experiment
from joint_fwi.errors import JointFWIError

import argparse
import logging
import sys
from typing import List, Optional


def parse_args(argv: List[str]) -> argparse.Namespace:
    """
    Parses `invert` flags.

    - argv: Arguments without the program name.
    """
    parser = argparse.ArgumentParser(
        prog="invert", description="Joint low-rank interpolation and simultaneous-shot waveform inversion."
    )
    parser.add_argument("--config", help="key=value experiment file")
    parser.add_argument("--pipeline", choices=experiment.PIPELINES, help="pipeline(s) to run")
    parser.add_argument("--keep", type=float, help="observed fraction of source-receiver pairs")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int, help="threads for per-frequency work")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log debug records")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level)
    flags = (("pipeline", args.pipeline), ("keep_ratio", args.keep), ("seed", args.seed),
             ("odir", args.out), ("workers", args.workers))
    overrides = {key: value for key, value in flags if value is not None}
    try:
        cfg = experiment.load_config(args.config, overrides)
    except JointFWIError as err:
        logging.critical("%s: %s", type(err).__name__, err)
        return err.exit_code
    return experiment.run_experiment(cfg)


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
